"""A shortened component ablation: every row of the suite on shared seeds.

The acceptance suite runs the same rows on the default 8000-image set
for 12 epochs and 3 seeds; this demo trims data and epochs so it
finishes in a few minutes.

Run: python demos/05_ablation.py [suite]
"""
import sys

from tdrg.ablation import SUITES, run_ablation
from tdrg.data import SyntheticDatasetConfig, generate_dataset
from tdrg.train import TrainConfig

suite = sys.argv[1] if len(sys.argv) > 1 else "components"
print("rows:", [name for name, _ in SUITES[suite]])

ds = generate_dataset(SyntheticDatasetConfig(n_train=1500, n_test=300))
table = run_ablation(suite, ds, TrainConfig(lr=0.01, epochs=4, lr_step=3), seeds=(0,), log=print)
print(table.to_text())
