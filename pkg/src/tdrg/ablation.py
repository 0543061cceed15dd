"""Ablation suites: train several configuration rows on shared seeds and rank them."""
from __future__ import annotations

import json
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

from .config import Config
from .data import SyntheticDataset, label_cooccurrence
from .train import TrainConfig, evaluate, train

# every row starts from these overrides of the base config
_BASELINE = {"structural.unit": "none", "backbone.scales": "32", "csa.enabled": False,
             "semantic.enabled": False}
_GCN = {"semantic.enabled": True, "semantic.structural_guidance": False,
        "semantic.constraint_pool": "none"}
_TRANS_ONLY = {"structural.unit": "transformer", "semantic.enabled": False}

SUITES: dict[str, list[tuple[str, dict]]] = {
    "components": [
        ("baseline", dict(_BASELINE)),
        ("+Trans", {**_BASELINE, "structural.unit": "transformer"}),
        ("+Trans+CSA", {**_TRANS_ONLY, "backbone.scales": "16,32,64", "csa.enabled": True}),
        ("+GCN", {**_BASELINE, **_GCN}),
        ("+GCN+SAC", {**_BASELINE, **_GCN, "semantic.constraint_pool": "kmp"}),
        ("full", {}),
    ],
    "csa": [
        ("S1/32", {**_TRANS_ONLY, "backbone.scales": "32", "csa.enabled": False}),
        ("S1/32+S1/64", {**_TRANS_ONLY, "backbone.scales": "32,64", "csa.enabled": False}),
        ("S1/16+S1/32+S1/64", {**_TRANS_ONLY, "backbone.scales": "16,32,64", "csa.enabled": False}),
        ("SUM", {**_TRANS_ONLY, "backbone.scales": "16,32,64", "csa.combine": "sum"}),
        ("MUL", {**_TRANS_ONLY, "backbone.scales": "16,32,64", "csa.combine": "mul"}),
    ],
    "semantic": [
        ("static A", {"semantic.correlation": "static"}),
        ("A^s w/o V_T", {"semantic.structural_guidance": False}),
        ("A^s", {}),
    ],
}


@dataclass
class AblationResult:
    """One trained row of a suite, one entry per seed."""

    name: str
    overrides: dict
    seeds: list[int]
    mAP: list[float]
    ap: list[list[float | None]]
    seconds: list[float] = field(default_factory=list)

    @property
    def median(self) -> float:
        return statistics.median(self.mAP)

    def class_median(self, c: int) -> float:
        return statistics.median(a[c] for a in self.ap if a[c] is not None)


@dataclass
class AblationTable:
    suite: str
    rows: list[AblationResult]

    def __getitem__(self, name: str) -> AblationResult:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def ranked(self) -> list[AblationResult]:
        return sorted(self.rows, key=lambda r: -r.median)

    def to_text(self) -> str:
        seeds = self.rows[0].seeds if self.rows else []
        width = max([len(r.name) for r in self.rows] + [6])
        head = f"{'rank':>4}  {'config':<{width}}  {'median':>7}  " + "  ".join(f"seed={s:<3}" for s in seeds)
        lines = [f"suite: {self.suite}", head]
        for i, r in enumerate(self.ranked(), 1):
            cells = "  ".join(f"{100 * m:8.2f}" for m in r.mAP)
            lines.append(f"{i:>4}  {r.name:<{width}}  {100 * r.median:7.2f}  {cells}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"suite": self.suite, "rows": [r.__dict__ for r in self.rows]}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def run_ablation(suite: str, dataset: SyntheticDataset, train_cfg: TrainConfig,
                 base_cfg: Config | None = None, seeds=(0, 1, 2), rows: list[str] | None = None,
                 log=None) -> AblationTable:
    """Train every row of ``suite`` once per seed and collect test mAP.

    A seed sets both the weight initialisation and the sample order; the
    dataset is shared. Rows that use a static correlation get the
    conditional label frequencies of the training split.
    """
    if suite not in SUITES:
        raise KeyError(f"unknown suite {suite!r}; choose from {sorted(SUITES)}")
    base = base_cfg or Config()
    static = label_cooccurrence(dataset.train.labels)
    results = []
    for name, overrides in SUITES[suite]:
        if rows is not None and name not in rows:
            continue
        res = AblationResult(name, dict(overrides), list(seeds), [], [])
        for seed in seeds:
            cfg = base.replace({**overrides, "backbone.seed": seed})
            tcfg = TrainConfig(**{**train_cfg.__dict__, "seed": seed})
            t0 = time.perf_counter()
            ckpt = train(tcfg, cfg, dataset, eval_every=max(1, tcfg.epochs),
                         static_correlation=static if cfg["semantic.correlation"] == "static" else None)
            report = evaluate(ckpt, dataset.test)
            res.seconds.append(time.perf_counter() - t0)
            res.mAP.append(report.mAP)
            res.ap.append(list(report.ap))
            if log is not None:
                log(f"{suite} {name} seed={seed} mAP={100 * report.mAP:.2f} ({res.seconds[-1]:.0f}s)")
        results.append(res)
    return AblationTable(suite, results)


def ordering_violations(table: AblationTable, chains, slack: float = 0.005) -> list[str]:
    """Pairs ``a >= b`` along each chain whose medians are reversed by more than ``slack``."""
    problems = []
    for chain in chains:
        for hi, lo in zip(chain, chain[1:]):
            a, b = table[hi], table[lo]
            if a.median - b.median < -slack:
                problems.append(f"{hi} ({100 * a.median:.2f}) < {lo} ({100 * b.median:.2f})")
    return problems
