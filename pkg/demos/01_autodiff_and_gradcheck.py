"""Reverse-mode autodiff on numpy arrays, checked against finite differences.

Run: python demos/01_autodiff_and_gradcheck.py
"""
import numpy as np

from tdrg import numeric as nm
from tdrg.model import gradcheck_model

# ============================================================
# 1. A tiny graph: softplus of a linear layer
# ============================================================
rng = nm.make_rng(0)
params = nm.ParameterStore()
w = params.add("w", rng.standard_normal((4, 3)))
b = params.add("b", np.zeros(3))
x = nm.Tensor(rng.standard_normal((5, 4)))

loss = nm.mean(nm.softplus(nm.linear(x, w, b)))
nm.backward(loss, params)
print("loss", float(loss.data))
print("dL/db", params["b"].grad)

# ============================================================
# 2. Central differences agree with the tape
# ============================================================
for r in nm.gradcheck(lambda: nm.mean(nm.softplus(nm.linear(x, w, b))), params):
    print(f"{r.name}: max relative error {r.max_rel_err:.1e} over {r.checked} coordinates")

# ============================================================
# 3. The whole model, a few coordinates per parameter
# ============================================================
# the full sweep (every coordinate) is what the acceptance suite runs
results = gradcheck_model(max_coords=2)
worst = max(results, key=lambda r: r.max_rel_err)
print(f"{sum(r.ok for r in results)}/{len(results)} parameter tensors pass; "
      f"worst {worst.name} at {worst.max_rel_err:.1e}")
