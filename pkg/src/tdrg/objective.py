"""Branch classifiers, weighted fusion, the four-term loss and multi-label metrics."""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numeric as nm
from .errors import ContractError, DimensionError
from .numeric import Tensor


@dataclass
class Prediction:
    structural_logits: Tensor
    semantic_logits: Tensor | None
    constraint_logits: Tensor | None
    fused: Tensor


def structural_logits(t_nodes: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Linear classifier on the column-wise max over node rows."""
    return nm.linear(nm.max_(t_nodes, axis=-2), w, b)


def semantic_logits(g_nodes: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Score node c with its own weight row: ``sum_k G[c, k] * W[c, k] + b[c]``."""
    return nm.sum_(g_nodes * w, axis=-1) + b


def fuse_predictions(s_logits: Tensor, g_logits: Tensor | None, alpha: float,
                     c_logits: Tensor | None = None) -> Prediction:
    """``alpha * structural + (1 - alpha) * semantic`` on raw logits."""
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha must lie in [0, 1], got {alpha}")
    if g_logits is None:
        fused = s_logits
    elif alpha == 1.0:
        fused = s_logits + g_logits * 0.0
    elif alpha == 0.0:
        fused = s_logits * 0.0 + g_logits
    else:
        fused = s_logits * alpha + g_logits * (1.0 - alpha)
    return Prediction(s_logits, g_logits, c_logits, fused)


def _check_binary(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y)
    if not np.all((y == 0) | (y == 1)):
        raise ContractError("targets must be 0/1")
    return y


def bce_loss(logits: Tensor, y) -> Tensor:
    """Mean binary cross-entropy with logits, ``softplus(z) - y z`` form."""
    logits = nm.as_tensor(logits)
    y = _check_binary(y).astype(logits.dtype)
    if y.shape != logits.shape:
        raise DimensionError(f"targets {y.shape} do not match logits {logits.shape}")
    return nm.mean(nm.softplus(logits) - logits * y)


LOSS_TERMS = ("joint", "sac", "trans", "gcn")


def total_loss(pred: Prediction, y) -> tuple[Tensor, dict[str, float]]:
    """Unweighted sum of the losses on every available logit vector.

    Returns the scalar loss and the value of each term by name.
    """
    terms = {"joint": pred.fused, "sac": pred.constraint_logits,
             "trans": pred.structural_logits, "gcn": pred.semantic_logits}
    total, parts = None, {}
    for name in LOSS_TERMS:
        z = terms[name]
        if z is None:
            continue
        term = bce_loss(z, y)
        parts[name] = float(term.data)
        total = term if total is None else total + term
    return total, parts


# ---------------------------------------------------------------- metrics

def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """All-points AP: mean precision at the rank of every positive (stable order on ties)."""
    order = np.argsort(-np.asarray(scores), kind="stable")
    hits = np.asarray(labels)[order] > 0
    n_pos = hits.sum()
    if n_pos == 0:
        return float("nan")
    ranks = np.arange(1, hits.size + 1)
    precision = np.cumsum(hits) / ranks
    return float(precision[hits].sum() / n_pos)


def _prf(pred: np.ndarray, labels: np.ndarray) -> dict[str, float]:
    tp = (pred & labels).sum(axis=0).astype(float)
    n_pred = pred.sum(axis=0).astype(float)
    n_pos = labels.sum(axis=0).astype(float)
    cp = np.mean(np.divide(tp, n_pred, out=np.zeros_like(tp), where=n_pred > 0))
    cr = np.mean(np.divide(tp, n_pos, out=np.zeros_like(tp), where=n_pos > 0))
    op = tp.sum() / n_pred.sum() if n_pred.sum() > 0 else 0.0
    orr = tp.sum() / n_pos.sum() if n_pos.sum() > 0 else 0.0
    return {"CP": float(cp), "CR": float(cr), "CF1": f1(cp, cr),
            "OP": float(op), "OR": float(orr), "OF1": f1(op, orr)}


def f1(p: float, r: float) -> float:
    return float(2 * p * r / (p + r)) if p + r > 0 else 0.0


def topk_mask(scores: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask marking each row's k highest scores (stable order on ties)."""
    k = min(k, scores.shape[1])
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    mask = np.zeros(scores.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    return mask


@dataclass
class MetricReport:
    ap: list[float | None]
    mAP: float
    CP: float
    CR: float
    CF1: float
    OP: float
    OR: float
    OF1: float
    top3: dict[str, float] = field(default_factory=dict)
    excluded: list[int] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [f"mAP={self.mAP:.6f}"]
        for key in ("CP", "CR", "CF1", "OP", "OR", "OF1"):
            lines.append(f"{key}={getattr(self, key):.6f}")
        for key in ("CP", "CR", "CF1", "OP", "OR", "OF1"):
            lines.append(f"top3_{key}={self.top3[key]:.6f}")
        for c, ap in enumerate(self.ap):
            lines.append(f"AP_{c}={'excluded' if ap is None else f'{ap:.6f}'}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "MetricReport":
        with open(path) as f:
            return cls(**json.load(f))


def compute_metrics(scores, labels, threshold: float = 0.5, topk: int = 3) -> MetricReport:
    """mAP plus per-class and overall precision/recall/F1, thresholded and top-k.

    Classes without a positive sample are dropped from mAP (with a warning)
    and marked ``None`` in the per-class AP list.
    """
    scores = np.asarray(scores, dtype=float)
    labels = _check_binary(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise DimensionError(f"scores {scores.shape} and labels {labels.shape} must be equal 2-D shapes")
    aps, excluded = [], []
    for c in range(scores.shape[1]):
        if not labels[:, c].any():
            aps.append(None)
            excluded.append(c)
            continue
        aps.append(average_precision(scores[:, c], labels[:, c]))
    if excluded:
        warnings.warn(f"classes without positives excluded from mAP: {excluded}", stacklevel=2)
    valid = [a for a in aps if a is not None]
    m_ap = float(np.mean(valid)) if valid else 0.0
    thr = _prf(scores >= threshold, labels)
    top = _prf(topk_mask(scores, topk), labels)
    return MetricReport(aps, m_ap, top3=top, excluded=excluded, **thr)
