"""Deterministic SGD training, checkpoints and evaluation."""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numeric as nm
from .config import Config
from .data import Split, SyntheticDataset
from .errors import ConfigError, NumericError
from .model import TDRG
from .objective import LOSS_TERMS, MetricReport, compute_metrics, total_loss
from .semantic import load_static_correlation, save_static_correlation

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_decay: float = 0.1
    lr_step: int = 30
    epochs: int = 50
    batch_size: int = 16
    alpha: float = 0.7
    seed: int = 0
    flip: bool = False

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")

    @classmethod
    def from_config(cls, cfg: Config) -> "TrainConfig":
        return cls(cfg["train.lr"], cfg["train.momentum"], cfg["train.weight_decay"],
                   cfg["train.lr_decay"], cfg["train.lr_step"], cfg["train.epochs"],
                   cfg["train.batch_size"], cfg["model.alpha"], cfg["train.seed"], cfg["train.flip"])

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** (epoch // self.lr_step)


class SGD:
    """Heavy-ball momentum with L2 weight decay folded into the gradient."""

    def __init__(self, params: nm.ParameterStore, momentum: float, weight_decay: float):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float) -> None:
        for name, p in self.params.items():
            g = p.grad + self.weight_decay * p.data
            v = self.velocity[name]
            v *= self.momentum
            v += g
            p.data -= lr * v


@dataclass
class Checkpoint:
    model: TDRG
    epoch: int
    history: list[dict] = field(default_factory=list)
    rng_state: dict | None = None
    velocity: dict[str, np.ndarray] | None = None

    @property
    def config(self) -> Config:
        return self.model.cfg


def _first_nonfinite(fwd, model: TDRG) -> str:
    named = [("fused logits", fwd.prediction.fused),
             ("structural logits", fwd.prediction.structural_logits),
             ("semantic logits", fwd.prediction.semantic_logits),
             ("constraint logits", fwd.prediction.constraint_logits),
             ("structural nodes T", fwd.structural.nodes)]
    named += [(f"features 1/{s}", m) for s, m in zip(fwd.features.factors, fwd.features.maps)]
    if fwd.semantic is not None:
        named += [("semantic nodes G", fwd.semantic.nodes), ("correlation A^s", fwd.semantic.correlation)]
    named += [(f"parameter {k}", p) for k, p in model.params.items()]
    for name, t in named:
        if t is not None and not np.all(np.isfinite(t.data)):
            return name
    return "loss"


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def train(train_cfg: TrainConfig, model_cfg: Config, dataset: SyntheticDataset | Split,
          val: Split | None = None, out_dir: str | Path | None = None,
          static_correlation: np.ndarray | None = None, max_steps: int | None = None,
          eval_every: int = 1) -> Checkpoint:
    """Minimise the summed loss with SGD; returns the final checkpoint.

    Sample order in epoch ``e`` comes from a Philox stream keyed on
    ``(seed, e)``. ``max_steps`` stops early (used for quick sanity runs).
    A non-finite loss raises :class:`NumericError` after writing the last
    good checkpoint to ``out_dir``.
    """
    split = dataset.train if isinstance(dataset, SyntheticDataset) else dataset
    if val is None and isinstance(dataset, SyntheticDataset):
        val = dataset.test
    if split.n_cls != model_cfg["model.n_cls"]:
        raise ConfigError(f"dataset has {split.n_cls} classes, model.n_cls={model_cfg['model.n_cls']}")
    model = TDRG(model_cfg, static_correlation)
    opt = SGD(model.params, train_cfg.momentum, train_cfg.weight_decay)
    labels = split.labels.astype(model.dtype)
    history: list[dict] = []
    last_good = None
    step = 0
    for epoch in range(train_cfg.epochs):
        rng = nm.make_rng(train_cfg.seed, epoch)
        lr = train_cfg.lr_at(epoch)
        sums = {k: 0.0 for k in ("total",) + LOSS_TERMS}
        seen = 0
        for idx in _batches(len(split), train_cfg.batch_size, rng):
            x = split.images[idx]
            if train_cfg.flip:
                flip = rng.random(len(idx)) < 0.5
                x = np.where(flip[:, None, None, None], x[..., ::-1], x)
            fwd = model(x)
            loss, parts = total_loss(fwd.prediction, labels[idx])
            if not np.isfinite(loss.data):
                where = _first_nonfinite(fwd, model)
                if out_dir is not None and last_good is not None:
                    save_checkpoint(last_good, out_dir)
                raise NumericError(f"non-finite loss at epoch {epoch} step {step}; first non-finite "
                                   f"tensor: {where}")
            model.params.zero_grad()
            nm.backward(loss, model.params)
            opt.step(lr)
            step += 1
            sums["total"] += float(loss.data) * len(idx)
            for k, v in parts.items():
                sums[k] += v * len(idx)
            seen += len(idx)
            if max_steps is not None and step >= max_steps:
                break
        record = {"epoch": epoch, "lr": lr, "steps": step}
        record.update({k: v / seen for k, v in sums.items() if k == "total" or k in parts})
        if val is not None and (epoch + 1) % eval_every == 0:
            record["val_mAP"] = evaluate(model, val).mAP
        history.append(record)
        log.info("epoch %d %s", epoch, " ".join(f"{k}={v:.4f}" for k, v in record.items()
                                                 if isinstance(v, float)))
        last_good = Checkpoint(model, epoch + 1, list(history), rng.bit_generator.state,
                               {k: v.copy() for k, v in opt.velocity.items()})
        if max_steps is not None and step >= max_steps:
            break
    ckpt = Checkpoint(model, len(history), history, last_good.rng_state if last_good else None,
                      opt.velocity)
    if out_dir is not None:
        save_checkpoint(ckpt, out_dir)
    return ckpt


def evaluate(model_or_ckpt, split: Split | SyntheticDataset, batch_size: int = 32) -> MetricReport:
    """Metric report of the fused sigmoid scores on ``split``."""
    model = model_or_ckpt.model if isinstance(model_or_ckpt, Checkpoint) else model_or_ckpt
    if isinstance(split, SyntheticDataset):
        split = split.test
    if split.n_cls != model.n_cls:
        raise ConfigError(f"model predicts {model.n_cls} classes, dataset has {split.n_cls}")
    scores = model.predict(split.images, batch_size)
    return compute_metrics(scores, split.labels)


# ---------------------------------------------------------------- checkpoint files

def write_named_tensors(path: Path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            raw = name.encode()
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            nm.write_tensor(f, tensors[name])


def read_named_tensors(path: Path) -> dict[str, np.ndarray]:
    out = {}
    with open(path, "rb") as f:
        (count,) = struct.unpack("<I", f.read(4))
        for _ in range(count):
            (n,) = struct.unpack("<I", f.read(4))
            name = f.read(n).decode()
            out[name] = nm.read_tensor(f)
    return out


def _jsonable(x):
    # numpy scalars and the Philox counter/key arrays in the RNG state
    return x.tolist() if isinstance(x, (np.ndarray, np.generic)) else str(x)


def save_checkpoint(ckpt: Checkpoint, out_dir: str | Path) -> Path:
    """Directory with parameters, optimiser state, config snapshot and metadata."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_named_tensors(out / "params.bin", ckpt.model.params.state())
    if ckpt.velocity is not None:
        write_named_tensors(out / "momentum.bin", ckpt.velocity)
    (out / "config.cfg").write_text(ckpt.model.cfg.dumps())
    if ckpt.model.semantic is not None and ckpt.model.semantic.static is not None:
        save_static_correlation(out / "static_correlation.txt", ckpt.model.semantic.static)
    meta = {"epoch": ckpt.epoch, "history": ckpt.history, "rng_state": ckpt.rng_state}
    (out / "meta.json").write_text(json.dumps(meta, indent=2, default=_jsonable))
    return out


def load_checkpoint(path: str | Path) -> Checkpoint:
    src = Path(path)
    if not (src / "params.bin").exists():
        raise FileNotFoundError(f"no checkpoint at {src}")
    cfg = Config.load(src / "config.cfg")
    static = None
    if (src / "static_correlation.txt").exists():
        static = load_static_correlation(src / "static_correlation.txt", cfg["model.n_cls"])
    model = TDRG(cfg, static)
    model.params.load_state(read_named_tensors(src / "params.bin"))
    velocity = read_named_tensors(src / "momentum.bin") if (src / "momentum.bin").exists() else None
    meta = json.loads((src / "meta.json").read_text())
    return Checkpoint(model, meta["epoch"], meta["history"], meta["rng_state"], velocity)

