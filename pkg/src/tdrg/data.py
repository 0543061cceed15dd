"""Procedural multi-label images: geometric stamps on textured backgrounds.

Label sets follow a co-occurrence matrix: a primary class is drawn
uniformly, then every other class ``j`` joins with probability
``cooccurrence[primary, j]``. Two pairs of classes share a stamp and can
only be told apart by the image-wide background texture.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config
from .errors import ConfigError, ContractError, GenerationError
from .numeric import load_tensor, save_tensor

SHAPES = ("square", "disc", "triangle", "cross", "ring", "diamond", "xcross", "hbars", "frame")
TEXTURES = ("plain", "hstripes", "vstripes", "checker", "dots")
PALETTE = np.array([[0.95, 0.2, 0.2], [0.2, 0.9, 0.2], [0.25, 0.35, 0.95], [0.95, 0.9, 0.2],
                    [0.9, 0.3, 0.9], [0.2, 0.9, 0.9], [0.98, 0.6, 0.1], [0.95, 0.95, 0.95]])
MAX_RETRIES = 100


def stamp_mask(shape: str, size: int) -> np.ndarray:
    """Boolean ``size x size`` mask of a geometric stamp."""
    r = (np.arange(size) + 0.5) / size * 2 - 1
    yy, xx = np.meshgrid(r, r, indexing="ij")
    ax, ay = np.abs(xx), np.abs(yy)
    t = max(0.2, 2.5 / size)  # stroke half-width in unit coords
    if shape == "square":
        m = np.ones((size, size), bool)
    elif shape == "disc":
        m = xx ** 2 + yy ** 2 <= 1.0
    elif shape == "triangle":
        m = (yy >= -0.9) & (ax <= (yy + 0.9) / 1.9)
    elif shape == "cross":
        m = (ax <= t) | (ay <= t)
    elif shape == "ring":
        d = np.sqrt(xx ** 2 + yy ** 2)
        m = (d <= 1.0) & (d >= 1.0 - 2 * t)
    elif shape == "diamond":
        m = ax + ay <= 1.0
    elif shape == "xcross":
        m = (np.abs(xx - yy) <= 1.4 * t) | (np.abs(xx + yy) <= 1.4 * t)
    elif shape == "hbars":
        m = (np.abs(yy - 0.5) <= t) | (np.abs(yy + 0.5) <= t)
    elif shape == "frame":
        m = (ax >= 1.0 - 2 * t) | (ay >= 1.0 - 2 * t)
    else:
        raise ContractError(f"unknown stamp shape {shape!r}")
    return m


def texture(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean-ish background pattern in [-1, 1] with a random phase."""
    yy, xx = np.mgrid[0:size, 0:size]
    period = 6
    phase = rng.integers(period)
    if kind == "plain":
        return np.zeros((size, size))
    if kind == "hstripes":
        return np.where(((yy + phase) // (period // 2)) % 2 == 0, 1.0, -1.0)
    if kind == "vstripes":
        return np.where(((xx + phase) // (period // 2)) % 2 == 0, 1.0, -1.0)
    if kind == "checker":
        return np.where((((yy + phase) // 4) + ((xx + phase) // 4)) % 2 == 0, 1.0, -1.0)
    if kind == "dots":
        return np.where((((yy + phase) % period) < 2) & (((xx + phase) % period) < 2), 1.0, -1.0 / 3)
    raise ContractError(f"unknown texture {kind!r}")


def default_cooccurrence(n_cls: int) -> np.ndarray:
    """Sparse background co-occurrence plus a few strongly linked pairs.

    Context-coded classes never co-occur so each image has one background.
    """
    a = np.full((n_cls, n_cls), 0.08)
    pairs = [(2, 3, 0.55), (4, 5, 0.55), (0, 4, 0.35), (1, 2, 0.3)]
    for i, j, p in pairs:
        if max(i, j) < n_cls:
            a[i, j] = a[j, i] = p
    ctx = sorted(default_context_rule(n_cls))
    for i in ctx:
        for j in ctx:
            a[i, j] = 0.0
    np.fill_diagonal(a, 1.0)
    return a


def default_confusable_pairs(n_cls: int) -> list[tuple[int, int]]:
    if n_cls < 4:
        return []
    return [(0, n_cls - 2), (1, n_cls - 1)]


def default_context_rule(n_cls: int) -> dict[int, str]:
    rule = {}
    for (a, b), (ta, tb) in zip(default_confusable_pairs(n_cls),
                                [("hstripes", "vstripes"), ("checker", "dots")]):
        rule[a], rule[b] = ta, tb
    return rule


def default_vocabulary(n_cls: int) -> list[str]:
    vocab = [SHAPES[i % len(SHAPES)] for i in range(n_cls)]
    for a, b in default_confusable_pairs(n_cls):
        vocab[b] = vocab[a]
    return vocab


@dataclass
class SyntheticDatasetConfig:
    n_cls: int = 8
    n_train: int = 8000
    n_test: int = 1000
    image_size: int = 64
    scale_mix: float = 0.3
    max_labels: int = 4
    seed: int = 0
    cooccurrence: np.ndarray | None = None
    shape_vocabulary: list[str] | None = None
    context_rule: dict[int, str] | None = None
    small_classes: tuple[int, ...] = ()
    small_size: tuple[int, int] = (8, 12)
    large_size: tuple[int, int] = (14, 20)
    noise: float = 0.04
    texture_contrast: float = 0.08
    background_texture_rate: float = 0.8
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.image_size % 64:
            raise ConfigError(f"image_size {self.image_size} must be a multiple of 64")
        if self.cooccurrence is None:
            self.cooccurrence = default_cooccurrence(self.n_cls)
        self.cooccurrence = np.asarray(self.cooccurrence, dtype=float)
        if self.shape_vocabulary is None:
            self.shape_vocabulary = default_vocabulary(self.n_cls)
        if self.context_rule is None:
            self.context_rule = default_context_rule(self.n_cls)
        a = self.cooccurrence
        if a.shape != (self.n_cls, self.n_cls):
            raise ConfigError(f"cooccurrence shape {a.shape} != {(self.n_cls, self.n_cls)}")
        if not np.allclose(a, a.T) or not np.all(np.diag(a) == 1) or a.min() < 0 or a.max() > 1:
            raise ConfigError("cooccurrence must be symmetric with unit diagonal and entries in [0, 1]")
        if len(self.shape_vocabulary) != self.n_cls:
            raise ConfigError("shape_vocabulary needs one stamp per class")
        if not 0.0 <= self.scale_mix <= 1.0:
            raise ConfigError("scale_mix must lie in [0, 1]")

    @classmethod
    def from_config(cls, cfg: Config) -> "SyntheticDatasetConfig":
        cooc = None
        if cfg["data.cooccurrence"] not in ("", "default"):
            cooc = np.loadtxt(cfg["data.cooccurrence"], ndmin=2)
        small = tuple(int(s) for s in str(cfg["data.small_classes"]).split(",") if s.strip())
        return cls(n_cls=cfg["data.n_cls"], n_train=cfg["data.n_train"], n_test=cfg["data.n_test"],
                   image_size=cfg["data.image_size"], scale_mix=cfg["data.scale_mix"],
                   max_labels=cfg["data.max_labels"], seed=cfg["data.seed"], cooccurrence=cooc,
                   small_classes=small)


def sample_label_set(cfg: SyntheticDatasetConfig, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Draw one label vector and the primary class it was grown from."""
    ctx = set(cfg.context_rule)
    for _ in range(MAX_RETRIES):
        primary = int(rng.integers(cfg.n_cls))
        draw = rng.random(cfg.n_cls)
        y = (draw < cfg.cooccurrence[primary]).astype(np.uint8)
        y[primary] = 1
        if y.sum() > cfg.max_labels:
            continue
        if sum(int(y[c]) for c in ctx) > 1:
            continue
        return y, primary
    raise GenerationError(f"no feasible label set after {MAX_RETRIES} draws; "
                          "check cooccurrence, max_labels and context classes")


def expected_marginals(cooccurrence: np.ndarray) -> np.ndarray:
    """P(class j present) under a uniform primary, ignoring rejections."""
    return np.asarray(cooccurrence).mean(axis=0)


def render(labels: np.ndarray, cfg: SyntheticDatasetConfig, rng: np.random.Generator) -> np.ndarray:
    """Draw the stamps of ``labels`` on a background, ``[3, S, S]`` in [0, 1]."""
    s = cfg.image_size
    present = np.flatnonzero(labels)
    bg_kind = next((cfg.context_rule[c] for c in present if c in cfg.context_rule), None)
    if bg_kind is None:
        # non-context images still carry textures so texture alone is not a label cue
        bg_kind = TEXTURES[rng.integers(len(TEXTURES))] if rng.random() < cfg.background_texture_rate else "plain"
    base = rng.uniform(0.3, 0.55, size=3)
    img = base[:, None, None] + cfg.texture_contrast * texture(bg_kind, s, rng)[None]
    occupied = np.zeros((s, s), bool)
    for c in rng.permutation(present):
        small = c in cfg.small_classes or rng.random() < cfg.scale_mix
        lo, hi = cfg.small_size if small else cfg.large_size
        size = int(rng.integers(lo, hi + 1))
        mask = stamp_mask(cfg.shape_vocabulary[c], size)
        for _ in range(MAX_RETRIES):
            y0, x0 = rng.integers(0, s - size + 1, size=2)
            if not occupied[y0:y0 + size, x0:x0 + size].any():
                break
        else:
            raise GenerationError("could not place a stamp without overlap")
        occupied[y0:y0 + size, x0:x0 + size] = True
        color = PALETTE[rng.integers(len(PALETTE))]
        patch = img[:, y0:y0 + size, x0:x0 + size]
        patch[:, mask] = color[:, None]
    img = img + cfg.noise * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


@dataclass
class Split:
    images: np.ndarray  # [N, 3, S, S] float32
    labels: np.ndarray  # [N, n_cls] uint8

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_cls(self) -> int:
        return self.labels.shape[1]


@dataclass
class SyntheticDataset:
    train: Split
    test: Split
    config: SyntheticDatasetConfig

    @property
    def n_cls(self) -> int:
        return self.config.n_cls


def _sample_rng(seed: int, split: int, index: int) -> np.random.Generator:
    # one independent Philox stream per sample, so generation order does not matter
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, split, index])))


def generate_split(cfg: SyntheticDatasetConfig, n: int, split: int) -> Split:
    images = np.empty((n, 3, cfg.image_size, cfg.image_size), np.float32)
    labels = np.empty((n, cfg.n_cls), np.uint8)
    for i in range(n):
        rng = _sample_rng(cfg.seed, split, i)
        y, _ = sample_label_set(cfg, rng)
        labels[i] = y
        images[i] = render(y, cfg, rng)
    return Split(images, labels)


def generate_dataset(cfg: SyntheticDatasetConfig, out_dir: str | Path | None = None) -> SyntheticDataset:
    """Build train and test splits; write them to ``out_dir`` when given."""
    ds = SyntheticDataset(generate_split(cfg, cfg.n_train, 0), generate_split(cfg, cfg.n_test, 1), cfg)
    if out_dir is not None:
        save_dataset(ds, out_dir)
    return ds


def save_split(split: Split, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, (img, y) in enumerate(zip(split.images, split.labels)):
        name = f"{i:06d}.tdrg"
        save_tensor(directory / name, img)
        lines.append(name + " " + " ".join(str(int(v)) for v in y))
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_split(directory: str | Path) -> Split:
    directory = Path(directory)
    manifest = directory / "manifest.txt"
    if not manifest.exists():
        raise FileNotFoundError(f"missing {manifest}")
    images, labels = [], []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        path, *bits = line.split()
        images.append(load_tensor(directory / path))
        labels.append([int(b) for b in bits])
    if not images:
        raise ContractError(f"{manifest} lists no samples")
    return Split(np.stack(images), np.asarray(labels, np.uint8))


def save_dataset(ds: SyntheticDataset, out_dir: str | Path) -> None:
    out = Path(out_dir)
    save_split(ds.train, out / "train")
    save_split(ds.test, out / "test")
    np.savetxt(out / "cooccurrence.txt", ds.config.cooccurrence, fmt="%.6f")


def load_dataset(out_dir: str | Path) -> SyntheticDataset:
    out = Path(out_dir)
    train, test = load_split(out / "train"), load_split(out / "test")
    cooc_path = out / "cooccurrence.txt"
    cooc = np.loadtxt(cooc_path, ndmin=2) if cooc_path.exists() else None
    cfg = SyntheticDatasetConfig(n_cls=train.n_cls, n_train=len(train), n_test=len(test),
                                 image_size=train.images.shape[-1], cooccurrence=cooc)
    return SyntheticDataset(train, test, cfg)


def label_cooccurrence(labels: np.ndarray) -> np.ndarray:
    """Conditional frequencies ``P(j | i)`` from a label matrix (row i conditions on class i)."""
    y = np.asarray(labels, float)
    counts = y.T @ y
    n = np.diag(counts).copy()
    return np.divide(counts, n[:, None], out=np.zeros_like(counts), where=n[:, None] > 0)
