"""Flat ``key = value`` configuration with typed defaults."""
from __future__ import annotations

from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError

DEFAULTS: dict[str, Any] = {
    # backbone
    "backbone.channels": 32,
    "backbone.width": 8,
    "backbone.seed": 0,
    "backbone.scales": "16,32,64",
    "backbone.leaky_gain": True,
    # structural branch
    "structural.unit": "transformer",
    "structural.layers": 3,
    "structural.heads": 4,
    "structural.c_t": 32,
    "structural.ffn_dim": 64,
    "structural.share_weights": True,
    "structural.max_side": 16,
    "attention.scale_full_dim": False,
    "csa.enabled": True,
    "csa.combine": "mul",
    # semantic branch
    "semantic.enabled": True,
    "semantic.c_g": 32,
    "semantic.kmp_ratio": 0.05,
    "semantic.correlation": "learned",
    "semantic.static_path": "",
    "semantic.structural_guidance": True,
    "semantic.constraint_pool": "kmp",
    "semantic.source_scale": 32,
    # shared model settings
    "model.n_cls": 8,
    "model.alpha": 0.7,
    "model.leaky_slope": 0.2,
    "model.dtype": "float32",
    # fixed input standardisation (x - mean) / std, applied before the backbone
    "model.input_mean": 0.45,
    "model.input_std": 0.25,
    # training
    "train.lr": 0.01,
    "train.momentum": 0.9,
    "train.weight_decay": 1e-4,
    "train.lr_decay": 0.1,
    "train.lr_step": 30,
    "train.epochs": 50,
    "train.batch_size": 16,
    "train.seed": 0,
    "train.flip": False,
    # synthetic data
    "data.n_cls": 8,
    "data.n_train": 8000,
    "data.n_test": 1000,
    "data.image_size": 64,
    "data.scale_mix": 0.3,
    "data.max_labels": 4,
    "data.cooccurrence": "default",
    "data.small_classes": "",
    "data.seed": 0,
}

CHOICES: dict[str, tuple[str, ...]] = {
    "structural.unit": ("transformer", "mlp", "none"),
    "csa.combine": ("mul", "sum"),
    "semantic.correlation": ("static", "learned"),
    "semantic.constraint_pool": ("none", "gmp", "gap", "kmp"),
    "model.dtype": ("float32", "float64"),
}


def _parse(key: str, raw: Any) -> Any:
    default = DEFAULTS[key]
    if not isinstance(raw, str):
        value = raw
    elif isinstance(default, bool):
        low = raw.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
            raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
        value = low in ("true", "1", "yes", "on")
    elif isinstance(default, int):
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    elif isinstance(default, float):
        try:
            value = float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    else:
        value = raw.strip()
    if key in CHOICES and value not in CHOICES[key]:
        raise ConfigError(f"{key}: {value!r} not one of {CHOICES[key]}")
    return value


class Config(Mapping[str, Any]):
    """Immutable mapping over :data:`DEFAULTS` with validated overrides."""

    def __init__(self, values: Mapping[str, Any] | None = None, **kw):
        merged = dict(DEFAULTS)
        for key, raw in {**(values or {}), **{k.replace("__", "."): v for k, v in kw.items()}}.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = _parse(key, raw)
        self._values = merged
        self._validate()

    def _validate(self):
        v = self._values
        if v["structural.c_t"] % v["structural.heads"]:
            raise ConfigError("structural.c_t must be divisible by structural.heads")
        if not 0.0 <= v["model.alpha"] <= 1.0:
            raise ConfigError("model.alpha must lie in [0, 1]")
        if not 0.0 < v["semantic.kmp_ratio"] <= 1.0:
            raise ConfigError("semantic.kmp_ratio must lie in (0, 1]")
        if v["data.image_size"] % 64:
            raise ConfigError("data.image_size must be a multiple of 64")
        if v["model.input_std"] <= 0:
            raise ConfigError("model.input_std must be positive")
        if v["train.lr"] < 0:
            raise ConfigError("train.lr must be non-negative")
        scales = self.scales
        if not scales or any(s not in (16, 32, 64) for s in scales) or len(set(scales)) != len(scales):
            raise ConfigError(f"backbone.scales must name distinct values from 16,32,64, got {v['backbone.scales']!r}")
        if v["semantic.source_scale"] not in (16, 32, 64):
            raise ConfigError("semantic.source_scale must be 16, 32 or 64")

    @property
    def scales(self) -> list[int]:
        raw = str(self._values["backbone.scales"])
        try:
            return sorted(int(s) for s in raw.split(",") if s.strip())
        except ValueError:
            raise ConfigError(f"backbone.scales: cannot parse {raw!r}") from None

    def __getitem__(self, key: str) -> Any:
        try:
            return self._values[key]
        except KeyError:
            raise ConfigError(f"unknown config key {key!r}") from None

    def __iter__(self):
        return iter(self._values)

    def __len__(self):
        return len(self._values)

    def replace(self, values: Mapping[str, Any] | None = None, **kw) -> "Config":
        merged = dict(self._values)
        merged.update(values or {})
        merged.update({k.replace("__", "."): v for k, v in kw.items()})
        return Config(merged)

    def dumps(self) -> str:
        return "".join(f"{k} = {_fmt(self._values[k])}\n" for k in sorted(self._values))

    @classmethod
    def loads(cls, text: str, overrides: list[str] | None = None) -> "Config":
        values = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected 'key = value', got {line!r}")
            k, v = line.split("=", 1)
            values[k.strip()] = v.strip()
        values.update(parse_overrides(overrides or []))
        return cls(values)

    @classmethod
    def load(cls, path: str | Path | None, overrides: list[str] | None = None) -> "Config":
        text = Path(path).read_text() if path else ""
        return cls.loads(text, overrides)

    def __eq__(self, other):
        return isinstance(other, Config) and self._values == other._values

    def __hash__(self):
        return hash(self.dumps())


def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def parse_overrides(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out
