"""Position-wise relation graph: cross-scale fusion plus transformer units."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numeric as nm
from .backbone import MultiScaleFeatures
from .config import Config
from .errors import ConfigError, DimensionError
from .numeric import ParameterStore, Tensor


@dataclass
class TransformerConfig:
    layers: int = 3
    heads: int = 4
    model_dim: int = 32
    ffn_dim: int = 64
    share_across_scales: bool = True
    scale_full_dim: bool = False
    slope: float = 0.2

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by {self.heads} heads")

    @classmethod
    def from_config(cls, cfg: Config) -> "TransformerConfig":
        return cls(cfg["structural.layers"], cfg["structural.heads"], cfg["structural.c_t"],
                   cfg["structural.ffn_dim"], cfg["structural.share_weights"],
                   cfg["attention.scale_full_dim"], cfg["model.leaky_slope"])


@dataclass
class StructuralGraph:
    """Node matrix ``T`` (``[..., N_T, C_T]``) with the per-scale pieces it was built from."""

    nodes: Tensor
    per_scale: list[Tensor]
    factors: list[int]
    # attention_maps[scale][layer] -> array [..., heads, N_i, N_i]
    attention_maps: list[list[np.ndarray]] = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[-2]


class _Prefixed:
    """Read-only view of a parameter store under a name prefix."""

    def __init__(self, params: ParameterStore, prefix: str):
        self.params, self.prefix = params, prefix

    def __getitem__(self, key: str) -> Tensor:
        return self.params[f"{self.prefix}.{key}"]


def add_linear(params, rng, name, n_in, n_out, dtype, bias=True):
    params.add(f"{name}.w", nm.glorot_uniform(rng, (n_in, n_out), n_in, n_out, dtype))
    if bias:
        params.add(f"{name}.b", np.zeros(n_out, dtype))


def positional_encode(x: Tensor, table: Tensor) -> Tensor:
    """Flatten ``[..., C_T, H, W]`` row-major to ``[..., HW, C_T]`` and add the position table."""
    x = nm.as_tensor(x)
    c, h, w = x.shape[-3:]
    side_h, side_w = table.shape[:2]
    if h > side_h or w > side_w:
        raise ConfigError(f"spatial size {h}x{w} exceeds positional table {side_h}x{side_w}; "
                          "raise structural.max_side")
    tokens = nm.swapaxes(nm.reshape(x, x.shape[:-2] + (h * w,)), -1, -2)
    e = nm.reshape(nm.index(table, (slice(0, h), slice(0, w))), (h * w, c))
    return tokens + e


def multi_head_self_attention(x_e: Tensor, p, heads: int, scale_full_dim: bool = False
                              ) -> tuple[Tensor, np.ndarray]:
    """Scaled dot-product attention per head, heads concatenated and mixed linearly.

    Returns the mixed output (same shape as ``x_e``) and the attention
    weights ``[..., heads, N, N]``.
    """
    x_e = nm.as_tensor(x_e)
    n, c = x_e.shape[-2:]
    if c % heads:
        raise DimensionError(f"model dim {c} not divisible by {heads} heads")
    d = c // heads
    lead = x_e.shape[:-2]

    def split(t):
        # [..., N, C] -> [..., heads, N, d]
        return nm.swapaxes(nm.reshape(t, lead + (n, heads, d)), -3, -2)

    q = split(nm.linear(x_e, p["wq"], p["bq"]))
    k = split(nm.linear(x_e, p["wk"], p["bk"]))
    v = split(nm.linear(x_e, p["wv"], p["bv"]))
    temp = np.sqrt(c if scale_full_dim else d)
    attn = nm.softmax(nm.matmul(q, nm.swapaxes(k, -1, -2)) / temp, axis=-1)
    h = nm.matmul(attn, v)
    h = nm.reshape(nm.swapaxes(h, -3, -2), lead + (n, c))
    return nm.linear(h, p["wo"], p["bo"]), attn.data


def feed_forward(x: Tensor, p, slope: float) -> Tensor:
    return nm.linear(nm.leaky_relu(nm.linear(x, p["1.w"], p["1.b"]), slope), p["2.w"], p["2.b"])


def transformer_unit(x_e: Tensor, p, config: TransformerConfig) -> tuple[Tensor, list[np.ndarray]]:
    """Post-norm encoder layers: attention then feed-forward, each with residual + LayerNorm."""
    x = nm.as_tensor(x_e)
    maps = []
    for i in range(config.layers):
        lp = _Prefixed(p.params, f"{p.prefix}.layer{i}")
        a, attn = multi_head_self_attention(x, lp, config.heads, config.scale_full_dim)
        maps.append(attn)
        x = nm.layer_norm(x + a, lp["ln1.g"], lp["ln1.b"])
        x = nm.layer_norm(x + feed_forward(x, _Prefixed(p.params, f"{lp.prefix}.ffn"), config.slope),
                          lp["ln2.g"], lp["ln2.b"])
    return x, maps


def mlp_unit(x_e: Tensor, p, config: TransformerConfig) -> tuple[Tensor, list[np.ndarray]]:
    """Transformer unit with the attention sub-layer removed (per-token MLP only)."""
    x = nm.as_tensor(x_e)
    for i in range(config.layers):
        lp = _Prefixed(p.params, f"{p.prefix}.layer{i}")
        x = nm.layer_norm(x + feed_forward(x, _Prefixed(p.params, f"{lp.prefix}.ffn"), config.slope),
                          lp["ln2.g"], lp["ln2.b"])
    return x, []


def cross_scale_fuse(features: MultiScaleFeatures, enabled: bool = True, combine: str = "mul"
                     ) -> list[Tensor]:
    """Combine all scales at the finest resolution and add the result back to each scale.

    With ``combine="mul"`` the up-sampled maps are multiplied position-wise,
    with ``"sum"`` they are added. A disabled module returns the inputs.
    """
    maps = list(features.maps)
    if not maps:
        raise DimensionError("cross_scale_fuse needs at least one scale")
    if not enabled:
        return maps
    channels = {m.shape[-3] for m in maps}
    if len(channels) != 1:
        raise DimensionError(f"channel counts differ across scales: {sorted(channels)}")
    sizes = [m.shape[-2:] for m in maps]
    fine = max(sizes)
    joint = None
    for m in maps:
        up = m if m.shape[-2:] == fine else nm.resample(m, fine, "up_bilinear")
        if joint is None:
            joint = up
        elif combine == "mul":
            joint = joint * up
        elif combine == "sum":
            joint = joint + up
        else:
            raise ConfigError(f"unknown csa.combine {combine!r}")
    return [(joint if tuple(s) == tuple(fine) else nm.resample(joint, tuple(s), "down_avg")) + m
            for m, s in zip(maps, sizes)]


class StructuralBranch:
    def __init__(self, cfg: Config, params: ParameterStore, rng: np.random.Generator,
                 in_channels: int, dtype=np.float32):
        self.params = params
        self.unit = cfg["structural.unit"]
        self.tcfg = TransformerConfig.from_config(cfg)
        self.scales = cfg.scales
        self.csa = cfg["csa.enabled"]
        self.combine = cfg["csa.combine"]
        side = cfg["structural.max_side"]
        c, ct, ff = in_channels, self.tcfg.model_dim, self.tcfg.ffn_dim
        self.dim = c if self.unit == "none" else ct
        if self.unit == "none":
            return
        for name in self._unit_names():
            params.add(f"{name}.phi.w", nm.glorot_uniform(rng, (ct, c, 1, 1), c, ct, dtype))
            params.add(f"{name}.phi.b", np.zeros(ct, dtype))
            for i in range(self.tcfg.layers):
                lp = f"{name}.layer{i}"
                if self.unit == "transformer":
                    for proj in ("q", "k", "v", "o"):
                        params.add(f"{lp}.w{proj}", nm.glorot_uniform(rng, (ct, ct), ct, ct, dtype))
                        params.add(f"{lp}.b{proj}", np.zeros(ct, dtype))
                    params.add(f"{lp}.ln1.g", np.ones(ct, dtype))
                    params.add(f"{lp}.ln1.b", np.zeros(ct, dtype))
                add_linear(params, rng, f"{lp}.ffn.1", ct, ff, dtype)
                add_linear(params, rng, f"{lp}.ffn.2", ff, ct, dtype)
                params.add(f"{lp}.ln2.g", np.ones(ct, dtype))
                params.add(f"{lp}.ln2.b", np.zeros(ct, dtype))
        # zero start keeps the tokens translation invariant until position is worth learning
        for s in self.scales:
            params.add(f"structural.pos{s}", np.zeros((side, side, ct), dtype))

    def _unit_names(self) -> list[str]:
        if self.tcfg.share_across_scales:
            return ["structural.unit"]
        return [f"structural.unit{s}" for s in self.scales]

    def unit_prefix(self, scale: int) -> str:
        return "structural.unit" if self.tcfg.share_across_scales else f"structural.unit{scale}"

    def __call__(self, features: MultiScaleFeatures) -> StructuralGraph:
        return build_structural_graph(features, self)


def build_structural_graph(features: MultiScaleFeatures, branch: StructuralBranch) -> StructuralGraph:
    """Enhance each active scale, run it through its transformer unit and stack the tokens."""
    active = MultiScaleFeatures([features[s] for s in branch.scales], list(branch.scales))
    enhanced = cross_scale_fuse(active, branch.csa, branch.combine)
    per_scale, maps = [], []
    for s, x in zip(active.factors, enhanced):
        if branch.unit == "none":
            h, w = x.shape[-2:]
            t = nm.swapaxes(nm.reshape(x, x.shape[:-2] + (h * w,)), -1, -2)
            attn = []
        else:
            prefix = branch.unit_prefix(s)
            phi = nm.conv2d(x, branch.params[f"{prefix}.phi.w"], branch.params[f"{prefix}.phi.b"])
            x_e = positional_encode(phi, branch.params[f"structural.pos{s}"])
            run = transformer_unit if branch.unit == "transformer" else mlp_unit
            t, attn = run(x_e, _Prefixed(branch.params, prefix), branch.tcfg)
        per_scale.append(t)
        maps.append(attn)
    nodes = per_scale[0] if len(per_scale) == 1 else nm.concat(per_scale, axis=-2)
    return StructuralGraph(nodes, per_scale, list(active.factors), maps)
