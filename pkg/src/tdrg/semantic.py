"""Class-wise relation graph: class maps, joint correlation and a residual GCN layer."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numeric as nm
from .config import Config
from .errors import ConfigError, DimensionError
from .numeric import ParameterStore, Tensor
from .structural import StructuralGraph, add_linear

POOL_KINDS = {"gmp": "global_max", "gap": "global_avg", "kmp": "topk_max"}


@dataclass
class SemanticConfig:
    n_cls: int = 8
    c_g: int = 32
    kmp_ratio: float = 0.05
    source_scale: int = 32
    correlation: str = "learned"
    structural_guidance: bool = True
    constraint_pool: str = "kmp"

    def __post_init__(self):
        if not 0.0 < self.kmp_ratio <= 1.0:
            raise ConfigError(f"kmp_ratio must lie in (0, 1], got {self.kmp_ratio}")

    @classmethod
    def from_config(cls, cfg: Config) -> "SemanticConfig":
        return cls(cfg["model.n_cls"], cfg["semantic.c_g"], cfg["semantic.kmp_ratio"],
                   cfg["semantic.source_scale"], cfg["semantic.correlation"],
                   cfg["semantic.structural_guidance"], cfg["semantic.constraint_pool"])


@dataclass
class SemanticGraph:
    nodes: Tensor  # G, [..., N_cls, C_G (+ C_T)]
    correlation: Tensor  # A^s, [..., N_cls, N_cls]
    class_maps: Tensor  # M, [..., N_cls, H, W]
    constraint_logits: Tensor | None  # pooled M, [..., N_cls]; None when the constraint is off


def class_activation_maps(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """1x1 convolution from feature channels to one map per class."""
    return nm.conv2d(x, w, b)


def semantic_vectors(m: Tensor, x: Tensor, w_g: Tensor, b_g: Tensor | None = None) -> Tensor:
    """``R(M) @ phi_g(R(X)^T)``: class maps pooled against reduced features -> ``[..., N_cls, C_G]``."""
    m, x = nm.as_tensor(m), nm.as_tensor(x)
    if m.shape[-2:] != x.shape[-2:]:
        raise DimensionError(f"class maps {m.shape} and features {x.shape} differ spatially")
    hw = x.shape[-1] * x.shape[-2]
    rm = nm.reshape(m, m.shape[:-2] + (hw,))
    rx = nm.swapaxes(nm.reshape(x, x.shape[:-2] + (hw,)), -1, -2)
    return nm.matmul(rm, nm.linear(rx, w_g, b_g))


def constraint_logits(m: Tensor, ratio: float = 0.05, kind: str = "kmp") -> Tensor:
    """Squeeze each class map to one logit; ``kmp`` averages the top ``max(1, floor(ratio*HW))``."""
    if kind not in POOL_KINDS:
        raise ConfigError(f"unknown constraint pool {kind!r}")
    return nm.pool(m, POOL_KINDS[kind], ratio)


def structure_vectors(t, n_cls: int) -> Tensor:
    """Average the structural nodes and repeat the result once per class."""
    nodes = t.nodes if isinstance(t, StructuralGraph) else nm.as_tensor(t)
    pooled = nm.mean(nodes, axis=-2, keepdims=True)
    return nm.broadcast_to(pooled, nodes.shape[:-2] + (n_cls, nodes.shape[-1]))


def joint_correlation(v_t: Tensor | None, v_g: Tensor, w_c: Tensor, b_c: Tensor | None = None,
                      w_t: Tensor | None = None, b_t: Tensor | None = None) -> Tensor:
    """``sigmoid(phi_c(concat(phi_t(V_T), V_G)))``; without ``v_t`` only ``V_G`` feeds ``phi_c``."""
    v_g = nm.as_tensor(v_g)
    if v_t is not None:
        if v_t.shape[-2] != v_g.shape[-2]:
            raise DimensionError(f"row counts differ: {v_t.shape} vs {v_g.shape}")
        feats = nm.concat([nm.linear(v_t, w_t, b_t), v_g], axis=-1)
    else:
        feats = v_g
    return nm.sigmoid(nm.linear(feats, w_c, b_c))


def gcn_update(v: Tensor, a_s, w_g: Tensor, slope: float = 0.2) -> Tensor:
    """One residual graph convolution: ``leaky_relu(A V W) + V``."""
    v = nm.as_tensor(v)
    return nm.leaky_relu(nm.matmul(nm.matmul(a_s, v), w_g), slope) + v


def load_static_correlation(path: str | Path, n_cls: int) -> np.ndarray:
    """Read ``n_cls`` whitespace-separated rows of ``n_cls`` floats."""
    try:
        a = np.loadtxt(path, ndmin=2)
    except OSError as exc:
        raise ConfigError(f"cannot read static correlation {path}: {exc}") from exc
    if a.shape != (n_cls, n_cls):
        raise ConfigError(f"static correlation {path} has shape {a.shape}, expected {(n_cls, n_cls)}")
    return a


def save_static_correlation(path: str | Path, a: np.ndarray) -> None:
    np.savetxt(path, np.asarray(a), fmt="%.8f")


class SemanticBranch:
    def __init__(self, cfg: Config, params: ParameterStore, rng: np.random.Generator,
                 in_channels: int, t_dim: int, dtype=np.float32, static: np.ndarray | None = None):
        self.params = params
        self.scfg = scfg = SemanticConfig.from_config(cfg)
        self.slope = cfg["model.leaky_slope"]
        self.t_dim = t_dim
        c, cg, n = in_channels, scfg.c_g, scfg.n_cls
        params.add("semantic.cam.w", nm.glorot_uniform(rng, (n, c, 1, 1), c, n, dtype))
        params.add("semantic.cam.b", np.zeros(n, dtype))
        add_linear(params, rng, "semantic.phi_g", c, cg, dtype)
        if scfg.correlation == "learned":
            if scfg.structural_guidance:
                add_linear(params, rng, "semantic.phi_t", t_dim, cg, dtype)
            width = 2 * cg if scfg.structural_guidance else cg
            add_linear(params, rng, "semantic.phi_c", width, n, dtype)
            self.static = None
        else:
            if static is None:
                if not cfg["semantic.static_path"]:
                    raise ConfigError("semantic.correlation=static needs semantic.static_path")
                static = load_static_correlation(cfg["semantic.static_path"], n)
            self.static = np.asarray(static, dtype=dtype)
        self.node_dim = cg + t_dim if scfg.structural_guidance else cg
        params.add("semantic.gcn.w", nm.glorot_uniform(rng, (self.node_dim, self.node_dim),
                                                       self.node_dim, self.node_dim, dtype))

    def __call__(self, x: Tensor, t: StructuralGraph) -> SemanticGraph:
        return build_semantic_graph(x, t, self)


def build_semantic_graph(x: Tensor, t: StructuralGraph, branch: SemanticBranch) -> SemanticGraph:
    """Class maps -> semantic vectors and constraint logits; structural pooling -> joint
    correlation -> one GCN layer."""
    p, scfg = branch.params, branch.scfg
    m = class_activation_maps(x, p["semantic.cam.w"], p["semantic.cam.b"])
    v_g = semantic_vectors(m, x, p["semantic.phi_g.w"], p["semantic.phi_g.b"])
    pooled = None
    if scfg.constraint_pool != "none":
        pooled = constraint_logits(m, scfg.kmp_ratio, scfg.constraint_pool)
    v_t = structure_vectors(t, scfg.n_cls) if scfg.structural_guidance else None
    if branch.static is not None:
        a_s = nm.Tensor(branch.static)
    elif v_t is not None:
        a_s = joint_correlation(v_t, v_g, p["semantic.phi_c.w"], p["semantic.phi_c.b"],
                                p["semantic.phi_t.w"], p["semantic.phi_t.b"])
    else:
        a_s = joint_correlation(None, v_g, p["semantic.phi_c.w"], p["semantic.phi_c.b"])
    v = nm.concat([v_g, v_t], axis=-1) if v_t is not None else v_g
    g = gcn_update(v, a_s, p["semantic.gcn.w"], branch.slope)
    return SemanticGraph(g, a_s, m, pooled)
