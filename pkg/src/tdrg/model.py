"""Full network: backbone, both relation branches and the fused classifier."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numeric as nm
from .backbone import Backbone, MultiScaleFeatures
from .config import Config
from .errors import ConfigError
from .objective import Prediction, fuse_predictions, semantic_logits, structural_logits, total_loss
from .numeric import ParameterStore
from .semantic import SemanticBranch, SemanticGraph
from .structural import StructuralBranch, StructuralGraph, add_linear


@dataclass
class Forward:
    features: MultiScaleFeatures
    structural: StructuralGraph
    semantic: SemanticGraph | None
    prediction: Prediction


class TDRG:
    """The two-branch multi-label classifier; all weights live in ``self.params``."""

    def __init__(self, cfg: Config | None = None, static_correlation: np.ndarray | None = None):
        cfg = cfg or Config()
        if cfg["model.n_cls"] < 1:
            raise ConfigError("model.n_cls must be positive")
        self.cfg = cfg
        self.dtype = np.dtype(cfg["model.dtype"])
        self.params = ParameterStore()
        rng = nm.make_rng(cfg["backbone.seed"])
        n = cfg["model.n_cls"]
        self.backbone = Backbone(cfg, self.params, rng, self.dtype)
        c = cfg["backbone.channels"]
        self.structural = StructuralBranch(cfg, self.params, rng, c, self.dtype)
        add_linear(self.params, rng, "head.struct", self.structural.dim, n, self.dtype)
        self.semantic = None
        if cfg["semantic.enabled"]:
            self.semantic = SemanticBranch(cfg, self.params, rng, c, self.structural.dim,
                                           self.dtype, static_correlation)
            d = self.semantic.node_dim
            self.params.add("head.sem.w", nm.glorot_uniform(rng, (n, d), d, 1, self.dtype))
            self.params.add("head.sem.b", np.zeros(n, self.dtype))

    @property
    def n_cls(self) -> int:
        return self.cfg["model.n_cls"]

    def forward(self, images) -> Forward:
        raw = np.asarray(images.data if isinstance(images, nm.Tensor) else images, dtype=self.dtype)
        mean, std = self.cfg["model.input_mean"], self.cfg["model.input_std"]
        x = nm.as_tensor(((raw - mean) / std).astype(self.dtype))
        feats = self.backbone(x)
        t = self.structural(feats)
        p = self.params
        s_logits = structural_logits(t.nodes, p["head.struct.w"], p["head.struct.b"])
        g = None
        g_logits = c_logits = None
        if self.semantic is not None:
            g = self.semantic(feats[self.cfg["semantic.source_scale"]], t)
            g_logits = semantic_logits(g.nodes, p["head.sem.w"], p["head.sem.b"])
            c_logits = g.constraint_logits
        pred = fuse_predictions(s_logits, g_logits, self.cfg["model.alpha"], c_logits)
        return Forward(feats, t, g, pred)

    __call__ = forward

    def predict(self, images, batch_size: int = 32) -> np.ndarray:
        """Sigmoid of the fused logits, ``[N, n_cls]``; one sample per row regardless of batching."""
        images = np.asarray(images)
        out = []
        for i in range(0, len(images), batch_size):
            out.append(self.forward(images[i:i + batch_size]).prediction.fused.data)
        logits = np.concatenate(out, axis=0).astype(np.float64)
        return 1.0 / (1.0 + np.exp(-logits))


GRADCHECK_CONFIG = {
    "model.dtype": "float64", "model.n_cls": 8, "structural.c_t": 16, "semantic.c_g": 16,
    "structural.layers": 1, "structural.heads": 2, "structural.ffn_dim": 16,
    "structural.max_side": 4, "backbone.width": 4, "backbone.channels": 16,
}


def gradcheck_model(cfg: Config | None = None, seed: int = 0, image_size: int = 64,
                    max_coords: int | None = None) -> list[nm.GradCheckResult]:
    """Finite-difference check of every parameter of a float64 model on one random sample.

    With no ``cfg`` the small configuration in :data:`GRADCHECK_CONFIG` is used.
    """
    cfg = (cfg or Config(GRADCHECK_CONFIG)).replace({"model.dtype": "float64"})
    model = TDRG(cfg)
    rng = nm.make_rng(seed, 1)
    x = rng.random((1, 3, image_size, image_size))
    y = (rng.random((1, cfg["model.n_cls"])) < 0.5).astype(np.float64)
    return nm.gradcheck(lambda: total_loss(model(x).prediction, y)[0], model.params,
                        max_coords=max_coords, rng=rng)
