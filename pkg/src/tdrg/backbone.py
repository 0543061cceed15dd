"""Toy strided CNN emitting feature maps at 1/16, 1/32 and 1/64 resolution."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numeric as nm
from .config import Config
from .errors import DimensionError
from .numeric import ParameterStore, Tensor

# block index (1-based) whose output is tapped for each downsampling factor
TAPS = {16: 4, 32: 5, 64: 6}


@dataclass
class MultiScaleFeatures:
    """Reduced feature maps ordered from finest to coarsest."""

    maps: list[Tensor]
    factors: list[int]

    def __getitem__(self, factor: int) -> Tensor:
        return self.maps[self.factors.index(factor)]

    def __len__(self) -> int:
        return len(self.maps)


def block_widths(width: int) -> list[int]:
    return [width, 2 * width, 2 * width, 4 * width, 4 * width, 4 * width]


def reduce_channels(x: Tensor, w1: Tensor, b1: Tensor, w3: Tensor, b3: Tensor) -> Tensor:
    """1x1 then 3x3 (padding 1) convolution, no nonlinearity in between."""
    return nm.conv2d(nm.conv2d(x, w1, b1), w3, b3, padding=1)


class Backbone:
    def __init__(self, cfg: Config, params: ParameterStore, rng: np.random.Generator,
                 dtype=np.float32):
        self.cfg = cfg
        self.params = params
        self.scales = cfg.scales
        self.slope = cfg["model.leaky_slope"]
        self.n_blocks = max(TAPS[s] for s in set(self.scales) | {cfg["semantic.source_scale"]})
        widths = block_widths(cfg["backbone.width"])
        c = cfg["backbone.channels"]
        # rectifier gain keeps activations from shrinking through the stack
        gain = np.sqrt(2.0 / (1.0 + self.slope ** 2)) if cfg["backbone.leaky_gain"] else 1.0
        c_in = 3
        for i in range(1, self.n_blocks + 1):
            c_out = widths[i - 1]
            w = nm.glorot_uniform(rng, (c_out, c_in, 3, 3), c_in * 9, c_out * 9, dtype, gain)
            params.add(f"backbone.block{i}.w", w)
            params.add(f"backbone.block{i}.b", np.zeros(c_out, dtype))
            c_in = c_out
        self.raw_channels = {s: widths[TAPS[s] - 1] for s in TAPS}
        for s in self.feature_scales:
            cr = self.raw_channels[s]
            params.add(f"backbone.reduce{s}.w1", nm.glorot_uniform(rng, (c, cr, 1, 1), cr, c, dtype, gain))
            params.add(f"backbone.reduce{s}.b1", np.zeros(c, dtype))
            params.add(f"backbone.reduce{s}.w3", nm.glorot_uniform(rng, (c, c, 3, 3), c * 9, c * 9, dtype, gain))
            params.add(f"backbone.reduce{s}.b3", np.zeros(c, dtype))

    @property
    def feature_scales(self) -> list[int]:
        return sorted(set(self.scales) | {self.cfg["semantic.source_scale"]})

    def __call__(self, image) -> MultiScaleFeatures:
        return extract_features(image, self)


def extract_features(image, backbone: Backbone) -> MultiScaleFeatures:
    """Run the strided stack and reduce every tapped map to ``backbone.channels``.

    ``image`` is ``[3, H, W]`` or ``[B, 3, H, W]`` with H, W multiples of 64.
    """
    x = nm.as_tensor(image)
    h, w = x.shape[-2:]
    if h % 64 or w % 64:
        raise DimensionError(f"input size {h}x{w} must be a multiple of 64 on both sides")
    p = backbone.params
    taps = {}
    for i in range(1, backbone.n_blocks + 1):
        x = nm.leaky_relu(nm.conv2d(x, p[f"backbone.block{i}.w"], p[f"backbone.block{i}.b"],
                                    stride=2, padding=1), backbone.slope)
        taps[i] = x
    factors = backbone.feature_scales
    maps = [reduce_channels(taps[TAPS[s]], p[f"backbone.reduce{s}.w1"], p[f"backbone.reduce{s}.b1"],
                            p[f"backbone.reduce{s}.w3"], p[f"backbone.reduce{s}.b3"]) for s in factors]
    return MultiScaleFeatures(maps, factors)
