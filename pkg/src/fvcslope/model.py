"""Slope-prediction network: residual CNN, stacked self-attention, fusion head.

One CT slice runs through a small stride-2 residual backbone; the final
feature map is flattened to [c', N], refined by l stacked attention layers
(query/key inner dim = the attention filter size, value projection kept at
c'), pooled over positions, optionally passed through a linear layer, then
concatenated with the shallow feature vector and mapped to a single slope
by an affine head. A learnable scalar gate on each attention layer makes
gate=0 reduce exactly to the attention-free network.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import load_arrays, save_arrays
from .tensor import Tensor

__all__ = [
    "ModelConfig",
    "AttentionLayerParams",
    "FibroModel",
    "flatten_spatial",
    "unflatten_spatial",
    "attention_layer",
    "stacked_attention",
    "reconstruct_fvc",
]


@dataclass
class ModelConfig:
    """Architecture hyper-parameters; everything downstream derives from these."""

    input_size: tuple = (64, 64)
    backbone_channels: tuple = (8, 16, 32)
    attention_filter_size: int = 32
    stacking_factor: int = 1
    shallow_dim: int = 5
    seed: int = 0
    post_pool_linear: bool = True
    gamma_init_range: tuple = (0.0, 0.1)

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        self.backbone_channels = tuple(int(c) for c in self.backbone_channels)
        self.gamma_init_range = tuple(float(v) for v in self.gamma_init_range)
        if len(self.input_size) != 2 or min(self.input_size) < 1:
            raise ValueError(f"bad input size {self.input_size}")
        if not self.backbone_channels or min(self.backbone_channels) < 1:
            raise ValueError(f"bad backbone channels {self.backbone_channels}")
        if self.attention_filter_size < 1:
            raise ValueError(
                f"attention filter size must be >= 1, got {self.attention_filter_size}"
            )
        if self.stacking_factor < 0:
            raise ValueError(f"stacking factor must be >= 0, got {self.stacking_factor}")
        if self.shallow_dim < 1:
            raise ValueError(f"shallow dim must be >= 1, got {self.shallow_dim}")
        n_stages = len(self.backbone_channels)
        if min(self.input_size) < 2**n_stages:
            raise ValueError(
                f"input {self.input_size} too small for {n_stages} stride-2 stages"
            )

    @property
    def feature_channels(self) -> int:
        return self.backbone_channels[-1]

    @property
    def feature_map_size(self) -> tuple:
        s = 2 ** len(self.backbone_channels)
        return (self.input_size[0] // s, self.input_size[1] // s)

    def to_dict(self) -> dict:
        return {
            "input_size": list(self.input_size),
            "backbone_channels": list(self.backbone_channels),
            "attention_filter_size": self.attention_filter_size,
            "stacking_factor": self.stacking_factor,
            "shallow_dim": self.shallow_dim,
            "seed": self.seed,
            "post_pool_linear": self.post_pool_linear,
            "gamma_init_range": list(self.gamma_init_range),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class AttentionLayerParams:
    """Projections for one attention layer plus its scalar output gate."""

    w_f: Tensor  # [c', d_k] query projection
    w_g: Tensor  # [c', d_k] key projection
    w_h: Tensor  # [c', c']  value projection
    gamma: Tensor  # [1] learnable gate


def flatten_spatial(f_c: Tensor) -> Tensor:
    """Reshape a [1, c', h, w] feature map to [c', h*w] (row-major)."""
    if f_c.data.ndim != 4 or f_c.shape[0] != 1:
        raise ValueError(f"expected [1, c', h, w], got {f_c.shape}")
    _, c, h, w = f_c.shape
    return T.reshape(f_c, (c, h * w))


def unflatten_spatial(f_flat: Tensor, h: int, w: int) -> Tensor:
    """Inverse of :func:`flatten_spatial`."""
    c, n = f_flat.shape
    if n != h * w:
        raise ValueError(f"cannot unflatten {f_flat.shape} to {h}x{w}")
    return T.reshape(f_flat, (1, c, h, w))


def attention_layer(f_flat: Tensor, params: AttentionLayerParams) -> Tensor:
    """Position-wise self-attention over a [c', N] map, gated residual output.

    Queries and keys are d_k-dimensional projections of each position;
    attention weights are a row-stochastic [N, N] matrix (softmax over key
    positions per query). The output is gamma * attended_values + input.
    """
    if f_flat.data.ndim != 2:
        raise ValueError(f"expected [c', N], got {f_flat.shape}")
    if not np.all(np.isfinite(f_flat.data)):
        raise ValueError("non-finite attention input")
    c = f_flat.shape[0]
    if params.w_f.shape[0] != c or params.w_g.shape[0] != c or \
            params.w_h.shape != (c, c):
        raise ValueError(
            f"attention params expect c'={params.w_h.shape[0]}, map has c'={c}"
        )
    q = T.matmul(T.transpose2(params.w_f), f_flat)  # [d_k, N]
    k = T.matmul(T.transpose2(params.w_g), f_flat)  # [d_k, N]
    v = T.matmul(params.w_h, f_flat)  # [c', N]
    beta = T.softmax_rows(T.matmul(T.transpose2(q), k))  # [N, N], rows sum to 1
    o_a = T.matmul(v, T.transpose2(beta))  # [c', N]
    return T.add(T.scale(params.gamma, o_a), f_flat)


def stacked_attention(f_flat: Tensor, layers) -> Tensor:
    """Sequential composition of attention layers; an empty list is identity."""
    out = f_flat
    for layer in layers:
        out = attention_layer(out, layer)
    return out


def reconstruct_fvc(slope: float, baseline_fvc_ml: float, weeks,
                    baseline_week: int = 0) -> list:
    """Linear FVC trajectory anchored at the baseline measurement week."""
    return [slope * (int(w) - int(baseline_week)) + baseline_fvc_ml for w in weeks]


class FibroModel:
    """The full network; parameters are named float64 tensors."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None):
        self.config = config
        self.params = params if params is not None else self._init_params(config)
        self.attention = [
            AttentionLayerParams(
                self.params[f"attn.{i}.w_f"],
                self.params[f"attn.{i}.w_g"],
                self.params[f"attn.{i}.w_h"],
                self.params[f"attn.{i}.gamma"],
            )
            for i in range(config.stacking_factor)
        ]

    # -- construction -------------------------------------------------------

    @staticmethod
    def _init_params(cfg: ModelConfig) -> dict[str, Tensor]:
        rng = np.random.default_rng(cfg.seed)

        def kaiming(shape, fan_in):
            return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape),
                          requires_grad=True)

        params: dict[str, Tensor] = {}
        chans = cfg.backbone_channels
        params["backbone.stem.w"] = kaiming((chans[0], 1, 3, 3), 9)
        prev = chans[0]
        for i, c in enumerate(chans):
            params[f"backbone.stage{i}.conv1.w"] = kaiming((c, prev, 3, 3), prev * 9)
            params[f"backbone.stage{i}.conv2.w"] = kaiming((c, c, 3, 3), c * 9)
            params[f"backbone.stage{i}.shortcut.w"] = kaiming((c, prev, 1, 1), prev)
            prev = c

        c_out = cfg.feature_channels
        d_k = cfg.attention_filter_size
        lo, hi = cfg.gamma_init_range
        for i in range(cfg.stacking_factor):
            params[f"attn.{i}.w_f"] = kaiming((c_out, d_k), c_out)
            params[f"attn.{i}.w_g"] = kaiming((c_out, d_k), c_out)
            params[f"attn.{i}.w_h"] = kaiming((c_out, c_out), c_out)
            params[f"attn.{i}.gamma"] = Tensor(rng.uniform(lo, hi, size=1),
                                               requires_grad=True)

        if cfg.post_pool_linear:
            params["pool_linear.w"] = kaiming((c_out, c_out), c_out)
            params["pool_linear.b"] = Tensor(np.zeros(c_out), requires_grad=True)

        head_in = c_out + cfg.shallow_dim
        params["head.w"] = kaiming((head_in, 1), head_in)
        params["head.b"] = Tensor(np.zeros(1), requires_grad=True)
        return params

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    # -- forward ------------------------------------------------------------

    def backbone_forward(self, x: Tensor) -> Tensor:
        """Stem conv + relu, then one stride-2 residual block per stage."""
        if x.data.ndim != 4 or x.shape[1] != 1:
            raise ValueError(f"expected [N, 1, H, W] input, got {x.shape}")
        out = T.relu(T.conv2d(x, self.params["backbone.stem.w"], stride=1, padding=1))
        for i in range(len(self.config.backbone_channels)):
            main = T.relu(T.conv2d(out, self.params[f"backbone.stage{i}.conv1.w"],
                                   stride=2, padding=1))
            main = T.conv2d(main, self.params[f"backbone.stage{i}.conv2.w"],
                            stride=1, padding=1)
            short = T.conv2d(out, self.params[f"backbone.stage{i}.shortcut.w"],
                             stride=2, padding=0)
            out = T.relu(T.add(main, short))
        return out

    def fuse_and_predict(self, f_a: Tensor, shallow: Tensor) -> Tensor:
        """Pool an attended [c', N] map, fuse with shallow features, emit slope."""
        c, n = f_a.shape
        pooled = T.global_avg_pool(T.reshape(f_a, (1, c, n, 1)))
        if self.config.post_pool_linear:
            pooled = T.linear(pooled, self.params["pool_linear.w"],
                              self.params["pool_linear.b"])
        fused = T.concat_cols(pooled, shallow)
        out = T.linear(fused, self.params["head.w"], self.params["head.b"])
        return T.reshape(out, ())

    def forward(self, slice_pixels: np.ndarray, shallow_vec: np.ndarray) -> Tensor:
        """Predict the FVC slope for one prepared slice + shallow vector."""
        h, w = self.config.input_size
        if slice_pixels.shape != (h, w):
            raise ValueError(
                f"slice shape {slice_pixels.shape} does not match config {h}x{w}"
            )
        if shallow_vec.shape != (self.config.shallow_dim,):
            raise ValueError(
                f"shallow vector shape {shallow_vec.shape} does not match "
                f"shallow_dim {self.config.shallow_dim}"
            )
        x = Tensor(slice_pixels.reshape(1, 1, h, w))
        shallow = Tensor(shallow_vec.reshape(1, -1))
        f_a = stacked_attention(flatten_spatial(self.backbone_forward(x)),
                                self.attention)
        return self.fuse_and_predict(f_a, shallow)

    def predict_slope(self, slice_pixels: np.ndarray, shallow_vec: np.ndarray) -> float:
        """Forward pass outside any tape, returning a plain float."""
        return self.forward(slice_pixels, shallow_vec).item()

    # -- persistence --------------------------------------------------------

    def save(self, path, extra_meta: dict | None = None):
        meta = {"model_config": self.config.to_dict()}
        if extra_meta:
            meta.update(extra_meta)
        save_arrays(path, {n: p.data for n, p in self.params.items()}, meta=meta)

    @classmethod
    def load(cls, path) -> tuple["FibroModel", dict]:
        arrays, meta = load_arrays(path)
        if not meta or "model_config" not in meta:
            raise ValueError(f"{path}: checkpoint is missing the model config block")
        config = ModelConfig.from_dict(meta["model_config"])
        params = {n: Tensor(a, requires_grad=True) for n, a in arrays.items()}
        expected = set(cls._init_params(config))
        if set(params) != expected:
            missing = expected - set(params)
            extra = set(params) - expected
            raise ValueError(
                f"{path}: parameter names do not match config "
                f"(missing {sorted(missing)}, unexpected {sorted(extra)})"
            )
        return cls(config, params=params), meta

    @staticmethod
    def read_meta(path) -> dict:
        _, meta = load_arrays(path)
        return meta or {}
