"""Forward-only numpy blocks of the dual-stream detector.

Feature maps are ``(C, H, W)`` float arrays. Nothing here is trained;
parameters come from a JSON weights file or a seeded initializer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .datamodel import ImageSize

DEFAULT_REDUCTION = 4
DEFAULT_SPATIAL_KERNEL = 7
DEFAULT_STRIDES = (4, 8, 16, 32, 64)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def conv2d(x: np.ndarray, weight: np.ndarray, bias: Optional[np.ndarray] = None,
           stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlate ``x`` (Cin, H, W) with ``weight`` (Cout, Cin, kh, kw)."""
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    if x.ndim != 3 or weight.ndim != 4:
        raise ValueError(f"expected (C,H,W) input and (O,C,kh,kw) weights, got {x.shape}, {weight.shape}")
    if weight.shape[1] != x.shape[0]:
        raise ValueError(f"weights expect {weight.shape[1]} input channels, got {x.shape[0]}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    kh, kw = weight.shape[2:]
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    if x.shape[1] < kh or x.shape[2] < kw:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {x.shape[1:]}")
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    out = np.einsum("chwij,ocij->ohw", win, weight)
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)[:, None, None]
    return out


@dataclass(frozen=True, eq=False)
class CbamParams:
    mlp_w1: np.ndarray            # (C // r, C)
    mlp_w2: np.ndarray            # (C, C // r)
    spatial_weight: np.ndarray    # (1, 2, k, k)
    mlp_b1: Optional[np.ndarray] = None
    mlp_b2: Optional[np.ndarray] = None
    spatial_bias: float = 0.0

    def __post_init__(self):
        hidden, c = np.shape(self.mlp_w1)
        if np.shape(self.mlp_w2) != (c, hidden):
            raise ValueError(f"mlp_w2 must be {(c, hidden)}, got {np.shape(self.mlp_w2)}")
        sw = np.shape(self.spatial_weight)
        if len(sw) != 4 or sw[:2] != (1, 2) or sw[2] != sw[3] or sw[2] % 2 == 0:
            raise ValueError(f"spatial_weight must be (1, 2, k, k) with odd k, got {sw}")

    @property
    def channels(self) -> int:
        return np.shape(self.mlp_w1)[1]

    @classmethod
    def random(cls, channels: int, rng: np.random.Generator, reduction: int = DEFAULT_REDUCTION,
               kernel: int = DEFAULT_SPATIAL_KERNEL, scale: float = 0.5) -> "CbamParams":
        if reduction < 1:
            raise ValueError("reduction must be >= 1")
        hidden = max(1, channels // reduction)
        return cls(mlp_w1=rng.normal(0, scale, (hidden, channels)),
                   mlp_w2=rng.normal(0, scale, (channels, hidden)),
                   spatial_weight=rng.normal(0, scale / kernel, (1, 2, kernel, kernel)),
                   mlp_b1=np.zeros(hidden), mlp_b2=np.zeros(channels))


def _mlp(v, p: CbamParams):
    h = p.mlp_w1 @ v
    if p.mlp_b1 is not None:
        h = h + p.mlp_b1
    out = p.mlp_w2 @ np.maximum(h, 0.0)
    if p.mlp_b2 is not None:
        out = out + p.mlp_b2
    return out


def cbam_attention(x: np.ndarray, params: CbamParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(channel_weights (C,), spatial_weights (H, W), output)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != params.channels:
        raise ValueError(f"CBAM expects ({params.channels}, H, W), got {x.shape}")
    ca = sigmoid(_mlp(x.mean(axis=(1, 2)), params) + _mlp(x.max(axis=(1, 2)), params))
    xc = x * ca[:, None, None]
    pooled = np.stack([xc.mean(axis=0), xc.max(axis=0)])
    k = np.shape(params.spatial_weight)[2]
    sa = sigmoid(conv2d(pooled, params.spatial_weight, padding=k // 2)[0] + params.spatial_bias)
    return ca, sa, xc * sa[None]


def cbam(x: np.ndarray, params: CbamParams) -> np.ndarray:
    """Channel attention then spatial attention, both multiplicative."""
    return cbam_attention(x, params)[2]


@dataclass(frozen=True, eq=False)
class FusionParams:
    reduce_weight: np.ndarray   # (C, 2C) or (C, 2C, 1, 1)
    reduce_bias: Optional[np.ndarray]
    cbam: CbamParams

    def __post_init__(self):
        w = np.asarray(self.reduce_weight, dtype=np.float64)
        if w.ndim == 2:
            w = w[:, :, None, None]
        if w.ndim != 4 or w.shape[2:] != (1, 1) or w.shape[1] != 2 * w.shape[0]:
            raise ValueError(f"reduce conv must map 2C -> C with a 1x1 kernel, got {w.shape}")
        if w.shape[0] != self.cbam.channels:
            raise ValueError("CBAM channel count differs from the fused channel count")
        object.__setattr__(self, "reduce_weight", w)

    @property
    def channels(self) -> int:
        return self.reduce_weight.shape[0]


def fuse(stream_a: np.ndarray, stream_b: np.ndarray, params: FusionParams) -> np.ndarray:
    """Concatenate two (C, H, W) streams, reduce with a 1x1 conv, apply CBAM."""
    a = np.asarray(stream_a, dtype=np.float64)
    b = np.asarray(stream_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"stream shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 3 or a.shape[0] != params.channels:
        raise ValueError(f"fusion expects ({params.channels}, H, W) streams, got {a.shape}")
    reduced = conv2d(np.concatenate([a, b], axis=0), params.reduce_weight, params.reduce_bias)
    return cbam(reduced, params.cbam)


@dataclass(frozen=True, eq=False)
class DySampleParams:
    scale: int
    offset_weight: np.ndarray   # (2 * scale**2, C)
    offset_bias: Optional[np.ndarray] = None
    offset_range: float = 0.25

    def __post_init__(self):
        if int(self.scale) != self.scale or self.scale < 2:
            raise ValueError(f"scale must be an integer >= 2, got {self.scale}")
        if np.shape(self.offset_weight)[0] != 2 * self.scale ** 2:
            raise ValueError(f"offset projection must emit {2 * self.scale ** 2} values")
        if not self.offset_range > 0:
            raise ValueError("offset_range must be positive")

    @classmethod
    def zeros(cls, channels: int, scale: int = 2, offset_range: float = 0.25) -> "DySampleParams":
        return cls(scale, np.zeros((2 * scale * scale, channels)), None, offset_range)


def bilinear_sample(x: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample (C, H, W) ``x`` at real positions (pixel-center units), clamped
    to the input domain."""
    _, h, w = x.shape
    ys = np.clip(ys, 0.0, h - 1)
    xs = np.clip(xs, 0.0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = ys - y0
    wx = xs - x0
    top = x[:, y0, x0] * (1 - wx) + x[:, y0, x1] * wx
    bot = x[:, y1, x0] * (1 - wx) + x[:, y1, x1] * wx
    return top * (1 - wy) + bot * wy


def dysample_offsets(x: np.ndarray, params: DySampleParams) -> np.ndarray:
    """Clamped per-output-pixel offsets ``(2, s*H, s*W)``; row 0 is x, row 1 is y."""
    c, h, w = x.shape
    s = params.scale
    raw = np.einsum("oc,chw->ohw", np.asarray(params.offset_weight, dtype=np.float64), x)
    if params.offset_bias is not None:
        raw = raw + np.asarray(params.offset_bias, dtype=np.float64)[:, None, None]
    raw = np.clip(raw, -params.offset_range, params.offset_range)
    # (2, s, s, H, W) -> (2, H, s, W, s): sub-pixel (a, b) of cell (i, j) lands at (i*s+a, j*s+b)
    return raw.reshape(2, s, s, h, w).transpose(0, 3, 1, 4, 2).reshape(2, h * s, w * s)


def dysample(x: np.ndarray, params: DySampleParams) -> np.ndarray:
    """Upsample by ``scale`` with point sampling at learned, clamped offsets.

    The base grid is the half-pixel-aligned bilinear grid, so zero offsets
    reproduce plain bilinear upsampling.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or np.shape(params.offset_weight)[1] != x.shape[0]:
        raise ValueError(f"offset projection expects {np.shape(params.offset_weight)[1]} channels, "
                         f"got input {x.shape}")
    _, h, w = x.shape
    s = params.scale
    off = dysample_offsets(x, params)
    gy = (np.arange(h * s) + 0.5) / s - 0.5
    gx = (np.arange(w * s) + 0.5) / s - 0.5
    ys = gy[:, None] + off[1]
    xs = gx[None, :] + off[0]
    return bilinear_sample(x, ys, xs)


@dataclass(frozen=True)
class HeadPyramidConfig:
    input_size: ImageSize
    strides: Tuple[int, ...] = DEFAULT_STRIDES

    def __post_init__(self):
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if not self.strides:
            raise ValueError("at least one stride is required")
        for s in self.strides:
            if s < 1 or s & (s - 1):
                raise ValueError(f"stride {s} is not a power of two")
        if any(b <= a for a, b in zip(self.strides, self.strides[1:])):
            raise ValueError("strides must be strictly increasing")
        top = self.strides[-1]
        if self.input_size.width % top or self.input_size.height % top:
            raise ValueError(f"input {self.input_size.width}x{self.input_size.height} "
                             f"not divisible by stride {top}")


def head_pyramid(config: HeadPyramidConfig) -> List[Tuple[int, Tuple[int, int]]]:
    """``(stride, (H / stride, W / stride))`` for each detection head.

    With the default strides, stride 4 is the extra small-object head and
    stride 64 the extra large-object head.
    """
    h, w = config.input_size.height, config.input_size.width
    return [(s, (h // s, w // s)) for s in config.strides]


# --------------------------------------------------------------------------
# weights file

def _arr(v):
    return None if v is None else np.asarray(v, dtype=np.float64)


def _list(a):
    return None if a is None else np.asarray(a).tolist()


def params_from_dict(doc: dict) -> Tuple[FusionParams, DySampleParams]:
    """Build parameters from ``{"fusion": ..., "cbam": ..., "dysample": ...}``."""
    try:
        c = doc["cbam"]
        cb = CbamParams(mlp_w1=_arr(c["mlp_w1"]), mlp_w2=_arr(c["mlp_w2"]),
                        spatial_weight=_arr(c["spatial_weight"]),
                        mlp_b1=_arr(c.get("mlp_b1")), mlp_b2=_arr(c.get("mlp_b2")),
                        spatial_bias=float(c.get("spatial_bias", 0.0)))
        f = doc["fusion"]
        fusion = FusionParams(_arr(f["reduce_weight"]), _arr(f.get("reduce_bias")), cb)
        d = doc["dysample"]
        dy = DySampleParams(int(d["scale"]), _arr(d["offset_weight"]), _arr(d.get("offset_bias")),
                            float(d.get("offset_range", 0.25)))
    except KeyError as e:
        raise ValueError(f"weights file is missing {e}") from e
    return fusion, dy


def params_to_dict(fusion: FusionParams, dy: DySampleParams) -> dict:
    cb = fusion.cbam
    return {
        "fusion": {"reduce_weight": _list(fusion.reduce_weight[:, :, 0, 0]),
                   "reduce_bias": _list(fusion.reduce_bias)},
        "cbam": {"mlp_w1": _list(cb.mlp_w1), "mlp_b1": _list(cb.mlp_b1),
                 "mlp_w2": _list(cb.mlp_w2), "mlp_b2": _list(cb.mlp_b2),
                 "spatial_weight": _list(cb.spatial_weight), "spatial_bias": cb.spatial_bias},
        "dysample": {"scale": dy.scale, "offset_weight": _list(dy.offset_weight),
                     "offset_bias": _list(dy.offset_bias), "offset_range": dy.offset_range},
    }


def load_weights(path) -> Tuple[FusionParams, DySampleParams]:
    with open(path, encoding="utf-8") as fh:
        return params_from_dict(json.load(fh))


def random_params(channels: int, seed: int, scale: int = 2,
                  reduction: int = DEFAULT_REDUCTION) -> Tuple[FusionParams, DySampleParams]:
    rng = np.random.default_rng(seed)
    cb = CbamParams.random(channels, rng, reduction=reduction)
    fusion = FusionParams(rng.normal(0, 1.0 / np.sqrt(2 * channels), (channels, 2 * channels)),
                          np.zeros(channels), cb)
    dy = DySampleParams(scale, rng.normal(0, 0.1, (2 * scale * scale, channels)),
                        np.zeros(2 * scale * scale))
    return fusion, dy


def checksums(x: np.ndarray) -> dict:
    x = np.asarray(x, dtype=np.float64)
    return {"shape": list(x.shape), "sum": float(x.sum()), "abs_sum": float(np.abs(x).sum()),
            "min": float(x.min()), "max": float(x.max())}


def demo(shape: Sequence[int], seed: int,
         params: Optional[Tuple[FusionParams, DySampleParams]] = None) -> dict:
    """Fuse two seeded random streams, upsample the result, report checksums."""
    c, h, w = shape
    fusion, dy = params if params is not None else random_params(c, seed)
    rng = np.random.default_rng(seed + 1)
    a = rng.normal(size=(c, h, w))
    b = rng.normal(size=(c, h, w))
    fused = fuse(a, b, fusion)
    up = dysample(fused, dy)
    return {"fused": checksums(fused), "upsampled": checksums(up)}
