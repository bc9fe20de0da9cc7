"""Dense-tensor kernels: convolution, batch norm, activations, pooling, resize.

A feature map is a C-contiguous numpy float32 array of shape (C, H, W);
index order is (channel, row, column). All kernels are pure functions,
deterministic, and safe to call from multiple threads on disjoint data.

Conventions fixed here and asserted by tests: zero padding is symmetric,
resize uses align-corners, reductions (softmax denominators, pooling sums)
accumulate in float64 before the result is cast back to float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .instrument import record_madds

Array = np.ndarray


def as_feature_map(x: Array) -> Array:
    """Validate and canonicalize a (C, H, W) float32 feature map."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    if x.ndim != 3:
        raise ConfigError(f"feature map must be rank 3 (C,H,W), got shape {x.shape}")
    if min(x.shape) < 1:
        raise ConfigError(f"all feature-map dims must be >= 1, got {x.shape}")
    return x


def conv_output_size(n: int, k: int, stride: int, dilation: int, padding: int) -> int:
    return (n + 2 * padding - dilation * (k - 1) - 1) // stride + 1


@dataclass(frozen=True)
class ConvSpec:
    """A 2D cross-correlation: weights (out_ch, in_ch_per_group, kH, kW)."""

    kernel: Array
    bias: Array | None = None
    stride: int = 1
    dilation: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self) -> None:
        k = np.asarray(self.kernel)
        if k.ndim != 4:
            raise ConfigError(f"conv kernel must be rank 4, got shape {k.shape}")
        if self.stride < 1 or self.dilation < 1 or self.groups < 1:
            raise ConfigError("stride, dilation, and groups must be positive")
        if self.padding < 0:
            raise ConfigError("padding must be non-negative")
        if k.shape[0] % self.groups != 0:
            raise ConfigError(
                f"out_channels {k.shape[0]} not divisible by groups {self.groups}"
            )
        if self.bias is not None and np.asarray(self.bias).shape != (k.shape[0],):
            raise ConfigError("bias length must equal out_channels")

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.groups * self.kernel.shape[1]

    @property
    def kh(self) -> int:
        return self.kernel.shape[2]

    @property
    def kw(self) -> int:
        return self.kernel.shape[3]


def _im2col(xp: Array, kh: int, kw: int, stride: int, dilation: int) -> Array:
    """Extract sliding patches from a padded map: (C, outH, outW, kh, kw) view."""
    eh = dilation * (kh - 1) + 1
    ew = dilation * (kw - 1) + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (eh, ew), axis=(1, 2))
    return win[:, ::stride, ::stride, ::dilation, ::dilation]


def conv2d(x: Array, spec: ConvSpec) -> Array:
    """Grouped 2D cross-correlation with zero padding, stride, and dilation."""
    x = as_feature_map(x)
    c, h, w = x.shape
    if c != spec.in_channels:
        raise ConfigError(
            f"conv2d expects {spec.in_channels} input channels, got {c}"
        )
    out_h = conv_output_size(h, spec.kh, spec.stride, spec.dilation, spec.padding)
    out_w = conv_output_size(w, spec.kw, spec.stride, spec.dilation, spec.padding)
    if out_h < 1 or out_w < 1:
        raise ConfigError(
            f"conv2d output dims must be >= 1, got {out_h}x{out_w} "
            f"for input {h}x{w}"
        )

    kernel = np.ascontiguousarray(spec.kernel, dtype=np.float32)
    o, icpg, kh, kw = kernel.shape
    record_madds(o * out_h * out_w * icpg * kh * kw)

    if spec.padding > 0:
        p = spec.padding
        xp = np.zeros((c, h + 2 * p, w + 2 * p), dtype=np.float32)
        xp[:, p : p + h, p : p + w] = x
    else:
        xp = x

    if kh == 1 and kw == 1 and spec.groups == 1:
        # pointwise: a single channel-mixing matmul
        cols = xp[:, :: spec.stride, :: spec.stride].reshape(c, -1)
        out = kernel.reshape(o, c) @ cols
        out = out.reshape(o, out_h, out_w)
    elif spec.groups == c and icpg == 1:
        # depthwise: one small kernel per channel, batched over channels
        win = _im2col(xp, kh, kw, spec.stride, spec.dilation)
        cols = win.reshape(c, out_h * out_w, kh * kw)
        out = np.matmul(cols, kernel.reshape(c, kh * kw, 1))
        out = out.reshape(c, out_h, out_w)
    else:
        cpg = c // spec.groups
        opg = o // spec.groups
        win = _im2col(xp, kh, kw, spec.stride, spec.dilation)
        out = np.empty((o, out_h, out_w), dtype=np.float32)
        for g in range(spec.groups):
            sub = win[g * cpg : (g + 1) * cpg]
            cols = sub.transpose(0, 3, 4, 1, 2).reshape(cpg * kh * kw, -1)
            wmat = kernel[g * opg : (g + 1) * opg].reshape(opg, cpg * kh * kw)
            out[g * opg : (g + 1) * opg] = (wmat @ cols).reshape(opg, out_h, out_w)

    if spec.bias is not None:
        out = out + np.asarray(spec.bias, dtype=np.float32)[:, None, None]
    return np.ascontiguousarray(out, dtype=np.float32)


def batchnorm_infer(
    x: Array,
    mean: Array,
    var: Array,
    gamma: Array,
    beta: Array,
    eps: float = 1e-5,
) -> Array:
    """Per-channel inference-time affine: (x - mean)/sqrt(var + eps)*gamma + beta."""
    x = as_feature_map(x)
    c = x.shape[0]
    params = [np.asarray(p, dtype=np.float64).reshape(-1) for p in (mean, var, gamma, beta)]
    for p in params:
        if p.shape != (c,):
            raise ConfigError(f"batchnorm parameter length {p.shape} != channels {c}")
    mean64, var64, gamma64, beta64 = params
    if eps < 0:
        raise ConfigError("batchnorm eps must be non-negative")
    if np.any(var64 < 0):
        raise ConfigError("batchnorm variance must be non-negative")
    if np.any(var64 + eps <= 0):
        raise ConfigError("batchnorm variance + eps must be positive")
    record_madds(2 * x.size)
    scale = (gamma64 / np.sqrt(var64 + eps)).astype(np.float32)
    shift = (beta64 - mean64 * gamma64 / np.sqrt(var64 + eps)).astype(np.float32)
    return x * scale[:, None, None] + shift[:, None, None]


def relu6(x: Array) -> Array:
    return np.minimum(np.maximum(x, np.float32(0.0)), np.float32(6.0))


def sigmoid(x: Array) -> Array:
    record_madds(x.size)
    x64 = np.asarray(x, dtype=np.float64)
    return (1.0 / (1.0 + np.exp(-x64))).astype(np.float32)


def softmax_rows(m: Array) -> Array:
    """Row-wise softmax of a 2D matrix, stabilized by row-max subtraction."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise ConfigError(f"softmax_rows expects a 2D matrix, got shape {m.shape}")
    record_madds(m.size)
    m64 = m.astype(np.float64)
    e = np.exp(m64 - m64.max(axis=1, keepdims=True))
    return (e / e.sum(axis=1, keepdims=True)).astype(np.float32)


def global_avg_pool(x: Array) -> Array:
    """Spatial mean per channel; output shape (C, 1, 1)."""
    x = as_feature_map(x)
    c, h, w = x.shape
    record_madds(c * (h * w + 1))
    return x.mean(axis=(1, 2), dtype=np.float64).astype(np.float32).reshape(c, 1, 1)


def bilinear_resize(x: Array, out_h: int, out_w: int) -> Array:
    """Channel-wise bilinear interpolation using the align-corners convention."""
    x = as_feature_map(x)
    if out_h < 1 or out_w < 1:
        raise ConfigError("resize output dims must be >= 1")
    c, h, w = x.shape
    record_madds(4 * c * out_h * out_w)

    def grid(n_in: int, n_out: int) -> tuple[Array, Array, Array]:
        if n_out == 1 or n_in == 1:
            src = np.zeros(n_out, dtype=np.float64)
        else:
            src = np.arange(n_out, dtype=np.float64) * ((n_in - 1) / (n_out - 1))
        lo = np.floor(src).astype(np.int64)
        lo = np.minimum(lo, n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        t = (src - lo).astype(np.float32)
        return lo, hi, t

    y0, y1, ty = grid(h, out_h)
    x0, x1, tx = grid(w, out_w)
    ty = ty[:, None]
    tx = tx[None, :]
    v00 = x[:, y0[:, None], x0[None, :]]
    v01 = x[:, y0[:, None], x1[None, :]]
    v10 = x[:, y1[:, None], x0[None, :]]
    v11 = x[:, y1[:, None], x1[None, :]]
    top = v00 * (1.0 - tx) + v01 * tx
    bot = v10 * (1.0 - tx) + v11 * tx
    return np.ascontiguousarray(top * (1.0 - ty) + bot * ty, dtype=np.float32)


def traced_matmul(a: Array, b: Array) -> Array:
    """Matrix product that charges one MAdd per scalar multiply-accumulate.

    Supports 2D (m,k)@(k,n) and channel-batched 3D (C,m,k)@(C,k,n) operands.
    """
    if a.ndim == 2 and b.ndim == 2:
        record_madds(a.shape[0] * a.shape[1] * b.shape[1])
    elif a.ndim == 3 and b.ndim == 3:
        record_madds(a.shape[0] * a.shape[1] * a.shape[2] * b.shape[2])
    else:
        raise ConfigError(
            f"traced_matmul supports 2D or batched 3D operands, got {a.shape} @ {b.shape}"
        )
    return np.matmul(a, b)
