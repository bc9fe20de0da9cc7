"""Depthwise non-local attention layers.

A layer treats each per-channel column (vertical split) or row (horizontal
split) of a (C, H, W) feature map as one feature vector, scores all pairs of
vectors within a sub-region through channel-wise bilinear embeddings, and
adds back a softmax-weighted residual. The divide-and-conquer variant
partitions the attended plane into `split` sub-regions along the spatial
axis; all sub-regions share the same weights.

`dnl_reference_naive` is a deliberately slow nested-loop transcription of
the layer equations and serves as the ground-truth oracle for the fast
path.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .ops import Array, as_feature_map, softmax_rows, traced_matmul

VERTICAL = "vertical"
HORIZONTAL = "horizontal"
AXES = (VERTICAL, HORIZONTAL)


def default_embed_dim(n: int) -> int:
    """Latent dimension rule: half the feature-vector length, at least 1."""
    return max(1, n // 2)


@dataclass(frozen=True)
class DnlLayerParams:
    """Weights of one vertical- or horizontal-split layer.

    Vertical shapes (feature vectors are the H-long columns):
      theta_w, phi_w: (C, D_A, H)   theta_b, phi_b: (C, D_A)
      g_w: (C, H, D')               g_b: (C, D')
      f_w: (C, D', H)               f_b: (C, H)
    Horizontal layers use W in place of H.
    """

    axis: str
    theta_w: Array
    theta_b: Array
    phi_w: Array
    phi_b: Array
    g_w: Array
    g_b: Array
    f_w: Array
    f_b: Array
    split: int = 1

    def __post_init__(self) -> None:
        if self.axis not in AXES:
            raise ConfigError(f"axis must be one of {AXES}, got {self.axis!r}")
        if self.split < 1:
            raise ConfigError(f"split count must be >= 1, got {self.split}")
        c, d_a, d_in = self.theta_w.shape
        if self.phi_w.shape != (c, d_a, d_in):
            raise ConfigError("phi_w shape must match theta_w")
        if self.theta_b.shape != (c, d_a) or self.phi_b.shape != (c, d_a):
            raise ConfigError("theta/phi bias shapes must be (C, D_A)")
        d_p = self.g_w.shape[2]
        if self.g_w.shape != (c, d_in, d_p) or self.g_b.shape != (c, d_p):
            raise ConfigError("g weights must be (C, D_in, D') with (C, D') bias")
        if self.f_w.shape != (c, d_p, d_in) or self.f_b.shape != (c, d_in):
            raise ConfigError("f weights must be (C, D', D_in) with (C, D_in) bias")

    @property
    def channels(self) -> int:
        return self.theta_w.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.theta_w.shape[1]

    @property
    def inner_dim(self) -> int:
        return self.g_w.shape[2]

    @property
    def feature_len(self) -> int:
        return self.theta_w.shape[2]

    def validate_for(self, shape: tuple[int, int, int]) -> None:
        c, h, w = shape
        if c != self.channels:
            raise ConfigError(f"layer built for C={self.channels}, input has C={c}")
        d_in = h if self.axis == VERTICAL else w
        extent = w if self.axis == VERTICAL else h
        if d_in != self.feature_len:
            raise ConfigError(
                f"{self.axis} layer embeds length-{self.feature_len} vectors, "
                f"input vectors have length {d_in}"
            )
        if self.split > extent:
            raise ConfigError(
                f"split {self.split} exceeds {self.axis} extent {extent}"
            )


@dataclass(frozen=True)
class DnlModuleConfig:
    """One module = an ordered sequence of residual layers (default both axes)."""

    layers: tuple[DnlLayerParams, ...]

    def __post_init__(self) -> None:
        if not self.layers:
            raise ConfigError("a DNL module needs at least one layer")


def split_spans(extent: int, s: int) -> list[tuple[int, int]]:
    """Partition [0, extent) into s contiguous spans, larger spans first."""
    if s < 1 or s > extent:
        raise ConfigError(f"split count {s} invalid for extent {extent}")
    base, rem = divmod(extent, s)
    spans = []
    start = 0
    for r in range(s):
        size = base + (1 if r < rem else 0)
        spans.append((start, start + size))
        start += size
    return spans


def split_subregions(x: Array, axis: str, s: int) -> list[Array]:
    """Slice the split axis (W for vertical, H for horizontal) into s views."""
    x = as_feature_map(x)
    if axis not in AXES:
        raise ConfigError(f"axis must be one of {AXES}, got {axis!r}")
    extent = x.shape[2] if axis == VERTICAL else x.shape[1]
    spans = split_spans(extent, s)
    if axis == VERTICAL:
        return [x[:, :, a:b] for a, b in spans]
    return [x[:, a:b, :] for a, b in spans]


def _embed_columns(z: Array, w: Array, b: Array) -> Array:
    """Map every column z[k, :, j] through w[k] (+ b[k]); rows are k-major."""
    c, d_in, n = z.shape
    if w.shape[0] != c or w.shape[2] != d_in:
        raise ConfigError(
            f"embedding weights {w.shape} do not match features (C={c}, D_in={d_in})"
        )
    out = traced_matmul(np.ascontiguousarray(w, dtype=np.float32), z)
    out = out + np.asarray(b, dtype=np.float32)[:, :, None]
    return np.ascontiguousarray(out.transpose(0, 2, 1)).reshape(c * n, w.shape[1])


def channel_embed(x: Array, w: Array, b: Array, axis: str) -> Array:
    """Embed each feature vector with its channel's matrix; output (C*extent, D_out)."""
    x = as_feature_map(x)
    if axis not in AXES:
        raise ConfigError(f"axis must be one of {AXES}, got {axis!r}")
    z = x if axis == VERTICAL else np.ascontiguousarray(x.transpose(0, 2, 1))
    return _embed_columns(z, np.asarray(w, dtype=np.float32), b)


def pairwise_affinity(theta_out: Array, phi_out: Array) -> Array:
    """Dense dot-product affinity between embedded features: theta @ phi^T."""
    if theta_out.ndim != 2 or phi_out.ndim != 2 or theta_out.shape[1] != phi_out.shape[1]:
        raise ConfigError(
            f"affinity needs matching embeddings, got {theta_out.shape} and {phi_out.shape}"
        )
    return traced_matmul(
        np.ascontiguousarray(theta_out, dtype=np.float32),
        np.ascontiguousarray(phi_out, dtype=np.float32).T,
    )


def _apply_core(a_soft: Array, g_out: Array, f_w: Array, f_b: Array) -> Array:
    """Aggregate g features with attention weights and map back; (C, n, D_in)."""
    c, d_p, d_in = f_w.shape
    n_rows = a_soft.shape[0]
    if n_rows % c != 0 or g_out.shape != (n_rows, d_p):
        raise ConfigError(
            f"attention shapes inconsistent: A {a_soft.shape}, g {g_out.shape}, f {f_w.shape}"
        )
    y = traced_matmul(
        np.ascontiguousarray(a_soft, dtype=np.float32),
        np.ascontiguousarray(g_out, dtype=np.float32),
    )
    y3 = y.reshape(c, n_rows // c, d_p)
    res = traced_matmul(y3, np.ascontiguousarray(f_w, dtype=np.float32))
    return res + np.asarray(f_b, dtype=np.float32)[:, None, :]


def attention_apply(
    a_soft: Array, g_out: Array, f_w: Array, f_b: Array, axis: str
) -> Array:
    """Compute the residual tensor from a softmaxed affinity matrix."""
    if axis not in AXES:
        raise ConfigError(f"axis must be one of {AXES}, got {axis!r}")
    res = _apply_core(a_soft, g_out, np.asarray(f_w, dtype=np.float32), f_b)
    if axis == VERTICAL:
        # rows are columns of the output plane
        return np.ascontiguousarray(res.transpose(0, 2, 1))
    return np.ascontiguousarray(res)


def _region_update(zs: Array, p: DnlLayerParams) -> Array:
    """One sub-region of the column-attention core: zs + residual."""
    theta = _embed_columns(zs, np.asarray(p.theta_w, dtype=np.float32), p.theta_b)
    phi = _embed_columns(zs, np.asarray(p.phi_w, dtype=np.float32), p.phi_b)
    g = traced_matmul(
        np.ascontiguousarray(zs.transpose(0, 2, 1)),
        np.ascontiguousarray(p.g_w, dtype=np.float32),
    )
    g = g + np.asarray(p.g_b, dtype=np.float32)[:, None, :]
    g = g.reshape(zs.shape[0] * zs.shape[2], p.inner_dim)
    a_soft = softmax_rows(pairwise_affinity(theta, phi))
    res = _apply_core(a_soft, g, np.asarray(p.f_w, dtype=np.float32), p.f_b)
    return zs + res.transpose(0, 2, 1)


def dnl_layer_forward(x: Array, p: DnlLayerParams) -> Array:
    """Residual update O = x + f(softmax(A) g(x)), per sub-region."""
    x = as_feature_map(x)
    p.validate_for(x.shape)
    z = x if p.axis == VERTICAL else np.ascontiguousarray(x.transpose(0, 2, 1))
    parts = [
        _region_update(np.ascontiguousarray(z[:, :, a:b]), p)
        for a, b in split_spans(z.shape[2], p.split)
    ]
    out = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=2)
    if p.axis == HORIZONTAL:
        out = out.transpose(0, 2, 1)
    return np.ascontiguousarray(out, dtype=np.float32)


def dnl_module_forward(x: Array, cfg: DnlModuleConfig) -> Array:
    out = as_feature_map(x)
    for layer in cfg.layers:
        out = dnl_layer_forward(out, layer)
    return out


def dnl_reference_naive(x: Array, p: DnlLayerParams) -> Array:
    """Loop-level transcription of the layer equations (float64 arithmetic).

    Intended for small inputs only; the summation order follows the
    equations feature-by-feature with no batched matrix products.
    """
    x = as_feature_map(x)
    p.validate_for(x.shape)
    c, h, w = x.shape
    x64 = x.astype(np.float64)
    theta_w = np.asarray(p.theta_w, dtype=np.float64)
    theta_b = np.asarray(p.theta_b, dtype=np.float64)
    phi_w = np.asarray(p.phi_w, dtype=np.float64)
    phi_b = np.asarray(p.phi_b, dtype=np.float64)
    g_w = np.asarray(p.g_w, dtype=np.float64)
    g_b = np.asarray(p.g_b, dtype=np.float64)
    f_w = np.asarray(p.f_w, dtype=np.float64)
    f_b = np.asarray(p.f_b, dtype=np.float64)

    vertical = p.axis == VERTICAL
    extent = w if vertical else h

    def feature(k: int, pos: int) -> Array:
        return x64[k, :, pos] if vertical else x64[k, pos, :]

    out = x64.copy()
    for lo, hi in split_spans(extent, p.split):
        feats = [(k, pos) for k in range(c) for pos in range(lo, hi)]
        n = len(feats)
        theta = [theta_w[k] @ feature(k, pos) + theta_b[k] for k, pos in feats]
        phi = [phi_w[k] @ feature(k, pos) + phi_b[k] for k, pos in feats]
        g_rows = [feature(k, pos) @ g_w[k] + g_b[k] for k, pos in feats]

        aff = np.empty((n, n), dtype=np.float64)
        for pi in range(n):
            for qi in range(n):
                aff[pi, qi] = np.dot(theta[pi], phi[qi])
        for pi in range(n):
            row = np.exp(aff[pi] - aff[pi].max())
            aff[pi] = row / row.sum()

        for pi, (k, pos) in enumerate(feats):
            y = np.zeros(p.inner_dim, dtype=np.float64)
            for qi in range(n):
                y += aff[pi, qi] * g_rows[qi]
            residual = y @ f_w[k] + f_b[k]
            if vertical:
                out[k, :, pos] += residual
            else:
                out[k, pos, :] += residual
    return out.astype(np.float32)


def random_layer_params(
    axis: str,
    channels: int,
    height: int,
    width: int,
    split: int = 1,
    seed: int = 0,
    embed_dim: int | None = None,
    inner_dim: int | None = None,
) -> DnlLayerParams:
    """Deterministic untrained weights, uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    if axis not in AXES:
        raise ConfigError(f"axis must be one of {AXES}, got {axis!r}")
    d_in = height if axis == VERTICAL else width
    d_a = embed_dim if embed_dim is not None else default_embed_dim(d_in)
    d_p = inner_dim if inner_dim is not None else default_embed_dim(d_in)
    rng = np.random.default_rng(seed)

    def uniform(shape: tuple[int, ...], fan_in: int) -> Array:
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(np.float32)

    c = channels
    return DnlLayerParams(
        axis=axis,
        theta_w=uniform((c, d_a, d_in), d_in),
        theta_b=uniform((c, d_a), d_in),
        phi_w=uniform((c, d_a, d_in), d_in),
        phi_b=uniform((c, d_a), d_in),
        g_w=uniform((c, d_in, d_p), d_in),
        g_b=uniform((c, d_p), d_in),
        f_w=uniform((c, d_p, d_in), d_p),
        f_b=uniform((c, d_in), d_p),
        split=split,
    )


def zeroed_residual(p: DnlLayerParams) -> DnlLayerParams:
    """Copy of the layer with f zeroed, turning it into an exact identity."""
    return replace(
        p,
        f_w=np.zeros_like(np.asarray(p.f_w, dtype=np.float32)),
        f_b=np.zeros_like(np.asarray(p.f_b, dtype=np.float32)),
    )
