"""Closed-form complexity accounting and the instrumented-counter interface.

MAdds convention (applied identically by the closed forms here and by the
kernel instrumentation, so the two agree to the integer):

  - conv2d / matrix products: one MAdd per scalar multiply-accumulate
  - batch norm (inference): 2 per output element
  - softmax: 1 per matrix entry (the exponential)
  - sigmoid: 1 per element
  - global average pool: H*W + 1 per channel (accumulate + divide)
  - bilinear resize: 4 per output element (four weighted neighbors)
  - relu6, bias additions, residual/elementwise additions: 0

Parameter counts include conv biases and BN affine pairs (gamma, beta);
BN running statistics are buffers, not parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .config import (
    Architecture,
    ConvUnitDesc,
    DnlLayerDesc,
    NetworkConfig,
    derive_architecture,
)
from .dnl import AXES, VERTICAL, default_embed_dim, split_spans
from .errors import ConfigError
from .instrument import MaddsTrace, trace_madds  # noqa: F401  (public interface)


@dataclass(frozen=True)
class ComplexityInputs:
    """Dimensions of one attention layer for the closed-form formulas."""

    c: int
    h: int
    w: int
    axis: str = VERTICAL
    s: int = 1
    embed_dim: int | None = None  # defaults to half the feature-vector length
    inner_dim: int | None = None

    def __post_init__(self) -> None:
        if min(self.c, self.h, self.w) < 1 or self.s < 1:
            raise ConfigError("all complexity dimensions must be positive")
        if self.axis not in AXES:
            raise ConfigError(f"axis must be one of {AXES}, got {self.axis!r}")
        if self.s > self.extent:
            raise ConfigError(f"split {self.s} exceeds extent {self.extent}")

    @property
    def feature_len(self) -> int:
        return self.h if self.axis == VERTICAL else self.w

    @property
    def extent(self) -> int:
        return self.w if self.axis == VERTICAL else self.h

    @property
    def d_a(self) -> int:
        return self.embed_dim if self.embed_dim is not None else default_embed_dim(self.feature_len)

    @property
    def d_p(self) -> int:
        return self.inner_dim if self.inner_dim is not None else default_embed_dim(self.feature_len)

    @classmethod
    def from_layer(cls, desc: DnlLayerDesc) -> "ComplexityInputs":
        return cls(c=desc.channels, h=desc.hw[0], w=desc.hw[1], axis=desc.axis, s=desc.split)


def _sum_sq_region_sizes(extent: int, s: int) -> int:
    return sum((b - a) ** 2 for a, b in split_spans(extent, s))


def dnl_layer_madds(ci: ComplexityInputs) -> int:
    """Multiply-adds of one attention layer.

    With the split count dividing the extent this equals
    (1/s) * C^2 * extent^2 * (D_A + D' + 1)  +  2 * C * H * W * (D_A + D');
    uneven partitions are summed region by region.
    """
    quad = ci.c * ci.c * _sum_sq_region_sizes(ci.extent, ci.s) * (ci.d_a + ci.d_p + 1)
    linear = 2 * ci.c * ci.h * ci.w * (ci.d_a + ci.d_p)
    return quad + linear


@dataclass(frozen=True)
class DnlSpace:
    params: int          # weight scalars, biases excluded
    affinity: int        # elements of all per-region affinity matrices
    intermediates: int   # affinity + embedded g + aggregation + residual


def dnl_layer_space(ci: ComplexityInputs) -> DnlSpace:
    params = 2 * ci.c * ci.d_a * ci.feature_len + 2 * ci.c * ci.feature_len * ci.d_p
    affinity = ci.c * ci.c * _sum_sq_region_sizes(ci.extent, ci.s)
    embedded = 2 * ci.c * ci.extent * ci.d_p  # g output and the aggregated y
    residual = ci.c * ci.h * ci.w
    return DnlSpace(
        params=params,
        affinity=affinity,
        intermediates=affinity + embedded + residual,
    )


def dnl_layer_params(ci: ComplexityInputs) -> int:
    """Learnable scalars of one layer, biases included."""
    weights = dnl_layer_space(ci).params
    biases = 2 * ci.c * ci.d_a + ci.c * ci.d_p + ci.c * ci.feature_len
    return weights + biases


# --- per-unit closed forms --------------------------------------------------

def conv_unit_madds(u: ConvUnitDesc) -> int:
    out_h, out_w = u.out_hw
    elems = u.out_ch * out_h * out_w
    total = elems * (u.in_ch // u.groups) * u.kernel * u.kernel
    if u.has_bn:
        total += 2 * elems
    if u.act == "sigmoid":
        total += elems
    if u.pre_gap:
        in_h, in_w = u.in_hw
        total += u.in_ch * (in_h * in_w + 1)
    if u.resize_to is not None:
        total += 4 * u.out_ch * u.resize_to[0] * u.resize_to[1]
    return total


def conv_unit_params(u: ConvUnitDesc) -> int:
    total = u.out_ch * (u.in_ch // u.groups) * u.kernel * u.kernel
    if u.has_bias:
        total += u.out_ch
    if u.has_bn:
        total += 2 * u.out_ch
    return total


# --- reports ----------------------------------------------------------------

@dataclass(frozen=True)
class LayerCost:
    name: str
    madds: int
    params: int


@dataclass
class MaddsReport:
    entries: list[LayerCost] = field(default_factory=list)

    @property
    def total_madds(self) -> int:
        return sum(e.madds for e in self.entries)

    @property
    def total_params(self) -> int:
        return sum(e.params for e in self.entries)

    def madds_of(self, name: str) -> int:
        for e in self.entries:
            if e.name == name:
                return e.madds
        raise KeyError(name)

    def to_text(self) -> str:
        width = max(len(e.name) for e in self.entries) if self.entries else 5
        lines = [f"{'layer':<{width}}  {'madds':>14}  {'params':>10}"]
        for e in self.entries:
            lines.append(f"{e.name:<{width}}  {e.madds:>14,}  {e.params:>10,}")
        lines.append(
            f"{'total':<{width}}  {self.total_madds:>14,}  {self.total_params:>10,}"
        )
        lines.append(
            f"total MAdds: {self.total_madds / 1e9:.3f}B   "
            f"total params: {self.total_params / 1e6:.3f}M"
        )
        return "\n".join(lines)

    def to_tsv(self) -> str:
        lines = [f"{e.name}\t{e.madds}\t{e.params}" for e in self.entries]
        lines.append(f"total\t{self.total_madds}\t{self.total_params}")
        return "\n".join(lines) + "\n"


def network_madds(cfg: NetworkConfig) -> MaddsReport:
    """Closed-form per-layer report for a full forward pass."""
    arch = derive_architecture(cfg)
    report = MaddsReport()

    def add_unit(u: ConvUnitDesc) -> None:
        report.entries.append(LayerCost(u.name, conv_unit_madds(u), conv_unit_params(u)))

    add_unit(arch.stem)
    for m, module in enumerate(arch.modules, start=1):
        for block in module:
            madds = sum(conv_unit_madds(u) for u in block.units)
            params = sum(conv_unit_params(u) for u in block.units)
            report.entries.append(LayerCost(block.name, madds, params))
        dnl = arch.dnl_module(m)
        if dnl is not None:
            for layer in dnl.layers:
                ci = ComplexityInputs.from_layer(layer)
                report.entries.append(
                    LayerCost(layer.name, dnl_layer_madds(ci), dnl_layer_params(ci))
                )
    for u in arch.aspp_branches:
        add_unit(u)
    add_unit(arch.aspp_pool)
    add_unit(arch.decoder_high)
    add_unit(arch.decoder_low)
    add_unit(arch.decoder_final)
    return report


def count_params(cfg: NetworkConfig) -> int:
    """Learnable scalars of the configured network (biases and BN affine included)."""
    arch = derive_architecture(cfg)
    total = sum(conv_unit_params(u) for u in arch.conv_units())
    for mod in arch.dnls:
        for layer in mod.layers:
            total += dnl_layer_params(ComplexityInputs.from_layer(layer))
    return total


def compare_reports(closed: MaddsReport, trace: MaddsTrace) -> list[tuple[str, int, int]]:
    """Per-layer (name, closed_form, instrumented) rows, closed-form order."""
    return [(e.name, e.madds, trace.get(e.name)) for e in closed.entries]
