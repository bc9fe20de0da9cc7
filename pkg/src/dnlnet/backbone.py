"""Inverted-residual encoder with optional depthwise non-local modules.

Runtime parameter objects are bound from a weight store against the
static architecture; forwards execute the same structure the complexity
counters enumerate, under matching layer-scope names.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import (
    Architecture,
    ConvUnitDesc,
    DnlLayerDesc,
    LOW_LEVEL_MODULE,
    NetworkConfig,
    derive_architecture,
)
from .dnl import DnlLayerParams, DnlModuleConfig, dnl_layer_forward
from .errors import ConfigError
from .instrument import layer_scope
from .ops import Array, ConvSpec, as_feature_map, batchnorm_infer, bilinear_resize
from .ops import conv2d, global_avg_pool, relu6, sigmoid

BN_EPS = 1e-5


@dataclass(frozen=True)
class BnParams:
    mean: Array
    var: Array
    gamma: Array
    beta: Array
    eps: float = BN_EPS


@dataclass(frozen=True)
class ConvBnParams:
    """A conv unit bound to weights: conv (+ BN) (+ activation)."""

    desc: ConvUnitDesc
    spec: ConvSpec
    bn: BnParams | None


@dataclass(frozen=True)
class IrBlockParams:
    name: str
    expand: ConvBnParams | None
    depthwise: ConvBnParams
    project: ConvBnParams
    use_skip: bool


def _bind_conv(desc: ConvUnitDesc, store) -> ConvBnParams:
    weight = store.require(f"{desc.name}.conv.weight", desc.weight_shape)
    bias = (
        store.require(f"{desc.name}.conv.bias", (desc.out_ch,))
        if desc.has_bias
        else None
    )
    spec = ConvSpec(
        kernel=weight,
        bias=bias,
        stride=desc.stride,
        dilation=desc.dilation,
        padding=desc.padding,
        groups=desc.groups,
    )
    bn = None
    if desc.has_bn:
        bn = BnParams(
            mean=store.require(f"{desc.name}.bn.mean", (desc.out_ch,)),
            var=store.require(f"{desc.name}.bn.var", (desc.out_ch,)),
            gamma=store.require(f"{desc.name}.bn.gamma", (desc.out_ch,)),
            beta=store.require(f"{desc.name}.bn.beta", (desc.out_ch,)),
        )
    return ConvBnParams(desc=desc, spec=spec, bn=bn)


def bind_dnl_layer(desc: DnlLayerDesc, store) -> DnlLayerParams:
    c, d_in = desc.channels, desc.feature_len
    d_a, d_p = desc.embed_dim, desc.inner_dim
    prefix = desc.name
    return DnlLayerParams(
        axis=desc.axis,
        theta_w=store.require(f"{prefix}.theta.weight", (c, d_a, d_in)),
        theta_b=store.require(f"{prefix}.theta.bias", (c, d_a)),
        phi_w=store.require(f"{prefix}.phi.weight", (c, d_a, d_in)),
        phi_b=store.require(f"{prefix}.phi.bias", (c, d_a)),
        g_w=store.require(f"{prefix}.g.weight", (c, d_in, d_p)),
        g_b=store.require(f"{prefix}.g.bias", (c, d_p)),
        f_w=store.require(f"{prefix}.f.weight", (c, d_p, d_in)),
        f_b=store.require(f"{prefix}.f.bias", (c, d_in)),
        split=desc.split,
    )


@dataclass(frozen=True)
class EncoderParams:
    stem: ConvBnParams
    modules: tuple[tuple[IrBlockParams, ...], ...]
    dnls: dict[int, tuple[tuple[DnlLayerDesc, DnlLayerParams], ...]]


def bind_encoder(arch: Architecture, store) -> EncoderParams:
    modules = []
    for module in arch.modules:
        blocks = []
        for block in module:
            blocks.append(
                IrBlockParams(
                    name=block.name,
                    expand=_bind_conv(block.expand, store) if block.expand else None,
                    depthwise=_bind_conv(block.depthwise, store),
                    project=_bind_conv(block.project, store),
                    use_skip=block.use_skip,
                )
            )
        modules.append(tuple(blocks))
    dnls = {
        mod.placement: tuple((d, bind_dnl_layer(d, store)) for d in mod.layers)
        for mod in arch.dnls
    }
    return EncoderParams(
        stem=_bind_conv(arch.stem, store), modules=tuple(modules), dnls=dnls
    )


def conv_unit_forward(x: Array, p: ConvBnParams) -> Array:
    desc = p.desc
    if desc.pre_gap:
        x = global_avg_pool(x)
    out = conv2d(x, p.spec)
    if p.bn is not None:
        out = batchnorm_infer(out, p.bn.mean, p.bn.var, p.bn.gamma, p.bn.beta, p.bn.eps)
    if desc.act == "relu6":
        out = relu6(out)
    elif desc.act == "sigmoid":
        out = sigmoid(out)
    if desc.resize_to is not None:
        out = bilinear_resize(out, *desc.resize_to)
    return out


def inverted_residual_forward(x: Array, p: IrBlockParams) -> Array:
    x = as_feature_map(x)
    out = x
    if p.expand is not None:
        out = conv_unit_forward(out, p.expand)
    out = conv_unit_forward(out, p.depthwise)
    out = conv_unit_forward(out, p.project)
    if p.use_skip:
        if out.shape != x.shape:
            raise ConfigError(
                f"skip connection shape mismatch in {p.name}: {x.shape} vs {out.shape}"
            )
        out = out + x
    return out


def encoder_forward(
    image: Array, cfg: NetworkConfig, store
) -> tuple[Array, Array]:
    """Run the encoder; returns (low_level, high_level) stride-8 features."""
    arch = derive_architecture(cfg)
    params = bind_encoder(arch, store)
    return run_encoder(image, params)


def run_encoder(image: Array, params: EncoderParams) -> tuple[Array, Array]:
    x = as_feature_map(image)
    if x.shape[0] != params.stem.desc.in_ch:
        raise ConfigError(
            f"encoder expects {params.stem.desc.in_ch} input channels, got {x.shape[0]}"
        )
    with layer_scope(params.stem.desc.name):
        x = conv_unit_forward(x, params.stem)
    low_level: Array | None = None
    for m, module in enumerate(params.modules, start=1):
        for block in module:
            with layer_scope(block.name):
                x = inverted_residual_forward(x, block)
        for desc, layer in params.dnls.get(m, ()):
            with layer_scope(desc.name):
                x = dnl_layer_forward(x, layer)
        if m == LOW_LEVEL_MODULE:
            low_level = x
    assert low_level is not None
    return low_level, x


def dnl_module_from_store(arch: Architecture, placement: int, store) -> DnlModuleConfig:
    mod = arch.dnl_module(placement)
    if mod is None:
        raise ConfigError(f"no DNL module at placement {placement}")
    return DnlModuleConfig(
        layers=tuple(bind_dnl_layer(d, store) for d in mod.layers)
    )
