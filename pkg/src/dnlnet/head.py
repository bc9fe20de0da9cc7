"""ASPP context module, decoder, and the full network forward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import (
    ConvBnParams,
    EncoderParams,
    _bind_conv,
    bind_encoder,
    conv_unit_forward,
    run_encoder,
)
from .config import Architecture, NetworkConfig, derive_architecture
from .errors import ConfigError
from .instrument import layer_scope
from .ops import Array, as_feature_map

ASPP_BRANCHES = 5


@dataclass(frozen=True)
class AsppParams:
    branches: tuple[ConvBnParams, ...]  # 1x1 then the three dilated 3x3 convs
    pool: ConvBnParams                  # GAP + 1x1 + broadcast resize


@dataclass(frozen=True)
class DecoderParams:
    high: ConvBnParams
    low: ConvBnParams
    final: ConvBnParams
    out_hw: tuple[int, int]


@dataclass(frozen=True)
class NetworkParams:
    arch: Architecture
    encoder: EncoderParams
    aspp: AsppParams
    decoder: DecoderParams


def bind_network(cfg: NetworkConfig, store) -> NetworkParams:
    arch = derive_architecture(cfg)
    encoder = bind_encoder(arch, store)
    aspp = AsppParams(
        branches=tuple(_bind_conv(d, store) for d in arch.aspp_branches),
        pool=_bind_conv(arch.aspp_pool, store),
    )
    decoder = DecoderParams(
        high=_bind_conv(arch.decoder_high, store),
        low=_bind_conv(arch.decoder_low, store),
        final=_bind_conv(arch.decoder_final, store),
        out_hw=arch.input_hw,
    )
    return NetworkParams(arch=arch, encoder=encoder, aspp=aspp, decoder=decoder)


def aspp_forward(x: Array, p: AsppParams) -> Array:
    """Five parallel context branches concatenated along channels."""
    x = as_feature_map(x)
    outs = []
    for branch in p.branches:
        with layer_scope(branch.desc.name):
            outs.append(conv_unit_forward(x, branch))
    with layer_scope(p.pool.desc.name):
        outs.append(conv_unit_forward(x, p.pool))
    return np.concatenate(outs, axis=0)


def decoder_forward(high: Array, low: Array, p: DecoderParams) -> Array:
    """Fuse high- and low-level features into a dense saliency map in [0, 1]."""
    high = as_feature_map(high)
    low = as_feature_map(low)
    if high.shape[1:] != low.shape[1:]:
        raise ConfigError(
            f"decoder inputs must share spatial dims, got {high.shape} and {low.shape}"
        )
    with layer_scope(p.high.desc.name):
        high = conv_unit_forward(high, p.high)
    with layer_scope(p.low.desc.name):
        low = conv_unit_forward(low, p.low)
    fused = np.concatenate([high, low], axis=0)
    with layer_scope(p.final.desc.name):
        out = conv_unit_forward(fused, p.final)
    return out[0]


def run_network(image: Array, params: NetworkParams) -> Array:
    low, high = run_encoder(image, params.encoder)
    context = aspp_forward(high, params.aspp)
    return decoder_forward(context, low, params.decoder)


def network_forward(image: Array, cfg: NetworkConfig, store) -> Array:
    """Encoder -> ASPP -> decoder; returns an (H, W) map of values in [0, 1]."""
    return run_network(image, bind_network(cfg, store))
