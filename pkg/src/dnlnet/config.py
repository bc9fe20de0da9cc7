"""Network configuration and static architecture derivation.

`NetworkConfig` captures the user-facing knobs (input size, attention
placements, split count). `derive_architecture` expands it into a full
static description: every conv unit with resolved shapes, strides,
dilations, and weight paths. The complexity counters, the weight
initializer, and the runtime builder all walk this one structure, so
layer names and shapes can never drift apart.

The encoder is an inverted-residual stack pinned to output stride 8:
the two module strides that would push the stride past 8 are converted
to stride 1 with doubled dilation (2, then 4).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from .dnl import AXES, default_embed_dim
from .errors import ConfigError
from .ops import conv_output_size

# (expansion t, out channels c, repeats n, original stride s)
MOBILENET_IR_TABLE: tuple[tuple[int, int, int, int], ...] = (
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
)

OUTPUT_STRIDE = 8
LOW_LEVEL_MODULE = 3  # decoder's skip input taps this module's output


@dataclass(frozen=True)
class NetworkConfig:
    input_hw: tuple[int, int] = (360, 360)
    stem_channels: int = 32
    ir_table: tuple[tuple[int, int, int, int], ...] = MOBILENET_IR_TABLE
    dnl_placements: tuple[int, ...] = (3, 4)
    dnl_split: int = 9
    dnl_axes: tuple[str, ...] = ("vertical", "horizontal")
    aspp_rates: tuple[int, int, int] = (6, 12, 18)
    aspp_channels: int = 256
    decoder_high_channels: int = 256
    decoder_low_channels: int = 48

    def __post_init__(self) -> None:
        h, w = self.input_hw
        if h < OUTPUT_STRIDE or w < OUTPUT_STRIDE or h % OUTPUT_STRIDE or w % OUTPUT_STRIDE:
            raise ConfigError(
                f"input size {h}x{w} must be a positive multiple of {OUTPUT_STRIDE}"
            )
        if len(self.ir_table) != 7:
            raise ConfigError(
                f"the encoder is defined with exactly 7 IR modules, got {len(self.ir_table)}"
            )
        n_modules = len(self.ir_table)
        for p in self.dnl_placements:
            if not 1 <= p <= n_modules:
                raise ConfigError(f"DNL placement {p} outside 1..{n_modules}")
        if len(set(self.dnl_placements)) != len(self.dnl_placements):
            raise ConfigError("duplicate DNL placements")
        if self.dnl_split < 1:
            raise ConfigError(f"split count must be >= 1, got {self.dnl_split}")
        if not self.dnl_axes:
            raise ConfigError("at least one DNL layer axis must be enabled")
        for axis in self.dnl_axes:
            if axis not in AXES:
                raise ConfigError(f"unknown DNL axis {axis!r}")


@dataclass(frozen=True)
class ConvUnitDesc:
    """One conv (+ optional BN + activation) with resolved geometry."""

    name: str
    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1
    dilation: int = 1
    padding: int = 0
    groups: int = 1
    has_bias: bool = False
    has_bn: bool = True
    act: str = "relu6"  # 'relu6' | 'none' | 'sigmoid'
    in_hw: tuple[int, int] = (1, 1)
    out_hw: tuple[int, int] = (1, 1)
    pre_gap: bool = False              # global-average-pool the input first
    resize_to: tuple[int, int] | None = None  # bilinear resize of the output

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_ch, self.in_ch // self.groups, self.kernel, self.kernel)

    @property
    def fan_in(self) -> int:
        return (self.in_ch // self.groups) * self.kernel * self.kernel


@dataclass(frozen=True)
class IrBlockDesc:
    name: str
    expand: ConvUnitDesc | None
    depthwise: ConvUnitDesc
    project: ConvUnitDesc
    use_skip: bool

    @property
    def units(self) -> tuple[ConvUnitDesc, ...]:
        units = () if self.expand is None else (self.expand,)
        return units + (self.depthwise, self.project)


@dataclass(frozen=True)
class DnlLayerDesc:
    name: str
    axis: str
    channels: int
    hw: tuple[int, int]
    split: int

    @property
    def feature_len(self) -> int:
        return self.hw[0] if self.axis == "vertical" else self.hw[1]

    @property
    def extent(self) -> int:
        return self.hw[1] if self.axis == "vertical" else self.hw[0]

    @property
    def embed_dim(self) -> int:
        return default_embed_dim(self.feature_len)

    @property
    def inner_dim(self) -> int:
        return default_embed_dim(self.feature_len)


@dataclass(frozen=True)
class DnlModuleDesc:
    name: str
    placement: int
    layers: tuple[DnlLayerDesc, ...]


@dataclass(frozen=True)
class Architecture:
    input_hw: tuple[int, int]
    stem: ConvUnitDesc
    modules: tuple[tuple[IrBlockDesc, ...], ...]
    dnls: tuple[DnlModuleDesc, ...]
    aspp_branches: tuple[ConvUnitDesc, ...]
    aspp_pool: ConvUnitDesc
    decoder_high: ConvUnitDesc
    decoder_low: ConvUnitDesc
    decoder_final: ConvUnitDesc
    low_level_shape: tuple[int, int, int] = field(default=(0, 0, 0))
    high_level_shape: tuple[int, int, int] = field(default=(0, 0, 0))

    def conv_units(self) -> list[ConvUnitDesc]:
        units: list[ConvUnitDesc] = [self.stem]
        for module in self.modules:
            for block in module:
                units.extend(block.units)
        units.extend(self.aspp_branches)
        units.append(self.aspp_pool)
        units.extend((self.decoder_high, self.decoder_low, self.decoder_final))
        return units

    def dnl_module(self, placement: int) -> DnlModuleDesc | None:
        for mod in self.dnls:
            if mod.placement == placement:
                return mod
        return None


def _conv_out_hw(
    hw: tuple[int, int], k: int, stride: int, dilation: int, padding: int
) -> tuple[int, int]:
    out_h = conv_output_size(hw[0], k, stride, dilation, padding)
    out_w = conv_output_size(hw[1], k, stride, dilation, padding)
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"conv output collapses to {out_h}x{out_w}")
    return out_h, out_w


def derive_architecture(cfg: NetworkConfig) -> Architecture:
    hw = cfg.input_hw
    stem = ConvUnitDesc(
        name="stem",
        in_ch=3,
        out_ch=cfg.stem_channels,
        kernel=3,
        stride=2,
        padding=1,
        in_hw=hw,
        out_hw=_conv_out_hw(hw, 3, 2, 1, 1),
    )
    hw = stem.out_hw
    in_ch = cfg.stem_channels
    current_stride = 2
    rate = 1

    modules: list[tuple[IrBlockDesc, ...]] = []
    dnls: list[DnlModuleDesc] = []
    for m, (t, c_out, n, s) in enumerate(cfg.ir_table, start=1):
        if s > 1 and current_stride >= OUTPUT_STRIDE:
            rate *= s
            stride, dilation = 1, rate
        else:
            stride, dilation = s, rate
            current_stride *= s
        blocks: list[IrBlockDesc] = []
        for b in range(1, n + 1):
            block_stride = stride if b == 1 else 1
            name = f"ir{m}.block{b}"
            hidden = in_ch * t
            expand = None
            if t != 1:
                expand = ConvUnitDesc(
                    name=f"{name}.expand",
                    in_ch=in_ch,
                    out_ch=hidden,
                    kernel=1,
                    in_hw=hw,
                    out_hw=hw,
                )
            dw_out = _conv_out_hw(hw, 3, block_stride, dilation, dilation)
            depthwise = ConvUnitDesc(
                name=f"{name}.depthwise",
                in_ch=hidden,
                out_ch=hidden,
                kernel=3,
                stride=block_stride,
                dilation=dilation,
                padding=dilation,
                groups=hidden,
                in_hw=hw,
                out_hw=dw_out,
            )
            project = ConvUnitDesc(
                name=f"{name}.project",
                in_ch=hidden,
                out_ch=c_out,
                kernel=1,
                act="none",
                in_hw=dw_out,
                out_hw=dw_out,
            )
            blocks.append(
                IrBlockDesc(
                    name=name,
                    expand=expand,
                    depthwise=depthwise,
                    project=project,
                    use_skip=(block_stride == 1 and in_ch == c_out),
                )
            )
            hw = dw_out
            in_ch = c_out
        modules.append(tuple(blocks))

        if m in cfg.dnl_placements:
            extent_by_axis = {"vertical": hw[1], "horizontal": hw[0]}
            for axis in cfg.dnl_axes:
                if cfg.dnl_split > extent_by_axis[axis]:
                    raise ConfigError(
                        f"split {cfg.dnl_split} exceeds {axis} extent "
                        f"{extent_by_axis[axis]} at placement {m}"
                    )
            layers = tuple(
                DnlLayerDesc(
                    name=f"dnl{m}.{axis}",
                    axis=axis,
                    channels=in_ch,
                    hw=hw,
                    split=cfg.dnl_split,
                )
                for axis in cfg.dnl_axes
            )
            dnls.append(DnlModuleDesc(name=f"dnl{m}", placement=m, layers=layers))

    if current_stride != OUTPUT_STRIDE:
        raise ConfigError(
            f"IR table yields output stride {current_stride}, expected {OUTPUT_STRIDE}"
        )

    feat_hw = hw
    high_ch = in_ch
    aspp_branches = [
        ConvUnitDesc(
            name="aspp.b0",
            in_ch=high_ch,
            out_ch=cfg.aspp_channels,
            kernel=1,
            in_hw=feat_hw,
            out_hw=feat_hw,
        )
    ]
    for i, r in enumerate(cfg.aspp_rates, start=1):
        aspp_branches.append(
            ConvUnitDesc(
                name=f"aspp.b{i}",
                in_ch=high_ch,
                out_ch=cfg.aspp_channels,
                kernel=3,
                dilation=r,
                padding=r,
                in_hw=feat_hw,
                out_hw=feat_hw,
            )
        )
    aspp_pool = ConvUnitDesc(
        name="aspp.pool",
        in_ch=high_ch,
        out_ch=cfg.aspp_channels,
        kernel=1,
        in_hw=(1, 1),
        out_hw=(1, 1),
        pre_gap=True,
        resize_to=feat_hw,
    )
    aspp_out_ch = cfg.aspp_channels * (len(cfg.aspp_rates) + 2)

    low_ch = cfg.ir_table[LOW_LEVEL_MODULE - 1][1]
    decoder_high = ConvUnitDesc(
        name="decoder.high",
        in_ch=aspp_out_ch,
        out_ch=cfg.decoder_high_channels,
        kernel=1,
        in_hw=feat_hw,
        out_hw=feat_hw,
    )
    decoder_low = ConvUnitDesc(
        name="decoder.low",
        in_ch=low_ch,
        out_ch=cfg.decoder_low_channels,
        kernel=1,
        in_hw=feat_hw,
        out_hw=feat_hw,
    )
    decoder_final = ConvUnitDesc(
        name="decoder.final",
        in_ch=cfg.decoder_high_channels + cfg.decoder_low_channels,
        out_ch=1,
        kernel=1,
        has_bias=True,
        has_bn=False,
        act="sigmoid",
        in_hw=feat_hw,
        out_hw=feat_hw,
        resize_to=cfg.input_hw,
    )

    return Architecture(
        input_hw=cfg.input_hw,
        stem=stem,
        modules=tuple(modules),
        dnls=tuple(dnls),
        aspp_branches=tuple(aspp_branches),
        aspp_pool=aspp_pool,
        decoder_high=decoder_high,
        decoder_low=decoder_low,
        decoder_final=decoder_final,
        low_level_shape=(low_ch, *feat_hw),
        high_level_shape=(high_ch, *feat_hw),
    )


def baseline_config(cfg: NetworkConfig) -> NetworkConfig:
    """The same network with every DNL module removed."""
    return replace(cfg, dnl_placements=())


# --- config file handling -------------------------------------------------

_NETWORK_KEYS = {"input_height", "input_width"}
_DNL_KEYS = {"placements", "split", "layers"}


def load_config(path: str | Path) -> NetworkConfig:
    """Read a config file: INI sections [network] and [dnl]."""
    parser = configparser.ConfigParser()
    text = Path(path).read_text()
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc

    kwargs: dict = {}
    for section in parser.sections():
        if section == "network":
            unknown = set(parser["network"]) - _NETWORK_KEYS
            if unknown:
                raise ConfigError(f"unknown [network] keys: {sorted(unknown)}")
            h = parser["network"].getint("input_height", 360)
            w = parser["network"].getint("input_width", 360)
            kwargs["input_hw"] = (h, w)
        elif section == "dnl":
            unknown = set(parser["dnl"]) - _DNL_KEYS
            if unknown:
                raise ConfigError(f"unknown [dnl] keys: {sorted(unknown)}")
            if "placements" in parser["dnl"]:
                kwargs["dnl_placements"] = parse_placements(parser["dnl"]["placements"])
            if "split" in parser["dnl"]:
                kwargs["dnl_split"] = parser["dnl"].getint("split")
            if "layers" in parser["dnl"]:
                axes = tuple(
                    tok for tok in parser["dnl"]["layers"].replace(",", " ").split() if tok
                )
                kwargs["dnl_axes"] = axes
        else:
            raise ConfigError(f"unknown config section [{section}]")
    try:
        return NetworkConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def parse_placements(text: str) -> tuple[int, ...]:
    """Parse '3,4' or '3 4' or 'none' into a placement tuple."""
    text = text.strip()
    if text.lower() in ("", "none"):
        return ()
    try:
        return tuple(int(tok) for tok in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"bad placement list {text!r}") from exc
