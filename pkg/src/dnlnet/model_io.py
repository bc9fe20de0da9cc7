"""Weights persistence, deterministic initialization, and image I/O.

Weights file layout (all integers little-endian uint32, floats little-endian
IEEE-754 binary32):

    magic   8 bytes  b"DNLW0001"
    count   uint32   number of entries
    entry*  uint32 path length, path bytes (utf-8),
            uint32 rank, rank * uint32 dims, raw float32 data

The format is bit-exact: save followed by load reproduces every tensor
byte for byte.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .config import Architecture, NetworkConfig, derive_architecture
from .errors import ConfigError, IncompleteModelError, WeightsFormatError
from .ops import Array, bilinear_resize

MAGIC = b"DNLW0001"

IMAGE_MEAN = 0.5
IMAGE_STD = 0.5


class WeightStore:
    """Ordered map from parameter path to a float32 tensor."""

    def __init__(self, tensors: dict[str, Array] | None = None) -> None:
        self._tensors: dict[str, Array] = {}
        if tensors:
            for path, value in tensors.items():
                self[path] = value

    def __setitem__(self, path: str, value: Array) -> None:
        arr = np.ascontiguousarray(value, dtype=np.float32)
        if not np.all(np.isfinite(arr)):
            raise ConfigError(f"tensor {path!r} contains non-finite values")
        self._tensors[path] = arr

    def __getitem__(self, path: str) -> Array:
        return self._tensors[path]

    def __contains__(self, path: str) -> bool:
        return path in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def paths(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def require(self, path: str, shape: tuple[int, ...]) -> Array:
        if path not in self._tensors:
            raise IncompleteModelError(f"missing required weight {path!r}")
        arr = self._tensors[path]
        if arr.shape != tuple(shape):
            raise ConfigError(
                f"weight {path!r} has shape {arr.shape}, config requires {tuple(shape)}"
            )
        return arr


def save_weights(store: WeightStore, destination: str | Path) -> None:
    chunks = [MAGIC, struct.pack("<I", len(store))]
    for path, arr in store.items():
        encoded = path.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f4").tobytes())
    Path(destination).write_bytes(b"".join(chunks))


def load_weights(source: str | Path) -> WeightStore:
    data = Path(source).read_bytes()
    view = memoryview(data)
    offset = 0

    def take(n: int) -> memoryview:
        nonlocal offset
        if offset + n > len(data):
            raise WeightsFormatError(f"truncated weights file {source}")
        chunk = view[offset : offset + n]
        offset += n
        return chunk

    magic = bytes(take(len(MAGIC)))
    if magic != MAGIC:
        raise WeightsFormatError(
            f"bad magic {magic!r} in {source}; expected {MAGIC!r}"
        )
    (count,) = struct.unpack("<I", take(4))
    store = WeightStore()
    for _ in range(count):
        (path_len,) = struct.unpack("<I", take(4))
        path = bytes(take(path_len)).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        raw = take(4 * n)
        store[path] = np.frombuffer(raw, dtype="<f4").reshape(dims)
    if offset != len(data):
        raise WeightsFormatError(f"trailing bytes after last entry in {source}")
    return store


# --- parameter enumeration and initialization -------------------------------

@dataclass(frozen=True)
class ParamSpec:
    path: str
    shape: tuple[int, ...]
    fan_in: int
    init: str  # 'uniform' | 'zeros' | 'ones'
    learnable: bool = True


def parameter_specs(cfg: NetworkConfig) -> list[ParamSpec]:
    arch = derive_architecture(cfg)
    specs: list[ParamSpec] = []

    def add_conv(u) -> None:
        specs.append(ParamSpec(f"{u.name}.conv.weight", u.weight_shape, u.fan_in, "uniform"))
        if u.has_bias:
            specs.append(ParamSpec(f"{u.name}.conv.bias", (u.out_ch,), u.fan_in, "uniform"))
        if u.has_bn:
            c = (u.out_ch,)
            specs.append(ParamSpec(f"{u.name}.bn.gamma", c, 1, "ones"))
            specs.append(ParamSpec(f"{u.name}.bn.beta", c, 1, "zeros"))
            specs.append(ParamSpec(f"{u.name}.bn.mean", c, 1, "zeros", learnable=False))
            specs.append(ParamSpec(f"{u.name}.bn.var", c, 1, "ones", learnable=False))

    for u in arch.conv_units():
        add_conv(u)
    for mod in arch.dnls:
        for layer in mod.layers:
            c, d_in = layer.channels, layer.feature_len
            d_a, d_p = layer.embed_dim, layer.inner_dim
            p = layer.name
            specs.extend(
                [
                    ParamSpec(f"{p}.theta.weight", (c, d_a, d_in), d_in, "uniform"),
                    ParamSpec(f"{p}.theta.bias", (c, d_a), d_in, "uniform"),
                    ParamSpec(f"{p}.phi.weight", (c, d_a, d_in), d_in, "uniform"),
                    ParamSpec(f"{p}.phi.bias", (c, d_a), d_in, "uniform"),
                    ParamSpec(f"{p}.g.weight", (c, d_in, d_p), d_in, "uniform"),
                    ParamSpec(f"{p}.g.bias", (c, d_p), d_in, "uniform"),
                    ParamSpec(f"{p}.f.weight", (c, d_p, d_in), d_p, "uniform"),
                    ParamSpec(f"{p}.f.bias", (c, d_in), d_p, "uniform"),
                ]
            )
    return specs


def _path_rng(seed: int, path: str) -> np.random.Generator:
    # each tensor draws from its own stream keyed on (seed, path), so adding
    # or removing modules never perturbs the weights of shared layers
    digest = hashlib.blake2s(path.encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng(
        np.random.SeedSequence([seed, int.from_bytes(digest, "little")])
    )


def random_init(cfg: NetworkConfig, seed: int = 0) -> WeightStore:
    """Deterministic untrained weights; a pure function of (cfg, seed)."""
    store = WeightStore()
    for spec in parameter_specs(cfg):
        if spec.init == "uniform":
            bound = 1.0 / np.sqrt(spec.fan_in)
            rng = _path_rng(seed, spec.path)
            store[spec.path] = rng.uniform(-bound, bound, size=spec.shape).astype(np.float32)
        elif spec.init == "zeros":
            store[spec.path] = np.zeros(spec.shape, dtype=np.float32)
        elif spec.init == "ones":
            store[spec.path] = np.ones(spec.shape, dtype=np.float32)
        else:
            raise ConfigError(f"unknown init kind {spec.init!r}")
    return store


def validate_store(store: WeightStore, cfg: NetworkConfig) -> None:
    """Check that every path the config requires exists with the right shape."""
    for spec in parameter_specs(cfg):
        store.require(spec.path, spec.shape)


def zero_dnl_residuals(store: WeightStore) -> WeightStore:
    """Copy of the store with every attention f-mapping zeroed (identity DNL)."""
    out = WeightStore()
    for path, arr in store.items():
        if ".f.weight" in path or ".f.bias" in path:
            out[path] = np.zeros_like(arr)
        else:
            out[path] = arr
    return out


# --- images ------------------------------------------------------------------

def load_image(path: str | Path, size: tuple[int, int] | None = None) -> Array:
    """Decode an image to a (3, H, W) float32 tensor with values in [0, 1]."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    tensor = np.ascontiguousarray(arr.transpose(2, 0, 1))
    if size is not None and tensor.shape[1:] != tuple(size):
        tensor = bilinear_resize(tensor, size[0], size[1])
    return tensor


def normalize_image(x: Array) -> Array:
    """Mean/std normalization applied to network inputs: (x - 0.5) / 0.5."""
    return ((np.asarray(x, dtype=np.float32) - IMAGE_MEAN) / IMAGE_STD).astype(np.float32)


def save_map(saliency: Array, path: str | Path) -> None:
    """Write a saliency map as 8-bit grayscale; rounding is round-half-up."""
    arr = np.asarray(saliency, dtype=np.float64)
    if arr.ndim != 2:
        raise ConfigError(f"saliency map must be 2D, got shape {arr.shape}")
    quantized = np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(quantized, mode="L").save(path)


def load_map(path: str | Path) -> Array:
    """Read a saved grayscale map back to float values in [0, 1]."""
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read map {path}: {exc}") from exc
    return arr
