"""Depthwise non-local saliency network: CPU inference and analysis toolkit."""

from .config import NetworkConfig, baseline_config, derive_architecture, load_config
from .errors import ConfigError, DnlNetError, IncompleteModelError, WeightsFormatError
from .head import network_forward
from .model_io import WeightStore, load_weights, random_init, save_weights

__version__ = "0.1.0"

__all__ = [
    "NetworkConfig",
    "baseline_config",
    "derive_architecture",
    "load_config",
    "ConfigError",
    "DnlNetError",
    "IncompleteModelError",
    "WeightsFormatError",
    "network_forward",
    "WeightStore",
    "load_weights",
    "random_init",
    "save_weights",
    "__version__",
]
