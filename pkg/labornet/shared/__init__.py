"""
Shared utilities for labornet modules
"""

from .config import (
    DEFAULT_SEED,
    LOG_LEVEL,
    THREADS,
    get_config,
    require_config,
    load_run_config,
    write_config_echo,
)
from .parallel import ordered_map
from .rng import derived_seed, substream

__all__ = [
    'DEFAULT_SEED',
    'LOG_LEVEL',
    'THREADS',
    'get_config',
    'require_config',
    'load_run_config',
    'write_config_echo',
    'ordered_map',
    'derived_seed',
    'substream',
]
