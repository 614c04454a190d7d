"""
Shared configuration for labornet
Loads environment variables, static defaults and per-run key-value files
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional

from dotenv import dotenv_values, load_dotenv

logger = logging.getLogger(__name__)

# Try to load .env file (for local development)
_ENV_PATH = Path.cwd() / '.env'
if _ENV_PATH.exists():
    load_dotenv(_ENV_PATH)

# ========================
# RUNTIME (from environment)
# ========================
LOG_LEVEL = os.environ.get('LABORNET_LOG', 'INFO').upper()
THREADS = int(os.environ.get('LABORNET_THREADS', str(os.cpu_count() or 1)))
DEFAULT_SEED = int(os.environ.get('LABORNET_SEED', '20240611'))

# Version tag of the description-length prior family; bump on any change
DL_CONVENTION = "dl-v1"

# ========================
# GRAPH LOADING
# ========================
MIN_JOB_WORKERS = int(os.environ.get('LABORNET_MIN_JOB_WORKERS', '5'))

# ========================
# BLOCKMODEL INFERENCE (Static)
# ========================
INFERENCE_SETTINGS = {
    "restarts": 8,
    "sweeps_per_restart": 60,
    "greedy_sweeps": 10,
    "t_start": 1.0,
    "t_end": 0.02,
    "schedule": "geometric",
    "proposal_epsilon": 0.1,
}

# ========================
# EQUILIBRIUM SOLVER (Static)
# ========================
SOLVER_SETTINGS = {
    "rho": 0.1,
    "tol": 1e-8,
    "max_iter": 50_000,
    "rho_decay": 0.5,
    "rho_min": 1e-4,
    "eta": 2.0,
    "labor_share": 0.66,
}

# ========================
# SUPPLY ESTIMATION (Static)
# ========================
ESTIMATION_SETTINGS = {
    "zero_cell_epsilon": 1e-6,
    "grad_tol": 1e-6,
    "max_outer": 50,
    "jitter_starts": 3,
    "ln_nu_bounds": (-9.0, 9.0),
    "ln_phi_lower": -18.0,
    "sigma_floor": 1e-6,
}

# ========================
# SIMULATION (Static)
# ========================
SIMULATION_SETTINGS = {
    "n_workers": 10_000,
    "periods": 1,
    "separation_rate": 0.3,
    "jobs_per_market": 10,
}

# ========================
# ANALYSIS (Static)
# ========================
ANALYSIS_SETTINGS = {
    "misclassification_step": 0.05,
    "sweep_seeds": 5,
    "crosstab_top_n": 10,
    "flow_norm": "L1",
}


# ========================
# HELPER FUNCTIONS
# ========================

def get_config(key: str, default: Optional[str] = None) -> str:
    """
    Get configuration value with fallback

    Args:
        key: Environment variable name
        default: Default value if not set

    Returns:
        Configuration value
    """
    return os.environ.get(key, default or '')


def require_config(key: str) -> str:
    """
    Get required configuration value, raise error if not set

    Args:
        key: Environment variable name

    Returns:
        Configuration value

    Raises:
        ValueError: If key is not set
    """
    value = os.environ.get(key)
    if not value:
        raise ValueError(f"Required configuration {key} is not set")
    return value


def get_all_config() -> Dict[str, Any]:
    """Get all resolved defaults as dictionary (for debugging and echoes)"""
    return {
        'log_level': LOG_LEVEL,
        'threads': THREADS,
        'seed': DEFAULT_SEED,
        'min_job_workers': MIN_JOB_WORKERS,
        'dl_convention': DL_CONVENTION,
        'inference': dict(INFERENCE_SETTINGS),
        'solver': dict(SOLVER_SETTINGS),
        'estimation': dict(ESTIMATION_SETTINGS),
        'simulation': dict(SIMULATION_SETTINGS),
        'analysis': dict(ANALYSIS_SETTINGS),
    }


# ========================
# RUN CONFIG FILES
# ========================

def load_run_config(
    path: Optional[str],
    allowed_keys: Iterable[str],
    overrides: Optional[Mapping[str, Any]] = None,
) -> Dict[str, str]:
    """
    Load a KEY=VALUE run file and merge command-line overrides

    Args:
        path: Config file path, or None for overrides only
        allowed_keys: Keys this subcommand understands
        overrides: Values that win over the file (e.g. --seed)

    Returns:
        Resolved mapping of lower-cased keys to string values

    Raises:
        ValueError: On a missing file or unknown keys
    """
    allowed = {k.lower() for k in allowed_keys}
    resolved: Dict[str, str] = {}

    if path:
        if not Path(path).exists():
            raise ValueError(f"Config file not found: {path}")
        for key, value in dotenv_values(path).items():
            resolved[key.lower()] = '' if value is None else value

    for key, value in (overrides or {}).items():
        if value is not None:
            resolved[key.lower()] = str(value)

    unknown = sorted(set(resolved) - allowed)
    if unknown:
        raise ValueError(f"Unknown config keys: {', '.join(unknown)}")

    return resolved


def write_config_echo(config: Mapping[str, Any], out_dir: Path) -> Path:
    """Write the resolved run config next to the outputs, sorted by key"""
    out_dir.mkdir(parents=True, exist_ok=True)
    echo_path = out_dir / 'resolved_config.env'
    lines = [f"{key.upper()}={config[key]}" for key in sorted(config)]
    echo_path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    logger.info(f"[Config] Wrote config echo: {echo_path}")
    return echo_path


def as_int(config: Mapping[str, str], key: str, default: int) -> int:
    """Read an integer key, reporting the key name on bad input"""
    raw = config.get(key)
    if raw in (None, ''):
        return default
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"Config key {key} must be an integer, got {raw!r}")


def as_float(config: Mapping[str, str], key: str, default: float) -> float:
    """Read a float key, reporting the key name on bad input"""
    raw = config.get(key)
    if raw in (None, ''):
        return default
    try:
        return float(raw)
    except ValueError:
        raise ValueError(f"Config key {key} must be a number, got {raw!r}")
