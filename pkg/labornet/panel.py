"""
Worker panel record
One observation per worker per period: market choice, earnings, separation flag
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ['worker_id', 't', 'iota', 'gamma', 'omega', 'c']
OPTIONAL_COLUMNS = ['job_id', 'sector', 'occupation']


@dataclass(frozen=True, eq=False)
class WorkerPanel:
    """
    Long-format worker panel

    gamma == 0 is non-employment; omega is NaN on those rows and positive
    everywhere else. Every worker separates in its first period (c == 1).
    """

    frame: pd.DataFrame

    def __post_init__(self):
        validate_panel(self.frame)

    @property
    def n_workers(self) -> int:
        return int(self.frame['worker_id'].nunique())

    @property
    def periods(self) -> List[int]:
        return sorted(int(t) for t in self.frame['t'].unique())

    @property
    def n_types(self) -> int:
        return int(self.frame['iota'].max()) + 1

    @property
    def n_markets(self) -> int:
        return int(self.frame['gamma'].max())

    @property
    def employed(self) -> pd.DataFrame:
        return self.frame[self.frame['gamma'] > 0]

    def has_column(self, name: str) -> bool:
        return name in self.frame.columns

    def with_columns(self, **columns) -> 'WorkerPanel':
        """Copy of the panel with extra or replaced label columns"""
        frame = self.frame.copy()
        for name, values in columns.items():
            frame[name] = values
        return WorkerPanel(frame)


def validate_panel(frame: pd.DataFrame) -> None:
    """
    Check the structural panel invariants

    Raises:
        ValueError: Naming the first offending row or column
    """
    missing = [col for col in REQUIRED_COLUMNS if col not in frame.columns]
    if missing:
        raise ValueError(f"Panel is missing columns: {', '.join(missing)}")
    if frame.empty:
        raise ValueError("Panel has no observations")

    duplicated = frame.duplicated(subset=['worker_id', 't'])
    if duplicated.any():
        row = frame[duplicated].iloc[0]
        raise ValueError(f"Duplicate observation for worker {row['worker_id']} in period {row['t']}")

    if (frame['gamma'] < 0).any() or (frame['iota'] < 0).any():
        raise ValueError("Panel iota/gamma indices must be non-negative")

    if not frame['c'].isin([0, 1]).all():
        raise ValueError("Separation flag c must be 0 or 1")

    first_period = frame.groupby('worker_id')['t'].transform('min') == frame['t']
    if (frame.loc[first_period, 'c'] != 1).any():
        bad = frame.loc[first_period & (frame['c'] != 1), 'worker_id'].iloc[0]
        raise ValueError(f"Worker {bad} does not separate in its first period")

    employed = frame['gamma'] > 0
    omega = frame['omega']
    bad_earnings = employed & ~(omega > 0)
    if bad_earnings.any():
        row = frame[bad_earnings].iloc[0]
        raise ValueError(
            f"Employed observation (worker {row['worker_id']}, t={row['t']}) has missing or non-positive earnings"
        )
    if (~employed & omega.notna()).any():
        row = frame[~employed & omega.notna()].iloc[0]
        raise ValueError(f"Non-employed observation (worker {row['worker_id']}, t={row['t']}) carries earnings")


def read_panel_csv(path: str) -> WorkerPanel:
    """
    Read a panel CSV with header worker_id,t,iota,gamma,omega,c[,job_id,sector,occupation]

    Raises:
        ValueError: On missing columns or invariant violations
    """
    if not Path(path).exists():
        raise ValueError(f"Panel file not found: {path}")

    try:
        frame = pd.read_csv(path, dtype={'worker_id': str, 'job_id': str})
    except pd.errors.EmptyDataError:
        raise ValueError(f"Panel file is empty: {path}")

    for col in ['t', 'iota', 'gamma', 'c']:
        if col in frame.columns:
            if frame[col].isna().any():
                line = int(frame.index[frame[col].isna()][0]) + 2
                raise ValueError(f"Missing {col} on line {line} of {path}")
            frame[col] = frame[col].astype(np.int64)

    panel = WorkerPanel(frame)
    logger.info(f"[Panel] Loaded {len(frame)} observations for {panel.n_workers} workers from {path}")
    return panel


def write_panel_csv(panel: WorkerPanel, path: Path) -> Path:
    """Write the panel deterministically (same panel gives the same bytes)"""
    columns = REQUIRED_COLUMNS + [col for col in OPTIONAL_COLUMNS if col in panel.frame.columns]
    path.parent.mkdir(parents=True, exist_ok=True)
    panel.frame[columns].to_csv(path, index=False, na_rep='', float_format='%.12g')
    return path


def concat_panels(first: WorkerPanel, second: WorkerPanel) -> WorkerPanel:
    """Stack two panels, shifting the second one's periods after the first"""
    offset = max(first.periods)
    later = second.frame.copy()
    later['t'] = later['t'] + offset
    return WorkerPanel(pd.concat([first.frame, later], ignore_index=True))
