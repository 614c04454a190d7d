"""
Metrics: Bartik exposure regressions, concentration, flow prediction and misclassification
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
import statsmodels.api as sm

from .graph_core import Partition
from .panel import WorkerPanel
from .shared.config import ANALYSIS_SETTINGS, DEFAULT_SEED
from .shared.parallel import ordered_map
from .shared.rng import substream

logger = logging.getLogger(__name__)

FLOW_NORMS = ('L1', 'L2')


# ========================
# EXPOSURE AND BARTIK
# ========================

@dataclass
class ExposureTable:
    """Row-stochastic employment shares of worker groups (rows) across job classes (columns)"""

    shares: pd.DataFrame
    sizes: pd.Series

    @property
    def groups(self) -> pd.Index:
        return self.shares.index

    @property
    def classes(self) -> pd.Index:
        return self.shares.columns


def exposure_table(panel: WorkerPanel, worker_col: str = 'iota', job_col: str = 'gamma') -> ExposureTable:
    """
    Share of each worker group's employment in each job class

    Groups with no employment are dropped and logged. Sizes count distinct workers.
    """
    frame = panel.frame
    employed = frame[(frame['gamma'] > 0) & frame[job_col].notna()]
    counts = pd.crosstab(employed[worker_col], employed[job_col])
    shares = counts.div(counts.sum(axis=1), axis=0)

    sizes = frame.groupby(worker_col)['worker_id'].nunique()
    dropped = sizes.index.difference(shares.index)
    if len(dropped):
        logger.warning(f"[Metrics] ⚠️ Dropped {len(dropped)} worker groups with no employment")
    return ExposureTable(shares, sizes.loc[shares.index])


def bartik_instrument(exposure: ExposureTable, shocks) -> pd.Series:
    """
    Exposure-weighted class shocks, one value per worker group

    Args:
        exposure: ExposureTable
        shocks: Series indexed by job class, or an array aligned with exposure.classes

    Raises:
        ValueError: When a class in the exposure table has no shock
    """
    if isinstance(shocks, pd.Series):
        missing = exposure.classes.difference(shocks.index)
        if len(missing):
            raise ValueError(f"No shock for job class {missing[0]}")
        vector = shocks.reindex(exposure.classes).to_numpy(dtype=float)
    else:
        vector = np.asarray(shocks, dtype=float)
        if vector.shape != (len(exposure.classes),):
            raise ValueError(f"Got {vector.size} shocks for {len(exposure.classes)} job classes")
    return pd.Series(exposure.shares.to_numpy() @ vector, index=exposure.groups, name='bartik')


def zscore(x) -> np.ndarray:
    """Standardize with the population standard deviation"""
    values = np.asarray(x, dtype=float)
    sd = values.std()
    if values.size < 2 or not sd > 0:
        raise ValueError("zscore needs at least two distinct values")
    return (values - values.mean()) / sd


# ========================
# REGRESSION
# ========================

@dataclass
class RegressionResult:
    intercept: float
    slope: float
    se_intercept: float
    se_slope: float
    robust_se_intercept: float
    robust_se_slope: float
    r2: float
    n: int
    weights: str

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


def weighted_ols(y, x, weights=None) -> RegressionResult:
    """
    Weighted least squares of y on a constant and x

    Reports classical and HC1 robust standard errors; R-squared is weighted.

    Raises:
        ValueError: With fewer than 3 points or a constant regressor
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if y.shape != x.shape:
        raise ValueError(f"y has {y.size} values, x has {x.size}")
    if y.size < 3:
        raise ValueError("Regression needs at least 3 observations")
    if np.ptp(x) == 0:
        raise ValueError("Regressor is constant")
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != y.shape or (w <= 0).any():
        raise ValueError("Weights must be positive and match the observations")

    design = sm.add_constant(x, has_constant='add')
    model = sm.WLS(y, design, weights=w)
    classical = model.fit()
    robust = model.fit(cov_type='HC1')
    return RegressionResult(
        intercept=float(classical.params[0]),
        slope=float(classical.params[1]),
        se_intercept=float(classical.bse[0]),
        se_slope=float(classical.bse[1]),
        robust_se_intercept=float(robust.bse[0]),
        robust_se_slope=float(robust.bse[1]),
        r2=float(classical.rsquared),
        n=int(y.size),
        weights='none' if weights is None else 'workers',
    )


def model_fit_regression(actual, predicted, weights=None) -> RegressionResult:
    """Actual on model-implied changes; a well-specified model gives slope 1, intercept 0"""
    return weighted_ols(actual, predicted, weights)


# ========================
# OUTCOMES
# ========================

def _log_earnings(frame: pd.DataFrame) -> pd.Series:
    employed = frame['gamma'] > 0
    values = np.zeros(len(frame))
    values[employed.to_numpy()] = np.log(frame.loc[employed, 'omega'].to_numpy(dtype=float))
    return pd.Series(values, index=frame.index)


def delta_outcome(pre: WorkerPanel, post: WorkerPanel, worker_col: str = 'iota') -> pd.Series:
    """
    Post minus pre group mean of log earnings, non-employment counted as 0

    Groups missing from either panel are dropped and logged.
    """
    before = _log_earnings(pre.frame).groupby(pre.frame[worker_col]).mean()
    after = _log_earnings(post.frame).groupby(post.frame[worker_col]).mean()
    common = before.index.intersection(after.index)
    dropped = before.index.symmetric_difference(after.index)
    if len(dropped):
        logger.warning(f"[Metrics] ⚠️ Dropped {len(dropped)} groups not observed both pre and post")
    return (after.loc[common] - before.loc[common]).rename('delta')


def empirical_class_shocks(pre: WorkerPanel, post: WorkerPanel, class_col: str = 'gamma') -> pd.Series:
    """Log change in employment per job class; classes missing in either panel get 0"""
    def employment(panel: WorkerPanel) -> pd.Series:
        frame = panel.frame
        employed = frame[(frame['gamma'] > 0) & frame[class_col].notna()]
        return employed.groupby(class_col).size()

    before, after = employment(pre), employment(post)
    classes = before.index.union(after.index)
    before = before.reindex(classes, fill_value=0)
    after = after.reindex(classes, fill_value=0)
    present = (before > 0) & (after > 0)
    if not present.all():
        logger.warning(f"[Metrics] ⚠️ {int((~present).sum())} job classes missing pre or post; shock set to 0")
    shocks = pd.Series(0.0, index=classes, name='shock')
    shocks[present] = np.log(after[present].astype(float)) - np.log(before[present].astype(float))
    return shocks


@dataclass
class BartikRegression:
    result: RegressionResult
    table: pd.DataFrame


def bartik_regression(
    pre: WorkerPanel,
    post: WorkerPanel,
    worker_col: str = 'iota',
    job_col: str = 'gamma',
    shocks: Optional[pd.Series] = None,
) -> BartikRegression:
    """
    Regress group earnings changes on the standardized Bartik instrument

    Exposure comes from the pre panel. Without explicit shocks the empirical
    log employment change per job class is used. Weights are worker counts.
    """
    exposure = exposure_table(pre, worker_col, job_col)
    if shocks is None:
        shocks = empirical_class_shocks(pre, post, job_col)
    bartik = bartik_instrument(exposure, shocks)
    delta = delta_outcome(pre, post, worker_col)
    groups = bartik.index.intersection(delta.index)
    table = pd.DataFrame({
        'bartik': bartik.loc[groups],
        'delta': delta.loc[groups],
        'weight': exposure.sizes.loc[groups].astype(float),
    })
    table['bartik_z'] = zscore(table['bartik'])
    result = weighted_ols(table['delta'], table['bartik_z'], table['weight'])
    return BartikRegression(result, table.rename_axis('group').reset_index())


# ========================
# CONCENTRATION AND CROSSTABS
# ========================

def hhi_profile(panel: WorkerPanel, group_col: str = 'iota', class_col: str = 'gamma') -> pd.DataFrame:
    """
    Herfindahl index of each group's employment across classes, sorted ascending

    Swap the columns for the job-side profile (classes hiring across worker groups).
    """
    frame = panel.frame
    employed = frame[(frame['gamma'] > 0) & frame[group_col].notna() & frame[class_col].notna()]
    shares = pd.crosstab(employed[group_col], employed[class_col], normalize='index')
    sizes = employed.groupby(group_col).size()
    profile = pd.DataFrame({
        'group': shares.index,
        'hhi': (shares ** 2).sum(axis=1).to_numpy(),
        'size': sizes.loc[shares.index].to_numpy(),
    })
    return profile.sort_values(['hhi', 'group'], kind='mergesort').reset_index(drop=True)


def classification_crosstab(
    panel: WorkerPanel,
    group_col: str,
    label_col: str,
    top_n: int = ANALYSIS_SETTINGS['crosstab_top_n'],
) -> pd.DataFrame:
    """Most frequent labels within each group with their within-group shares"""
    if not panel.has_column(label_col):
        raise ValueError(f"Panel has no {label_col} column")
    frame = panel.frame
    labelled = frame[frame[label_col].notna() & frame[group_col].notna()]
    counts = labelled.groupby([group_col, label_col]).size().rename('count').reset_index()
    counts['share'] = counts['count'] / counts.groupby(group_col)['count'].transform('sum')
    counts = counts.sort_values([group_col, 'count', label_col], ascending=[True, False, True], kind='mergesort')
    counts['rank'] = counts.groupby(group_col).cumcount() + 1
    return counts[counts['rank'] <= top_n].reset_index(drop=True)


# ========================
# FLOWS
# ========================

def job_transitions(panel: WorkerPanel) -> pd.DataFrame:
    """Consecutive employed observations of a worker whose job changes"""
    if not panel.has_column('job_id'):
        raise ValueError("Panel has no job_id column")
    frame = panel.frame
    spells = frame[(frame['gamma'] > 0) & frame['job_id'].notna()].sort_values(['worker_id', 't'], kind='mergesort')
    following = spells.groupby('worker_id')['job_id'].shift(-1)
    moves = following.notna() & (following != spells['job_id'])
    return pd.DataFrame({
        'origin': spells.loc[moves, 'job_id'].to_numpy(),
        'destination': following[moves].to_numpy(),
    })


def flow_prediction_errors(
    market_of_job: pd.Series,
    in_sample: pd.DataFrame,
    out_of_sample: pd.DataFrame,
    job_employment: pd.Series,
    norm: str = ANALYSIS_SETTINGS['flow_norm'],
) -> pd.Series:
    """
    Per-origin-job distance between predicted and empirical destination distributions

    The prediction routes a move through the market transition matrix
    estimated in sample, then spreads it over destination jobs in proportion
    to their employment.

    Args:
        market_of_job: Market label per job id
        in_sample: Transitions (origin, destination) used to estimate market flows
        out_of_sample: Transitions the prediction is scored on
        job_employment: Employment d_j per job id
        norm: 'L1' or 'L2'

    Returns:
        Series of errors indexed by origin job (origins with out-of-sample moves only)
    """
    if norm not in FLOW_NORMS:
        raise ValueError(f"Unknown norm {norm}; use one of {FLOW_NORMS}")
    for name, flows in (('in-sample', in_sample), ('out-of-sample', out_of_sample)):
        unknown = pd.Index(flows['origin']).union(pd.Index(flows['destination'])).difference(market_of_job.index)
        if len(unknown):
            raise ValueError(f"Job {unknown[0]} in {name} transitions has no market")

    employment = job_employment.reindex(market_of_job.index, fill_value=0).astype(float)
    market_mass = employment.groupby(market_of_job).sum()
    within = employment / market_of_job.map(market_mass).replace(0, np.nan)
    within = within.fillna(0.0)
    within_sq = (within ** 2).groupby(market_of_job).sum()

    market_flows = pd.crosstab(
        in_sample['origin'].map(market_of_job), in_sample['destination'].map(market_of_job), normalize='index'
    )

    empirical = out_of_sample.groupby(['origin', 'destination']).size().rename('count').reset_index()
    empirical['q'] = empirical['count'] / empirical.groupby('origin')['count'].transform('sum')
    empirical['origin_market'] = empirical['origin'].map(market_of_job)
    empirical['dest_market'] = empirical['destination'].map(market_of_job)

    def predicted_market(row) -> float:
        if row.origin_market in market_flows.index and row.dest_market in market_flows.columns:
            return float(market_flows.at[row.origin_market, row.dest_market])
        return 0.0

    empirical['p_market'] = [predicted_market(row) for row in empirical.itertuples(index=False)]
    empirical['p'] = empirical['p_market'] * empirical['destination'].map(within).to_numpy()

    errors = {}
    for origin, rows in empirical.groupby('origin', sort=True):
        m = market_of_job[origin]
        flows = market_flows.loc[m] if m in market_flows.index else pd.Series(dtype=float)
        total_mass = float(flows.sum())
        if norm == 'L1':
            errors[origin] = float(np.abs(rows['p'] - rows['q']).sum() + (total_mass - rows['p'].sum()))
        else:
            all_sq = float((flows ** 2 * within_sq.reindex(flows.index, fill_value=0.0)).sum())
            on_support = float(((rows['p'] - rows['q']) ** 2).sum())
            errors[origin] = float(np.sqrt(max(on_support + all_sq - (rows['p'] ** 2).sum(), 0.0)))
    return pd.Series(errors, name=f"error_{norm}")


def flow_prediction_error(
    market_of_job: pd.Series,
    in_sample: pd.DataFrame,
    out_of_sample: pd.DataFrame,
    job_employment: pd.Series,
    norm: str = ANALYSIS_SETTINGS['flow_norm'],
    employment_weighted: bool = False,
) -> float:
    """Mean per-origin prediction error (optionally weighted by origin employment)"""
    errors = flow_prediction_errors(market_of_job, in_sample, out_of_sample, job_employment, norm)
    if errors.empty:
        raise ValueError("No origin job has out-of-sample transitions")
    if employment_weighted:
        weights = job_employment.reindex(errors.index, fill_value=0).astype(float)
        return float(np.average(errors, weights=weights))
    return float(errors.mean())


def job_employment(panel: WorkerPanel) -> pd.Series:
    """Employed observations per job id"""
    frame = panel.frame
    return frame[(frame['gamma'] > 0) & frame['job_id'].notna()].groupby('job_id').size()


def market_of_jobs(panel: WorkerPanel, column: str = 'gamma') -> pd.Series:
    frame = panel.frame
    employed = frame[(frame['gamma'] > 0) & frame['job_id'].notna()]
    return employed.groupby('job_id')[column].first()


# ========================
# MISCLASSIFICATION
# ========================

def misclassify_labels(labels: np.ndarray, frac: float, rng: np.random.Generator) -> np.ndarray:
    """
    Move round(frac * n) randomly chosen entries to a different existing label

    A single-label vector is returned unchanged with a warning.
    """
    if not 0.0 <= frac <= 1.0:
        raise ValueError(f"Misclassification fraction must lie in [0, 1], got {frac}")
    labels = np.asarray(labels)
    existing = np.unique(labels)
    if existing.size < 2:
        if frac > 0:
            logger.warning("[Metrics] ⚠️ Only one group present; nothing to misclassify")
        return labels.copy()

    count = int(round(frac * labels.size))
    chosen = rng.choice(labels.size, size=count, replace=False)
    position = np.searchsorted(existing, labels[chosen])
    shift = rng.integers(1, existing.size, size=count)
    result = labels.copy()
    result[chosen] = existing[(position + shift) % existing.size]
    return result


def misclassify(partition: Partition, frac_workers: float, frac_jobs: float, rng: np.random.Generator) -> Partition:
    """Partition with a fraction of workers and jobs moved to a different existing group"""
    return Partition(
        worker_groups=misclassify_labels(partition.worker_groups, frac_workers, rng),
        job_groups=misclassify_labels(partition.job_groups, frac_jobs, rng),
        n_worker_groups=partition.n_worker_groups,
        n_job_groups=partition.n_job_groups,
    )


def _class_maps(panel: WorkerPanel, worker_col: str, job_col: str) -> Tuple[pd.Series, pd.Series]:
    frame = panel.frame
    workers = frame.groupby('worker_id')[worker_col].first().sort_index()
    employed = frame[(frame['gamma'] > 0) & frame['job_id'].notna()]
    jobs = employed.groupby('job_id')[job_col].first().sort_index()
    return workers, jobs


def relabel_panels(
    pre: WorkerPanel,
    post: WorkerPanel,
    frac_workers: float,
    frac_jobs: float,
    rng: np.random.Generator,
    worker_col: str = 'iota',
    job_col: str = 'gamma',
) -> Tuple[WorkerPanel, WorkerPanel]:
    """
    Add worker_class / job_class columns with misclassified labels to both panels

    The same corrupted mapping applies pre and post, so a worker or job keeps
    its (possibly wrong) class across the shock.
    """
    if not pre.has_column('job_id') or not post.has_column('job_id'):
        raise ValueError("Misclassification needs job ids in both panels")
    workers_pre, jobs_pre = _class_maps(pre, worker_col, job_col)
    workers_post, jobs_post = _class_maps(post, worker_col, job_col)
    workers = workers_pre.combine_first(workers_post).sort_index()
    jobs = jobs_pre.combine_first(jobs_post).sort_index()

    worker_map = pd.Series(misclassify_labels(workers.to_numpy(), frac_workers, rng), index=workers.index)
    job_map = pd.Series(misclassify_labels(jobs.to_numpy(), frac_jobs, rng), index=jobs.index)

    def relabel(panel: WorkerPanel) -> WorkerPanel:
        frame = panel.frame
        return panel.with_columns(
            worker_class=frame['worker_id'].map(worker_map).to_numpy(),
            job_class=frame['job_id'].map(job_map).to_numpy(),
        )

    return relabel(pre), relabel(post)


def _sweep_cell(task) -> Dict[str, Any]:
    pre, post, frac_w, frac_j, seed, index, replicate, worker_col, job_col = task
    rng = substream(seed, 'metrics', 'misclassify', index)
    corrupt_pre, corrupt_post = relabel_panels(pre, post, frac_w, frac_j, rng, worker_col, job_col)
    row = {'frac_w': frac_w, 'frac_j': frac_j, 'seed': replicate, 'slope': np.nan, 'r2': np.nan}
    try:
        fit = bartik_regression(corrupt_pre, corrupt_post, 'worker_class', 'job_class').result
        row.update(slope=fit.slope, r2=fit.r2)
    except ValueError as e:
        logger.warning(f"[Metrics] ⚠️ Sweep cell ({frac_w:.2f}, {frac_j:.2f}, seed {replicate}) skipped: {e}")
    return row


def misclassification_grid(step: float) -> np.ndarray:
    if not 0 < step <= 1:
        raise ValueError("Grid step must lie in (0, 1]")
    count = int(round(1.0 / step))
    return np.round(np.linspace(0.0, 1.0, count + 1), 10)


def misclassification_sweep(
    pre: WorkerPanel,
    post: WorkerPanel,
    step: float = ANALYSIS_SETTINGS['misclassification_step'],
    seeds: int = ANALYSIS_SETTINGS['sweep_seeds'],
    seed: int = DEFAULT_SEED,
    worker_col: str = 'iota',
    job_col: str = 'gamma',
    threads: int = 1,
) -> pd.DataFrame:
    """
    Re-run the Bartik regression under misclassified worker and job labels

    Every (frac_w, frac_j, replicate) cell draws from its own stream.

    Returns:
        Long table with columns frac_w, frac_j, seed, slope, r2
    """
    grid = misclassification_grid(step)
    tasks = []
    for replicate in range(seeds):
        for i, frac_w in enumerate(grid):
            for j, frac_j in enumerate(grid):
                index = (replicate * grid.size + i) * grid.size + j
                tasks.append((pre, post, float(frac_w), float(frac_j), seed, index, replicate, worker_col, job_col))
    rows = ordered_map(_sweep_cell, tasks, threads)
    surface = pd.DataFrame(rows, columns=['frac_w', 'frac_j', 'seed', 'slope', 'r2'])
    logger.info(f"[Metrics] ✅ Misclassification sweep: {grid.size}x{grid.size} grid, {seeds} seeds")
    return surface


def mean_surface(surface: pd.DataFrame) -> pd.DataFrame:
    """Average slope and R-squared over replicates per grid cell"""
    return surface.groupby(['frac_w', 'frac_j'], as_index=False)[['slope', 'r2']].mean()


# ========================
# WRITERS
# ========================

def write_regression_table(results: Mapping[str, RegressionResult], path: Path) -> Path:
    rows: List[Dict[str, Any]] = [{'label': label, **result.to_dict()} for label, result in results.items()]
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows).to_csv(path, index=False, float_format='%.12g')
    return path


def write_table(table: pd.DataFrame, path: Path) -> Path:
    """Deterministic CSV for HHI profiles, crosstabs and sweep surfaces"""
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, float_format='%.12g')
    return path

