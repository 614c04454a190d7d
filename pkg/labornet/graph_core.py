"""
Graph Core: bipartite worker-job match network
Loads, validates and indexes the match multigraph and the worker/job partitions
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .panel import WorkerPanel
from .shared.config import MIN_JOB_WORKERS

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BipartiteGraph:
    """
    Immutable worker-job multigraph

    Edges are stored once per (worker, job) pair with an integer multiplicity,
    sorted by (worker index, job index). Ids are interned to dense indices.
    """

    worker_ids: Tuple[str, ...]
    job_ids: Tuple[str, ...]
    edge_workers: np.ndarray
    edge_jobs: np.ndarray
    edge_counts: np.ndarray
    worker_degrees: np.ndarray = field(init=False, repr=False)
    job_degrees: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        workers = np.asarray(self.edge_workers, dtype=np.int64)
        jobs = np.asarray(self.edge_jobs, dtype=np.int64)
        counts = np.asarray(self.edge_counts, dtype=np.int64)

        if not (len(workers) == len(jobs) == len(counts)):
            raise ValueError("Edge arrays must have equal length")
        if len(counts) and (counts < 1).any():
            raise ValueError("Edge multiplicities must be positive integers")
        if len(workers) and (workers.min() < 0 or workers.max() >= len(self.worker_ids)):
            raise ValueError("Edge references an unknown worker index")
        if len(jobs) and (jobs.min() < 0 or jobs.max() >= len(self.job_ids)):
            raise ValueError("Edge references an unknown job index")

        order = np.lexsort((jobs, workers))
        workers, jobs, counts = workers[order], jobs[order], counts[order]
        if len(workers) > 1:
            same = (np.diff(workers) == 0) & (np.diff(jobs) == 0)
            if same.any():
                raise ValueError("Duplicate (worker, job) edges must be merged before construction")

        for name, value in (('edge_workers', workers), ('edge_jobs', jobs), ('edge_counts', counts)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

        worker_degrees = np.bincount(workers, weights=counts, minlength=len(self.worker_ids)).astype(np.int64)
        job_degrees = np.bincount(jobs, weights=counts, minlength=len(self.job_ids)).astype(np.int64)
        worker_degrees.setflags(write=False)
        job_degrees.setflags(write=False)
        object.__setattr__(self, 'worker_degrees', worker_degrees)
        object.__setattr__(self, 'job_degrees', job_degrees)

    @property
    def n_workers(self) -> int:
        return len(self.worker_ids)

    @property
    def n_jobs(self) -> int:
        return len(self.job_ids)

    @property
    def n_edges(self) -> int:
        return len(self.edge_counts)

    @property
    def total_edges(self) -> int:
        return int(self.edge_counts.sum())

    def worker_index(self) -> Dict[str, int]:
        return {wid: i for i, wid in enumerate(self.worker_ids)}

    def job_index(self) -> Dict[str, int]:
        return {jid: j for j, jid in enumerate(self.job_ids)}

    @classmethod
    def from_pairs(
        cls,
        worker_ids: Sequence[str],
        job_ids: Sequence[str],
        counts: Optional[Sequence[int]] = None,
        all_workers: Optional[Sequence[str]] = None,
        all_jobs: Optional[Sequence[str]] = None,
    ) -> 'BipartiteGraph':
        """
        Build a graph from parallel id sequences, merging repeated pairs

        Ids are interned in sorted order so the same edge set always maps to
        the same indices. all_workers/all_jobs keep isolated nodes.
        """
        worker_list = [str(wid) for wid in worker_ids]
        frame = pd.DataFrame({
            'worker_id': worker_list,
            'job_id': [str(jid) for jid in job_ids],
            'count': np.ones(len(worker_list), dtype=np.int64) if counts is None else np.asarray(counts, dtype=np.int64),
        })
        merged = frame.groupby(['worker_id', 'job_id'], sort=True, as_index=False)['count'].sum()

        worker_universe = sorted(set(merged['worker_id']) | set(map(str, all_workers or [])))
        job_universe = sorted(set(merged['job_id']) | set(map(str, all_jobs or [])))
        worker_pos = {wid: i for i, wid in enumerate(worker_universe)}
        job_pos = {jid: j for j, jid in enumerate(job_universe)}

        return cls(
            worker_ids=tuple(worker_universe),
            job_ids=tuple(job_universe),
            edge_workers=merged['worker_id'].map(worker_pos).to_numpy(dtype=np.int64),
            edge_jobs=merged['job_id'].map(job_pos).to_numpy(dtype=np.int64),
            edge_counts=merged['count'].to_numpy(dtype=np.int64),
        )


@dataclass(frozen=True, eq=False)
class Partition:
    """
    Worker-type and market assignment

    Group counts may exceed the largest used label (empty slots are allowed
    while sampling); compact() removes them.
    """

    worker_groups: np.ndarray
    job_groups: np.ndarray
    n_worker_groups: int = 0
    n_job_groups: int = 0

    def __post_init__(self):
        workers = np.asarray(self.worker_groups, dtype=np.int64).copy()
        jobs = np.asarray(self.job_groups, dtype=np.int64).copy()
        if (len(workers) and workers.min() < 0) or (len(jobs) and jobs.min() < 0):
            raise ValueError("Group labels must be non-negative")
        n_i = self.n_worker_groups or (int(workers.max()) + 1 if len(workers) else 0)
        n_g = self.n_job_groups or (int(jobs.max()) + 1 if len(jobs) else 0)
        if (len(workers) and workers.max() >= n_i) or (len(jobs) and jobs.max() >= n_g):
            raise ValueError("Group label exceeds the declared number of groups")
        workers.setflags(write=False)
        jobs.setflags(write=False)
        object.__setattr__(self, 'worker_groups', workers)
        object.__setattr__(self, 'job_groups', jobs)
        object.__setattr__(self, 'n_worker_groups', n_i)
        object.__setattr__(self, 'n_job_groups', n_g)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.n_worker_groups, self.n_job_groups

    @classmethod
    def from_labels(cls, worker_labels: Iterable, job_labels: Iterable) -> 'Partition':
        """Intern arbitrary hashable labels to contiguous group indices (sorted order)"""
        worker_codes, _ = pd.factorize(pd.Series(list(worker_labels)), sort=True)
        job_codes, _ = pd.factorize(pd.Series(list(job_labels)), sort=True)
        return cls(worker_codes, job_codes)

    def compact(self) -> 'Partition':
        """Relabel so used groups are 0..k-1, keeping their relative order"""
        _, worker_codes = np.unique(self.worker_groups, return_inverse=True)
        _, job_codes = np.unique(self.job_groups, return_inverse=True)
        return Partition(worker_codes, job_codes)

    def check_matches(self, graph: BipartiteGraph) -> None:
        if len(self.worker_groups) != graph.n_workers or len(self.job_groups) != graph.n_jobs:
            raise ValueError(
                f"Partition covers {len(self.worker_groups)} workers/{len(self.job_groups)} jobs, "
                f"graph has {graph.n_workers}/{graph.n_jobs}"
            )


# ========================
# LOADING AND WRITING
# ========================

def load_edge_list(path: str, min_job_workers: int = MIN_JOB_WORKERS) -> BipartiteGraph:
    """
    Load a worker-job edge list CSV

    Args:
        path: CSV with header worker_id,job_id[,count]
        min_job_workers: Jobs with fewer distinct workers are dropped

    Returns:
        Filtered BipartiteGraph with sorted, interned ids

    Raises:
        ValueError: Malformed rows (with line number) or an empty graph
    """
    if not Path(path).exists():
        raise ValueError(f"Edge list not found: {path}")

    try:
        frame = pd.read_csv(path, dtype=str, skip_blank_lines=True)
    except pd.errors.EmptyDataError:
        raise ValueError("empty graph: edge list has no rows")
    except pd.errors.ParserError as e:
        raise ValueError(f"Malformed edge list {path}: {e}")

    for col in ('worker_id', 'job_id'):
        if col not in frame.columns:
            raise ValueError(f"Edge list header must contain worker_id,job_id[,count]; missing {col}")

    if frame.empty:
        raise ValueError("empty graph: edge list has no rows")

    # header is line 1
    for col in ('worker_id', 'job_id'):
        blank = frame[col].isna() | (frame[col].str.strip() == '')
        if blank.any():
            line = int(frame.index[blank][0]) + 2
            raise ValueError(f"Malformed row on line {line}: missing {col}")

    if 'count' in frame.columns:
        raw = frame['count'].fillna('1')
        counts = pd.to_numeric(raw, errors='coerce')
        bad = counts.isna() | (counts < 1) | (counts != counts.round())
        if bad.any():
            line = int(frame.index[bad][0]) + 2
            raise ValueError(f"Malformed row on line {line}: count must be a positive integer, got {raw[bad].iloc[0]!r}")
        frame['count'] = counts.astype(np.int64)
    else:
        frame['count'] = 1

    frame['worker_id'] = frame['worker_id'].str.strip()
    frame['job_id'] = frame['job_id'].str.strip()
    merged = frame.groupby(['worker_id', 'job_id'], as_index=False)['count'].sum()

    workers_per_job = merged.groupby('job_id')['worker_id'].transform('nunique')
    kept = merged[workers_per_job >= min_job_workers]
    dropped_jobs = merged['job_id'].nunique() - kept['job_id'].nunique()
    dropped_workers = merged['worker_id'].nunique() - kept['worker_id'].nunique()
    if dropped_jobs:
        logger.info(f"[GraphCore] Dropped {dropped_jobs} jobs with < {min_job_workers} workers "
                    f"and {dropped_workers} workers left without edges")

    if kept.empty:
        raise ValueError("empty graph: no edges left after filtering")

    graph = BipartiteGraph.from_pairs(kept['worker_id'], kept['job_id'], kept['count'])
    logger.info(f"[GraphCore] ✅ Loaded graph: {graph.n_workers} workers, {graph.n_jobs} jobs, "
                f"{graph.total_edges} edges")
    return graph


def write_edge_list(graph: BipartiteGraph, path: Path) -> Path:
    """Deterministic snapshot sorted by (worker index, job index)"""
    frame = pd.DataFrame({
        'worker_id': np.asarray(graph.worker_ids, dtype=object)[graph.edge_workers],
        'job_id': np.asarray(graph.job_ids, dtype=object)[graph.edge_jobs],
        'count': graph.edge_counts,
    })
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return path


def graph_from_panel(panel: WorkerPanel) -> BipartiteGraph:
    """
    Match network of a panel with job ids

    A match enters once per separation event that lands in it, so a spell
    that persists across periods is counted once.
    """
    if not panel.has_column('job_id'):
        raise ValueError("Panel has no job_id column")
    frame = panel.frame
    matches = frame[(frame['c'] == 1) & (frame['gamma'] > 0) & frame['job_id'].notna()]
    if matches.empty:
        raise ValueError("empty graph: panel has no matches")
    return BipartiteGraph.from_pairs(matches['worker_id'].astype(str), matches['job_id'].astype(str))


# ========================
# DEGREES AND BLOCK COUNTS
# ========================

def degrees(graph: BipartiteGraph) -> Tuple[np.ndarray, np.ndarray]:
    """Multiplicity-weighted (worker_degrees, job_degrees)"""
    return graph.worker_degrees, graph.job_degrees


def degree_histogram(node_degrees: np.ndarray) -> pd.DataFrame:
    """Number of nodes per degree value, for the match-count histograms"""
    counts = np.bincount(np.asarray(node_degrees, dtype=np.int64))
    present = np.nonzero(counts)[0]
    return pd.DataFrame({'degree': present, 'nodes': counts[present]})


def block_edge_counts(graph: BipartiteGraph, partition: Partition) -> np.ndarray:
    """
    I x Gamma matrix of total edge multiplicity between groups

    Raises:
        ValueError: When the partition does not cover the graph
    """
    partition.check_matches(graph)
    n_i, n_g = partition.shape
    rows = partition.worker_groups[graph.edge_workers]
    cols = partition.job_groups[graph.edge_jobs]
    flat = np.bincount(rows * n_g + cols, weights=graph.edge_counts, minlength=n_i * n_g)
    return flat.reshape(n_i, n_g).astype(np.int64)


# ========================
# PARTITION FILES
# ========================

def write_partition(graph: BipartiteGraph, partition: Partition, path: Path) -> Path:
    """Partition CSV: node_kind,node_id,group (workers first, then jobs)"""
    partition.check_matches(graph)
    frame = pd.concat([
        pd.DataFrame({'node_kind': 'worker', 'node_id': graph.worker_ids, 'group': partition.worker_groups}),
        pd.DataFrame({'node_kind': 'job', 'node_id': graph.job_ids, 'group': partition.job_groups}),
    ], ignore_index=True)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return path


def read_partition(path: str, graph: BipartiteGraph) -> Partition:
    """Read a partition CSV and align it with the graph's node order"""
    frame = pd.read_csv(path, dtype={'node_kind': str, 'node_id': str})
    worker_map = frame[frame['node_kind'] == 'worker'].set_index('node_id')['group']
    job_map = frame[frame['node_kind'] == 'job'].set_index('node_id')['group']

    worker_groups = worker_map.reindex(list(graph.worker_ids))
    job_groups = job_map.reindex(list(graph.job_ids))
    if worker_groups.isna().any() or job_groups.isna().any():
        raise ValueError(f"Partition file {path} does not cover every graph node")
    return Partition(worker_groups.to_numpy(dtype=np.int64), job_groups.to_numpy(dtype=np.int64))


# ========================
# TRANSITIONS
# ========================

def transition_change_rates(
    panel: WorkerPanel,
    labelings: Sequence[str],
    firm_column: Optional[str] = None,
) -> pd.DataFrame:
    """
    Share of job changes that also change each label

    A job change is a separation (c == 1, not the first period) from one job
    into a different job, with both periods employed.

    Args:
        panel: Panel with a job_id column
        labelings: Label columns to compare across the change (e.g. gamma, sector)
        firm_column: Optional firm id column; adds rates conditional on the
            firm changing or staying the same

    Returns:
        One row per label: events, changes, rate. A panel without job changes
        gives an empty frame with the same columns
    """
    if not panel.has_column('job_id'):
        raise ValueError("Panel has no job_id column")
    if not labelings:
        raise ValueError("At least one labeling is required")
    for label in list(labelings) + ([firm_column] if firm_column else []):
        if not panel.has_column(label):
            raise ValueError(f"Panel has no column {label}")

    columns = ['label', 'events', 'changes', 'rate']
    if firm_column:
        columns += ['rate_firm_change', 'rate_same_firm']

    frame = panel.frame.sort_values(['worker_id', 't'])
    previous = frame.groupby('worker_id').shift(1)
    events = (
        (frame['c'] == 1)
        & previous['t'].notna()
        & frame['job_id'].notna()
        & previous['job_id'].notna()
        & (frame['job_id'] != previous['job_id'])
    )
    if not events.any():
        logger.warning("[GraphCore] ⚠️ Panel has no job changes; no rates to report")
        return pd.DataFrame(columns=columns)

    rows = []
    for label in labelings:
        current, before = frame.loc[events, label], previous.loc[events, label]
        if current.isna().any() or before.isna().any():
            raise ValueError(f"Labeling {label} is missing for some job-change observations")
        changed = current != before
        row = {
            'label': label,
            'events': int(events.sum()),
            'changes': int(changed.sum()),
            'rate': float(changed.mean()),
        }
        if firm_column:
            firm_changed = frame.loc[events, firm_column] != previous.loc[events, firm_column]
            row['rate_firm_change'] = float(changed[firm_changed].mean()) if firm_changed.any() else float('nan')
            row['rate_same_firm'] = float(changed[~firm_changed].mean()) if (~firm_changed).any() else float('nan')
        rows.append(row)
    return pd.DataFrame(rows, columns=columns)
