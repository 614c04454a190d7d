"""
Blockmodel: degree-corrected bipartite stochastic block model
Poisson edge likelihood, description length, MCMC partition inference,
planted benchmarks and partition comparison
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gammaln, xlogy
from sklearn.metrics import adjusted_rand_score, normalized_mutual_info_score

from .graph_core import BipartiteGraph, Partition, block_edge_counts
from .shared.config import DEFAULT_SEED, DL_CONVENTION, INFERENCE_SETTINGS
from .shared.parallel import ordered_map
from .shared.rng import substream

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)
WORKERS, JOBS = 0, 1


# ========================
# TYPES
# ========================

@dataclass(frozen=True, eq=False)
class BlockProbabilityMatrix:
    """Match propensities per (worker type, market), per unit of d_i * d_j"""

    P: np.ndarray

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        if P.ndim != 2:
            raise ValueError("Block probability matrix must be 2-dimensional")
        if not np.isfinite(P).all() or (P < 0).any():
            raise ValueError("Block probabilities must be finite and non-negative")
        P.setflags(write=False)
        object.__setattr__(self, 'P', P)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.P.shape

    def expected_counts(self, worker_mass: np.ndarray, job_mass: np.ndarray) -> np.ndarray:
        """e = P * (sum of worker degrees in type) * (sum of job degrees in market)"""
        return self.P * np.outer(worker_mass, job_mass)


@dataclass
class InferenceConfig:
    restarts: int = INFERENCE_SETTINGS['restarts']
    sweeps_per_restart: int = INFERENCE_SETTINGS['sweeps_per_restart']
    greedy_sweeps: int = INFERENCE_SETTINGS['greedy_sweeps']
    seed: int = DEFAULT_SEED
    group_bounds: Optional[Tuple[int, int, int, int]] = None
    t_start: float = INFERENCE_SETTINGS['t_start']
    t_end: float = INFERENCE_SETTINGS['t_end']
    schedule: str = INFERENCE_SETTINGS['schedule']
    epsilon: float = INFERENCE_SETTINGS['proposal_epsilon']
    threads: int = 1

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.sweeps_per_restart < 0 or self.greedy_sweeps < 0:
            raise ValueError("sweep counts must be non-negative")
        if self.schedule not in ('constant', 'geometric'):
            raise ValueError(f"Unknown temperature schedule: {self.schedule}")
        if self.t_start < 0 or self.t_end < 0:
            raise ValueError("temperatures must be non-negative")
        if self.schedule == 'geometric' and (self.t_start <= 0 or self.t_end <= 0):
            raise ValueError("geometric schedule needs positive start and end temperatures")
        if self.epsilon <= 0:
            raise ValueError("proposal epsilon must be positive")
        if self.group_bounds is not None:
            i_min, i_max, g_min, g_max = self.group_bounds
            if not (1 <= i_min <= i_max and 1 <= g_min <= g_max):
                raise ValueError(f"Inconsistent group bounds: {self.group_bounds}")

    def temperatures(self) -> np.ndarray:
        if self.sweeps_per_restart == 0:
            return np.zeros(0)
        if self.schedule == 'constant':
            return np.full(self.sweeps_per_restart, self.t_start)
        return np.geomspace(self.t_start, self.t_end, self.sweeps_per_restart)

    def result_fields(self) -> Dict[str, Any]:
        """Settings the partition depends on; threads only changes scheduling"""
        fields = asdict(self)
        fields.pop('threads')
        return fields


@dataclass
class InferenceResult:
    partition: Partition
    description_length: float
    log_likelihood: float
    block_probabilities: BlockProbabilityMatrix
    trace: List[Tuple[int, float]]
    sweep_traces: List[List[float]] = field(default_factory=list)
    seed: int = DEFAULT_SEED
    config: Optional[InferenceConfig] = None

    @property
    def n_types(self) -> int:
        return self.partition.n_worker_groups

    @property
    def n_markets(self) -> int:
        return self.partition.n_job_groups

    def to_dict(self, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        result = {
            'description_length_bits': self.description_length,
            'log_likelihood_nats': self.log_likelihood,
            'dl_convention': DL_CONVENTION,
            'n_worker_types': self.n_types,
            'n_markets': self.n_markets,
            'block_probabilities': self.block_probabilities.P.tolist(),
            'restart_trace': [{'restart': r, 'best_bits': bits} for r, bits in self.trace],
            'seed': self.seed,
            'config': self.config.result_fields() if self.config else None,
        }
        result.update(extra or {})
        return result


# ========================
# LIKELIHOOD
# ========================

def group_degree_sums(
    graph: BipartiteGraph,
    partition: Partition,
    worker_degrees: Optional[np.ndarray] = None,
    job_degrees: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Sum of node degrees per worker type and per market"""
    d_w = graph.worker_degrees if worker_degrees is None else np.asarray(worker_degrees, dtype=float)
    d_j = graph.job_degrees if job_degrees is None else np.asarray(job_degrees, dtype=float)
    n_i, n_g = partition.shape
    mass_w = np.bincount(partition.worker_groups, weights=d_w, minlength=n_i)
    mass_j = np.bincount(partition.job_groups, weights=d_j, minlength=n_g)
    return mass_w, mass_j


def log_likelihood(
    graph: BipartiteGraph,
    partition: Partition,
    probabilities: BlockProbabilityMatrix,
    worker_degrees: Optional[np.ndarray] = None,
    job_degrees: Optional[np.ndarray] = None,
) -> float:
    """
    Poisson log-likelihood of the match counts, in nats

    Sums A ln(d_i d_j P) - ln A! over stored edges and subtracts the total
    expected mass in closed form, so the dense N x J product is never built.
    Degree overrides allow evaluating alternative parameterizations.

    Returns:
        Log-likelihood, or -inf when an observed edge falls in a zero-propensity block
    """
    partition.check_matches(graph)
    P = probabilities.P
    if P.shape != partition.shape:
        raise ValueError(f"Block probabilities have shape {P.shape}, partition has {partition.shape}")

    d_w = graph.worker_degrees if worker_degrees is None else np.asarray(worker_degrees, dtype=float)
    d_j = graph.job_degrees if job_degrees is None else np.asarray(job_degrees, dtype=float)

    rows = partition.worker_groups[graph.edge_workers]
    cols = partition.job_groups[graph.edge_jobs]
    edge_p = P[rows, cols]
    if (edge_p <= 0).any():
        logger.warning("[Blockmodel] ⚠️ Impossible configuration: observed edge in a zero-propensity block")
        return float('-inf')

    counts = graph.edge_counts
    means = d_w[graph.edge_workers] * d_j[graph.edge_jobs] * edge_p
    edge_term = float(np.sum(counts * np.log(means) - gammaln(counts + 1)))

    mass_w, mass_j = group_degree_sums(graph, partition, d_w, d_j)
    return edge_term - float(np.sum(probabilities.expected_counts(mass_w, mass_j)))


def estimate_block_probabilities(graph: BipartiteGraph, partition: Partition) -> BlockProbabilityMatrix:
    """Profile MLE P = e / (D_type * D_market); zero where a denominator is zero"""
    counts = block_edge_counts(graph, partition).astype(float)
    mass_w, mass_j = group_degree_sums(graph, partition)
    denominator = np.outer(mass_w, mass_j)
    P = np.divide(counts, denominator, out=np.zeros_like(counts), where=denominator > 0)
    return BlockProbabilityMatrix(P)


# ========================
# DESCRIPTION LENGTH
# ========================

def _ln_binom(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def _edge_constant(graph: BipartiteGraph) -> float:
    """Partition-free part of the profile log-likelihood, in nats"""
    if graph.n_edges == 0:
        return 0.0
    counts = graph.edge_counts
    d_w = graph.worker_degrees[graph.edge_workers].astype(float)
    d_j = graph.job_degrees[graph.edge_jobs].astype(float)
    return float(np.sum(counts * np.log(d_w * d_j) - gammaln(counts + 1)) - counts.sum())


def _description_terms(
    counts: np.ndarray,
    mass_w: np.ndarray,
    mass_j: np.ndarray,
    members_w: np.ndarray,
    members_j: np.ndarray,
    n_nodes: Tuple[int, int],
    total: int,
    constant: float,
) -> Tuple[float, float]:
    """(-log-likelihood at the profile MLE, parameter cost), both in nats"""
    n_w, n_j = n_nodes
    used_w = members_w > 0
    used_j = members_j > 0
    n_types, n_markets = int(used_w.sum()), int(used_j.sum())

    neg_loglik = (
        -constant
        - float(xlogy(counts, counts).sum())
        + float(xlogy(mass_w, mass_w).sum())
        + float(xlogy(mass_j, mass_j).sum())
    )

    n_r, d_r = members_w[used_w], mass_w[used_w]
    n_s, d_s = members_j[used_j], mass_j[used_j]
    model = (
        math.log(n_w) + math.log(n_j)
        + _ln_binom(n_w - 1, n_types - 1) + gammaln(n_w + 1) - gammaln(n_r + 1).sum()
        + _ln_binom(n_j - 1, n_markets - 1) + gammaln(n_j + 1) - gammaln(n_s + 1).sum()
        + (gammaln(n_r + d_r) - gammaln(d_r + 1) - gammaln(n_r)).sum()
        + (gammaln(n_s + d_s) - gammaln(d_s + 1) - gammaln(n_s)).sum()
        + _ln_binom(n_types * n_markets + total - 1, total)
    )
    return neg_loglik, float(model)


def description_terms(graph: BipartiteGraph, partition: Partition) -> Dict[str, float]:
    """Entropy and model-cost parts of the description length, in bits"""
    partition.check_matches(graph)
    n_i, n_g = partition.shape
    neg_loglik, model = _description_terms(
        block_edge_counts(graph, partition).astype(float),
        *group_degree_sums(graph, partition),
        np.bincount(partition.worker_groups, minlength=n_i),
        np.bincount(partition.job_groups, minlength=n_g),
        (graph.n_workers, graph.n_jobs),
        graph.total_edges,
        _edge_constant(graph),
    )
    return {'entropy_bits': neg_loglik / LN2, 'model_bits': model / LN2}


def description_length(graph: BipartiteGraph, partition: Partition) -> float:
    """
    Total description length in bits under the pinned dl-v1 prior

    Data term: -log2 of the Poisson likelihood at the profile MLE.
    Model term: group counts, label vectors (uniform multinomial), degree
    sequences given labels, and the I x Gamma count matrix (uniform over
    matrices with total E). Empty groups are not counted.
    """
    terms = description_terms(graph, partition)
    return terms['entropy_bits'] + terms['model_bits']


# ========================
# SAMPLER STATE
# ========================

def _group_term(n: float, mass: float) -> float:
    # D ln D - ln n! + ln C(n + D - 1, D); empty groups cost nothing
    if n <= 0:
        return 0.0
    value = -math.lgamma(n + 1) + math.lgamma(n + mass) - math.lgamma(mass + 1) - math.lgamma(n)
    if mass > 0:
        value += mass * math.log(mass)
    return value


def _ln_binom_scalar(n: float, k: float) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


class _Adjacency:
    """CSR neighbor lists for one side of the graph"""

    def __init__(self, sources: np.ndarray, targets: np.ndarray, counts: np.ndarray, n_nodes: int):
        order = np.argsort(sources, kind='stable')
        self.targets = targets[order]
        self.counts = counts[order].astype(float)
        self.ptr = np.concatenate([[0], np.cumsum(np.bincount(sources, minlength=n_nodes))])

    def neighbors(self, v: int) -> Tuple[np.ndarray, np.ndarray]:
        lo, hi = self.ptr[v], self.ptr[v + 1]
        return self.targets[lo:hi], self.counts[lo:hi]


class BlockState:
    """
    Mutable MCMC scratch state

    Keeps labels, block counts, degree sums and group sizes consistent so a
    single-node move costs O(degree). Side 0 is workers, side 1 is jobs.
    """

    def __init__(
        self,
        graph: BipartiteGraph,
        partition: Partition,
        min_groups: Tuple[int, int] = (1, 1),
        max_groups: Optional[Tuple[int, int]] = None,
    ):
        partition.check_matches(graph)
        self.graph = graph
        self.n_nodes = (graph.n_workers, graph.n_jobs)
        self.total = graph.total_edges
        self.constant = _edge_constant(graph)
        self.degrees = (graph.worker_degrees.astype(float), graph.job_degrees.astype(float))
        self.adjacency = (
            _Adjacency(graph.edge_workers, graph.edge_jobs, graph.edge_counts, graph.n_workers),
            _Adjacency(graph.edge_jobs, graph.edge_workers, graph.edge_counts, graph.n_jobs),
        )
        self.min_groups = min_groups
        self.max_groups = max_groups or self.n_nodes
        self.movable = [
            (side, int(v))
            for side in (WORKERS, JOBS)
            for v in np.flatnonzero(self.degrees[side] > 0)
        ]
        self._load(partition)

    def _load(self, partition: Partition) -> None:
        self.labels = [np.array(partition.worker_groups), np.array(partition.job_groups)]
        self.n_groups = list(partition.shape)
        self.counts = block_edge_counts(self.graph, partition).astype(float)
        self.mass = [
            np.bincount(self.labels[side], weights=self.degrees[side], minlength=self.n_groups[side])
            for side in (WORKERS, JOBS)
        ]
        self.members = [
            np.bincount(self.labels[side], minlength=self.n_groups[side]).astype(float)
            for side in (WORKERS, JOBS)
        ]
        self.occupied = [int(np.count_nonzero(self.members[side])) for side in (WORKERS, JOBS)]

    def partition(self) -> Partition:
        return Partition(self.labels[WORKERS].copy(), self.labels[JOBS].copy(), *self.n_groups)

    def block_view(self, side: int) -> np.ndarray:
        """Block counts with this side's groups on the rows (a view, writes through)"""
        return self.counts if side == WORKERS else self.counts.T

    def neighbor_counts(self, side: int, v: int) -> np.ndarray:
        targets, weights = self.adjacency[side].neighbors(v)
        other = 1 - side
        return np.bincount(self.labels[other][targets], weights=weights, minlength=self.n_groups[other])

    def _global_term(self, occupied: Sequence[int]) -> float:
        n_w, n_j = self.n_nodes
        return (
            _ln_binom_scalar(n_w - 1, occupied[WORKERS] - 1)
            + _ln_binom_scalar(n_j - 1, occupied[JOBS] - 1)
            + _ln_binom_scalar(occupied[WORKERS] * occupied[JOBS] + self.total - 1, self.total)
        )

    def description_length_nats(self) -> float:
        neg_loglik, model = _description_terms(
            self.counts, self.mass[WORKERS], self.mass[JOBS],
            self.members[WORKERS], self.members[JOBS],
            self.n_nodes, self.total, self.constant,
        )
        return neg_loglik + model

    def move_delta(self, side: int, v: int, target: int, neighbor_counts: np.ndarray) -> float:
        """Exact change in description length (nats) of moving node v to group target"""
        source = self.labels[side][v]
        if target == source:
            return 0.0
        blocks = self.block_view(side)
        touched = np.flatnonzero(neighbor_counts)
        moved = neighbor_counts[touched]
        before_s, before_t = blocks[source, touched], blocks[target, touched]
        cells = (
            xlogy(before_s - moved, before_s - moved) + xlogy(before_t + moved, before_t + moved)
            - xlogy(before_s, before_s) - xlogy(before_t, before_t)
        ).sum()

        k = self.degrees[side][v]
        n_s, n_t = self.members[side][source], self.members[side][target]
        d_s, d_t = self.mass[side][source], self.mass[side][target]
        groups = (
            _group_term(n_s - 1, d_s - k) + _group_term(n_t + 1, d_t + k)
            - _group_term(n_s, d_s) - _group_term(n_t, d_t)
        )

        occupied = list(self.occupied)
        if n_s == 1:
            occupied[side] -= 1
        if n_t == 0:
            occupied[side] += 1
        global_change = 0.0
        if occupied != self.occupied:
            global_change = self._global_term(occupied) - self._global_term(self.occupied)

        return float(-cells + groups + global_change)

    def apply_move(self, side: int, v: int, target: int, neighbor_counts: np.ndarray) -> None:
        source = self.labels[side][v]
        if target == source:
            return
        blocks = self.block_view(side)
        touched = np.flatnonzero(neighbor_counts)
        blocks[source, touched] -= neighbor_counts[touched]
        blocks[target, touched] += neighbor_counts[touched]

        k = self.degrees[side][v]
        self.mass[side][source] -= k
        self.mass[side][target] += k
        self.members[side][source] -= 1
        self.members[side][target] += 1
        if self.members[side][source] == 0:
            self.occupied[side] -= 1
        if self.members[side][target] == 1:
            self.occupied[side] += 1
        self.labels[side][v] = target

    def _proposal_probability(self, side: int, group: int, neighbor_counts: np.ndarray,
                              epsilon: float, removed: Optional[np.ndarray] = None) -> float:
        blocks = self.block_view(side)
        touched = np.flatnonzero(neighbor_counts)
        weights = neighbor_counts[touched] / neighbor_counts.sum()
        row = blocks[group, touched]
        if removed is not None:
            row = row - removed[touched]
        other_mass = self.mass[1 - side][touched]
        slots = self.n_groups[side]
        return float(np.sum(weights * (row + epsilon) / (other_mass + epsilon * slots)))

    def propose(self, side: int, neighbor_counts: np.ndarray, rng: np.random.Generator, epsilon: float) -> int:
        """Draw a target group biased toward groups linked to the node's neighbors"""
        cumulative = np.cumsum(neighbor_counts)
        pivot = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side='right'))
        slots = self.n_groups[side]
        column_total = self.mass[1 - side][pivot]
        if rng.random() < epsilon * slots / (column_total + epsilon * slots):
            return int(rng.integers(slots))
        column = np.cumsum(self.block_view(side)[:, pivot])
        return int(np.searchsorted(column, rng.random() * column[-1], side='right'))

    def _move_allowed(self, side: int, source: int, target: int) -> bool:
        if self.members[side][source] == 1 and self.occupied[side] <= self.min_groups[side]:
            return False
        if self.members[side][target] == 0 and self.occupied[side] >= self.max_groups[side]:
            return False
        return True

    def sweep(self, temperature: float, rng: np.random.Generator, epsilon: float) -> int:
        """
        One Metropolis-Hastings pass proposing a move for every movable node

        Returns:
            Number of accepted moves
        """
        accepted = 0
        for idx in rng.permutation(len(self.movable)):
            side, v = self.movable[idx]
            counts = self.neighbor_counts(side, v)
            source = self.labels[side][v]
            target = self.propose(side, counts, rng, epsilon)
            if target == source or not self._move_allowed(side, source, target):
                continue

            delta = self.move_delta(side, v, target, counts)
            if temperature <= 0:
                accept = delta <= 1e-12
            else:
                forward = self._proposal_probability(side, target, counts, epsilon)
                # reverse move sees the block counts after v has left source
                backward = self._proposal_probability(side, source, counts, epsilon, removed=counts)
                log_ratio = -delta / temperature + math.log(backward) - math.log(forward)
                accept = log_ratio >= 0 or rng.random() < math.exp(log_ratio)

            if accept:
                self.apply_move(side, v, target, counts)
                accepted += 1

        if logger.isEnabledFor(logging.DEBUG):
            self.check_consistency()
        return accepted

    def greedy_pass(self) -> int:
        """Move every node to its best group when that strictly lowers the description length"""
        moved = 0
        for side, v in self.movable:
            counts = self.neighbor_counts(side, v)
            source = self.labels[side][v]
            best, best_delta = source, -1e-10
            for target in range(self.n_groups[side]):
                if target == source or not self._move_allowed(side, source, target):
                    continue
                delta = self.move_delta(side, v, target, counts)
                if delta < best_delta:
                    best, best_delta = target, delta
            if best != source:
                self.apply_move(side, v, best, counts)
                moved += 1
        return moved

    def merge_delta(self, side: int, source: int, target: int) -> float:
        """Exact change in description length (nats) of merging group source into target"""
        blocks = self.block_view(side)
        row_s, row_t = blocks[source], blocks[target]
        merged = row_s + row_t
        cells = (xlogy(merged, merged) - xlogy(row_s, row_s) - xlogy(row_t, row_t)).sum()
        n_s, n_t = self.members[side][source], self.members[side][target]
        d_s, d_t = self.mass[side][source], self.mass[side][target]
        groups = _group_term(n_s + n_t, d_s + d_t) - _group_term(n_s, d_s) - _group_term(n_t, d_t)
        occupied = list(self.occupied)
        occupied[side] -= 1
        return float(-cells + groups + self._global_term(occupied) - self._global_term(self.occupied))

    def apply_merge(self, side: int, source: int, target: int) -> None:
        blocks = self.block_view(side)
        blocks[target] += blocks[source]
        blocks[source] = 0.0
        self.mass[side][target] += self.mass[side][source]
        self.mass[side][source] = 0.0
        self.members[side][target] += self.members[side][source]
        self.members[side][source] = 0.0
        self.labels[side][self.labels[side] == source] = target
        self.occupied[side] -= 1

    def greedy_merges(self) -> int:
        """Apply the best improving group merge on either side until none is left"""
        merges = 0
        while True:
            best = None
            for side in (WORKERS, JOBS):
                if self.occupied[side] <= self.min_groups[side]:
                    continue
                used = np.flatnonzero(self.members[side] > 0)
                for a_pos, source in enumerate(used):
                    for target in used[a_pos + 1:]:
                        delta = self.merge_delta(side, int(source), int(target))
                        if delta < -1e-10 and (best is None or delta < best[0]):
                            best = (delta, side, int(source), int(target))
            if best is None:
                return merges
            _, side, source, target = best
            self.apply_merge(side, source, target)
            merges += 1

    def resize(self, empty_slots: int = 1) -> None:
        """Drop empty groups and append empty slots (up to the group bounds) for splits"""
        compact = self.partition().compact()
        slots = [
            min(compact.shape[side] + empty_slots, self.max_groups[side])
            for side in (WORKERS, JOBS)
        ]
        self._load(Partition(compact.worker_groups, compact.job_groups, slots[WORKERS], slots[JOBS]))

    def check_consistency(self) -> None:
        expected = block_edge_counts(self.graph, self.partition())
        if not np.array_equal(expected, self.counts.astype(np.int64)):
            raise AssertionError("Block counts drifted from the partition")


# ========================
# MCMC AND INFERENCE
# ========================

def mcmc_sweep(
    graph: BipartiteGraph,
    partition: Partition,
    temperature: float,
    rng: np.random.Generator,
    state: Optional[BlockState] = None,
    epsilon: float = INFERENCE_SETTINGS['proposal_epsilon'],
) -> Tuple[Partition, int]:
    """
    One sweep of single-node Metropolis-Hastings moves over fixed group slots

    Acceptance is min(1, exp(-dSigma ln2 / T) * reverse/forward proposal);
    at T == 0 only non-worsening moves are taken (ties accepted). Pass the
    state back in on later calls to reuse its block statistics.

    Returns:
        (updated partition, accepted moves)
    """
    if state is None:
        state = BlockState(graph, partition, max_groups=partition.shape)
    accepted = state.sweep(temperature, rng, epsilon)
    return state.partition(), accepted


def _ladder(n_nodes: int) -> List[int]:
    limit = max(1, int(math.isqrt(max(n_nodes, 1))))
    sizes = [1]
    while sizes[-1] * 2 <= limit:
        sizes.append(sizes[-1] * 2)
    return sizes


def _resolve_bounds(graph: BipartiteGraph, config: InferenceConfig) -> Tuple[int, int, int, int]:
    if config.group_bounds is None:
        return 1, graph.n_workers, 1, graph.n_jobs
    i_min, i_max, g_min, g_max = config.group_bounds
    return i_min, min(i_max, graph.n_workers), g_min, min(g_max, graph.n_jobs)


def _initial_partition(graph: BipartiteGraph, n_types: int, n_markets: int,
                       rng: np.random.Generator) -> Partition:
    # isolated nodes stay in group 0 and never move
    workers = np.where(graph.worker_degrees > 0, rng.integers(n_types, size=graph.n_workers), 0)
    jobs = np.where(graph.job_degrees > 0, rng.integers(n_markets, size=graph.n_jobs), 0)
    return Partition(workers, jobs, n_types, n_markets).compact()


def _run_chain(task: Tuple[BipartiteGraph, InferenceConfig, int]) -> Dict[str, Any]:
    graph, config, restart = task
    rng = substream(config.seed, 'blockmodel', 'restart', restart)
    i_min, i_max, g_min, g_max = _resolve_bounds(graph, config)

    ladder_w, ladder_j = _ladder(graph.n_workers), _ladder(graph.n_jobs)
    start_w = int(np.clip(ladder_w[restart % len(ladder_w)], i_min, i_max))
    start_j = int(np.clip(ladder_j[restart % len(ladder_j)], g_min, g_max))

    state = BlockState(graph, _initial_partition(graph, start_w, start_j, rng),
                       min_groups=(i_min, g_min), max_groups=(i_max, g_max))
    best = state.description_length_nats()
    best_partition = state.partition()
    running = []

    for temperature in config.temperatures():
        state.resize(1)
        state.sweep(float(temperature), rng, config.epsilon)
        current = state.description_length_nats()
        if current < best:
            best, best_partition = current, state.partition()
        running.append(best / LN2)

    state = BlockState(graph, best_partition.compact(),
                       min_groups=(i_min, g_min), max_groups=(i_max, g_max))
    for _ in range(config.greedy_sweeps):
        state.resize(1)
        moved = state.greedy_pass()
        merged = state.greedy_merges()
        if moved == 0 and merged == 0:
            break
    current = state.description_length_nats()
    if current < best:
        best, best_partition = current, state.partition()
    running.append(best / LN2)

    final = best_partition.compact()
    logger.info(f"[Blockmodel] Restart {restart}: best Σ = {best / LN2:.3f} bits "
                f"(I={final.n_worker_groups}, Γ={final.n_job_groups})")
    return {
        'restart': restart,
        'bits': best / LN2,
        'worker_groups': final.worker_groups,
        'job_groups': final.job_groups,
        'running': running,
    }


def infer_partition(graph: BipartiteGraph, config: Optional[InferenceConfig] = None) -> InferenceResult:
    """
    Minimum-description-length partition by annealed MCMC with restarts

    Each restart starts from a random partition whose size follows the ladder
    1, 2, 4, ... up to sqrt(N), anneals with single-node moves (an empty slot
    per side is inserted between sweeps so groups can split), then finishes
    with greedy moves and exact greedy merges. Restarts run in parallel and
    the lowest description length wins (ties go to the lower restart index).
    """
    config = config or InferenceConfig()
    if graph.total_edges == 0:
        raise ValueError("Cannot infer a partition on a graph without edges")

    logger.info(f"[Blockmodel] Inferring partition: {graph.n_workers} workers, {graph.n_jobs} jobs, "
                f"{config.restarts} restarts x {config.sweeps_per_restart} sweeps")
    chains = ordered_map(_run_chain, [(graph, config, r) for r in range(config.restarts)], config.threads)
    winner = min(chains, key=lambda chain: (chain['bits'], chain['restart']))

    partition = Partition(winner['worker_groups'], winner['job_groups'])
    probabilities = estimate_block_probabilities(graph, partition)
    result = InferenceResult(
        partition=partition,
        description_length=description_length(graph, partition),
        log_likelihood=log_likelihood(graph, partition, probabilities),
        block_probabilities=probabilities,
        trace=[(chain['restart'], chain['bits']) for chain in chains],
        sweep_traces=[chain['running'] for chain in chains],
        seed=config.seed,
        config=config,
    )
    logger.info(f"[Blockmodel] ✅ Selected I={result.n_types}, Γ={result.n_markets}, "
                f"Σ={result.description_length:.3f} bits")
    return result


def write_inference_result(result: InferenceResult, path: Path, extra: Optional[Dict[str, Any]] = None) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(result.to_dict(extra), indent=2, sort_keys=True), encoding='utf-8')
    return path


# ========================
# GENERATIVE SAMPLER
# ========================

def _default_ids(prefix: str, n: int) -> Tuple[str, ...]:
    width = len(str(max(n - 1, 0)))
    return tuple(f"{prefix}{i:0{width}d}" for i in range(n))


def sample_network(
    partition: Partition,
    probabilities: BlockProbabilityMatrix,
    worker_degrees: np.ndarray,
    job_degrees: np.ndarray,
    rng: np.random.Generator,
    worker_ids: Optional[Sequence[str]] = None,
    job_ids: Optional[Sequence[str]] = None,
) -> BipartiteGraph:
    """
    Draw A_ij ~ Poisson(d_i d_j P) for every worker-job pair

    Draws one Poisson total per block and spreads it over the block's pairs
    multinomially in proportion to d_i d_j, which is the same law without
    visiting zero-mean pairs. Every node is kept, isolated or not.
    """
    d_w = np.asarray(worker_degrees, dtype=float)
    d_j = np.asarray(job_degrees, dtype=float)
    if (d_w < 0).any() or (d_j < 0).any():
        raise ValueError("Degrees must be non-negative")
    if len(d_w) != len(partition.worker_groups) or len(d_j) != len(partition.job_groups):
        raise ValueError("Degree sequences do not match the partition")
    if probabilities.shape != partition.shape:
        raise ValueError(f"Block probabilities have shape {probabilities.shape}, partition has {partition.shape}")

    n_i, n_g = partition.shape
    mass_w = np.bincount(partition.worker_groups, weights=d_w, minlength=n_i)
    mass_j = np.bincount(partition.job_groups, weights=d_j, minlength=n_g)
    totals = rng.poisson(probabilities.expected_counts(mass_w, mass_j))

    members_w = [np.flatnonzero(partition.worker_groups == r) for r in range(n_i)]
    members_j = [np.flatnonzero(partition.job_groups == s) for s in range(n_g)]
    drawn_w, drawn_j = [], []
    for r, s in zip(*np.nonzero(totals)):
        size = int(totals[r, s])
        drawn_w.append(rng.choice(members_w[r], size=size, p=d_w[members_w[r]] / mass_w[r]))
        drawn_j.append(rng.choice(members_j[s], size=size, p=d_j[members_j[s]] / mass_j[s]))

    n_workers, n_jobs = len(d_w), len(d_j)
    if drawn_w:
        keys = np.concatenate(drawn_w) * n_jobs + np.concatenate(drawn_j)
        pairs, counts = np.unique(keys, return_counts=True)
    else:
        pairs, counts = np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)

    return BipartiteGraph(
        worker_ids=tuple(worker_ids) if worker_ids is not None else _default_ids('w', n_workers),
        job_ids=tuple(job_ids) if job_ids is not None else _default_ids('j', n_jobs),
        edge_workers=pairs // max(n_jobs, 1),
        edge_jobs=pairs % max(n_jobs, 1),
        edge_counts=counts,
    )


@dataclass
class PlantedBenchmark:
    partition: Partition
    probabilities: BlockProbabilityMatrix
    worker_degrees: np.ndarray
    job_degrees: np.ndarray

    def sample(self, rng: np.random.Generator) -> BipartiteGraph:
        return sample_network(self.partition, self.probabilities, self.worker_degrees, self.job_degrees, rng)


def default_pattern(n_types: int, n_markets: int, ratio: float) -> np.ndarray:
    """Diagonal-dominant pattern; types beyond the market count also favor the next market"""
    pattern = np.ones((n_types, n_markets))
    for r in range(n_types):
        pattern[r, r % n_markets] = ratio
        if r >= n_markets:
            pattern[r, (r + 1) % n_markets] = ratio
    return pattern


def make_planted_benchmark(
    n_workers: int = 200,
    n_jobs: int = 100,
    n_types: int = 4,
    n_markets: int = 3,
    mean_degree: float = 6.0,
    ratio: float = 10.0,
    rng: Optional[np.random.Generator] = None,
    pattern: Optional[np.ndarray] = None,
) -> PlantedBenchmark:
    """
    Planted partition with propensities consistent with a block-count pattern

    Workers all have degree mean_degree. Each type spreads its edges over
    markets in proportion to its pattern row; job degrees are the resulting
    market totals split evenly over the market's jobs, so expected degrees
    match the degree sequences exactly.
    """
    rng = rng or substream(DEFAULT_SEED, 'blockmodel', 'planted')
    pattern = default_pattern(n_types, n_markets, ratio) if pattern is None else np.asarray(pattern, dtype=float)
    if pattern.shape != (n_types, n_markets) or (pattern <= 0).any():
        raise ValueError("Pattern must be a positive n_types x n_markets matrix")

    worker_groups = rng.permutation(np.arange(n_workers) % n_types)
    job_groups = rng.permutation(np.arange(n_jobs) % n_markets)
    partition = Partition(worker_groups, job_groups, n_types, n_markets)

    worker_degrees = np.full(n_workers, float(mean_degree))
    type_mass = np.bincount(worker_groups, weights=worker_degrees, minlength=n_types)
    counts = type_mass[:, None] * pattern / pattern.sum(axis=1, keepdims=True)
    market_mass = counts.sum(axis=0)
    market_size = np.bincount(job_groups, minlength=n_markets)
    job_degrees = (market_mass / market_size)[job_groups]

    probabilities = BlockProbabilityMatrix(counts / np.outer(type_mass, market_mass))
    return PlantedBenchmark(partition, probabilities, worker_degrees, job_degrees)


# ========================
# PARTITION COMPARISON
# ========================

def compare_partitions(a: Partition, b: Partition) -> Dict[str, Dict[str, float]]:
    """Adjusted Rand index and normalized mutual information, per side"""
    if len(a.worker_groups) != len(b.worker_groups) or len(a.job_groups) != len(b.job_groups):
        raise ValueError("Partitions cover different node sets")
    return {
        'workers': {
            'ari': float(adjusted_rand_score(a.worker_groups, b.worker_groups)),
            'nmi': float(normalized_mutual_info_score(a.worker_groups, b.worker_groups)),
        },
        'jobs': {
            'ari': float(adjusted_rand_score(a.job_groups, b.job_groups)),
            'nmi': float(normalized_mutual_info_score(a.job_groups, b.job_groups)),
        },
    }
