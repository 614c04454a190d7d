"""
Shock Lab: synthetic panels from the model and pre/post sectoral demand shock experiments
"""

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .panel import WorkerPanel, concat_panels, write_panel_csv
from .roy_equilibrium import (
    ConvergenceError,
    DemandSide,
    EquilibriumState,
    LaborSupplyParameters,
    ModelParameters,
    SolverConfig,
    choice_probabilities,
    predicted_type_earnings,
    require_converged,
    solve_equilibrium,
)
from .shared.config import DEFAULT_SEED, SIMULATION_SETTINGS
from .shared.parallel import ordered_map
from .shared.rng import derived_seed, substream

logger = logging.getLogger(__name__)

SHOCK_KINDS = ('multiply', 'set')


# ========================
# SHOCKS
# ========================

@dataclass(frozen=True)
class ShockSpec:
    """Change to sector demand shifters: multiply by a factor or set to a level"""

    kind: str
    targets: Dict[int, float]
    label: str = ''

    def __post_init__(self):
        if self.kind not in SHOCK_KINDS:
            raise ValueError(f"Unknown shock kind: {self.kind}")
        if not self.targets:
            raise ValueError("Shock needs at least one target sector")
        for sector, value in self.targets.items():
            if not value > 0:
                raise ValueError(f"Shock value for sector {sector} must be positive, got {value}")
        if not self.label:
            parts = ','.join(f"{s}={v:g}" for s, v in sorted(self.targets.items()))
            object.__setattr__(self, 'label', f"{self.kind}:{parts}")

    def to_dict(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'targets': {str(s): v for s, v in sorted(self.targets.items())}, 'label': self.label}


def parse_shock(text: str, label: str = '') -> ShockSpec:
    """
    Parse "kind:sector=value,sector=value" (e.g. "multiply:3=0.5")

    Raises:
        ValueError: On malformed text
    """
    kind, sep, body = text.strip().partition(':')
    if not sep or not body:
        raise ValueError(f"Shock must look like 'multiply:3=0.5', got {text!r}")
    targets: Dict[int, float] = {}
    for item in body.split(','):
        sector, eq, value = item.partition('=')
        if not eq:
            raise ValueError(f"Bad shock target {item!r} in {text!r}")
        try:
            targets[int(sector)] = float(value)
        except ValueError:
            raise ValueError(f"Bad shock target {item!r} in {text!r}")
    return ShockSpec(kind.strip(), targets, label)


def default_shocks(n_sectors: int, factors: Sequence[float] = (2.0, 0.5)) -> List[ShockSpec]:
    """One shock per (sector, factor): the positive and negative shock battery"""
    return [
        ShockSpec('multiply', {sector: factor}, f"sector{sector}_x{factor:g}")
        for sector in range(n_sectors)
        for factor in factors
    ]


def apply_shock(demand: DemandSide, shock: ShockSpec) -> DemandSide:
    """
    New demand side with the shocked shifters; no renormalization

    Raises:
        ValueError: When a target sector does not exist
    """
    a = demand.a.copy()
    for sector, value in shock.targets.items():
        if not 0 <= sector < a.size:
            raise ValueError(f"Shock targets unknown sector {sector} (economy has {a.size})")
        a[sector] = a[sector] * value if shock.kind == 'multiply' else value
    return DemandSide(a, demand.eta)


# ========================
# PANEL SIMULATION
# ========================

def draw_worker_types(masses: np.ndarray, n_workers: int, rng: np.random.Generator) -> np.ndarray:
    masses = np.asarray(masses, dtype=float)
    return rng.choice(masses.size, size=n_workers, p=masses / masses.sum())


def _draw_rows(probabilities: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row by inverse CDF"""
    if probabilities.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    cumulative = np.cumsum(probabilities, axis=1)
    draws = rng.random(probabilities.shape[0])[:, None] * cumulative[:, -1:]
    return np.minimum((draws >= cumulative).sum(axis=1), probabilities.shape[1] - 1)


def simulate_panel(
    supply: LaborSupplyParameters,
    sigma: np.ndarray,
    w: np.ndarray,
    periods: int = SIMULATION_SETTINGS['periods'],
    n_workers: int = SIMULATION_SETTINGS['n_workers'],
    separation_rate: float = SIMULATION_SETTINGS['separation_rate'],
    seed: int = DEFAULT_SEED,
    worker_types: Optional[np.ndarray] = None,
    jobs_per_market: int = 0,
    sector_given_market: Optional[np.ndarray] = None,
    occupation_given_type: Optional[np.ndarray] = None,
    stream: str = 'panel',
) -> WorkerPanel:
    """
    Draw a worker panel from the model

    Everyone chooses at t = 1. Later, each worker separates with probability
    separation_rate and re-chooses; otherwise the match persists. Employed
    earnings are psi * w times log-normal noise drawn fresh every period.

    Args:
        supply: Labor supply parameters
        sigma: Types x markets log-earnings noise
        w: Wages per efficiency unit (normally from a solved equilibrium)
        periods: Number of periods T
        n_workers: Number of workers N
        separation_rate: Per-period separation probability
        seed: Root seed
        worker_types: Fixed type per worker (drawn from the masses when None)
        jobs_per_market: Jobs per market; 0 disables job ids
        sector_given_market: Markets x sectors P(sector | market) for sector labels
        occupation_given_type: Types x occupations P(occupation | type)
        stream: Name of the random stream for choices and noise

    Returns:
        WorkerPanel
    """
    if periods < 1 or n_workers < 1:
        raise ValueError("Need at least one period and one worker")
    if not 0.0 <= separation_rate <= 1.0:
        raise ValueError("separation_rate must lie in [0, 1]")
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != supply.psi.shape:
        raise ValueError(f"sigma has shape {sigma.shape}, expected {supply.psi.shape}")

    if worker_types is None:
        worker_types = draw_worker_types(supply.masses, n_workers, substream(seed, 'shock_lab', 'types'))
    types = np.asarray(worker_types, dtype=np.int64)
    if types.size != n_workers:
        raise ValueError(f"Got {types.size} worker types for {n_workers} workers")

    rng = substream(seed, 'shock_lab', stream)
    probabilities = choice_probabilities(supply, w)
    phi = supply.psi * np.asarray(w, dtype=float)
    n_markets = supply.n_markets

    job_sectors = None
    if jobs_per_market > 0 and sector_given_market is not None:
        job_rng = substream(seed, 'shock_lab', 'job_sectors')
        rows = np.asarray(sector_given_market, dtype=float)
        rows = rows / rows.sum(axis=1, keepdims=True)
        job_sectors = np.vstack([
            job_rng.choice(rows.shape[1], size=jobs_per_market, p=rows[g])
            for g in range(n_markets)
        ])

    market = np.zeros(n_workers, dtype=np.int64)
    job = np.full(n_workers, -1, dtype=np.int64)
    sector = np.full(n_workers, -1, dtype=np.int64)
    occupation = np.full(n_workers, -1, dtype=np.int64)
    width = len(str(n_workers - 1))
    worker_ids = np.array([f"{i:0{width}d}" for i in range(n_workers)])
    frames = []

    for t in range(1, periods + 1):
        if t == 1:
            separated = np.ones(n_workers, dtype=bool)
        else:
            separated = rng.random(n_workers) < separation_rate
        movers = np.flatnonzero(separated)
        market[movers] = _draw_rows(probabilities[types[movers]], rng)

        employed_movers = movers[market[movers] > 0]
        if jobs_per_market > 0:
            job[movers] = -1
            job[employed_movers] = rng.integers(jobs_per_market, size=employed_movers.size)
        if sector_given_market is not None:
            sector[movers] = -1
            if job_sectors is not None:
                sector[employed_movers] = job_sectors[market[employed_movers] - 1, job[employed_movers]]
            else:
                sector[employed_movers] = _draw_rows(sector_given_market[market[employed_movers] - 1], rng)
        if occupation_given_type is not None:
            occupation[movers] = -1
            occupation[employed_movers] = _draw_rows(occupation_given_type[types[employed_movers]], rng)

        noise = rng.standard_normal(n_workers)
        employed = market > 0
        omega = np.full(n_workers, np.nan)
        cells = (types[employed], market[employed] - 1)
        omega[employed] = phi[cells] * np.exp(sigma[cells] * noise[employed])

        frame = pd.DataFrame({
            'worker_id': worker_ids,
            't': t,
            'iota': types,
            'gamma': market.copy(),
            'omega': omega,
            'c': separated.astype(np.int64),
        })
        if jobs_per_market > 0:
            frame['job_id'] = [f"{g}:{k}" if g > 0 else None for g, k in zip(market, job)]
        if sector_given_market is not None:
            frame['sector'] = np.where(employed, sector, np.nan)
        if occupation_given_type is not None:
            frame['occupation'] = np.where(employed, occupation, np.nan)
        frames.append(frame)

    panel_frame = pd.concat(frames, ignore_index=True)
    panel_frame = panel_frame.sort_values(['worker_id', 't'], kind='mergesort').reset_index(drop=True)
    return WorkerPanel(panel_frame)


# ========================
# EXPERIMENTS
# ========================

@dataclass
class SimulationConfig:
    n_workers: int = SIMULATION_SETTINGS['n_workers']
    periods: int = SIMULATION_SETTINGS['periods']
    separation_rate: Optional[float] = None
    jobs_per_market: int = SIMULATION_SETTINGS['jobs_per_market']
    seed: int = DEFAULT_SEED
    paired: bool = True
    with_occupations: bool = True


@dataclass
class ShockExperiment:
    params: ModelParameters
    shock: ShockSpec
    demand_post: DemandSide
    pre: EquilibriumState
    post: EquilibriumState
    pre_panel: WorkerPanel
    post_panel: WorkerPanel
    seed: int
    paired: bool = True
    extras: Dict[str, Any] = field(default_factory=dict)

    @property
    def stacked(self) -> WorkerPanel:
        """Pre and post panels stacked, post periods shifted after pre"""
        return concat_panels(self.pre_panel, self.post_panel)

    def manifest(self) -> Dict[str, Any]:
        def solver_stats(state: EquilibriumState) -> Dict[str, Any]:
            return {
                'iterations': state.iterations,
                'converged': state.converged,
                'labor_gap': state.labor_gap,
                'goods_gap': state.goods_gap,
                'w': state.w.tolist(),
                'p': state.p.tolist(),
            }

        shocks = model_class_shocks(self)
        return {
            'shock': self.shock.to_dict(),
            'seed': self.seed,
            'paired': self.paired,
            'a_pre': self.params.demand.a.tolist(),
            'a_post': self.demand_post.a.tolist(),
            'pre': solver_stats(self.pre),
            'post': solver_stats(self.post),
            'market_shocks': shocks['markets'].tolist(),
            'sector_shocks': shocks['sectors'].tolist(),
            'n_workers': self.pre_panel.n_workers,
        }


def model_class_shocks(experiment: ShockExperiment) -> Dict[str, np.ndarray]:
    """Log change of market labor input and of sector output between the two equilibria"""
    with np.errstate(divide='ignore'):
        markets = np.log(experiment.post.labor.sum(axis=1)) - np.log(experiment.pre.labor.sum(axis=1))
        sectors = np.log(experiment.post.y_supply) - np.log(experiment.pre.y_supply)
    return {'markets': markets, 'sectors': sectors}


def predicted_type_changes(experiment: ShockExperiment) -> np.ndarray:
    """Model-implied change in mean log earnings per worker type"""
    supply = experiment.params.supply
    return predicted_type_earnings(supply, experiment.post.w) - predicted_type_earnings(supply, experiment.pre.w)


def _uniform_sectors(params: ModelParameters) -> np.ndarray:
    n_markets, n_sectors = params.technology.beta.shape
    return np.full((n_markets, n_sectors), 1.0 / n_sectors)


def run_shock_experiment(
    params: ModelParameters,
    shock: ShockSpec,
    sim: Optional[SimulationConfig] = None,
    solver: Optional[SolverConfig] = None,
) -> ShockExperiment:
    """
    Solve the economy before and after a demand shock and simulate both panels

    Labor-supply parameters are shared; only the demand shifters change. With
    sim.paired the same workers (same types) appear in both panels.

    Raises:
        ConvergenceError: When either equilibrium fails to converge
    """
    sim = sim or SimulationConfig()
    solver = solver or SolverConfig()
    demand_post = apply_shock(params.demand, shock)

    pre = require_converged(solve_equilibrium(params.supply, params.technology, params.demand, solver))
    post = require_converged(solve_equilibrium(
        params.supply, params.technology, demand_post, replace(solver, w0=pre.w, p0=pre.p)
    ))

    separation = params.separation_rate if sim.separation_rate is None else sim.separation_rate
    types_pre = draw_worker_types(params.supply.masses, sim.n_workers, substream(sim.seed, 'shock_lab', 'types', 0))
    types_post = types_pre if sim.paired else draw_worker_types(
        params.supply.masses, sim.n_workers, substream(sim.seed, 'shock_lab', 'types', 1)
    )
    common = {
        'sigma': params.sigma,
        'periods': sim.periods,
        'n_workers': sim.n_workers,
        'separation_rate': separation,
        'seed': sim.seed,
        'jobs_per_market': sim.jobs_per_market,
        'sector_given_market': (params.sector_given_market if params.sector_given_market is not None
                                else _uniform_sectors(params)),
        'occupation_given_type': params.occupation_given_type if sim.with_occupations else None,
    }
    pre_panel = simulate_panel(params.supply, w=pre.w, worker_types=types_pre, stream='pre', **common)
    post_panel = simulate_panel(params.supply, w=post.w, worker_types=types_post, stream='post', **common)

    logger.info(f"[ShockLab] ✅ Experiment {shock.label}: {pre.iterations}/{post.iterations} solver iterations, "
                f"{sim.n_workers} workers")
    return ShockExperiment(
        params=params, shock=shock, demand_post=demand_post, pre=pre, post=post,
        pre_panel=pre_panel, post_panel=post_panel, seed=sim.seed, paired=sim.paired,
    )


def write_experiment(experiment: ShockExperiment, out_dir: Path) -> Dict[str, Path]:
    """Write manifest.json plus pre/post panel CSVs into out_dir"""
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / 'manifest.json'
    manifest_path.write_text(json.dumps(experiment.manifest(), indent=2, sort_keys=True), encoding='utf-8')
    return {
        'manifest': manifest_path,
        'pre_panel': write_panel_csv(experiment.pre_panel, out_dir / 'panel_pre.csv'),
        'post_panel': write_panel_csv(experiment.post_panel, out_dir / 'panel_post.csv'),
    }


# ========================
# SWEEPS
# ========================

@dataclass
class SweepOutcome:
    shock: ShockSpec
    seed: int
    experiment: Optional[ShockExperiment] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.experiment is not None


def _run_sweep_task(task) -> SweepOutcome:
    params, shock, sim, solver = task
    try:
        return SweepOutcome(shock, sim.seed, run_shock_experiment(params, shock, sim, solver))
    except (ConvergenceError, ValueError) as e:
        return SweepOutcome(shock, sim.seed, error=str(e))


def shock_sweep(
    params: ModelParameters,
    shocks: Sequence[ShockSpec],
    sim: Optional[SimulationConfig] = None,
    solver: Optional[SolverConfig] = None,
    threads: int = 1,
) -> List[SweepOutcome]:
    """
    Run one experiment per shock; each gets its own seed derived from sim.seed

    Failures are recorded on the outcome instead of stopping the sweep.
    """
    sim = sim or SimulationConfig()
    tasks = [
        (params, shock, replace(sim, seed=derived_seed(sim.seed, 'shock_lab', 'shock', i)), solver)
        for i, shock in enumerate(shocks)
    ]
    outcomes = ordered_map(_run_sweep_task, tasks, threads)
    failed = [o for o in outcomes if not o.ok]
    for outcome in failed:
        logger.error(f"[ShockLab] ❌ Shock {outcome.shock.label} failed: {outcome.error}")
    logger.info(f"[ShockLab] Sweep finished: {len(outcomes) - len(failed)}/{len(outcomes)} experiments succeeded")
    return outcomes


def sweep_summary(outcomes: Sequence[SweepOutcome]) -> pd.DataFrame:
    """One row per shock: status and equilibrium statistics"""
    rows = []
    for outcome in outcomes:
        row: Dict[str, Any] = {'label': outcome.shock.label, 'seed': outcome.seed,
                               'status': 'ok' if outcome.ok else 'failed', 'error': outcome.error or ''}
        if outcome.ok:
            experiment = outcome.experiment
            row['pre_iterations'] = experiment.pre.iterations
            row['post_iterations'] = experiment.post.iterations
            row['mean_log_wage_change'] = float(np.mean(np.log(experiment.post.w) - np.log(experiment.pre.w)))
        rows.append(row)
    return pd.DataFrame(rows)
