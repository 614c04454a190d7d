"""
Supply MLE: maximum-likelihood estimation of labor-supply parameters from a worker panel
Works in earnings-level space phi = psi * w; psi and w are split by the mass normalization
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import approx_fprime, minimize
from scipy.special import logsumexp, softmax

from .panel import WorkerPanel
from .roy_equilibrium import (
    ConvergenceError,
    DemandSide,
    LaborSupplyParameters,
    SolverConfig,
    Technology,
    employment_rate,
    solve_equilibrium,
)
from .shared.config import DEFAULT_SEED, ESTIMATION_SETTINGS
from .shared.rng import substream

logger = logging.getLogger(__name__)

LN_2PI = np.log(2 * np.pi)


# ========================
# TYPES
# ========================

@dataclass(frozen=True)
class SufficientStats:
    """
    Per-cell tallies the likelihood depends on

    choices: I x (Gamma + 1) counts of separation-period choices (column 0 = outside)
    matches, log_sum, log_sq: I x Gamma count, sum and sum of squares of log earnings
    over every employed observation
    """

    choices: np.ndarray
    matches: np.ndarray
    log_sum: np.ndarray
    log_sq: np.ndarray
    n_observations: int

    @property
    def n_types(self) -> int:
        return self.choices.shape[0]

    @property
    def n_markets(self) -> int:
        return self.choices.shape[1] - 1


@dataclass(frozen=True)
class SupplyTheta:
    """Likelihood parameters; xi0 is the outside-option utility (normalized to 0 when estimating)"""

    phi: np.ndarray
    xi: np.ndarray
    nu: float
    sigma: np.ndarray
    xi0: float = 0.0


@dataclass
class FitConfig:
    zero_cell_epsilon: float = ESTIMATION_SETTINGS['zero_cell_epsilon']
    grad_tol: float = ESTIMATION_SETTINGS['grad_tol']
    max_outer: int = ESTIMATION_SETTINGS['max_outer']
    jitter_starts: int = ESTIMATION_SETTINGS['jitter_starts']
    ln_nu_bounds: Tuple[float, float] = ESTIMATION_SETTINGS['ln_nu_bounds']
    ln_phi_lower: float = ESTIMATION_SETTINGS['ln_phi_lower']
    sigma_floor: float = ESTIMATION_SETTINGS['sigma_floor']
    outer_tol: float = 1e-10
    jitter_scale: float = 0.1
    max_inner_iter: int = 5000
    seed: int = DEFAULT_SEED
    initial: Optional[SupplyTheta] = None


@dataclass
class EstimatedParameters:
    phi: np.ndarray
    xi: np.ndarray
    nu: float
    sigma: np.ndarray
    separation_rate: Optional[float]
    log_likelihood: float
    gradient_norm: float
    zero_cells: np.ndarray
    pooled_sigma: np.ndarray
    converged: bool
    nu_at_bound: bool = False
    outer_iterations: int = 0
    trace: List[float] = field(default_factory=list)
    masses: Optional[np.ndarray] = None
    k: Optional[float] = None
    psi: Optional[np.ndarray] = None
    w: Optional[np.ndarray] = None
    sensitive_cells: Optional[np.ndarray] = None

    @property
    def theta(self) -> SupplyTheta:
        return SupplyTheta(phi=self.phi, xi=self.xi, nu=self.nu, sigma=self.sigma)

    def to_dict(self) -> Dict[str, Any]:
        result: Dict[str, Any] = {
            'dimensions': {'types': int(self.phi.shape[0]), 'markets': int(self.phi.shape[1])},
            'phi': self.phi.tolist(),
            'xi': self.xi.tolist(),
            'nu': self.nu,
            'sigma': self.sigma.tolist(),
            'separation_rate': self.separation_rate,
            'diagnostics': {
                'log_likelihood': self.log_likelihood,
                'gradient_norm': self.gradient_norm,
                'converged': self.converged,
                'nu_at_bound': self.nu_at_bound,
                'outer_iterations': self.outer_iterations,
                'trace': self.trace,
                'zero_cells': self.zero_cells.astype(int).tolist(),
                'pooled_sigma': self.pooled_sigma.astype(int).tolist(),
            },
        }
        if self.masses is not None:
            result['masses'] = self.masses.tolist()
        if self.k is not None:
            result['k'] = self.k
            result['psi'] = self.psi.tolist()
            result['w'] = self.w.tolist()
        if self.sensitive_cells is not None:
            result['diagnostics']['sensitive_cells'] = self.sensitive_cells.astype(int).tolist()
        return result


# ========================
# SUFFICIENT STATISTICS
# ========================

def sufficient_statistics(
    panel: WorkerPanel,
    n_types: Optional[int] = None,
    n_markets: Optional[int] = None,
) -> SufficientStats:
    """
    Tally choice counts and log-earnings moments once

    Raises:
        ValueError: When an employed observation has non-positive earnings
    """
    frame = panel.frame
    n_types = n_types or panel.n_types
    n_markets = n_markets or panel.n_markets

    iota = frame['iota'].to_numpy()
    gamma = frame['gamma'].to_numpy()
    if iota.max() >= n_types or gamma.max() > n_markets:
        raise ValueError(f"Panel indices exceed {n_types} types / {n_markets} markets")

    choices = np.zeros((n_types, n_markets + 1))
    separated = frame['c'].to_numpy() == 1
    np.add.at(choices, (iota[separated], gamma[separated]), 1.0)

    employed = gamma > 0
    omega = frame['omega'].to_numpy(dtype=float)[employed]
    if (omega <= 0).any() or np.isnan(omega).any():
        raise ValueError("Employed observations must carry positive earnings")
    log_omega = np.log(omega)
    cells = (iota[employed], gamma[employed] - 1)

    matches = np.zeros((n_types, n_markets))
    log_sum = np.zeros((n_types, n_markets))
    log_sq = np.zeros((n_types, n_markets))
    np.add.at(matches, cells, 1.0)
    np.add.at(log_sum, cells, log_omega)
    np.add.at(log_sq, cells, log_omega ** 2)
    return SufficientStats(choices, matches, log_sum, log_sq, len(frame))


def _as_stats(data) -> SufficientStats:
    return data if isinstance(data, SufficientStats) else sufficient_statistics(data)


# ========================
# LIKELIHOOD AND SCORE
# ========================

def _scaled_utilities(theta: SupplyTheta) -> np.ndarray:
    """I x (Gamma + 1) utilities divided by nu, outside option first"""
    inside = (theta.phi + theta.xi) / theta.nu
    outside = np.full((inside.shape[0], 1), theta.xi0 / theta.nu)
    return np.hstack([outside, inside])


def _earnings_loglik(stats: SufficientStats, phi: np.ndarray, sigma: np.ndarray) -> float:
    seen = stats.matches > 0
    if (seen & ~(sigma > 0)).any():
        raise ValueError("sigma must be positive on cells with earnings observations")
    if (seen & ~(phi > 0)).any():
        raise ValueError("phi must be positive on cells with earnings observations")
    m = stats.matches[seen]
    ln_phi = np.log(phi[seen])
    ln_sigma = np.log(sigma[seen])
    quadratic = stats.log_sq[seen] - 2 * ln_phi * stats.log_sum[seen] + m * ln_phi ** 2
    return float(np.sum(
        -stats.log_sum[seen] - m * ln_sigma - 0.5 * m * LN_2PI - quadratic / (2 * sigma[seen] ** 2)
    ))


def panel_log_likelihood(data, theta: SupplyTheta, epsilon: float = 0.0) -> float:
    """
    Log-likelihood of a panel

    Choice term on separation periods only, log-normal earnings term on every
    employed period.

    Args:
        data: WorkerPanel or precomputed SufficientStats
        theta: Parameters
        epsilon: Pseudo-count added to every choice cell

    Returns:
        Log-likelihood (natural log)
    """
    stats = _as_stats(data)
    if not np.isfinite(theta.phi).all() or not np.isfinite(theta.xi).all() or not theta.nu > 0:
        raise ValueError("Parameters must be finite with nu > 0")
    utilities = _scaled_utilities(theta)
    log_probs = utilities - logsumexp(utilities, axis=1, keepdims=True)
    counts = stats.choices + epsilon
    choice = float(np.sum(counts * log_probs))
    return choice + _earnings_loglik(stats, theta.phi, theta.sigma)


def panel_score(data, theta: SupplyTheta, epsilon: float = 0.0) -> Dict[str, Any]:
    """
    Analytic gradient of panel_log_likelihood in (ln phi, xi, ln nu)

    Returns:
        Dict with 'ln_phi' (I x Gamma), 'xi' (Gamma) and 'ln_nu' (scalar)
    """
    stats = _as_stats(data)
    utilities = _scaled_utilities(theta)
    probs = softmax(utilities, axis=1)
    counts = stats.choices + epsilon
    totals = counts.sum(axis=1, keepdims=True)
    residual = counts - totals * probs

    d_ln_phi = theta.phi * residual[:, 1:] / theta.nu
    seen = stats.matches > 0
    ln_phi = np.log(theta.phi, out=np.zeros_like(theta.phi), where=theta.phi > 0)
    earnings = np.zeros_like(theta.phi)
    earnings[seen] = (stats.log_sum[seen] - stats.matches[seen] * ln_phi[seen]) / theta.sigma[seen] ** 2
    d_ln_phi = d_ln_phi + earnings

    d_xi = residual[:, 1:].sum(axis=0) / theta.nu
    mean_utility = (probs * utilities).sum(axis=1)
    d_ln_nu = float(np.sum(totals[:, 0] * mean_utility - (counts * utilities).sum(axis=1)))
    return {'ln_phi': d_ln_phi, 'xi': d_xi, 'ln_nu': d_ln_nu}


# ========================
# CLOSED-FORM PROFILES
# ========================

def estimate_lambda(panel: WorkerPanel) -> float:
    """
    Separation rate: share of c = 1 among observations after each worker's first period

    Raises:
        ValueError: When the panel has a single period
    """
    if len(panel.periods) < 2:
        raise ValueError("Separation rate needs at least two periods")
    frame = panel.frame
    later = frame['t'] > frame.groupby('worker_id')['t'].transform('min')
    if not later.any():
        raise ValueError("No worker is observed after its first period")
    return float(frame.loc[later, 'c'].sum() / later.sum())


def _residual_squares(stats: SufficientStats, phi: np.ndarray) -> np.ndarray:
    ln_phi = np.log(phi, out=np.zeros_like(phi), where=phi > 0)
    squares = stats.log_sq - 2 * ln_phi * stats.log_sum + stats.matches * ln_phi ** 2
    return np.maximum(squares, 0.0)


def estimate_sigma(data, phi: np.ndarray, floor: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Closed-form log-earnings dispersion per (type, market)

    Cells with fewer than 2 observations get the pooled estimate over all cells.

    Returns:
        (sigma, pooled) where pooled flags cells that fell back to the pooled value
    """
    stats = _as_stats(data)
    squares = _residual_squares(stats, phi)
    total = stats.matches.sum()
    pooled_value = np.sqrt(squares.sum() / total) if total > 0 else 0.0
    pooled = stats.matches < 2
    sigma = np.full(phi.shape, pooled_value, dtype=float)
    rich = ~pooled
    sigma[rich] = np.sqrt(squares[rich] / stats.matches[rich])
    if floor > 0:
        sigma = np.maximum(sigma, floor)
    return sigma, pooled


def type_masses(panel: WorkerPanel, n_types: Optional[int] = None) -> np.ndarray:
    """Worker-count share of each type"""
    n_types = n_types or panel.n_types
    per_worker = panel.frame.groupby('worker_id')['iota'].first()
    counts = np.bincount(per_worker.to_numpy(), minlength=n_types).astype(float)
    if (counts == 0).any():
        raise ValueError(f"Type {int(np.flatnonzero(counts == 0)[0])} has no workers")
    return counts / counts.sum()


def observed_employment_rate(panel: WorkerPanel) -> float:
    return float((panel.frame['gamma'] > 0).mean())


# ========================
# OPTIMIZER
# ========================

class _Objective:
    """Per-observation negative log-likelihood over x = (ln phi, xi, ln nu) at fixed sigma"""

    def __init__(self, stats: SufficientStats, sigma: np.ndarray, epsilon: float):
        self.stats = stats
        self.sigma = sigma
        self.epsilon = epsilon
        self.shape = stats.matches.shape
        self.scale = float(max(stats.n_observations, 1))

    def unpack(self, x: np.ndarray) -> SupplyTheta:
        n_cells = self.shape[0] * self.shape[1]
        phi = np.exp(x[:n_cells]).reshape(self.shape)
        xi = x[n_cells:-1]
        return SupplyTheta(phi=phi, xi=xi, nu=float(np.exp(x[-1])), sigma=self.sigma)

    @staticmethod
    def pack(theta: SupplyTheta) -> np.ndarray:
        return np.concatenate([np.log(theta.phi).ravel(), theta.xi, [np.log(theta.nu)]])

    def value(self, x: np.ndarray) -> float:
        return -panel_log_likelihood(self.stats, self.unpack(x), self.epsilon) / self.scale

    def gradient(self, x: np.ndarray) -> np.ndarray:
        score = panel_score(self.stats, self.unpack(x), self.epsilon)
        flat = np.concatenate([score['ln_phi'].ravel(), score['xi'], [score['ln_nu']]])
        return -flat / self.scale

    def __call__(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        return self.value(x), self.gradient(x)


def _bounds(stats: SufficientStats, config: FitConfig) -> List[Tuple[Optional[float], Optional[float]]]:
    n_cells = stats.n_types * stats.n_markets
    return ([(config.ln_phi_lower, None)] * n_cells
            + [(None, None)] * stats.n_markets
            + [tuple(config.ln_nu_bounds)])


def _projected_gradient(x: np.ndarray, grad: np.ndarray, bounds) -> float:
    projected = grad.copy()
    for i, (lower, upper) in enumerate(bounds):
        if lower is not None and x[i] <= lower + 1e-12 and grad[i] > 0:
            projected[i] = 0.0
        if upper is not None and x[i] >= upper - 1e-12 and grad[i] < 0:
            projected[i] = 0.0
    return float(np.max(np.abs(projected))) if projected.size else 0.0


def _initial_theta(stats: SufficientStats, config: FitConfig) -> SupplyTheta:
    if config.initial is not None:
        return config.initial
    seen = stats.matches > 0
    overall = stats.log_sum.sum() / max(stats.matches.sum(), 1.0)
    ln_phi = np.full(stats.matches.shape, overall)
    ln_phi[seen] = stats.log_sum[seen] / stats.matches[seen]
    ln_phi = np.maximum(ln_phi, config.ln_phi_lower)
    return SupplyTheta(
        phi=np.exp(ln_phi),
        xi=np.zeros(stats.n_markets),
        nu=1.0,
        sigma=np.ones(stats.matches.shape),
    )


def _jitter(theta: SupplyTheta, rng: np.random.Generator, scale: float, config: FitConfig) -> SupplyTheta:
    ln_phi = np.log(theta.phi) + rng.normal(0.0, scale, theta.phi.shape)
    ln_nu = np.clip(np.log(theta.nu) + rng.normal(0.0, scale), *config.ln_nu_bounds)
    return replace(
        theta,
        phi=np.exp(np.maximum(ln_phi, config.ln_phi_lower)),
        xi=theta.xi + rng.normal(0.0, scale, theta.xi.shape),
        nu=float(np.exp(ln_nu)),
    )


def _polish_nu(objective: _Objective, x: np.ndarray, config: FitConfig) -> np.ndarray:
    """Snap ln nu to a bound when the objective there is no worse"""
    current = objective.value(x)
    for bound in config.ln_nu_bounds:
        candidate = x.copy()
        candidate[-1] = bound
        if objective.value(candidate) <= current + 1e-12:
            return candidate
    return x


def _full_gradient(objective: _Objective, x: np.ndarray, bounds) -> float:
    """Projected gradient infinity-norm of the whole-panel log-likelihood"""
    return _projected_gradient(x, objective.gradient(x), bounds) * objective.scale


def _newton_polish(objective: _Objective, x: np.ndarray, bounds, tol: float, steps: int = 8) -> np.ndarray:
    """Damped Newton steps on coordinates off their bounds, Hessian by differencing the analytic gradient"""
    lower = np.array([-np.inf if lo is None else lo for lo, _ in bounds])
    upper = np.array([np.inf if hi is None else hi for _, hi in bounds])
    for _ in range(steps):
        if _full_gradient(objective, x, bounds) < tol * 1e-2:
            break
        free = (x > lower + 1e-9) & (x < upper - 1e-9)
        if not free.any():
            break
        grad = objective.gradient(x)
        hessian = approx_fprime(x, objective.gradient)
        hessian = 0.5 * (hessian + hessian.T)
        step = np.zeros_like(x)
        step[free] = -np.linalg.lstsq(hessian[np.ix_(free, free)], grad[free], rcond=None)[0]
        current = objective.value(x)
        size = 1.0
        while size > 1e-4:
            candidate = np.clip(x + size * step, lower, upper)
            if objective.value(candidate) <= current + 1e-13 * max(1.0, abs(current)):
                break
            size *= 0.5
        else:
            break
        x = candidate
    return x


def _fit_from(stats: SufficientStats, start: SupplyTheta, config: FitConfig, label: str) -> Dict[str, Any]:
    bounds = _bounds(stats, config)
    sigma, pooled = estimate_sigma(stats, start.phi, floor=config.sigma_floor)
    theta = replace(start, sigma=sigma)
    trace = [panel_log_likelihood(stats, theta, config.zero_cell_epsilon)]
    x = _Objective.pack(theta)
    converged = False
    grad_norm = np.inf
    outer = 0

    for outer in range(1, config.max_outer + 1):
        objective = _Objective(stats, sigma, config.zero_cell_epsilon)
        result = minimize(
            objective, x, jac=True, method='L-BFGS-B', bounds=bounds,
            options={'maxiter': config.max_inner_iter, 'gtol': config.grad_tol / objective.scale,
                     'ftol': 1e-15},
        )
        x = _polish_nu(objective, result.x, config)
        x = _newton_polish(objective, x, bounds, config.grad_tol)

        theta = objective.unpack(x)
        sigma, pooled = estimate_sigma(stats, theta.phi, floor=config.sigma_floor)
        theta = replace(theta, sigma=sigma)
        trace.append(panel_log_likelihood(stats, theta, config.zero_cell_epsilon))

        # gradient at the re-profiled sigma, i.e. of the profile likelihood
        grad_norm = _full_gradient(_Objective(stats, sigma, config.zero_cell_epsilon), x, bounds)
        if grad_norm < config.grad_tol and abs(trace[-1] - trace[-2]) <= config.outer_tol * max(1.0, abs(trace[-1])):
            converged = True
            break

    logger.debug(f"[SupplyMLE] Start {label}: loglik {trace[-1]:.6f} after {outer} outer steps "
                 f"(gradient {grad_norm:.2e})")
    return {
        'theta': theta,
        'pooled': pooled,
        'trace': trace,
        'converged': converged,
        'gradient_norm': grad_norm,
        'outer': outer,
    }


def fit_supply_parameters(panel: WorkerPanel, config: Optional[FitConfig] = None) -> EstimatedParameters:
    """
    Maximize the panel likelihood over (phi, xi, nu) with sigma profiled in closed form

    Each outer step runs L-BFGS-B on (ln phi, xi, ln nu) at fixed sigma, then
    re-profiles sigma. A pseudo-count is added to every choice cell so phi
    stays finite on cells nobody chooses. The best of several jittered starts
    is kept.

    Args:
        panel: Worker panel
        config: Optimizer settings

    Returns:
        EstimatedParameters; gradient_norm is the projected gradient infinity-norm of the
        whole-panel log-likelihood and converged is False while it stays above grad_tol

    Raises:
        ValueError: When some market is never visited
    """
    config = config or FitConfig()
    stats = sufficient_statistics(panel)
    visits = stats.matches.sum(axis=0)
    if (visits == 0).any():
        raise ValueError(f"Market {int(np.flatnonzero(visits == 0)[0]) + 1} is never visited")

    base = _initial_theta(stats, config)
    runs = []
    for start in range(max(config.jitter_starts, 1)):
        theta0 = base
        if start > 0:
            theta0 = _jitter(base, substream(config.seed, 'supply_mle', 'start', start), config.jitter_scale, config)
        runs.append(_fit_from(stats, theta0, config, label=str(start)))

    best = min(range(len(runs)), key=lambda i: (-runs[i]['trace'][-1], i))
    run = runs[best]
    theta = run['theta']

    ln_nu = np.log(theta.nu)
    nu_at_bound = bool(min(abs(ln_nu - b) for b in config.ln_nu_bounds) < 1e-6)
    if nu_at_bound:
        logger.warning(f"[SupplyMLE] ⚠️ nu reached its bound ({theta.nu:.3e}); choices look deterministic")

    separation_rate = estimate_lambda(panel) if len(panel.periods) >= 2 else None
    estimates = EstimatedParameters(
        phi=theta.phi,
        xi=np.asarray(theta.xi, dtype=float),
        nu=theta.nu,
        sigma=theta.sigma,
        separation_rate=separation_rate,
        log_likelihood=panel_log_likelihood(stats, theta),
        gradient_norm=run['gradient_norm'],
        zero_cells=(stats.choices[:, 1:] == 0) & (stats.matches == 0),
        pooled_sigma=run['pooled'],
        converged=run['converged'],
        nu_at_bound=nu_at_bound,
        outer_iterations=run['outer'],
        trace=run['trace'],
        masses=type_masses(panel, stats.n_types),
    )
    if estimates.converged:
        logger.info(f"[SupplyMLE] ✅ Fitted {stats.n_types} types x {stats.n_markets} markets "
                    f"(loglik {estimates.log_likelihood:.3f}, nu {estimates.nu:.4f}, start {best})")
    else:
        logger.warning(f"[SupplyMLE] ⚠️ Optimizer stopped with gradient {estimates.gradient_norm:.2e}")
    if estimates.zero_cells.any():
        logger.info(f"[SupplyMLE] {int(estimates.zero_cells.sum())} cells have no matches; regularized")
    return estimates


def zero_cell_sensitivity(
    panel: WorkerPanel,
    estimates: EstimatedParameters,
    config: Optional[FitConfig] = None,
    threshold: float = 0.01,
) -> np.ndarray:
    """
    Refit with the pseudo-count halved and flag cells whose phi moves by more than threshold

    Returns:
        Boolean I x Gamma mask of sensitive cells (also stored on estimates)
    """
    config = config or FitConfig()
    halved = replace(
        config,
        zero_cell_epsilon=config.zero_cell_epsilon / 2,
        jitter_starts=1,
        initial=estimates.theta,
    )
    refit = fit_supply_parameters(panel, halved)
    change = np.abs(refit.phi - estimates.phi) / np.maximum(estimates.phi, 1e-300)
    sensitive = change > threshold
    estimates.sensitive_cells = sensitive
    if sensitive.any():
        logger.warning(f"[SupplyMLE] ⚠️ {int(sensitive.sum())} cells move more than {threshold:.0%} "
                       f"when the zero-cell constant is halved")
    return sensitive


# ========================
# NORMALIZATION AND k
# ========================

def normalize_psi(phi: np.ndarray, masses: np.ndarray, k: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Split phi into efficiency units and wages with sum_i m_i psi_ig = k per market

    Raises:
        ValueError: When a market has zero mass-weighted earnings
    """
    phi = np.asarray(phi, dtype=float)
    masses = np.asarray(masses, dtype=float)
    if (phi < 0).any():
        raise ValueError("phi must be non-negative")
    if not k > 0:
        raise ValueError("k must be positive")
    w = masses @ phi / k
    dead = np.flatnonzero(w <= 0)
    if dead.size:
        raise ValueError(f"Market {dead[0] + 1} has zero mass-weighted earnings")
    return phi / w, w


def attach_normalization(estimates: EstimatedParameters, k: float) -> EstimatedParameters:
    estimates.psi, estimates.w = normalize_psi(estimates.phi, estimates.masses, k)
    estimates.k = float(k)
    return estimates


def choose_k(
    grid: Sequence[float],
    estimates: EstimatedParameters,
    tech: Technology,
    demand: DemandSide,
    observed_rate: float,
    solver: Optional[SolverConfig] = None,
) -> Tuple[float, pd.DataFrame]:
    """
    Pick the normalization constant whose equilibrium employment rate matches the data

    Grid points where the solver fails are skipped with a warning.

    Returns:
        (k, table of k / employment_rate / gap / status per grid point)

    Raises:
        ValueError: When the grid is empty or every grid point fails
    """
    if len(grid) == 0:
        raise ValueError("k grid is empty")
    if estimates.masses is None:
        raise ValueError("Estimates carry no type masses")

    rows = []
    for k in sorted(float(v) for v in grid):
        try:
            psi, _ = normalize_psi(estimates.phi, estimates.masses, k)
            supply = LaborSupplyParameters(psi=psi, xi=estimates.xi, nu=estimates.nu, masses=estimates.masses)
            state = solve_equilibrium(supply, tech, demand, solver)
            if not state.converged:
                raise ConvergenceError(f"solver did not converge after {state.iterations} iterations")
            rate = employment_rate(supply, state.w)
            rows.append({'k': k, 'employment_rate': rate, 'gap': abs(rate - observed_rate), 'status': 'ok'})
        except (ConvergenceError, ValueError) as e:
            logger.warning(f"[SupplyMLE] ⚠️ Skipping k={k}: {e}")
            rows.append({'k': k, 'employment_rate': np.nan, 'gap': np.nan, 'status': f"failed: {e}"})

    table = pd.DataFrame(rows, columns=['k', 'employment_rate', 'gap', 'status'])
    usable = table[table['status'] == 'ok']
    if usable.empty:
        raise ValueError("Equilibrium failed at every k in the grid")
    best = usable.sort_values(['gap', 'k'], kind='mergesort').iloc[0]
    logger.info(f"[SupplyMLE] ✅ Selected k={best['k']} (model employment {best['employment_rate']:.4f}, "
                f"observed {observed_rate:.4f})")
    return float(best['k']), table


# ========================
# SKILL CORRELATIONS
# ========================

@dataclass
class SkillCorrelation:
    matrix: np.ndarray
    histogram: np.ndarray
    bin_edges: np.ndarray
    off_diagonal_sd: float

    @property
    def off_diagonal(self) -> np.ndarray:
        upper = np.triu_indices_from(self.matrix, k=1)
        values = self.matrix[upper]
        return values[~np.isnan(values)]

    @property
    def mean_off_diagonal(self) -> float:
        values = self.off_diagonal
        return float(values.mean()) if values.size else float('nan')

    def histogram_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'bin_left': self.bin_edges[:-1],
            'bin_right': self.bin_edges[1:],
            'pairs': self.histogram,
        })


def skill_correlation_matrix(psi: np.ndarray, bins: int = 20) -> SkillCorrelation:
    """
    Pearson correlations between the productivity vectors of worker types

    Rows with zero variance correlate as NaN.

    Raises:
        ValueError: With fewer than two types or two markets
    """
    psi = np.asarray(psi, dtype=float)
    if psi.shape[0] < 2 or psi.shape[1] < 2:
        raise ValueError("Skill correlations need at least two types and two markets")
    matrix = np.clip(pd.DataFrame(psi.T).corr().to_numpy(), -1.0, 1.0)
    result = SkillCorrelation(matrix, np.zeros(bins, dtype=np.int64), np.linspace(-1.0, 1.0, bins + 1), float('nan'))
    values = result.off_diagonal
    result.histogram, result.bin_edges = np.histogram(values, bins=bins, range=(-1.0, 1.0))
    result.off_diagonal_sd = float(values.std()) if values.size else float('nan')
    return result
