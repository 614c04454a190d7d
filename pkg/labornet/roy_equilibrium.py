"""
Roy Equilibrium: logit labor supply, Cobb-Douglas labor demand, CES product demand
Calibration helpers and the damped tatonnement solver for wages and prices
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from scipy.special import softmax

from .panel import WorkerPanel
from .shared.config import SOLVER_SETTINGS

logger = logging.getLogger(__name__)

GAP_FLOOR = 1e-12


class ConvergenceError(RuntimeError):
    """The equilibrium solver did not reach its tolerance or blew up"""


# ========================
# TYPES
# ========================

@dataclass(frozen=True, eq=False)
class LaborSupplyParameters:
    """Psi (efficiency units), Xi (amenities), nu (taste-shock scale), masses m"""

    psi: np.ndarray
    xi: np.ndarray
    nu: float
    masses: np.ndarray

    def __post_init__(self):
        psi = np.atleast_2d(np.asarray(self.psi, dtype=float))
        xi = np.asarray(self.xi, dtype=float).reshape(-1)
        masses = np.asarray(self.masses, dtype=float).reshape(-1)
        if not np.isfinite(psi).all() or (psi < 0).any():
            raise ValueError("Psi must be finite and non-negative")
        if xi.shape != (psi.shape[1],):
            raise ValueError(f"Xi has {xi.size} entries, Psi has {psi.shape[1]} markets")
        if masses.shape != (psi.shape[0],):
            raise ValueError(f"Masses have {masses.size} entries, Psi has {psi.shape[0]} types")
        if (masses <= 0).any():
            raise ValueError("Type masses must be positive")
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        object.__setattr__(self, 'psi', psi)
        object.__setattr__(self, 'xi', xi)
        object.__setattr__(self, 'masses', masses)
        object.__setattr__(self, 'nu', float(self.nu))

    @property
    def n_types(self) -> int:
        return self.psi.shape[0]

    @property
    def n_markets(self) -> int:
        return self.psi.shape[1]


@dataclass(frozen=True, eq=False)
class Technology:
    """Output elasticities beta (markets x sectors); labor share alpha_s = column sums"""

    beta: np.ndarray

    def __post_init__(self):
        beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        if (beta < 0).any() or not np.isfinite(beta).all():
            raise ValueError("beta must be finite and non-negative")
        alpha = beta.sum(axis=0)
        bad = np.flatnonzero((alpha <= 0) | (alpha >= 1))
        if bad.size:
            raise ValueError(f"Sector {bad[0]} has labor share {alpha[bad[0]]:.4f}; need 0 < alpha < 1")
        object.__setattr__(self, 'beta', beta)

    @property
    def alpha(self) -> np.ndarray:
        return self.beta.sum(axis=0)

    @property
    def n_sectors(self) -> int:
        return self.beta.shape[1]


@dataclass(frozen=True, eq=False)
class DemandSide:
    """CES demand shifters a_s and substitution elasticity eta"""

    a: np.ndarray
    eta: float = SOLVER_SETTINGS['eta']

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(-1)
        if (a <= 0).any() or not np.isfinite(a).all():
            raise ValueError("Demand shifters must be positive")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if abs(self.eta - 1.0) < 1e-12:
            raise ValueError("eta = 1 is not supported by the CES form")
        object.__setattr__(self, 'a', a)
        object.__setattr__(self, 'eta', float(self.eta))


@dataclass
class SolverConfig:
    rho: float = SOLVER_SETTINGS['rho']
    tol: float = SOLVER_SETTINGS['tol']
    max_iter: int = SOLVER_SETTINGS['max_iter']
    rho_decay: float = SOLVER_SETTINGS['rho_decay']
    rho_min: float = SOLVER_SETTINGS['rho_min']
    w0: Optional[np.ndarray] = None
    p0: Optional[np.ndarray] = None
    record_trace: bool = False


@dataclass
class EquilibriumState:
    w: np.ndarray
    p: np.ndarray
    labor: np.ndarray
    labor_supply: np.ndarray
    labor_demand: np.ndarray
    y_supply: np.ndarray
    y_demand: np.ndarray
    income: float
    profits: float
    wage_bill: float
    labor_gap: float
    goods_gap: float
    iterations: int
    converged: bool
    trace: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'w': self.w.tolist(),
            'p': self.p.tolist(),
            'labor': self.labor.tolist(),
            'labor_supply': self.labor_supply.tolist(),
            'labor_demand': self.labor_demand.tolist(),
            'y_supply': self.y_supply.tolist(),
            'y_demand': self.y_demand.tolist(),
            'income': self.income,
            'profits': self.profits,
            'wage_bill': self.wage_bill,
            'walras_gap': abs(self.income - self.wage_bill - self.profits) / max(abs(self.income), GAP_FLOOR),
            'residuals': {'labor': self.labor_gap, 'goods': self.goods_gap},
            'iterations': self.iterations,
            'converged': self.converged,
            'trace': self.trace,
        }


@dataclass
class ModelParameters:
    """
    Parameter bundle shared by solve, simulate and shock

    sigma and separation_rate drive simulation only; sector_given_market and
    occupation_given_type are optional label distributions.
    """

    supply: LaborSupplyParameters
    technology: Technology
    demand: DemandSide
    k: float = 1.0
    sigma: Optional[np.ndarray] = None
    separation_rate: float = 0.0
    sector_given_market: Optional[np.ndarray] = None
    occupation_given_type: Optional[np.ndarray] = None

    def __post_init__(self):
        n_types, n_markets = self.supply.psi.shape
        if self.technology.beta.shape[0] != n_markets:
            raise ValueError(f"beta has {self.technology.beta.shape[0]} markets, Psi has {n_markets}")
        if self.demand.a.size != self.technology.n_sectors:
            raise ValueError(f"a has {self.demand.a.size} sectors, beta has {self.technology.n_sectors}")
        self.sigma = np.zeros((n_types, n_markets)) if self.sigma is None else np.asarray(self.sigma, dtype=float)
        if self.sigma.shape != (n_types, n_markets) or (self.sigma < 0).any():
            raise ValueError("sigma must be a non-negative types x markets matrix")
        if not 0.0 <= self.separation_rate <= 1.0:
            raise ValueError("separation_rate must lie in [0, 1]")
        if self.sector_given_market is not None:
            self.sector_given_market = _row_stochastic(self.sector_given_market, (n_markets, self.technology.n_sectors),
                                                       'sector_given_market')
        if self.occupation_given_type is not None:
            matrix = np.asarray(self.occupation_given_type, dtype=float)
            self.occupation_given_type = _row_stochastic(matrix, (n_types, matrix.shape[-1]), 'occupation_given_type')

    @property
    def phi(self) -> np.ndarray:
        """Earnings levels psi * w at the reference wage w = 1"""
        return self.supply.psi

    def to_dict(self) -> Dict[str, Any]:
        bundle = {
            'dimensions': {
                'types': self.supply.n_types,
                'markets': self.supply.n_markets,
                'sectors': self.technology.n_sectors,
            },
            'psi': self.supply.psi.tolist(),
            'xi': self.supply.xi.tolist(),
            'nu': self.supply.nu,
            'masses': self.supply.masses.tolist(),
            'beta': self.technology.beta.tolist(),
            'a': self.demand.a.tolist(),
            'eta': self.demand.eta,
            'k': self.k,
            'sigma': self.sigma.tolist(),
            'separation_rate': self.separation_rate,
        }
        if self.sector_given_market is not None:
            bundle['sector_given_market'] = self.sector_given_market.tolist()
        if self.occupation_given_type is not None:
            bundle['occupation_given_type'] = self.occupation_given_type.tolist()
        return bundle

    @classmethod
    def from_dict(cls, bundle: Dict[str, Any]) -> 'ModelParameters':
        try:
            supply = LaborSupplyParameters(
                psi=np.asarray(bundle['psi'], dtype=float),
                xi=np.asarray(bundle['xi'], dtype=float),
                nu=float(bundle['nu']),
                masses=np.asarray(bundle['masses'], dtype=float),
            )
            technology = Technology(np.asarray(bundle['beta'], dtype=float))
            demand = DemandSide(np.asarray(bundle['a'], dtype=float), float(bundle.get('eta', SOLVER_SETTINGS['eta'])))
        except KeyError as e:
            raise ValueError(f"Parameter bundle is missing field {e}")
        return cls(
            supply=supply,
            technology=technology,
            demand=demand,
            k=float(bundle.get('k', 1.0)),
            sigma=bundle.get('sigma'),
            separation_rate=float(bundle.get('separation_rate', 0.0)),
            sector_given_market=bundle.get('sector_given_market'),
            occupation_given_type=bundle.get('occupation_given_type'),
        )


def _row_stochastic(matrix, shape, name: str) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {matrix.shape}")
    if (matrix < 0).any() or (matrix.sum(axis=1) <= 0).any():
        raise ValueError(f"{name} rows must be non-negative with positive mass")
    return matrix / matrix.sum(axis=1, keepdims=True)


def read_parameters(path: str) -> ModelParameters:
    if not Path(path).exists():
        raise ValueError(f"Parameter bundle not found: {path}")
    try:
        bundle = json.loads(Path(path).read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise ValueError(f"Parameter bundle {path} is not valid JSON: {e}")
    return ModelParameters.from_dict(bundle)


def write_parameters(params: ModelParameters, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(params.to_dict(), indent=2, sort_keys=True), encoding='utf-8')
    return path


# ========================
# LABOR SUPPLY
# ========================

def choice_probabilities(params: LaborSupplyParameters, w: np.ndarray) -> np.ndarray:
    """
    Logit market choice probabilities including the outside option

    Returns:
        I x (Gamma + 1) matrix; column 0 is non-employment
    """
    w = np.asarray(w, dtype=float)
    if (w <= 0).any():
        raise ValueError("Wages must be positive")
    utilities = (params.psi * w + params.xi) / params.nu
    if not np.isfinite(utilities).all():
        raise ValueError("Non-finite utilities in choice probabilities")
    with_outside = np.hstack([np.zeros((params.n_types, 1)), utilities])
    return softmax(with_outside, axis=1)


def labor_supply(params: LaborSupplyParameters, w: np.ndarray) -> np.ndarray:
    """Efficiency units offered to each market: sum over types of m * P * psi"""
    probabilities = choice_probabilities(params, w)[:, 1:]
    return (params.masses[:, None] * probabilities * params.psi).sum(axis=0)


def employment_rate(params: LaborSupplyParameters, w: np.ndarray) -> float:
    """1 - mass-weighted probability of the outside option"""
    shares = params.masses / params.masses.sum()
    return float(1.0 - shares @ choice_probabilities(params, w)[:, 0])


def predicted_type_earnings(params: LaborSupplyParameters, w: np.ndarray) -> np.ndarray:
    """Expected log earnings per type, counting non-employment as 0"""
    probabilities = choice_probabilities(params, w)[:, 1:]
    earnings = params.psi * np.asarray(w, dtype=float)
    logs = np.log(earnings, out=np.zeros_like(earnings), where=earnings > 0)
    return (probabilities * logs).sum(axis=1)


# ========================
# FIRMS AND HOUSEHOLDS
# ========================

def labor_demand(p: np.ndarray, w: np.ndarray, tech: Technology) -> np.ndarray:
    """
    Profit-maximizing labor input per (market, sector), evaluated in log space

    Cells with beta == 0 demand nothing and drop out of the product term.
    """
    p = np.asarray(p, dtype=float)
    w = np.asarray(w, dtype=float)
    beta = tech.beta
    alpha = tech.alpha
    if (alpha >= 1).any():
        raise ValueError("Labor shares must be below 1")

    active = beta > 0
    log_ratio = np.log(beta, out=np.zeros_like(beta), where=active) - np.log(w)[:, None]
    log_ratio = np.where(active, log_ratio, 0.0)
    product = (beta * log_ratio).sum(axis=0)
    log_labor = (np.log(p) + (1 - alpha) * log_ratio + product) / (1 - alpha)
    return np.where(active, np.exp(log_labor), 0.0)


def product_supply(labor: np.ndarray, tech: Technology) -> np.ndarray:
    """Cobb-Douglas output per sector with 0^0 = 1"""
    beta = tech.beta
    labor = np.asarray(labor, dtype=float)
    active = beta > 0
    starved = (active & (labor <= 0)).any(axis=0)
    logs = np.log(labor, out=np.zeros_like(beta), where=active & (labor > 0))
    output = np.exp((beta * logs).sum(axis=0))
    return np.where(starved, 0.0, output)


def product_demand(p: np.ndarray, demand: DemandSide, income: float) -> np.ndarray:
    """CES demand a_s Y / (p_s^eta * sum a p^(1 - eta)); budget-exhausting by construction"""
    p = np.asarray(p, dtype=float)
    if (p <= 0).any() or income <= 0:
        raise ValueError("Prices and income must be positive")
    eta = demand.eta
    return demand.a * income / (p ** eta * np.sum(demand.a * p ** (1 - eta)))


def price_index(p: np.ndarray, demand: DemandSide) -> float:
    """CES price index over normalized demand shares"""
    shares = demand.a / demand.a.sum()
    eta = demand.eta
    return float(np.sum(shares * p ** (1 - eta)) ** (1 / (1 - eta)))


# ========================
# SOLVER
# ========================

def _gaps(supply: np.ndarray, demand: np.ndarray) -> np.ndarray:
    return (demand - supply) / np.maximum(np.abs(supply), GAP_FLOOR)


def _evaluate(params, tech, demand, w, p):
    labor = labor_demand(p, w, tech)
    ld = labor.sum(axis=1)
    ls = labor_supply(params, w)
    y_supply = product_supply(labor, tech)
    income = float(np.sum(p * y_supply))
    y_demand = product_demand(p, demand, income)
    return labor, ld, ls, y_supply, income, y_demand


def solve_equilibrium(
    params: LaborSupplyParameters,
    tech: Technology,
    demand: DemandSide,
    solver: Optional[SolverConfig] = None,
) -> EquilibriumState:
    """
    Damped tatonnement on wages and prices

    Each step computes labor demand and supply, output, income Y = sum p y^S
    and CES demand, then updates w <- w (LD/LS)^rho and p <- p (yD/yS)^rho.
    The price level is pinned by a unit CES price index. rho is halved
    (down to rho_min) whenever the excess-demand direction reverses.

    Returns:
        EquilibriumState; converged is False when max_iter is reached

    Raises:
        ConvergenceError: When an iterate becomes non-finite
    """
    solver = solver or SolverConfig()
    n_markets, n_sectors = tech.beta.shape
    if params.n_markets != n_markets:
        raise ValueError(f"Supply has {params.n_markets} markets, technology has {n_markets}")
    if demand.a.size != n_sectors:
        raise ValueError(f"Demand has {demand.a.size} sectors, technology has {n_sectors}")

    w = np.ones(n_markets) if solver.w0 is None else np.asarray(solver.w0, dtype=float).copy()
    p = np.ones(n_sectors) if solver.p0 is None else np.asarray(solver.p0, dtype=float).copy()
    p = p / price_index(p, demand)
    rho = solver.rho
    previous_direction = None
    trace: List[float] = []
    converged = False
    iteration = 0

    for iteration in range(1, solver.max_iter + 1):
        labor, ld, ls, y_supply, income, y_demand = _evaluate(params, tech, demand, w, p)
        labor_gap = _gaps(ls, ld)
        goods_gap = _gaps(y_supply, y_demand)
        worst = max(np.max(np.abs(labor_gap)), np.max(np.abs(goods_gap)))
        if solver.record_trace:
            trace.append(float(worst))
        if worst < solver.tol:
            converged = True
            break

        direction = np.concatenate([
            np.log(np.maximum(ld, GAP_FLOOR)) - np.log(np.maximum(ls, GAP_FLOOR)),
            np.log(np.maximum(y_demand, GAP_FLOOR)) - np.log(np.maximum(y_supply, GAP_FLOOR)),
        ])
        if previous_direction is not None and float(direction @ previous_direction) < 0:
            rho = max(rho * solver.rho_decay, solver.rho_min)
        previous_direction = direction

        w = w * np.exp(rho * direction[:n_markets])
        p = p * np.exp(rho * direction[n_markets:])
        p = p / price_index(p, demand)

        if not np.isfinite(w).all() or (w <= 0).any():
            bad = int(np.flatnonzero(~np.isfinite(w) | (w <= 0))[0])
            raise ConvergenceError(f"Wage in market {bad} became non-finite at iteration {iteration}")
        if not np.isfinite(p).all() or (p <= 0).any():
            bad = int(np.flatnonzero(~np.isfinite(p) | (p <= 0))[0])
            raise ConvergenceError(f"Price in sector {bad} became non-finite at iteration {iteration}")

    labor, ld, ls, y_supply, income, y_demand = _evaluate(params, tech, demand, w, p)
    wage_bill = float(np.sum(w[:, None] * labor))
    state = EquilibriumState(
        w=w, p=p, labor=labor, labor_supply=ls, labor_demand=ld,
        y_supply=y_supply, y_demand=y_demand, income=income,
        profits=income - wage_bill, wage_bill=wage_bill,
        labor_gap=float(np.max(np.abs(_gaps(ls, ld)))),
        goods_gap=float(np.max(np.abs(_gaps(y_supply, y_demand)))),
        iterations=iteration, converged=converged, trace=trace,
    )
    if converged:
        logger.info(f"[Equilibrium] ✅ Converged in {iteration} iterations "
                    f"(labor gap {state.labor_gap:.2e}, goods gap {state.goods_gap:.2e})")
    else:
        logger.warning(f"[Equilibrium] ⚠️ No convergence after {iteration} iterations "
                       f"(labor gap {state.labor_gap:.2e}, goods gap {state.goods_gap:.2e})")
    return state


def require_converged(state: EquilibriumState) -> EquilibriumState:
    if not state.converged:
        raise ConvergenceError(
            f"Equilibrium solver stopped after {state.iterations} iterations "
            f"with gaps labor={state.labor_gap:.2e}, goods={state.goods_gap:.2e}"
        )
    return state


# ========================
# CALIBRATION
# ========================

def calibrate_betas(
    panel: WorkerPanel,
    n_markets: Optional[int] = None,
    n_sectors: Optional[int] = None,
    labor_share: float = SOLVER_SETTINGS['labor_share'],
) -> Technology:
    """
    Output elasticities from wage bills

    beta_gs is market g's share of sector s's wage bill, scaled so each
    sector's labor share equals labor_share. Sectors are integer codes.

    Raises:
        ValueError: When the panel has no sector column or a sector has no wage bill
    """
    if not panel.has_column('sector'):
        raise ValueError("Panel has no sector column")
    employed = panel.employed
    if employed['sector'].isna().any():
        raise ValueError("Employed observations are missing sector labels")

    n_markets = n_markets or panel.n_markets
    sectors = employed['sector'].astype(np.int64).to_numpy()
    n_sectors = n_sectors or int(sectors.max()) + 1
    markets = employed['gamma'].to_numpy() - 1

    wage_bill = np.zeros((n_markets, n_sectors))
    np.add.at(wage_bill, (markets, sectors), employed['omega'].to_numpy())
    totals = wage_bill.sum(axis=0)
    empty = np.flatnonzero(totals <= 0)
    if empty.size:
        raise ValueError(f"Sector {empty[0]} has no wage bill")
    return Technology(labor_share * wage_bill / totals)


def calibrate_demand_shifters(
    targets: np.ndarray,
    p: np.ndarray,
    eta: float = SOLVER_SETTINGS['eta'],
    kind: str = 'output',
) -> np.ndarray:
    """
    Invert CES demand for the shifters a, normalized to sum to 1

    Args:
        targets: Sector outputs (kind='output') or revenue shares (kind='share')
        p: Sector prices
        eta: Substitution elasticity
        kind: 'output' or 'share'
    """
    targets = np.asarray(targets, dtype=float)
    p = np.asarray(p, dtype=float)
    if targets.shape != p.shape:
        raise ValueError(f"Targets have shape {targets.shape}, prices have {p.shape}")
    if (targets <= 0).any():
        raise ValueError("Calibration targets must be positive")
    if kind == 'output':
        a = targets * p ** eta
    elif kind == 'share':
        a = targets * p ** (eta - 1)
    else:
        raise ValueError(f"Unknown target kind: {kind}")
    return a / a.sum()
