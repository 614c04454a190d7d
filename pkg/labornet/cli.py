"""
Command-line pipeline driver
Every stage is a subcommand; each run writes its artifacts plus resolved_config.env to --out
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional

import numpy as np
import pandas as pd

from . import blockmodel, metrics, shock_lab, supply_mle
from .graph_core import degree_histogram, load_edge_list, write_edge_list, write_partition
from .panel import read_panel_csv, write_panel_csv
from .roy_equilibrium import (
    ConvergenceError,
    DemandSide,
    LaborSupplyParameters,
    ModelParameters,
    SolverConfig,
    calibrate_betas,
    calibrate_demand_shifters,
    read_parameters,
    require_converged,
    solve_equilibrium,
    write_parameters,
)
from .shared.config import (
    ANALYSIS_SETTINGS,
    DEFAULT_SEED,
    ESTIMATION_SETTINGS,
    INFERENCE_SETTINGS,
    LOG_LEVEL,
    MIN_JOB_WORKERS,
    SIMULATION_SETTINGS,
    SOLVER_SETTINGS,
    THREADS,
    as_float,
    as_int,
    load_run_config,
    write_config_echo,
)
from .shared.rng import substream

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CONVERGENCE = 2

COMMON_KEYS = ['seed', 'threads', 'out']
SOLVER_KEYS = ['rho', 'tol', 'max_iter', 'rho_decay', 'rho_min', 'record_trace']
SIMULATION_KEYS = ['n_workers', 'periods', 'separation_rate', 'jobs_per_market', 'paired']

ALLOWED_KEYS: Dict[str, List[str]] = {
    'cluster': COMMON_KEYS + [
        'edges', 'planted', 'min_job_workers', 'restarts', 'sweeps_per_restart', 'greedy_sweeps',
        't_start', 't_end', 'schedule', 'epsilon', 'min_types', 'max_types', 'min_markets', 'max_markets',
        'planted_workers', 'planted_jobs', 'planted_types', 'planted_markets', 'planted_degree', 'planted_ratio',
    ],
    'solve': COMMON_KEYS + ['params'] + SOLVER_KEYS,
    'estimate': COMMON_KEYS + [
        'panel', 'zero_cell_epsilon', 'grad_tol', 'max_outer', 'jitter_starts', 'k', 'k_grid',
        'labor_share', 'eta', 'sensitivity',
    ] + SOLVER_KEYS,
    'simulate': COMMON_KEYS + ['params'] + SIMULATION_KEYS + SOLVER_KEYS,
    'shock': COMMON_KEYS + ['params', 'shock'] + SIMULATION_KEYS + SOLVER_KEYS,
    'sweep': COMMON_KEYS + ['params', 'factors', 'misclassification_step', 'sweep_seeds']
    + SIMULATION_KEYS + SOLVER_KEYS,
    'analyze': COMMON_KEYS + [
        'pre', 'post', 'worker_col', 'job_col', 'label_col', 'top_n', 'misclassification_step', 'sweep_seeds',
    ],
}


# ========================
# HELPERS
# ========================

def configure_logging(level: Optional[str] = None) -> None:
    """Install one stderr handler at the LABORNET_LOG level"""
    level = (level or LOG_LEVEL).upper()
    if level not in ('DEBUG', 'INFO', 'WARNING', 'ERROR'):
        level = 'INFO'
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter('%(asctime)s %(levelname)s %(name)s %(message)s'))
    root.addHandler(handler)
    root.setLevel(level)


def _as_bool(config: Mapping[str, str], key: str, default: bool) -> bool:
    raw = config.get(key)
    if raw in (None, ''):
        return default
    value = str(raw).strip().lower()
    if value in ('1', 'true', 'yes', 'on'):
        return True
    if value in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"Config key {key} must be a boolean, got {raw!r}")


def _as_floats(config: Mapping[str, str], key: str) -> Optional[List[float]]:
    raw = config.get(key)
    if raw in (None, ''):
        return None
    try:
        return [float(v) for v in str(raw).split(',') if v.strip()]
    except ValueError:
        raise ValueError(f"Config key {key} must be a comma-separated list of numbers, got {raw!r}")


def _require(config: Mapping[str, str], key: str) -> str:
    value = config.get(key)
    if not value:
        raise ValueError(f"Missing required config key: {key}")
    return value


def _write_json(payload: Dict[str, Any], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding='utf-8')
    return path


def _resolve(args: argparse.Namespace, command: str) -> Dict[str, str]:
    """Merge the config file with command-line flags and fill run-wide defaults"""
    overrides = {key: value for key, value in vars(args).items()
                 if key in ALLOWED_KEYS[command] and value not in (None, False)}
    config = load_run_config(args.config, ALLOWED_KEYS[command], overrides)
    config.setdefault('seed', str(DEFAULT_SEED))
    config.setdefault('threads', str(THREADS))
    config.setdefault('out', str(Path('out') / command))
    return config


def _solver_config(config: Mapping[str, str]) -> SolverConfig:
    return SolverConfig(
        rho=as_float(config, 'rho', SOLVER_SETTINGS['rho']),
        tol=as_float(config, 'tol', SOLVER_SETTINGS['tol']),
        max_iter=as_int(config, 'max_iter', SOLVER_SETTINGS['max_iter']),
        rho_decay=as_float(config, 'rho_decay', SOLVER_SETTINGS['rho_decay']),
        rho_min=as_float(config, 'rho_min', SOLVER_SETTINGS['rho_min']),
        record_trace=_as_bool(config, 'record_trace', False),
    )


def _simulation_config(config: Mapping[str, str], seed: int) -> shock_lab.SimulationConfig:
    raw_rate = config.get('separation_rate')
    return shock_lab.SimulationConfig(
        n_workers=as_int(config, 'n_workers', SIMULATION_SETTINGS['n_workers']),
        periods=as_int(config, 'periods', SIMULATION_SETTINGS['periods']),
        separation_rate=None if raw_rate in (None, '') else as_float(config, 'separation_rate', 0.0),
        jobs_per_market=as_int(config, 'jobs_per_market', SIMULATION_SETTINGS['jobs_per_market']),
        seed=seed,
        paired=_as_bool(config, 'paired', True),
    )


def _classification_regressions(experiment: shock_lab.ShockExperiment) -> Dict[str, metrics.RegressionResult]:
    """Bartik regressions per available classification, plus the model-fit regression"""
    pre, post = experiment.pre_panel, experiment.post_panel
    results = {'types_markets': metrics.bartik_regression(pre, post, 'iota', 'gamma').result}
    if pre.has_column('occupation') and pre.has_column('sector'):
        try:
            results['occupations_sectors'] = metrics.bartik_regression(pre, post, 'occupation', 'sector').result
        except ValueError as e:
            logger.warning(f"[CLI] ⚠️ Occupation/sector regression skipped: {e}")

    actual = metrics.delta_outcome(pre, post, 'iota')
    predicted = pd.Series(shock_lab.predicted_type_changes(experiment)).reindex(actual.index)
    sizes = pre.frame.groupby('iota')['worker_id'].nunique().reindex(actual.index)
    try:
        results['model_fit'] = metrics.model_fit_regression(actual.to_numpy(), predicted.to_numpy(), sizes.to_numpy())
    except ValueError as e:
        logger.warning(f"[CLI] ⚠️ Model-fit regression skipped: {e}")
    return results


# ========================
# SUBCOMMANDS
# ========================

def process_cluster(args: argparse.Namespace) -> Dict[str, Any]:
    """
    Load (or plant) a match network, infer the MDL partition and write results

    Returns:
        Summary with output paths and the selected group counts
    """
    config = _resolve(args, 'cluster')
    seed = as_int(config, 'seed', DEFAULT_SEED)
    out_dir = Path(config['out'])
    planted = _as_bool(config, 'planted', False)

    truth = None
    if planted:
        benchmark = blockmodel.make_planted_benchmark(
            n_workers=as_int(config, 'planted_workers', 200),
            n_jobs=as_int(config, 'planted_jobs', 100),
            n_types=as_int(config, 'planted_types', 4),
            n_markets=as_int(config, 'planted_markets', 3),
            mean_degree=as_float(config, 'planted_degree', 6.0),
            ratio=as_float(config, 'planted_ratio', 10.0),
            rng=substream(seed, 'cli', 'planted'),
        )
        graph = benchmark.sample(substream(seed, 'cli', 'planted_sample'))
        truth = benchmark.partition
        write_edge_list(graph, out_dir / 'edges.csv')
    else:
        graph = load_edge_list(_require(config, 'edges'), as_int(config, 'min_job_workers', MIN_JOB_WORKERS))

    bounds = None
    if any(config.get(k) for k in ('min_types', 'max_types', 'min_markets', 'max_markets')):
        bounds = (
            as_int(config, 'min_types', 1),
            as_int(config, 'max_types', graph.n_workers),
            as_int(config, 'min_markets', 1),
            as_int(config, 'max_markets', graph.n_jobs),
        )
    inference = blockmodel.InferenceConfig(
        restarts=as_int(config, 'restarts', INFERENCE_SETTINGS['restarts']),
        sweeps_per_restart=as_int(config, 'sweeps_per_restart', INFERENCE_SETTINGS['sweeps_per_restart']),
        greedy_sweeps=as_int(config, 'greedy_sweeps', INFERENCE_SETTINGS['greedy_sweeps']),
        seed=seed,
        group_bounds=bounds,
        t_start=as_float(config, 't_start', INFERENCE_SETTINGS['t_start']),
        t_end=as_float(config, 't_end', INFERENCE_SETTINGS['t_end']),
        schedule=config.get('schedule') or INFERENCE_SETTINGS['schedule'],
        epsilon=as_float(config, 'epsilon', INFERENCE_SETTINGS['proposal_epsilon']),
        threads=as_int(config, 'threads', THREADS),
    )
    result = blockmodel.infer_partition(graph, inference)

    extra: Dict[str, Any] = {'n_workers': graph.n_workers, 'n_jobs': graph.n_jobs, 'total_edges': graph.total_edges}
    if truth is not None:
        extra['recovery'] = blockmodel.compare_partitions(truth, result.partition)
        logger.info(f"[CLI] Planted recovery ARI: workers {extra['recovery']['workers']['ari']:.3f}, "
                    f"jobs {extra['recovery']['jobs']['ari']:.3f}")

    paths = {
        'partition': write_partition(graph, result.partition, out_dir / 'partition.csv'),
        'inference': blockmodel.write_inference_result(result, out_dir / 'inference.json', extra),
        'config': write_config_echo(config, out_dir),
    }
    degree_histogram(graph.worker_degrees).to_csv(out_dir / 'degree_workers.csv', index=False)
    degree_histogram(graph.job_degrees).to_csv(out_dir / 'degree_jobs.csv', index=False)
    return {'n_types': result.n_types, 'n_markets': result.n_markets,
            'description_length_bits': result.description_length, 'paths': paths}


def process_solve(args: argparse.Namespace) -> Dict[str, Any]:
    """
    Solve the equilibrium of a parameter bundle

    Raises:
        ConvergenceError: After writing the state when the solver did not converge
    """
    config = _resolve(args, 'solve')
    out_dir = Path(config['out'])
    params = read_parameters(_require(config, 'params'))
    state = solve_equilibrium(params.supply, params.technology, params.demand, _solver_config(config))

    path = _write_json(state.to_dict(), out_dir / 'equilibrium.json')
    write_config_echo(config, out_dir)
    require_converged(state)
    return {'iterations': state.iterations, 'paths': {'equilibrium': path}}


def process_estimate(args: argparse.Namespace) -> Dict[str, Any]:
    """
    Fit labor-supply parameters to a panel and normalize them

    With sector labels in the panel the run also calibrates technology and
    demand and writes a complete parameter bundle; a k grid selects k by the
    observed employment rate.
    """
    config = _resolve(args, 'estimate')
    seed = as_int(config, 'seed', DEFAULT_SEED)
    out_dir = Path(config['out'])
    panel = read_panel_csv(_require(config, 'panel'))

    fit_config = supply_mle.FitConfig(
        zero_cell_epsilon=as_float(config, 'zero_cell_epsilon', ESTIMATION_SETTINGS['zero_cell_epsilon']),
        grad_tol=as_float(config, 'grad_tol', ESTIMATION_SETTINGS['grad_tol']),
        max_outer=as_int(config, 'max_outer', ESTIMATION_SETTINGS['max_outer']),
        jitter_starts=as_int(config, 'jitter_starts', ESTIMATION_SETTINGS['jitter_starts']),
        seed=seed,
    )
    estimates = supply_mle.fit_supply_parameters(panel, fit_config)
    if _as_bool(config, 'sensitivity', False):
        supply_mle.zero_cell_sensitivity(panel, estimates, fit_config)

    k = as_float(config, 'k', 1.0)
    paths: Dict[str, Path] = {}
    if panel.has_column('sector'):
        technology = calibrate_betas(panel, labor_share=as_float(config, 'labor_share', SOLVER_SETTINGS['labor_share']))
        employed = panel.employed
        sectors = employed['sector'].astype(np.int64)
        wage_bill = employed['omega'].groupby(sectors).sum().reindex(range(technology.n_sectors), fill_value=0.0)
        eta = as_float(config, 'eta', SOLVER_SETTINGS['eta'])
        demand = DemandSide(
            calibrate_demand_shifters(wage_bill.to_numpy() / wage_bill.sum(), np.ones(technology.n_sectors),
                                      eta, kind='share'),
            eta,
        )
        grid = _as_floats(config, 'k_grid')
        if grid:
            k, table = supply_mle.choose_k(grid, estimates, technology, demand,
                                           supply_mle.observed_employment_rate(panel), _solver_config(config))
            paths['k_selection'] = metrics.write_table(table, out_dir / 'k_selection.csv')
        supply_mle.attach_normalization(estimates, k)
        bundle = ModelParameters(
            supply=_supply_from(estimates),
            technology=technology,
            demand=demand,
            k=k,
            sigma=estimates.sigma,
            separation_rate=estimates.separation_rate or 0.0,
        )
        paths['parameters'] = write_parameters(bundle, out_dir / 'parameters.json')
    else:
        logger.warning("[CLI] ⚠️ Panel has no sector labels; skipping technology calibration")
        supply_mle.attach_normalization(estimates, k)

    paths['estimates'] = _write_json(estimates.to_dict(), out_dir / 'estimates.json')
    if estimates.psi.shape[0] >= 2 and estimates.psi.shape[1] >= 2:
        correlation = supply_mle.skill_correlation_matrix(estimates.psi)
        paths['skill_correlation'] = metrics.write_table(pd.DataFrame(correlation.matrix),
                                                         out_dir / 'skill_correlation.csv')
        paths['skill_histogram'] = metrics.write_table(correlation.histogram_frame(), out_dir / 'skill_histogram.csv')
        # earnings levels keep the common wage profile that normalized psi divides out
        earnings = supply_mle.skill_correlation_matrix(estimates.phi)
        paths['earnings_correlation'] = metrics.write_table(pd.DataFrame(earnings.matrix),
                                                            out_dir / 'earnings_correlation.csv')
        logger.info(f"[CLI] Mean off-diagonal correlation: skills {correlation.mean_off_diagonal:.3f}, "
                    f"earnings levels {earnings.mean_off_diagonal:.3f}")
    paths['config'] = write_config_echo(config, out_dir)
    return {'log_likelihood': estimates.log_likelihood, 'k': k, 'paths': paths}


def _supply_from(estimates: supply_mle.EstimatedParameters) -> LaborSupplyParameters:
    return LaborSupplyParameters(psi=estimates.psi, xi=estimates.xi, nu=estimates.nu, masses=estimates.masses)


def process_simulate(args: argparse.Namespace) -> Dict[str, Any]:
    """Solve an economy and emit one simulated panel"""
    config = _resolve(args, 'simulate')
    seed = as_int(config, 'seed', DEFAULT_SEED)
    out_dir = Path(config['out'])
    params = read_parameters(_require(config, 'params'))
    sim = _simulation_config(config, seed)

    state = require_converged(solve_equilibrium(params.supply, params.technology, params.demand,
                                                _solver_config(config)))
    panel = shock_lab.simulate_panel(
        params.supply, params.sigma, state.w,
        periods=sim.periods,
        n_workers=sim.n_workers,
        separation_rate=params.separation_rate if sim.separation_rate is None else sim.separation_rate,
        seed=seed,
        jobs_per_market=sim.jobs_per_market,
        sector_given_market=params.sector_given_market,
        occupation_given_type=params.occupation_given_type,
    )
    paths = {
        'panel': write_panel_csv(panel, out_dir / 'panel.csv'),
        'equilibrium': _write_json(state.to_dict(), out_dir / 'equilibrium.json'),
        'config': write_config_echo(config, out_dir),
    }
    return {'observations': len(panel.frame), 'paths': paths}


def process_shock(args: argparse.Namespace) -> Dict[str, Any]:
    """Run one pre/post shock experiment and write its directory"""
    config = _resolve(args, 'shock')
    seed = as_int(config, 'seed', DEFAULT_SEED)
    out_dir = Path(config['out'])
    params = read_parameters(_require(config, 'params'))
    shock = shock_lab.parse_shock(_require(config, 'shock'))

    experiment = shock_lab.run_shock_experiment(params, shock, _simulation_config(config, seed),
                                                _solver_config(config))
    paths: Dict[str, Path] = dict(shock_lab.write_experiment(experiment, out_dir))
    paths['regressions'] = metrics.write_regression_table(_classification_regressions(experiment),
                                                          out_dir / 'regressions.csv')
    paths['config'] = write_config_echo(config, out_dir)
    return {'shock': shock.label, 'paths': paths}


def process_sweep(args: argparse.Namespace) -> Dict[str, Any]:
    """
    Positive and negative shock to every sector, plus an optional misclassification surface

    Per-shock failures are reported in summary.csv; the run fails only when every shock fails.
    """
    config = _resolve(args, 'sweep')
    seed = as_int(config, 'seed', DEFAULT_SEED)
    threads = as_int(config, 'threads', THREADS)
    out_dir = Path(config['out'])
    params = read_parameters(_require(config, 'params'))
    factors = _as_floats(config, 'factors') or [2.0, 0.5]

    shocks = shock_lab.default_shocks(params.technology.n_sectors, factors)
    outcomes = shock_lab.shock_sweep(params, shocks, _simulation_config(config, seed),
                                     _solver_config(config), threads)
    succeeded = [o for o in outcomes if o.ok]
    if not succeeded:
        raise ConvergenceError("Every shock in the sweep failed")

    rows: List[Dict[str, Any]] = []
    for index, outcome in enumerate(outcomes):
        if not outcome.ok:
            rows.append({'label': outcome.shock.label, 'classification': '', 'status': 'failed',
                         'error': outcome.error})
            continue
        shock_lab.write_experiment(outcome.experiment, out_dir / f"shock_{index:03d}")
        for name, result in _classification_regressions(outcome.experiment).items():
            rows.append({'label': outcome.shock.label, 'classification': name, 'status': 'ok', 'error': '',
                         'slope': result.slope, 'r2': result.r2, 'n': result.n})
    paths = {'summary': metrics.write_table(pd.DataFrame(rows), out_dir / 'summary.csv')}

    step = config.get('misclassification_step')
    if step:
        experiment = succeeded[0].experiment
        surface = metrics.misclassification_sweep(
            experiment.pre_panel, experiment.post_panel,
            step=as_float(config, 'misclassification_step', ANALYSIS_SETTINGS['misclassification_step']),
            seeds=as_int(config, 'sweep_seeds', ANALYSIS_SETTINGS['sweep_seeds']),
            seed=seed,
            threads=threads,
        )
        paths['surface'] = metrics.write_table(surface, out_dir / 'surface.csv')
    paths['config'] = write_config_echo(config, out_dir)
    return {'experiments': len(succeeded), 'failed': len(outcomes) - len(succeeded), 'paths': paths}


def process_analyze(args: argparse.Namespace) -> Dict[str, Any]:
    """Concentration, crosstabs, flows and Bartik regressions on existing panels"""
    config = _resolve(args, 'analyze')
    seed = as_int(config, 'seed', DEFAULT_SEED)
    threads = as_int(config, 'threads', THREADS)
    out_dir = Path(config['out'])
    worker_col = config.get('worker_col') or 'iota'
    job_col = config.get('job_col') or 'gamma'
    pre = read_panel_csv(_require(config, 'pre'))
    for column in (worker_col, job_col):
        if not pre.has_column(column):
            raise ValueError(f"Panel has no {column} column")

    paths: Dict[str, Path] = {
        'hhi_workers': metrics.write_table(metrics.hhi_profile(pre, worker_col, job_col), out_dir / 'hhi_workers.csv'),
        'hhi_jobs': metrics.write_table(metrics.hhi_profile(pre, job_col, worker_col), out_dir / 'hhi_jobs.csv'),
    }
    label_col = config.get('label_col')
    if label_col:
        crosstab = metrics.classification_crosstab(pre, worker_col, label_col,
                                                   as_int(config, 'top_n', ANALYSIS_SETTINGS['crosstab_top_n']))
        paths['crosstab'] = metrics.write_table(crosstab, out_dir / 'crosstab.csv')

    if config.get('post'):
        post = read_panel_csv(config['post'])
        regressions = {'bartik': metrics.bartik_regression(pre, post, worker_col, job_col).result}
        paths['regressions'] = metrics.write_regression_table(regressions, out_dir / 'regressions.csv')

        if pre.has_column('job_id') and post.has_column('job_id'):
            in_sample, out_sample = metrics.job_transitions(pre), metrics.job_transitions(post)
            if len(in_sample) and len(out_sample):
                markets = metrics.market_of_jobs(pre, job_col).combine_first(metrics.market_of_jobs(post, job_col))
                employment = metrics.job_employment(pre)
                rows = [{'norm': norm, 'error': metrics.flow_prediction_error(markets, in_sample, out_sample,
                                                                              employment, norm)}
                        for norm in metrics.FLOW_NORMS]
                paths['flows'] = metrics.write_table(pd.DataFrame(rows), out_dir / 'flow_errors.csv')

        step = config.get('misclassification_step')
        if step:
            surface = metrics.misclassification_sweep(
                pre, post,
                step=as_float(config, 'misclassification_step', ANALYSIS_SETTINGS['misclassification_step']),
                seeds=as_int(config, 'sweep_seeds', ANALYSIS_SETTINGS['sweep_seeds']),
                seed=seed, worker_col=worker_col, job_col=job_col, threads=threads,
            )
            paths['surface'] = metrics.write_table(surface, out_dir / 'surface.csv')

    paths['config'] = write_config_echo(config, out_dir)
    return {'paths': paths}


PROCESSORS: Dict[str, Callable[[argparse.Namespace], Dict[str, Any]]] = {
    'cluster': process_cluster,
    'solve': process_solve,
    'estimate': process_estimate,
    'simulate': process_simulate,
    'shock': process_shock,
    'sweep': process_sweep,
    'analyze': process_analyze,
}


# ========================
# ENTRY POINT
# ========================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='labornet', description='Worker/job network clustering and shock pipeline')
    subparsers = parser.add_subparsers(dest='command', required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument('--config', help='KEY=VALUE run file')
        sub.add_argument('--seed', type=int, help='Root seed')
        sub.add_argument('--threads', type=int, help='Worker processes')
        sub.add_argument('--out', help='Output directory')
        return sub

    cluster = add('cluster', 'Infer worker types and markets from a match network')
    cluster.add_argument('--edges', help='Edge list CSV (worker_id,job_id[,count])')
    cluster.add_argument('--planted', action='store_true', help='Cluster the planted benchmark instead')

    for name, help_text in (('solve', 'Solve the equilibrium of a parameter bundle'),
                            ('simulate', 'Simulate a worker panel from a parameter bundle'),
                            ('sweep', 'Shock every sector up and down')):
        add(name, help_text).add_argument('--params', help='Parameter bundle JSON')

    estimate = add('estimate', 'Estimate labor-supply parameters from a panel')
    estimate.add_argument('--panel', help='Panel CSV')

    shock = add('shock', 'Run one pre/post demand shock experiment')
    shock.add_argument('--params', help='Parameter bundle JSON')
    shock.add_argument('--shock', help="Shock, e.g. 'multiply:3=0.5'")

    analyze = add('analyze', 'Concentration, flow and Bartik analyses of panels')
    analyze.add_argument('--pre', help='Pre-shock panel CSV')
    analyze.add_argument('--post', help='Post-shock panel CSV')
    return parser


def handle(command: str, args: argparse.Namespace) -> int:
    """
    Run one subcommand and map failures to exit codes

    Returns:
        0 on success, 1 on input errors, 2 on numerical non-convergence
    """
    try:
        logger.info(f"[CLI] Starting {command}")
        result = PROCESSORS[command](args)
        logger.info(f"[CLI] ✅ {command} finished")
        for name, path in result.get('paths', {}).items():
            logger.info(f"[CLI]   {name}: {path}")
        return EXIT_OK

    except ConvergenceError as e:
        logger.error(f"[CLI] ❌ Convergence Error: {e}")
        return EXIT_CONVERGENCE

    except (ValueError, OSError) as e:
        logger.error(f"[CLI] ❌ Input Error: {e}")
        return EXIT_INPUT

    except Exception as e:
        logger.error(f"[CLI] ❌ Error: {e}")
        return EXIT_INPUT


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()
    return handle(args.command, args)
