"""
End-to-end tests of the command-line pipeline and its exit codes
"""

import json

import pandas as pd
import pytest

from labornet.cli import EXIT_CONVERGENCE, EXIT_INPUT, EXIT_OK, main
from labornet.roy_equilibrium import write_parameters

SMALL_PLANTED = """\
PLANTED_WORKERS=40
PLANTED_JOBS=20
PLANTED_TYPES=2
PLANTED_MARKETS=2
PLANTED_DEGREE=10
RESTARTS=2
SWEEPS_PER_RESTART=20
GREEDY_SWEEPS=3
THREADS=1
"""


def write_run_file(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding='utf-8')
    return str(path)


@pytest.fixture
def params_path(tmp_path, small_params):
    return str(write_parameters(small_params, tmp_path / 'params.json'))


# ========================
# CLUSTER
# ========================

def test_cluster_planted_writes_outputs(tmp_path):
    out = tmp_path / 'cluster'
    config = write_run_file(tmp_path, 'cluster.env', SMALL_PLANTED)

    code = main(['cluster', '--planted', '--config', config, '--seed', '3', '--out', str(out)])

    assert code == EXIT_OK
    for name in ('edges.csv', 'partition.csv', 'inference.json', 'resolved_config.env',
                 'degree_workers.csv', 'degree_jobs.csv'):
        assert (out / name).exists()
    inference = json.loads((out / 'inference.json').read_text(encoding='utf-8'))
    assert 'recovery' in json.dumps(inference)
    echo = (out / 'resolved_config.env').read_text(encoding='utf-8').splitlines()
    assert echo == sorted(echo)
    assert 'SEED=3' in echo


CLUSTER_OUTPUTS = ('edges.csv', 'partition.csv', 'inference.json', 'degree_workers.csv', 'degree_jobs.csv')


def test_cluster_is_reproducible(tmp_path):
    config = write_run_file(tmp_path, 'cluster.env', SMALL_PLANTED)

    for name, threads in (('a', '1'), ('b', '2')):
        assert main(['cluster', '--planted', '--config', config, '--seed', '8', '--threads', threads,
                     '--out', str(tmp_path / name)]) == EXIT_OK

    for name in CLUSTER_OUTPUTS:
        assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes(), name
    inference = json.loads((tmp_path / 'a' / 'inference.json').read_text(encoding='utf-8'))
    assert 'threads' not in inference['config']

    def echo(name):
        lines = (tmp_path / name / 'resolved_config.env').read_text(encoding='utf-8').splitlines()
        return [line for line in lines if not line.startswith(('THREADS=', 'OUT='))]

    assert echo('a') == echo('b')


def test_cluster_sample_edges(tmp_path, sample_edges_path):
    out = tmp_path / 'sample'
    config = write_run_file(tmp_path, 'cluster.env', "RESTARTS=2\nSWEEPS_PER_RESTART=10\nTHREADS=1\n")

    code = main(['cluster', '--edges', str(sample_edges_path), '--config', config, '--out', str(out)])

    assert code == EXIT_OK
    partition = pd.read_csv(out / 'partition.csv')
    assert len(partition) == 13


def test_cluster_input_errors(tmp_path):
    unknown = write_run_file(tmp_path, 'bad.env', "BOGUS=1\n")

    assert main(['cluster', '--edges', str(tmp_path / 'none.csv'), '--out', str(tmp_path / 'x')]) == EXIT_INPUT
    assert main(['cluster', '--out', str(tmp_path / 'x')]) == EXIT_INPUT
    assert main(['cluster', '--planted', '--config', unknown, '--out', str(tmp_path / 'x')]) == EXIT_INPUT
    assert main(['cluster', '--planted', '--config', str(tmp_path / 'missing.env')]) == EXIT_INPUT


# ========================
# SOLVE
# ========================

def test_solve_writes_equilibrium(tmp_path, params_path):
    out = tmp_path / 'solve'

    assert main(['solve', '--params', params_path, '--out', str(out)]) == EXIT_OK

    state = json.loads((out / 'equilibrium.json').read_text(encoding='utf-8'))
    assert state['converged']
    assert (out / 'resolved_config.env').exists()


def test_solve_non_convergence_exits_two(tmp_path, params_path):
    out = tmp_path / 'capped'
    config = write_run_file(tmp_path, 'solve.env', "MAX_ITER=3\n")

    code = main(['solve', '--params', params_path, '--config', config, '--out', str(out)])

    assert code == EXIT_CONVERGENCE
    state = json.loads((out / 'equilibrium.json').read_text(encoding='utf-8'))
    assert not state['converged']


def test_solve_bad_inputs(tmp_path):
    broken = write_run_file(tmp_path, 'params.json', "{")
    bad_number = write_run_file(tmp_path, 'solve.env', "TOL=small\n")

    assert main(['solve', '--params', broken, '--out', str(tmp_path / 'a')]) == EXIT_INPUT
    assert main(['solve', '--params', str(tmp_path / 'none.json'), '--out', str(tmp_path / 'b')]) == EXIT_INPUT
    assert main(['solve', '--config', bad_number, '--out', str(tmp_path / 'c')]) == EXIT_INPUT


# ========================
# SIMULATE, ESTIMATE, SHOCK, ANALYZE
# ========================

def test_simulate_then_estimate(tmp_path, params_path):
    sim_out = tmp_path / 'sim'
    sim_config = write_run_file(tmp_path, 'sim.env', "N_WORKERS=400\nPERIODS=2\nJOBS_PER_MARKET=3\n")
    fit_out = tmp_path / 'fit'
    fit_config = write_run_file(tmp_path, 'fit.env', "JITTER_STARTS=1\nMAX_OUTER=10\n")

    assert main(['simulate', '--params', params_path, '--config', sim_config, '--seed', '4',
                 '--out', str(sim_out)]) == EXIT_OK
    assert main(['estimate', '--panel', str(sim_out / 'panel.csv'), '--config', fit_config,
                 '--out', str(fit_out)]) == EXIT_OK

    panel = pd.read_csv(sim_out / 'panel.csv', dtype={'worker_id': str})
    assert panel['worker_id'].nunique() == 400
    estimates = json.loads((fit_out / 'estimates.json').read_text(encoding='utf-8'))
    assert 'log_likelihood' in json.dumps(estimates)
    assert (fit_out / 'parameters.json').exists()
    assert (fit_out / 'skill_correlation.csv').exists()
    earnings = pd.read_csv(fit_out / 'earnings_correlation.csv')
    assert earnings.shape == (3, 3)


def test_simulate_is_reproducible(tmp_path, params_path):
    config = write_run_file(tmp_path, 'sim.env', "N_WORKERS=100\nPERIODS=2\n")

    for name in ('a', 'b'):
        assert main(['simulate', '--params', params_path, '--config', config, '--seed', '12',
                     '--out', str(tmp_path / name)]) == EXIT_OK

    assert (tmp_path / 'a' / 'panel.csv').read_bytes() == (tmp_path / 'b' / 'panel.csv').read_bytes()


def test_shock_then_analyze(tmp_path, params_path):
    shock_out = tmp_path / 'shock'
    config = write_run_file(tmp_path, 'shock.env', "N_WORKERS=300\nPERIODS=2\nJOBS_PER_MARKET=3\n")
    analyze_out = tmp_path / 'analyze'

    assert main(['shock', '--params', params_path, '--shock', 'multiply:1=2', '--config', config,
                 '--out', str(shock_out)]) == EXIT_OK
    for name in ('manifest.json', 'panel_pre.csv', 'panel_post.csv', 'regressions.csv'):
        assert (shock_out / name).exists()

    assert main(['analyze', '--pre', str(shock_out / 'panel_pre.csv'), '--post', str(shock_out / 'panel_post.csv'),
                 '--out', str(analyze_out)]) == EXIT_OK
    for name in ('hhi_workers.csv', 'hhi_jobs.csv', 'regressions.csv', 'resolved_config.env'):
        assert (analyze_out / name).exists()


def test_shock_rejects_malformed_spec(tmp_path, params_path):
    code = main(['shock', '--params', params_path, '--shock', 'scale:1=2', '--out', str(tmp_path / 'x')])

    assert code == EXIT_INPUT


def test_unknown_subcommand_exits_through_argparse():
    with pytest.raises(SystemExit):
        main(['explode'])
