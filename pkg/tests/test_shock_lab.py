"""
Tests for panel simulation and shock experiments
"""

import numpy as np
import pytest

from labornet.panel import write_panel_csv
from labornet.roy_equilibrium import DemandSide, choice_probabilities
from labornet.shock_lab import (
    ShockSpec,
    SimulationConfig,
    apply_shock,
    default_shocks,
    draw_worker_types,
    model_class_shocks,
    parse_shock,
    predicted_type_changes,
    run_shock_experiment,
    shock_sweep,
    simulate_panel,
    sweep_summary,
    write_experiment,
)
from labornet.shared.rng import substream


# ========================
# SHOCKS
# ========================

def test_parse_shock():
    shock = parse_shock("multiply:1=0.5,0=2")

    assert shock.kind == 'multiply'
    assert shock.targets == {1: 0.5, 0: 2.0}
    assert shock.label == 'multiply:0=2,1=0.5'


@pytest.mark.parametrize("text", ["multiply", "multiply:1", "scale:1=2", "multiply:1=-2", "set:a=1"])
def test_parse_shock_rejects_malformed_text(text):
    with pytest.raises(ValueError):
        parse_shock(text)


def test_apply_shock(small_demand):
    multiplied = apply_shock(small_demand, ShockSpec('multiply', {1: 2.0}))
    set_level = apply_shock(small_demand, ShockSpec('set', {0: 3.0}))

    assert multiplied.a.tolist() == [0.6, 0.8]
    assert set_level.a.tolist() == [3.0, 0.4]
    assert small_demand.a.tolist() == [0.6, 0.4]
    with pytest.raises(ValueError, match="unknown sector 5"):
        apply_shock(small_demand, ShockSpec('multiply', {5: 2.0}))


def test_default_shocks_cover_every_sector():
    shocks = default_shocks(3)

    assert len(shocks) == 6
    assert shocks[0].label == 'sector0_x2'
    assert shocks[1].label == 'sector0_x0.5'


# ========================
# SIMULATION
# ========================

def test_no_separation_keeps_first_choice(small_supply):
    panel = simulate_panel(small_supply, np.full((3, 2), 0.1), np.ones(2), periods=4, n_workers=50,
                           separation_rate=0.0, seed=1, jobs_per_market=3)
    frame = panel.frame

    assert (frame.groupby('worker_id')['gamma'].nunique() == 1).all()
    assert (frame.groupby('worker_id')['job_id'].nunique(dropna=False) == 1).all()
    assert (frame.loc[frame['t'] > 1, 'c'] == 0).all()


def test_zero_noise_earnings_equal_levels(small_supply):
    w = np.array([1.3, 0.8])
    panel = simulate_panel(small_supply, np.zeros((3, 2)), w, periods=2, n_workers=100, separation_rate=0.5, seed=2)
    employed = panel.employed

    expected = small_supply.psi[employed['iota'], employed['gamma'] - 1] * w[employed['gamma'] - 1]
    assert employed['omega'].to_numpy() == pytest.approx(expected)
    assert panel.frame.loc[panel.frame['gamma'] == 0, 'omega'].isna().all()


def test_panel_layout(small_supply):
    panel = simulate_panel(small_supply, np.full((3, 2), 0.1), np.ones(2), periods=2, n_workers=12,
                           separation_rate=0.3, seed=3, jobs_per_market=2,
                           sector_given_market=np.array([[1.0, 0.0], [0.0, 1.0]]))
    frame = panel.frame

    assert frame['worker_id'].iloc[0] == '00'
    assert list(frame[['worker_id', 't']].itertuples(index=False)) == sorted(
        frame[['worker_id', 't']].itertuples(index=False))
    employed = frame[frame['gamma'] > 0]
    assert (employed['job_id'].str.split(':').str[0].astype(int) == employed['gamma']).all()
    assert (employed['sector'] == employed['gamma'] - 1).all()
    assert frame.loc[frame['gamma'] == 0, 'sector'].isna().all()


def test_simulation_validation(small_supply):
    with pytest.raises(ValueError, match="sigma"):
        simulate_panel(small_supply, np.zeros((2, 2)), np.ones(2), n_workers=5)
    with pytest.raises(ValueError, match="worker types"):
        simulate_panel(small_supply, np.zeros((3, 2)), np.ones(2), n_workers=5, worker_types=np.zeros(4))


def test_same_seed_gives_identical_bytes(tmp_path, small_supply):
    kwargs = dict(periods=3, n_workers=200, separation_rate=0.3, seed=9, jobs_per_market=4,
                  sector_given_market=np.array([[0.5, 0.5], [0.2, 0.8]]))
    first = simulate_panel(small_supply, np.full((3, 2), 0.2), np.ones(2), **kwargs)
    second = simulate_panel(small_supply, np.full((3, 2), 0.2), np.ones(2), **kwargs)

    a = write_panel_csv(first, tmp_path / 'a.csv').read_bytes()
    b = write_panel_csv(second, tmp_path / 'b.csv').read_bytes()

    assert a == b


@pytest.mark.slow
def test_choice_shares_match_probabilities(small_supply):
    n_workers = 100_000
    w = np.array([1.1, 0.9])
    panel = simulate_panel(small_supply, np.zeros((3, 2)), w, periods=1, n_workers=n_workers, seed=4)
    frame = panel.frame
    probabilities = choice_probabilities(small_supply, w)

    for iota in range(3):
        chosen = frame.loc[frame['iota'] == iota, 'gamma'].to_numpy()
        shares = np.bincount(chosen, minlength=3) / chosen.size
        se = np.sqrt(probabilities[iota] * (1 - probabilities[iota]) / chosen.size)
        assert np.all(np.abs(shares - probabilities[iota]) <= 4 * se)


# ========================
# EXPERIMENTS
# ========================

SMALL_SIM = SimulationConfig(n_workers=300, periods=2, jobs_per_market=3, seed=21)


def test_null_shock_changes_nothing(small_params):
    experiment = run_shock_experiment(small_params, ShockSpec('multiply', {0: 1.0}), SMALL_SIM)

    assert experiment.post.w == pytest.approx(experiment.pre.w, rel=1e-6)
    shocks = model_class_shocks(experiment)
    assert np.abs(shocks['markets']).max() < 1e-6
    assert np.abs(shocks['sectors']).max() < 1e-6


def test_positive_shock_raises_sector_output(small_params):
    experiment = run_shock_experiment(small_params, ShockSpec('multiply', {1: 2.0}), SMALL_SIM)

    shocks = model_class_shocks(experiment)
    assert shocks['sectors'][1] > 0
    assert experiment.demand_post.a.tolist() == [0.6, 0.8]


def test_paired_panels_share_worker_types(small_params):
    paired = run_shock_experiment(small_params, ShockSpec('multiply', {1: 2.0}), SMALL_SIM)
    unpaired_sim = SimulationConfig(n_workers=300, periods=2, jobs_per_market=3, seed=21, paired=False)
    unpaired = run_shock_experiment(small_params, ShockSpec('multiply', {1: 2.0}), unpaired_sim)

    def types(panel):
        return panel.frame.groupby('worker_id')['iota'].first()

    assert types(paired.pre_panel).equals(types(paired.post_panel))
    assert not types(unpaired.pre_panel).equals(types(unpaired.post_panel))
    assert types(paired.pre_panel).equals(types(unpaired.pre_panel))
    assert paired.stacked.periods == [1, 2, 3, 4]


def test_worker_types_follow_named_stream(small_params):
    experiment = run_shock_experiment(small_params, ShockSpec('multiply', {0: 2.0}), SMALL_SIM)

    expected = draw_worker_types(small_params.supply.masses, 300, substream(21, 'shock_lab', 'types', 0))
    observed = experiment.pre_panel.frame.groupby('worker_id')['iota'].first().to_numpy()
    assert observed.tolist() == expected.tolist()


def test_write_experiment(tmp_path, small_params):
    experiment = run_shock_experiment(small_params, ShockSpec('set', {0: 1.2}), SMALL_SIM)

    paths = write_experiment(experiment, tmp_path / 'exp')

    assert sorted(p.name for p in paths.values()) == ['manifest.json', 'panel_post.csv', 'panel_pre.csv']
    manifest = experiment.manifest()
    assert manifest['shock']['label'] == 'set:0=1.2'
    assert manifest['a_post'] == [1.2, 0.4]
    assert manifest['pre']['converged'] and manifest['post']['converged']
    assert {'occupation', 'sector', 'job_id'} <= set(experiment.pre_panel.frame.columns)


def test_sweep_runs_every_shock_deterministically(small_params):
    shocks = default_shocks(2)
    sim = SimulationConfig(n_workers=100, periods=1, jobs_per_market=2, seed=5)

    first = shock_sweep(small_params, shocks, sim)
    second = shock_sweep(small_params, shocks, sim)

    assert len(first) == 4
    assert all(outcome.ok for outcome in first)
    assert len({outcome.seed for outcome in first}) == 4
    for a, b in zip(first, second):
        assert a.seed == b.seed
        assert a.experiment.post_panel.frame.equals(b.experiment.post_panel.frame)
    summary = sweep_summary(first)
    assert summary['label'].tolist() == [s.label for s in shocks]
    assert (summary['status'] == 'ok').all()


def test_sweep_records_failures(small_params):
    shocks = [ShockSpec('multiply', {0: 2.0}), ShockSpec('multiply', {7: 2.0})]

    outcomes = shock_sweep(small_params, shocks, SimulationConfig(n_workers=50, periods=1, seed=2))

    assert outcomes[0].ok
    assert not outcomes[1].ok
    assert "unknown sector 7" in outcomes[1].error
    assert sweep_summary(outcomes)['status'].tolist() == ['ok', 'failed']


def test_demand_side_is_not_renormalized(small_demand):
    shocked = apply_shock(small_demand, ShockSpec('multiply', {0: 10.0}))

    assert isinstance(shocked, DemandSide)
    assert shocked.a.sum() == pytest.approx(6.4)


def test_predicted_type_changes(small_params):
    null = run_shock_experiment(small_params, ShockSpec('multiply', {0: 1.0}), SMALL_SIM)
    shocked = run_shock_experiment(small_params, ShockSpec('multiply', {1: 2.0}), SMALL_SIM)

    assert np.abs(predicted_type_changes(null)).max() < 1e-6
    changes = predicted_type_changes(shocked)
    assert changes.shape == (3,)
    assert np.isfinite(changes).all()
