"""
Tests for labor-supply estimation
"""

import numpy as np
import pytest

from labornet.panel import WorkerPanel
from labornet.roy_equilibrium import LaborSupplyParameters, Technology, choice_probabilities, solve_equilibrium
from labornet.shock_lab import simulate_panel
from labornet.shared.rng import substream
from labornet.supply_mle import (
    EstimatedParameters,
    FitConfig,
    SupplyTheta,
    attach_normalization,
    choose_k,
    estimate_lambda,
    estimate_sigma,
    fit_supply_parameters,
    normalize_psi,
    observed_employment_rate,
    panel_log_likelihood,
    panel_score,
    skill_correlation_matrix,
    sufficient_statistics,
    type_masses,
    zero_cell_sensitivity,
)

E = np.e


@pytest.fixture
def simulated_panel(small_supply):
    return simulate_panel(small_supply, np.full((3, 2), 0.2), np.ones(2), periods=3, n_workers=400,
                          separation_rate=0.3, seed=5)


def _theta(seed, n_types=3, n_markets=2):
    rng = substream(seed, 'tests', 'theta')
    return SupplyTheta(
        phi=rng.uniform(0.5, 2.0, (n_types, n_markets)),
        xi=rng.normal(0.0, 0.5, n_markets),
        nu=float(rng.uniform(0.3, 1.5)),
        sigma=rng.uniform(0.1, 0.5, (n_types, n_markets)),
    )


# ========================
# LIKELIHOOD AND SCORE
# ========================

def test_score_matches_finite_differences(simulated_panel):
    stats = sufficient_statistics(simulated_panel)
    theta = _theta(1)
    epsilon = 1e-3
    score = panel_score(stats, theta, epsilon)
    h = 1e-6

    def loglik(ln_phi, xi, ln_nu):
        return panel_log_likelihood(stats, SupplyTheta(np.exp(ln_phi), xi, float(np.exp(ln_nu)), theta.sigma), epsilon)

    ln_phi, ln_nu = np.log(theta.phi), np.log(theta.nu)
    for cell in np.ndindex(*theta.phi.shape):
        up, down = ln_phi.copy(), ln_phi.copy()
        up[cell] += h
        down[cell] -= h
        numeric = (loglik(up, theta.xi, ln_nu) - loglik(down, theta.xi, ln_nu)) / (2 * h)
        assert score['ln_phi'][cell] == pytest.approx(numeric, rel=1e-5, abs=1e-4)
    for g in range(theta.xi.size):
        up, down = theta.xi.copy(), theta.xi.copy()
        up[g] += h
        down[g] -= h
        numeric = (loglik(ln_phi, up, ln_nu) - loglik(ln_phi, down, ln_nu)) / (2 * h)
        assert score['xi'][g] == pytest.approx(numeric, rel=1e-5, abs=1e-4)
    numeric = (loglik(ln_phi, theta.xi, ln_nu + h) - loglik(ln_phi, theta.xi, ln_nu - h)) / (2 * h)
    assert score['ln_nu'] == pytest.approx(numeric, rel=1e-5, abs=1e-4)


def test_common_utility_shift_leaves_likelihood_unchanged(simulated_panel):
    theta = _theta(2)
    shifted = SupplyTheta(theta.phi, theta.xi + 0.7, theta.nu, theta.sigma, xi0=0.7)

    assert panel_log_likelihood(simulated_panel, shifted) == pytest.approx(
        panel_log_likelihood(simulated_panel, theta), rel=1e-12)


def test_panel_and_stats_give_same_likelihood(simulated_panel):
    theta = _theta(3)

    assert panel_log_likelihood(simulated_panel, theta) == pytest.approx(
        panel_log_likelihood(sufficient_statistics(simulated_panel), theta), rel=1e-12)


def test_likelihood_by_hand(panel_factory):
    panel = panel_factory([('1', 1, 0, 1, E, 1), ('2', 1, 0, 0, None, 1)])
    theta = SupplyTheta(phi=np.array([[E]]), xi=np.array([0.0]), nu=1.0, sigma=np.array([[1.0]]))

    # utility of the market is phi = e; earnings sit at the log-normal median
    expected = E - 2 * np.log(1 + np.exp(E)) - 1 - 0.5 * np.log(2 * np.pi)

    assert panel_log_likelihood(panel, theta) == pytest.approx(expected, rel=1e-12)


def test_zero_sigma_on_observed_cell_is_rejected(simulated_panel):
    theta = _theta(4)
    bad = SupplyTheta(theta.phi, theta.xi, theta.nu, np.zeros_like(theta.sigma))

    with pytest.raises(ValueError, match="sigma"):
        panel_log_likelihood(simulated_panel, bad)


# ========================
# CLOSED FORMS
# ========================

def test_estimate_lambda(panel_factory):
    rows = [
        ('1', 1, 0, 1, 1.0, 1), ('1', 2, 0, 1, 1.0, 1), ('1', 3, 0, 1, 1.0, 0),
        ('2', 1, 0, 0, None, 1), ('2', 2, 0, 0, None, 0), ('2', 3, 0, 0, None, 0),
    ]

    assert estimate_lambda(panel_factory(rows)) == pytest.approx(0.25)
    with pytest.raises(ValueError, match="two periods"):
        estimate_lambda(panel_factory(rows[:1]))


def test_estimate_sigma_with_pooling(panel_factory):
    rows = [
        ('1', 1, 0, 1, E ** 1, 1),
        ('2', 1, 0, 1, E ** 3, 1),
        ('3', 1, 1, 1, E ** 2, 1),
        ('4', 1, 1, 2, E ** 0.5, 1),
    ]
    phi = np.array([[E ** 2, 1.0], [E ** 2, E ** 0.5]])

    sigma, pooled = estimate_sigma(panel_factory(rows), phi)

    assert sigma[0, 0] == pytest.approx(1.0)
    assert sigma[1, 1] == pytest.approx(np.sqrt(0.5))
    assert pooled.tolist() == [[False, True], [True, True]]
    assert estimate_sigma(panel_factory(rows), phi, floor=0.8)[0][1, 1] == pytest.approx(0.8)


def test_type_masses_and_employment(panel_factory):
    rows = [('1', 1, 0, 1, 1.0, 1), ('2', 1, 1, 0, None, 1), ('3', 1, 1, 2, 1.0, 1), ('4', 1, 1, 1, 1.0, 1)]
    panel = panel_factory(rows)

    assert type_masses(panel).tolist() == [0.25, 0.75]
    assert observed_employment_rate(panel) == pytest.approx(0.75)
    with pytest.raises(ValueError, match="Type 2"):
        type_masses(panel, n_types=3)


def test_normalize_psi():
    phi = np.array([[2.0, 1.0], [4.0, 3.0]])
    masses = np.array([0.25, 0.75])

    psi, w = normalize_psi(phi, masses, k=2.0)

    assert masses @ psi == pytest.approx([2.0, 2.0])
    assert psi * w == pytest.approx(phi)
    with pytest.raises(ValueError, match="Market 2"):
        normalize_psi(np.array([[1.0, 0.0]]), np.array([1.0]), 1.0)


# ========================
# FITTING
# ========================

def test_fit_ascends_and_reports(simulated_panel):
    estimates = fit_supply_parameters(simulated_panel, FitConfig(jitter_starts=2, seed=3))

    assert not estimates.pooled_sigma.any()
    assert all(b >= a - 1e-9 * abs(a) for a, b in zip(estimates.trace, estimates.trace[1:]))
    assert estimates.converged
    assert estimates.separation_rate == pytest.approx(estimate_lambda(simulated_panel))
    assert estimates.masses.sum() == pytest.approx(1.0)
    payload = attach_normalization(estimates, 1.0).to_dict()
    assert payload['dimensions'] == {'types': 3, 'markets': 2}
    assert payload['k'] == 1.0


def test_reported_gradient_is_the_whole_panel_score(simulated_panel):
    config = FitConfig(jitter_starts=1, seed=3)
    estimates = fit_supply_parameters(simulated_panel, config)

    score = panel_score(sufficient_statistics(simulated_panel), estimates.theta, config.zero_cell_epsilon)
    flat = np.concatenate([score['ln_phi'].ravel(), score['xi'], [score['ln_nu']]])

    assert estimates.converged
    assert not estimates.nu_at_bound
    assert np.abs(flat).max() < config.grad_tol
    assert np.abs(flat).max() == pytest.approx(estimates.gradient_norm, rel=1e-6, abs=1e-12)


def test_fit_is_deterministic(simulated_panel):
    config = FitConfig(jitter_starts=2, seed=8)

    first = fit_supply_parameters(simulated_panel, config)
    second = fit_supply_parameters(simulated_panel, config)

    assert np.array_equal(first.phi, second.phi)
    assert first.nu == second.nu


def _degenerate_panel(panel_factory):
    rng = substream(4, 'tests', 'degenerate')
    rows = []
    for i in range(150):
        iota = i % 3
        gamma = (1, 2, 0)[iota]
        omega = float(np.exp(np.log(2.0) + 0.1 * rng.standard_normal())) if gamma else None
        rows.append((f"{i:03d}", 1, iota, gamma, omega, 1))
    return panel_factory(rows)


def test_deterministic_choices_push_nu_to_its_bound(panel_factory):
    panel = _degenerate_panel(panel_factory)

    estimates = fit_supply_parameters(panel, FitConfig(zero_cell_epsilon=0.0, jitter_starts=1))

    assert estimates.nu_at_bound
    assert np.log(estimates.nu) == pytest.approx(-9.0, abs=1e-6)
    assert estimates.zero_cells.tolist() == [[False, True], [True, False], [True, True]]
    supply = LaborSupplyParameters(estimates.phi, estimates.xi, estimates.nu, estimates.masses)
    probabilities = choice_probabilities(supply, np.ones(2))
    assert probabilities[0, 1] > 0.99
    assert probabilities[1, 2] > 0.99
    assert probabilities[2, 0] > 0.99


def test_unvisited_market_is_rejected(panel_factory):
    rows = [('1', 1, 0, 2, 1.0, 1), ('2', 1, 0, 2, 2.0, 1), ('3', 1, 0, 0, None, 1)]
    panel = panel_factory(rows)

    with pytest.raises(ValueError, match="Market 1 is never visited"):
        fit_supply_parameters(panel, FitConfig(jitter_starts=1))
    stats = sufficient_statistics(panel, n_markets=2)
    assert stats.matches.shape == (1, 2)


def test_zero_cell_sensitivity_marks_estimates(simulated_panel):
    estimates = fit_supply_parameters(simulated_panel, FitConfig(jitter_starts=1))

    sensitive = zero_cell_sensitivity(simulated_panel, estimates, FitConfig(jitter_starts=1))

    assert sensitive.shape == (3, 2)
    assert not sensitive.any()
    assert estimates.to_dict()['diagnostics']['sensitive_cells'] == [[0, 0]] * 3


@pytest.mark.slow
def test_closed_loop_recovery(small_supply):
    sigma = np.full((3, 2), 0.2)
    panel = simulate_panel(small_supply, sigma, np.ones(2), periods=3, n_workers=20_000,
                           separation_rate=0.3, seed=11)

    estimates = fit_supply_parameters(panel, FitConfig(jitter_starts=1))

    assert estimates.phi == pytest.approx(small_supply.psi, rel=0.05)
    assert estimates.nu == pytest.approx(small_supply.nu, rel=0.1)
    assert estimates.xi == pytest.approx(small_supply.xi, abs=0.1)
    assert estimates.sigma == pytest.approx(sigma, rel=0.05)
    assert estimates.separation_rate == pytest.approx(0.3, abs=0.02)


# ========================
# k SELECTION
# ========================

def _estimates_from_truth(supply, w):
    phi = supply.psi * w
    shape = phi.shape
    return EstimatedParameters(
        phi=phi, xi=supply.xi, nu=supply.nu, sigma=np.full(shape, 0.1), separation_rate=None,
        log_likelihood=0.0, gradient_norm=0.0, zero_cells=np.zeros(shape, dtype=bool),
        pooled_sigma=np.zeros(shape, dtype=bool), converged=True, masses=supply.masses,
    )


def test_choose_k_recovers_true_normalization(small_technology, small_demand):
    masses = np.array([0.5, 0.3, 0.2])
    raw = np.array([[1.0, 0.4], [0.5, 1.2], [0.8, 0.8]])
    psi = 2.0 * raw / (masses @ raw)
    supply = LaborSupplyParameters(psi, np.array([-0.2, 0.1]), 0.5, masses)
    state = solve_equilibrium(supply, small_technology, small_demand)
    observed = 1 - masses @ choice_probabilities(supply, state.w)[:, 0]

    k, table = choose_k([4.0, 0.5, 2.0, 1.0], _estimates_from_truth(supply, state.w),
                        small_technology, small_demand, observed)

    assert k == 2.0
    assert table['k'].tolist() == [0.5, 1.0, 2.0, 4.0]
    assert table.set_index('k').loc[2.0, 'gap'] < 1e-6


def test_choose_k_fails_when_every_point_fails(small_supply, small_demand):
    estimates = _estimates_from_truth(small_supply, np.ones(2))

    with pytest.raises(ValueError, match="every k"):
        choose_k([1.0, 2.0], estimates, Technology(np.array([[0.5]])), small_demand, 0.5)
    with pytest.raises(ValueError, match="empty"):
        choose_k([], estimates, Technology(np.array([[0.5]])), small_demand, 0.5)


# ========================
# SKILL CORRELATIONS
# ========================

def test_skill_correlation_matrix():
    psi = np.array([
        [1.0, 2.0, 3.0, 4.0],
        [2.0, 4.0, 6.0, 8.0],
        [4.0, 3.0, 2.0, 1.0],
        [1.0, 1.0, 1.0, 1.0],
    ])

    result = skill_correlation_matrix(psi, bins=4)

    assert result.matrix[0, 1] == pytest.approx(1.0)
    assert result.matrix[0, 2] == pytest.approx(-1.0)
    assert np.isnan(result.matrix[0, 3])
    assert result.off_diagonal.size == 3
    assert int(result.histogram.sum()) == 3
    assert list(result.histogram_frame().columns) == ['bin_left', 'bin_right', 'pairs']
    with pytest.raises(ValueError, match="two types"):
        skill_correlation_matrix(psi[:1])


@pytest.mark.slow
def test_random_type_merges_look_alike():
    rng = substream(17, 'tests', 'correlogram')
    n_types, w = 8, np.array([0.6, 0.9, 1.2, 1.5, 1.8])
    supply = LaborSupplyParameters(rng.uniform(0.5, 1.5, (n_types, w.size)), np.zeros(w.size), 1.0,
                                   np.full(n_types, 1.0 / n_types))
    panel = simulate_panel(supply, np.full(supply.psi.shape, 0.1), w, periods=1, n_workers=8000, seed=17)
    config = FitConfig(jitter_starts=1)

    def mean_correlation(frame):
        return skill_correlation_matrix(fit_supply_parameters(WorkerPanel(frame), config).phi).mean_off_diagonal

    truth = mean_correlation(panel.frame)
    merged = []
    for merge in range(5):
        groups = np.repeat([0, 1], n_types // 2)[substream(17, 'tests', 'merge', merge).permutation(n_types)]
        merged.append(mean_correlation(panel.frame.assign(iota=groups[panel.frame['iota'].to_numpy()])))

    assert np.mean(merged) > truth
