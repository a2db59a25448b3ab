import math

import numpy as np
import pytest

from core.errors import DomainError, UnestimableError
from core.matrix import NonNegMatrix, augment
from core.mc_solver import (
    RegenCycleSample,
    empirical_h,
    estimate_eta,
    estimate_u,
    saa_fit,
    saa_solve_theta,
    sample_cycle,
    simulate_cycles,
    solve_mc,
)
from utils.rng import block_generator


def _cycles(taus, survived):
    return [RegenCycleSample(tau=t, survived=s) for t, s in zip(taus, survived)]


def test_sample_cycle_return_to_z(asym_matrix):
    chain = augment(asym_matrix)
    sample = sample_cycle(chain, 0, block_generator(1, 0, 0))
    assert sample.tau >= 1
    assert sample.path[0] == 0
    assert 0 not in sample.path[1:].tolist()
    assert not sample.truncated


def test_sample_cycle_truncates_at_n_max():
    chain = augment(NonNegMatrix.from_dense([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]))
    sample = sample_cycle(chain, 0, block_generator(1, 0, 0), n_max=50)
    assert sample.truncated
    assert not sample.survived
    assert sample.tau == 50
    assert len(sample.path) == 50


def test_occupation_lists_visit_times():
    sample = RegenCycleSample(tau=4, survived=True, path=np.array([0, 1, 2, 1]))
    assert sample.occupation == {0: [0], 1: [1, 3], 2: [2]}


def test_simulate_cycles_is_thread_invariant(asym_matrix):
    chain = augment(asym_matrix)
    serial = simulate_cycles(chain, 0, 3000, seed=5, threads=1)
    threaded = simulate_cycles(chain, 0, 3000, seed=5, threads=4)
    assert [s.tau for s in serial] == [s.tau for s in threaded]
    assert [s.survived for s in serial] == [s.survived for s in threaded]


def test_simulate_cycles_rejects_zero(asym_matrix):
    with pytest.raises(DomainError):
        simulate_cycles(augment(asym_matrix), 0, 0, seed=1)


def test_empirical_h_counts_only_survivors():
    samples = _cycles([1, 2, 3], [True, False, True])
    estimate = empirical_h(samples, math.log(2))
    assert estimate.value == pytest.approx((2 + 8) / 3)
    assert estimate.n_survived == 2


def test_truncated_cycles_contribute_zero():
    samples = [
        RegenCycleSample(tau=3, survived=True),
        RegenCycleSample(tau=50, survived=False, truncated=True),
    ]
    estimate = empirical_h(samples, math.log(2))
    assert estimate.value == pytest.approx(8 / 2)
    assert estimate.n_survived == 1
    fit = saa_fit(samples)
    assert fit.n_truncated == 1
    assert fit.theta == pytest.approx(math.log(2) / 3, abs=1e-10)


def test_empirical_h_increases_in_theta(asym_matrix):
    samples = simulate_cycles(augment(asym_matrix), 0, 5000, seed=8)
    values = [empirical_h(samples, theta).value for theta in np.linspace(-1.0, 1.5, 11)]
    assert np.all(np.diff(values) > 0)


def test_discount_overflow_is_unestimable():
    long_path = RegenCycleSample(tau=800, survived=True, path=np.zeros(800, dtype=np.int64))
    with pytest.raises(UnestimableError) as exc_info:
        estimate_eta([long_path], 1.0, 1)
    assert exc_info.value.details["steps"] == 799
    with pytest.raises(UnestimableError):
        empirical_h([long_path], 1.0)


def test_saa_fit_records_residual(asym_matrix):
    closed_form = saa_fit(_cycles([1, 1, 1, 1], [True, True, False, False]), tol=1e-14)
    assert closed_form.h_residual <= 1e-12
    samples = simulate_cycles(augment(asym_matrix), 0, 4000, seed=2)
    fit = saa_fit(samples)
    assert fit.h_residual == pytest.approx(abs(empirical_h(samples, fit.theta).value - 1.0), abs=1e-15)
    assert fit.h_residual <= 1e-10


def test_saa_root_closed_form():
    """Half the cycles return at tau = 1: mean e^{theta} / 2 = 1 gives theta = log 2"""
    samples = _cycles([1, 1, 1, 1], [True, True, False, False])
    fit = saa_fit(samples, tol=1e-14)
    assert fit.theta == pytest.approx(math.log(2), abs=1e-12)
    assert fit.lambda_star == pytest.approx(0.5, abs=1e-12)


def test_saa_root_all_survivors_gives_zero():
    theta, _ = saa_solve_theta(_cycles([1, 1, 5], [True, True, True]))
    assert theta == pytest.approx(0.0, abs=1e-12)


def test_saa_unestimable_without_survivors():
    with pytest.raises(UnestimableError) as exc_info:
        saa_fit(_cycles([1, 2], [False, False]))
    assert exc_info.value.kind == "a1_unestimable"


def test_saa_rejects_bad_ci_arguments():
    samples = _cycles([1], [True])
    with pytest.raises(DomainError):
        saa_fit(samples, ci_method="jackknife")
    with pytest.raises(DomainError):
        saa_fit(samples, ci_level=1.5)


def test_estimate_eta_discounts_visit_times():
    samples = [
        RegenCycleSample(tau=3, survived=True, path=np.array([0, 1, 1])),
        RegenCycleSample(tau=2, survived=False, path=np.array([0, 1])),
    ]
    eta = estimate_eta(samples, math.log(2), 2)
    assert eta[0].value == pytest.approx(1.0)
    assert eta[1].value == pytest.approx((2 + 4 + 2) / 2)


def test_estimate_u_matches_taboo_value(asym_matrix):
    chain = augment(asym_matrix)
    estimate = estimate_u(chain, 0, 1, math.log(2), 20000, seed=3)
    assert estimate.value == pytest.approx(0.75, abs=5 * estimate.std_error + 1e-3)


def test_solve_mc_asym_instance(asym_matrix):
    result = solve_mc(augment(asym_matrix), 0, 100_000, seed=42)
    fit = result.fit
    assert 0.49 <= fit.lambda_star <= 0.51
    assert abs(fit.lambda_star - 0.5) <= 4 * fit.lambda_halfwidth
    assert fit.ci_level == 0.95
    eta = [e.value for e in result.eta_estimates]
    assert eta[0] == pytest.approx(1.0)
    assert eta[1] == pytest.approx(1.0, abs=0.05)


def test_solve_mc_reproducible(asym_matrix):
    first = solve_mc(augment(asym_matrix), 0, 5000, seed=9).to_dict()
    second = solve_mc(augment(asym_matrix), 0, 5000, seed=9, threads=3).to_dict()
    assert first == second


def test_bootstrap_interval(asym_matrix):
    result = solve_mc(augment(asym_matrix), 0, 20000, seed=4, ci_method="bootstrap")
    assert result.fit.ci_method == "bootstrap"
    assert 0 < result.fit.ci_halfwidth < 0.1


def test_u_estimates_optional(asym_matrix):
    result = solve_mc(augment(asym_matrix), 0, 20000, seed=1, u_cycles=20000)
    assert len(result.u_estimates) == 2
    assert result.u_estimates[0].value == pytest.approx(1.0, abs=0.1)


@pytest.mark.slow
def test_confidence_interval_calibration(asym_matrix):
    """The exact value lies inside the 95% interval in at least 93 of 100 replications"""
    chain = augment(asym_matrix)
    covered = 0
    for replication in range(100):
        fit = solve_mc(chain, 0, 100_000, seed=42 + replication).fit
        covered += abs(fit.lambda_star - 0.5) <= fit.lambda_halfwidth
    assert covered >= 93


@pytest.mark.slow
def test_error_shrinks_with_cycle_count(asym_matrix):
    """Mean |lambda - 0.5| over 8 seeds falls as N goes 1e3, 1e4, 1e5"""
    chain = augment(asym_matrix)
    errors, halfwidths = [], []
    for n_cycles in (1_000, 10_000, 100_000):
        fits = [solve_mc(chain, 0, n_cycles, seed=100 + seed).fit for seed in range(8)]
        errors.append(np.mean([abs(fit.lambda_star - 0.5) for fit in fits]))
        halfwidths.append(np.mean([fit.lambda_halfwidth for fit in fits]))
    assert errors[0] > errors[1] > errors[2]
    assert halfwidths[0] > halfwidths[1] > halfwidths[2]
    assert halfwidths[2] == pytest.approx(halfwidths[0] / 10, rel=0.25)
