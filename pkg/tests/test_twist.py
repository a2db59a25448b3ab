from dataclasses import replace

import numpy as np
import pytest

from core.birthdeath import BirthDeathSpec, bd_matrix
from core.errors import DomainError, TwistError
from core.exact_solver import solve_exact
from core.matrix import analyze_graph, load_matrix
from core.twist import (
    check_power_limit,
    doob_transform,
    limit_matrix,
    spectral_gap,
    uniqueness_probe,
    verify_power_limit,
    verify_stationarity,
)


def test_doob_transform_hand_values(asym_matrix):
    solution = solve_exact(asym_matrix)
    twisted = doob_transform(asym_matrix, solution)
    assert twisted.P_star.to_dense() == pytest.approx(np.array([[0.4, 0.6], [0.8, 0.2]]), abs=1e-10)
    assert twisted.pi_star == pytest.approx([4 / 7, 3 / 7], abs=1e-10)
    assert verify_stationarity(twisted) <= 1e-12


def test_doob_transform_rejects_wrong_eigenpair(asym_matrix):
    solution = solve_exact(asym_matrix)
    broken = replace(solution, lambda_star=0.4)
    with pytest.raises(TwistError):
        doob_transform(asym_matrix, broken)


def test_random_twists_are_stochastic(irreducible_factory):
    for seed in range(5):
        B = irreducible_factory(seed, 10)
        twisted = doob_transform(B, solve_exact(B))
        assert twisted.P_star.row_sums == pytest.approx(np.ones(10), abs=1e-10)
        assert twisted.pi_star.sum() == pytest.approx(1.0)
        assert verify_stationarity(twisted) <= 1e-10


def test_doob_transform_of_stochastic_matrix_is_identity_map(stochastic_text):
    B = load_matrix(stochastic_text)
    twisted = doob_transform(B, solve_exact(B))
    assert np.array_equal(twisted.P_star.to_dense(), B.to_dense())


def test_doob_transform_ignores_eigenvector_scale(asym_matrix, irreducible_factory):
    for B in (asym_matrix, irreducible_factory(3, 9)):
        solution = solve_exact(B)
        rescaled = replace(solution, u_star=3.0 * solution.u_star, eta_star=0.2 * solution.eta_star)
        base, scaled = doob_transform(B, solution), doob_transform(B, rescaled)
        assert scaled.pi_star == pytest.approx(base.pi_star, rel=1e-12)
        assert scaled.P_star.to_dense() == pytest.approx(base.P_star.to_dense(), rel=1e-12, abs=1e-15)
        assert scaled.normalizer == pytest.approx(0.6 * base.normalizer, rel=1e-12)


def test_limit_matrix_is_rank_one_projection(asym_matrix):
    limit = limit_matrix(solve_exact(asym_matrix))
    assert limit @ limit == pytest.approx(limit)
    assert np.linalg.matrix_rank(limit) == 1


def test_power_limit_aperiodic(asym_matrix):
    errors = verify_power_limit(asym_matrix, solve_exact(asym_matrix), 1, 200)
    assert len(errors) == 200
    assert errors[-1] < 1e-6
    assert errors[10] < errors[0]


def test_power_limit_needs_cesaro_for_period_two(periodic_text):
    B = load_matrix(periodic_text)
    solution = solve_exact(B)
    plain = verify_power_limit(B, solution, 1, 20)
    averaged = verify_power_limit(B, solution, 2, 20)
    assert plain[-1] > 0.1
    assert averaged[-1] < 1e-12


def test_power_limit_rejects_zero_terms(asym_matrix):
    with pytest.raises(DomainError):
        verify_power_limit(asym_matrix, solve_exact(asym_matrix), 1, 0)


def test_check_power_limit_reports_gap(asym_matrix):
    check = check_power_limit(asym_matrix, solve_exact(asym_matrix), 1, 50)
    assert check.spectral_gap == pytest.approx(0.3)
    assert check.gap_ok
    assert check.final_error == check.errors[-1]


def test_spectral_gap_skips_peripheral_values(periodic_text):
    B = load_matrix(periodic_text)
    assert spectral_gap(B, 0.5, period=2) == pytest.approx(0.5)


def test_birth_death_power_limit_relative_error():
    """Period-2 truncation at L = 50: the gap is small, so the relative error needs many terms"""
    B = bd_matrix(BirthDeathSpec(0.3, 50))
    graph = analyze_graph(B)
    solution = solve_exact(B)
    check = check_power_limit(B, solution, graph.period, 3000, relative=True)
    assert graph.period == 2
    assert not check.gap_ok
    assert check.errors[299] > check.final_error
    assert check.final_error < 1e-6


def test_uniqueness_probe(asym_matrix, periodic_text):
    assert uniqueness_probe(asym_matrix, solve_exact(asym_matrix), trials=5, seed=1)
    B = load_matrix(periodic_text)
    assert uniqueness_probe(B, solve_exact(B), trials=5, period=2, seed=1)


def test_uniqueness_probe_from_fixed_start(asym_matrix):
    solution = solve_exact(asym_matrix)
    assert uniqueness_probe(asym_matrix, solution, trials=1, start=np.array([5.0, 0.01]))
