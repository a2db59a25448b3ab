import math

import numpy as np
import pytest
from scipy.stats import chisquare

from core.errors import DomainError
from core.exact_solver import solve_exact
from core.linalg import spectral_radius
from core.matrix import NonNegMatrix, analyze_graph, load_matrix
from core.mc_solver import empirical_h
from core.minorize import (
    MinorizationCertificate,
    MinorizationFailure,
    SplitChain,
    certify_A3,
    certify_A3prime,
    check_certificate,
    simulate_split_cycles,
    solve_via_split,
    split_cycle,
    theta_gap_bound,
)
from utils.rng import block_generator


def test_certify_a3_hand_values(asym_matrix):
    cert = certify_A3(asym_matrix, 0)
    assert isinstance(cert, MinorizationCertificate)
    assert cert.c1 == pytest.approx(0.25)
    assert cert.c2 == pytest.approx(1.5)
    assert cert.delta == pytest.approx(0.15)
    assert cert.psi == pytest.approx([1 / 3, 2 / 3])


def test_certificate_reconstruction(asym_matrix):
    cert = certify_A3(asym_matrix, 0)
    rebuilt = cert.delta * cert.psi[np.newaxis, :] + cert.B_tilde.to_dense()
    assert np.abs(rebuilt - asym_matrix.to_dense()).max() <= 1e-14
    assert np.all(cert.B_tilde.to_dense() <= (1 - cert.c1 / cert.c2) * asym_matrix.to_dense() + 1e-15)
    check = check_certificate(asym_matrix, cert)
    assert check.reconstruction_error <= 1e-14
    assert check.remainder_bound_ok
    assert check.ratio_bounds_ok


def test_certify_a3prime_prefers_first_reference(asym_matrix):
    """Both references give c1/c2 = 1/6; the tie goes to v = 0"""
    cert = certify_A3prime(asym_matrix, 3)
    assert cert.m == 1
    assert cert.v == 0
    assert cert.delta == pytest.approx(0.15)


def test_certify_a3_reference_out_of_range(asym_matrix):
    with pytest.raises(DomainError):
        certify_A3(asym_matrix, 2)


def test_period_two_support_mismatch(periodic_text):
    B = load_matrix(periodic_text)
    failure = certify_A3(B, 0)
    assert isinstance(failure, MinorizationFailure)
    assert failure.reason == "support_mismatch"

    exhausted = certify_A3prime(B, 6)
    assert isinstance(exhausted, MinorizationFailure)
    assert exhausted.reason == "exhausted"
    assert set(exhausted.details["per_m"]) == {str(m) for m in range(1, 7)}


def test_sparse_matrix_certifies_at_higher_power():
    """0 -> 1 -> 2 -> 0 with a loop at 0: B^m has a positive column only for m >= 2"""
    B = NonNegMatrix.from_dense([[0.3, 0.6, 0.0], [0.0, 0.0, 0.9], [0.8, 0.0, 0.0]])
    assert isinstance(certify_A3prime(B, 1), MinorizationFailure)
    cert = certify_A3prime(B, 6)
    assert isinstance(cert, MinorizationCertificate)
    assert cert.m > 1
    assert check_certificate(B, cert).reconstruction_error <= 1e-12


def test_zero_lower_bound_failure():
    B = NonNegMatrix.from_dense([[0.5, 0.5], [0.5, 0.0]])
    failure = certify_A3(B, 0)
    assert isinstance(failure, MinorizationFailure)
    assert failure.reason in ("support_mismatch", "zero_lower_bound")


def test_theta_gap_bound(asym_matrix):
    cert = certify_A3(asym_matrix, 0)
    theta1 = -math.log(spectral_radius(asym_matrix.csr))
    bound = theta_gap_bound(cert, theta1)
    assert bound == pytest.approx(theta1 - math.log(1 - 0.25 / 1.5), abs=1e-12)
    assert bound > theta1


def test_exact_split_matches_state_engine(asym_matrix):
    cert = certify_A3(asym_matrix, 0)
    split = solve_via_split(asym_matrix, cert)
    state = solve_exact(asym_matrix)
    assert split.lambda_star == pytest.approx(state.lambda_star, abs=1e-8)
    assert split.power == 1
    cosine = split.u_star @ state.u_star / (np.linalg.norm(split.u_star) * np.linalg.norm(state.u_star))
    assert cosine == pytest.approx(1.0, abs=1e-10)


def test_exact_split_on_block_power():
    B = NonNegMatrix.from_dense([[0.3, 0.6, 0.0], [0.0, 0.0, 0.9], [0.8, 0.0, 0.0]])
    cert = certify_A3prime(B, 6)
    split = solve_via_split(B, cert)
    assert split.lambda_star == pytest.approx(solve_exact(B).lambda_star, abs=1e-8)
    assert split.power == cert.m


def test_split_engine_rejects_unknown_engine(asym_matrix):
    with pytest.raises(DomainError):
        solve_via_split(asym_matrix, certify_A3(asym_matrix, 0), engine="quantum")


def test_split_chain_regenerates_from_psi(asym_matrix):
    split = SplitChain(asym_matrix, certify_A3(asym_matrix, 0))
    assert split.sample_psi(0.1) == 0
    assert split.sample_psi(0.9) == 1
    sample = split_cycle(split, block_generator(3, 0, 0))
    assert sample.tau >= 1


def test_split_cycles_thread_invariant(asym_matrix):
    split = SplitChain(asym_matrix, certify_A3(asym_matrix, 0))
    serial = simulate_split_cycles(split, 2500, seed=8)
    threaded = simulate_split_cycles(split, 2500, seed=8, threads=3)
    assert [s.tau for s in serial] == [s.tau for s in threaded]


def test_mc_split_matches_state_engine(asym_matrix):
    cert = certify_A3(asym_matrix, 0)
    split = solve_via_split(asym_matrix, cert, engine="mc", n_cycles=50_000, seed=11, u_cycles=500)
    assert split.ci_halfwidth > 0
    lam_halfwidth = split.lambda_star * split.ci_halfwidth
    assert abs(split.lambda_star - 0.5) <= 3 * lam_halfwidth


def test_mc_split_reports_sample_residual(asym_matrix):
    cert = certify_A3(asym_matrix, 0)
    split = solve_via_split(asym_matrix, cert, engine="mc", n_cycles=2000, seed=11, u_cycles=50, tol=1e-3)
    samples = simulate_split_cycles(SplitChain(asym_matrix, cert), 2000, seed=11)
    expected = abs(empirical_h(samples, split.theta * cert.m).value - 1.0)
    assert split.h_residual == pytest.approx(expected, abs=1e-15)
    assert split.h_residual <= 1e-2


def test_truncated_split_cycle_keeps_n_max_states(asym_matrix):
    split = SplitChain(asym_matrix, certify_A3(asym_matrix, 0))
    truncated = [s for s in simulate_split_cycles(split, 500, seed=3, n_max=2) if s.truncated]
    assert truncated
    for sample in truncated:
        assert sample.tau == 2
        assert len(sample.path) == 2
        assert not sample.survived


def test_rank_one_certificate():
    B = NonNegMatrix.from_dense([[0.2, 0.3], [0.2, 0.3]])
    cert = certify_A3(B, 0)
    assert cert.c1 == pytest.approx(1.0)
    assert cert.c2 == pytest.approx(1.0)
    assert cert.delta == pytest.approx(0.5)
    assert np.abs(cert.B_tilde.to_dense()).max() <= 1e-14
    assert theta_gap_bound(cert, 0.7) == math.inf


def test_rank_one_split_regenerates_every_step():
    B = NonNegMatrix.from_dense([[0.2, 0.3], [0.2, 0.3]])
    cert = certify_A3(B, 0)
    samples = simulate_split_cycles(SplitChain(B, cert), 4000, seed=6)
    assert all(s.tau == 1 for s in samples)
    assert sum(s.survived for s in samples) / len(samples) == pytest.approx(0.5, abs=0.04)

    solution = solve_via_split(B, cert)
    assert solution.lambda_star == pytest.approx(0.5, abs=1e-10)
    assert solution.u_star[0] == pytest.approx(solution.u_star[1])


def test_aperiodic_two_state_certifies_at_first_power():
    cert = certify_A3prime(NonNegMatrix.from_dense([[0.1, 0.9], [0.5, 0.5]]), 4)
    assert isinstance(cert, MinorizationCertificate)
    assert cert.m == 1
    assert cert.c1 / cert.c2 == pytest.approx(1 / 9)


def test_certified_matrices_are_aperiodic(irreducible_factory):
    for seed in range(10):
        B = irreducible_factory(seed, 6, density=1.0)
        assert isinstance(certify_A3(B, 0), MinorizationCertificate)
        assert analyze_graph(B).period == 1


def test_split_step_preserves_one_step_law(asym_matrix):
    """Regeneration plus remainder moves reproduce B(0, .) and the kill probability"""
    split = SplitChain(asym_matrix, certify_A3(asym_matrix, 0))
    rng = np.random.default_rng(12)
    counts = np.zeros(3)
    for _ in range(20000):
        y, _ = split.step(0, rng)
        counts[2 if y is None else y] += 1
    expected = 20000 * np.array([0.2, 0.4, 0.4])
    assert chisquare(counts, expected).pvalue > 1e-3


@pytest.mark.slow
def test_mc_split_on_random_positive_matrix(irreducible_factory):
    B = irreducible_factory(3, 3, density=1.0)
    cert = certify_A3(B, 0)
    split = solve_via_split(B, cert, engine="mc", n_cycles=100_000, seed=5, u_cycles=200)
    exact = solve_exact(B).lambda_star
    assert abs(split.lambda_star - exact) <= 3 * split.lambda_star * split.ci_halfwidth
