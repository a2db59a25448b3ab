import numpy as np
import pytest

from core.errors import DomainError, MatrixFormatError
from core.matrix import (
    NonNegMatrix,
    analyze_graph,
    augment,
    default_regeneration_state,
    load_matrix,
    normalize,
)


def test_load_matrix_parses_entries(asym_text):
    """Comments and blank lines are skipped; entries land in place"""
    B = load_matrix(asym_text)
    assert B.n == 2
    assert B.entries() == {(0, 0): 0.2, (0, 1): 0.4, (1, 0): 0.3, (1, 1): 0.1}
    assert B.row_sums == pytest.approx([0.6, 0.4])


def test_load_matrix_text_round_trip(asym_matrix):
    assert load_matrix(asym_matrix.to_text()).entries() == asym_matrix.entries()


def test_to_text_writes_plain_numbers(asym_matrix):
    assert asym_matrix.to_text() == "2\n0 0 0.2\n0 1 0.4\n1 0 0.3\n1 1 0.1\n"


@pytest.mark.parametrize(
    "text, line",
    [
        ("2\n0 0 -0.1\n", 2),
        ("2\n0 0 nan\n", 2),
        ("2\n0 0 inf\n", 2),
        ("2\n0 2 0.1\n", 2),
        ("2\n0 0 0.1\n0 0 0.2\n", 3),
        ("2\n0 0 0\n", 2),
        ("2\n0 0\n", 2),
        ("two\n", 1),
    ],
)
def test_load_matrix_rejects_bad_lines(text, line):
    with pytest.raises(MatrixFormatError) as exc_info:
        load_matrix(text)
    assert exc_info.value.line == line
    assert exc_info.value.kind == "parse"
    assert exc_info.value.exit_code == 1


def test_load_matrix_rejects_empty_file():
    with pytest.raises(MatrixFormatError):
        load_matrix("# nothing here\n\n")


def test_normalize_keeps_substochastic_input(asym_matrix):
    result = normalize(asym_matrix)
    assert result.s == 1.0
    assert result.B is asym_matrix


def test_normalize_scales_by_max_row_sum():
    G = NonNegMatrix.from_dense([[1.0, 2.0], [0.5, 0.5]])
    result = normalize(G)
    assert result.s == pytest.approx(3.0)
    assert result.B.max_row_sum == pytest.approx(1.0)
    assert result.unscale().to_dense() == pytest.approx(G.to_dense())


def test_normalize_rejects_zero_matrix():
    with pytest.raises(DomainError):
        normalize(NonNegMatrix.from_dense(np.zeros((2, 2))))


def test_analyze_graph_irreducible_aperiodic(asym_matrix):
    graph = analyze_graph(asym_matrix)
    assert graph.irreducible
    assert graph.period == 1
    assert graph.scc_witness is None


def test_analyze_graph_period_two(periodic_text):
    graph = analyze_graph(load_matrix(periodic_text))
    assert graph.irreducible
    assert graph.period == 2


def test_analyze_graph_period_three_cycle():
    B = NonNegMatrix.from_dense([[0, 0.9, 0], [0, 0, 0.9], [0.9, 0, 0]])
    assert analyze_graph(B).period == 3


def test_analyze_graph_reducible_witness(reducible_text):
    """State 1 never reaches state 0"""
    graph = analyze_graph(load_matrix(reducible_text))
    assert not graph.irreducible
    assert graph.n_components == 2
    assert graph.scc_witness == (1, 0)


def test_analyze_graph_forward_witness():
    B = NonNegMatrix.from_dense([[0.5, 0.0], [0.2, 0.5]])
    assert analyze_graph(B).scc_witness == (0, 1)


def test_analyze_graph_invariant_under_permutation(irreducible_factory):
    B = irreducible_factory(3, 12)
    perm = np.random.default_rng(0).permutation(B.n)
    assert analyze_graph(B.permuted(perm)).period == analyze_graph(B).period
    assert analyze_graph(B.permuted(perm)).irreducible


def test_augment_kill_probabilities(asym_matrix):
    chain = augment(asym_matrix)
    assert chain.kill_prob == pytest.approx([0.4, 0.6])
    P = chain.transition_matrix().toarray()
    assert P.sum(axis=1) == pytest.approx(np.ones(3))
    assert P[2, 2] == 1.0


def test_augment_step_uses_cumulative_weights(asym_matrix):
    chain = augment(asym_matrix)
    assert chain.step(0, 0.1) == 0
    assert chain.step(0, 0.5) == 1
    assert chain.step(0, 0.7) is None


def test_augment_stochastic_row_never_kills():
    chain = augment(NonNegMatrix.from_dense([[0.5, 0.5], [0.3, 0.7]]))
    assert chain.step(0, 0.999999999999) == 1


def test_augment_rejects_superstochastic():
    with pytest.raises(DomainError):
        augment(NonNegMatrix.from_dense([[0.7, 0.7], [0.3, 0.1]]))


def test_default_regeneration_state_median_tie():
    B = NonNegMatrix.from_dense(np.full((5, 5), 0.2))
    assert default_regeneration_state(B) == 2
    assert default_regeneration_state(NonNegMatrix.from_dense([[0.1, 0.1], [0.5, 0.4]])) == 1
