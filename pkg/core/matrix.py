"""
pf-regen Core Matrix
Loading, validation, normalization and graph analysis of nonnegative matrices,
plus the killed (Delta-augmented) chain that drives both engines
"""

import logging
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from core.errors import DomainError, MatrixFormatError

logger = logging.getLogger(__name__)

ROW_SUM_RTOL = 1e-14
STOCHASTIC_TOL = 1e-12


@dataclass(frozen=True)
class NonNegMatrix:
    """Finite sparse nonnegative matrix with row-sum metadata"""

    n: int
    csr: sparse.csr_matrix = field(repr=False)
    row_sums: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.csr.shape != (self.n, self.n):
            raise DomainError(f"Matrix shape {self.csr.shape} does not match n={self.n}")
        if self.csr.nnz and self.csr.data.min() <= 0:
            raise DomainError("Stored weights must be strictly positive")
        expected = np.asarray(self.csr.sum(axis=1)).ravel()
        if not np.allclose(self.row_sums, expected, rtol=ROW_SUM_RTOL, atol=0.0):
            raise DomainError("row_sums do not match stored weights")

    @classmethod
    def from_csr(cls, matrix) -> "NonNegMatrix":
        csr = sparse.csr_matrix(matrix, dtype=float, copy=True)
        csr.sum_duplicates()
        csr.eliminate_zeros()
        csr.sort_indices()
        if csr.shape[0] != csr.shape[1]:
            raise DomainError(f"Matrix must be square, got shape {csr.shape}")
        if csr.nnz and csr.data.min() < 0:
            raise DomainError("Matrix has negative entries")
        row_sums = np.asarray(csr.sum(axis=1)).ravel()
        return cls(n=csr.shape[0], csr=csr, row_sums=row_sums)

    @classmethod
    def from_dense(cls, values) -> "NonNegMatrix":
        array = np.atleast_2d(np.asarray(values, dtype=float))
        return cls.from_csr(sparse.csr_matrix(array))

    @property
    def nnz(self) -> int:
        return int(self.csr.nnz)

    @property
    def max_row_sum(self) -> float:
        return float(self.row_sums.max()) if self.n else 0.0

    @property
    def is_stochastic(self) -> bool:
        """Every row sums to 1 within STOCHASTIC_TOL"""
        return bool(self.n) and bool(np.all(np.abs(self.row_sums - 1.0) <= STOCHASTIC_TOL))

    def entries(self) -> Dict[Tuple[int, int], float]:
        coo = self.csr.tocoo()
        return {(int(i), int(j)): float(w) for i, j, w in zip(coo.row, coo.col, coo.data)}

    def to_dense(self) -> np.ndarray:
        return self.csr.toarray()

    def scaled(self, factor: float) -> "NonNegMatrix":
        if not factor > 0:
            raise DomainError(f"Scale factor must be positive, got {factor}")
        return NonNegMatrix.from_csr(self.csr * factor)

    def permuted(self, perm: Iterable[int]) -> "NonNegMatrix":
        """Simultaneous row/column permutation: new state k is old state perm[k]"""
        order = np.asarray(list(perm), dtype=int)
        return NonNegMatrix.from_csr(self.csr[order][:, order])

    def to_text(self) -> str:
        lines = [str(self.n)]
        coo = self.csr.tocoo()
        for i, j, w in sorted(zip(coo.row, coo.col, coo.data)):
            lines.append(f"{int(i)} {int(j)} {float(w)!r}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class NormalizationResult:
    B: NonNegMatrix
    s: float

    def unscale(self) -> NonNegMatrix:
        return self.B if self.s == 1.0 else self.B.scaled(self.s)


@dataclass(frozen=True)
class AugmentedChain:
    """Sub-stochastic B plus a killing column to the absorbing state Delta"""

    B: NonNegMatrix
    kill_prob: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.B.n

    @cached_property
    def sampling_table(self) -> List[Tuple[List[int], List[float]]]:
        """Per-row (columns, cumulative weights); a draw past the last weight is a kill"""
        csr = self.B.csr
        table = []
        for x in range(self.n):
            start, end = csr.indptr[x], csr.indptr[x + 1]
            cols = csr.indices[start:end].tolist()
            cum = np.cumsum(csr.data[start:end]).tolist()
            if cum and self.kill_prob[x] == 0.0:
                cum[-1] = 1.0
            table.append((cols, cum))
        return table

    def step(self, x: int, u: float) -> Optional[int]:
        """Next state for uniform draw u, or None when the chain jumps to Delta"""
        cols, cum = self.sampling_table[x]
        k = bisect_right(cum, u)
        return cols[k] if k < len(cols) else None

    def transition_matrix(self) -> sparse.csr_matrix:
        """Stochastic matrix on S plus Delta, with Delta as the last state"""
        n = self.n
        extended = sparse.lil_matrix((n + 1, n + 1))
        extended[:n, :n] = self.B.csr
        extended[:n, n] = self.kill_prob.reshape(-1, 1)
        extended[n, n] = 1.0
        return extended.tocsr()


@dataclass(frozen=True)
class GraphAnalysis:
    irreducible: bool
    period: int
    scc_witness: Optional[Tuple[int, int]] = None
    n_components: int = 1


def _strip_comment(raw: str) -> str:
    return raw.split("#", 1)[0].strip()


def load_matrix(text: str) -> NonNegMatrix:
    """Parse the coordinate format: a state count, then 'row col weight' lines"""
    n: Optional[int] = None
    rows: List[int] = []
    cols: List[int] = []
    weights: List[float] = []
    seen = set()

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        parts = line.split()
        if n is None:
            if len(parts) != 1:
                raise MatrixFormatError("Expected a single state count", line_no)
            try:
                n = int(parts[0])
            except ValueError:
                raise MatrixFormatError(f"Invalid state count {parts[0]!r}", line_no)
            if n < 1:
                raise MatrixFormatError(f"State count must be positive, got {n}", line_no)
            continue

        if len(parts) != 3:
            raise MatrixFormatError("Expected 'row col weight'", line_no)
        try:
            i, j = int(parts[0]), int(parts[1])
            w = float(parts[2])
        except ValueError:
            raise MatrixFormatError(f"Cannot parse entry {line!r}", line_no)

        if not math.isfinite(w):
            raise MatrixFormatError(f"Non-finite weight {parts[2]}", line_no)
        if w < 0:
            raise MatrixFormatError(f"Negative weight {w}", line_no)
        if w == 0:
            raise MatrixFormatError("Explicit zero weight (omit the entry instead)", line_no)
        if not (0 <= i < n and 0 <= j < n):
            raise MatrixFormatError(f"Index ({i}, {j}) out of range for n={n}", line_no)
        if (i, j) in seen:
            raise MatrixFormatError(f"Duplicate entry ({i}, {j})", line_no)
        seen.add((i, j))
        rows.append(i)
        cols.append(j)
        weights.append(w)

    if n is None:
        raise MatrixFormatError("Empty matrix file")

    coo = sparse.coo_matrix((weights, (rows, cols)), shape=(n, n))
    return NonNegMatrix.from_csr(coo)


def normalize(G: NonNegMatrix) -> NormalizationResult:
    """Scale G to a sub-stochastic B = G/s; already sub-stochastic input keeps s = 1"""
    if G.nnz == 0:
        raise DomainError("Cannot normalize an all-zero matrix")
    s = G.max_row_sum
    if s <= 1.0 + ROW_SUM_RTOL:
        return NormalizationResult(B=G, s=1.0)
    logger.debug("Normalizing by max row sum s=%.17g", s)
    return NormalizationResult(B=G.scaled(1.0 / s), s=s)


def _reachable(csr: sparse.csr_matrix, source: int) -> np.ndarray:
    order = csgraph.breadth_first_order(csr, source, directed=True, return_predecessors=False)
    mask = np.zeros(csr.shape[0], dtype=bool)
    mask[order] = True
    return mask


def _bfs_levels(csr: sparse.csr_matrix, source: int) -> np.ndarray:
    return csgraph.shortest_path(csr, method="D", directed=True, unweighted=True, indices=source)


def _period_of_class(csr: sparse.csr_matrix, members: np.ndarray) -> int:
    """gcd of level(u) + 1 - level(v) over support edges inside one strong class"""
    sub = csr[members][:, members]
    if sub.nnz == 0:
        return 1
    levels = _bfs_levels(sub, 0)
    coo = sub.tocoo()
    diffs = np.abs(levels[coo.row] + 1 - levels[coo.col]).astype(np.int64)
    period = int(np.gcd.reduce(diffs))
    return period if period > 0 else 1


def analyze_graph(B: NonNegMatrix) -> GraphAnalysis:
    csr = B.csr
    n_components, labels = csgraph.connected_components(csr, directed=True, connection="strong")
    members = np.flatnonzero(labels == labels[0])
    period = _period_of_class(csr, members)

    if n_components == 1:
        return GraphAnalysis(irreducible=True, period=period)

    forward = _reachable(csr, 0)
    if not forward.all():
        witness = (0, int(np.flatnonzero(~forward)[0]))
    else:
        backward = _reachable(csr.T.tocsr(), 0)
        witness = (int(np.flatnonzero(~backward)[0]), 0)
    return GraphAnalysis(
        irreducible=False, period=period, scc_witness=witness, n_components=int(n_components)
    )


def augment(B: NonNegMatrix) -> AugmentedChain:
    excess = B.row_sums - 1.0
    if B.n and excess.max() > STOCHASTIC_TOL:
        worst = int(np.argmax(excess))
        raise DomainError(
            f"Row {worst} sums to {B.row_sums[worst]:.17g} > 1; normalize the matrix first",
            {"row": worst},
        )
    kill = np.clip(1.0 - B.row_sums, 0.0, 1.0)
    kill[np.abs(kill) <= STOCHASTIC_TOL] = 0.0
    return AugmentedChain(B=B, kill_prob=kill)


def default_regeneration_state(B: NonNegMatrix) -> int:
    """State with the largest row sum; ties go to the median tied index"""
    best = B.row_sums.max()
    ties = np.flatnonzero(B.row_sums >= best * (1.0 - ROW_SUM_RTOL))
    return int(ties[(len(ties) - 1) // 2])
