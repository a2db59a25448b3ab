"""
Shared sparse linear algebra for the engines: resolvent factorizations,
the M-matrix admissibility test and spectral radii of nonnegative matrices.
"""

import logging
from typing import Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

logger = logging.getLogger(__name__)

SPECTRAL_RTOL = 1e-10
POWER_STEPS = 1000
BISECTION_STEPS = 200
RESIDUAL_RTOL = 1e-8


class Resolvent:
    """LU factorization of I - sA with forward and transposed solves"""

    def __init__(self, A: sparse.csr_matrix, s: float):
        self.n = A.shape[0]
        self.s = s
        self._matrix = (sparse.identity(self.n, format="csc") - s * A.tocsc()).tocsc()
        # diagonal pivoting only, so U holds the pivots of a symmetric permutation of I - sA
        self._lu = (
            splu(self._matrix, permc_spec="NATURAL", diag_pivot_thresh=0.0) if self.n else None
        )

    def solve(self, b: np.ndarray) -> np.ndarray:
        if not self.n:
            return np.zeros(0)
        return self._lu.solve(np.asarray(b, dtype=float))

    def solve_transpose(self, b: np.ndarray) -> np.ndarray:
        if not self.n:
            return np.zeros(0)
        return self._lu.solve(np.asarray(b, dtype=float), trans="T")

    def is_admissible(self) -> bool:
        """True when I - sA is a nonsingular M-matrix, i.e. s * rho(A) < 1.

        A Z-matrix is a nonsingular M-matrix exactly when elimination with
        diagonal pivots keeps every pivot positive.
        """
        if not self.n:
            return True
        if not np.array_equal(self._lu.perm_r, self._lu.perm_c):
            return False
        if not np.all(self._lu.U.diagonal() > 0):
            return False
        ones = np.ones(self.n)
        w = self.solve(ones)
        if not np.all(np.isfinite(w)) or w.min() < 0:
            return False
        scale = float(abs(self._matrix).sum(axis=1).max()) * float(w.max()) + 1.0
        residual = float(np.abs(self._matrix @ w - ones).max())
        return residual <= RESIDUAL_RTOL * scale


def try_resolvent(A: sparse.csr_matrix, s: float) -> Optional[Resolvent]:
    """Factorize I - sA, returning None when the Neumann series diverges"""
    try:
        resolvent = Resolvent(A, s)
    except RuntimeError:
        # splu raises on an exactly singular factor
        return None
    return resolvent if resolvent.is_admissible() else None


def _collatz_wielandt(A: sparse.csr_matrix) -> Tuple[float, float]:
    """Lower/upper bounds on rho(A) from power iteration on the aperiodic shift A + I"""
    n = A.shape[0]
    shifted = A + sparse.identity(n, format="csr")
    x = np.ones(n)
    lo = 0.0
    hi = float(np.asarray(A.sum(axis=1)).max())

    for step in range(POWER_STEPS):
        y = shifted @ x
        positive = x > 0
        if positive.all():
            ratios = y / x - 1.0
            lo = max(lo, float(ratios.min()))
            hi = min(hi, float(ratios.max()))
        if hi - lo <= SPECTRAL_RTOL * hi:
            logger.debug("Collatz-Wielandt bounds met after %d steps", step + 1)
            break
        top = y.max()
        if top <= 0:
            break
        x = y / top
    return lo, max(hi, lo)


def spectral_radius(A: sparse.spmatrix, rtol: float = SPECTRAL_RTOL) -> float:
    """Perron root of a nonnegative sparse matrix.

    Collatz-Wielandt bounds bracket the root; the bracket is then narrowed by
    bisection on the M-matrix test for tI - A.
    """
    A = sparse.csr_matrix(A)
    if A.shape[0] == 0 or A.nnz == 0:
        return 0.0

    lo, hi = _collatz_wielandt(A)
    for _ in range(BISECTION_STEPS):
        if hi - lo <= rtol * hi or hi <= np.finfo(float).tiny:
            break
        mid = 0.5 * (lo + hi)
        if mid <= 0:
            break
        if try_resolvent(A, 1.0 / mid) is not None:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi) if hi - lo > 0 else hi
