"""
pf-regen Twist
Doob transform P* of B by its Perron pair, the stationary law pi*, and
checks of the uniqueness and power-limit behaviour of scaled powers of B
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import sparse

from core.errors import DomainError, TwistError
from core.exact_solver import PFSolution
from core.matrix import NonNegMatrix
from utils.rng import Stream, block_generator

logger = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-8
GAP_WARNING = 0.05
PROBE_COSINE = 1.0 - 1e-8
PROBE_MAX_ROUNDS = 20_000


@dataclass(frozen=True, eq=False)
class TwistedChain:
    P_star: NonNegMatrix = field(repr=False)
    pi_star: np.ndarray = field(repr=False)
    normalizer: float

    def to_dict(self) -> dict:
        return {
            "P_star": self.P_star.to_dense().tolist(),
            "pi_star": self.pi_star.tolist(),
            "normalizer": self.normalizer,
        }


@dataclass(frozen=True)
class PowerLimitCheck:
    errors: List[float]
    period: int
    relative: bool
    spectral_gap: Optional[float] = None

    @property
    def final_error(self) -> float:
        return self.errors[-1] if self.errors else 0.0

    @property
    def gap_ok(self) -> Optional[bool]:
        return None if self.spectral_gap is None else self.spectral_gap >= GAP_WARNING


def doob_transform(B: NonNegMatrix, sol: PFSolution) -> TwistedChain:
    """P*(x,y) = B(x,y) u*(y) / (lambda* u*(x)); pi* proportional to u* eta*"""
    u, eta, lam = sol.u_star, sol.eta_star, sol.lambda_star
    twisted = sparse.diags(1.0 / (lam * u)) @ B.csr @ sparse.diags(u)
    P_star = NonNegMatrix.from_csr(twisted)

    deviation = np.abs(P_star.row_sums - 1.0)
    if deviation.max() > ROW_SUM_TOL:
        worst = int(np.argmax(deviation))
        raise TwistError(
            f"Twisted row {worst} sums to {P_star.row_sums[worst]:.12g}; eigenpair is inaccurate",
            {"row": worst, "deviation": float(deviation[worst])},
        )

    weights = u * eta
    normalizer = float(weights.sum())
    if not (np.isfinite(normalizer) and normalizer > 0):
        raise TwistError(f"<u*, eta*> = {normalizer} is not finite and positive")
    return TwistedChain(P_star=P_star, pi_star=weights / normalizer, normalizer=normalizer)


def verify_stationarity(tc: TwistedChain) -> float:
    pi = tc.pi_star
    return float(np.abs(tc.P_star.csr.T @ pi - pi).max())


def limit_matrix(sol: PFSolution) -> np.ndarray:
    u, eta = sol.u_star, sol.eta_star
    return np.outer(u, eta) / float(u @ eta)


def spectral_gap(B: NonNegMatrix, lambda_star: float, period: int = 1) -> float:
    """lambda* minus the largest modulus off the peripheral spectrum (dense, small n only)"""
    moduli = np.sort(np.abs(np.linalg.eigvals(B.to_dense())))[::-1]
    if len(moduli) <= period:
        return float(lambda_star)
    return float(lambda_star - moduli[period])


def verify_power_limit(
    B: NonNegMatrix,
    sol: PFSolution,
    period: int,
    n_terms: int,
    relative: bool = False,
) -> List[float]:
    """Max-entry error of the Cesaro-averaged scaled powers against u* eta* / <u*, eta*>.

    errors[k] belongs to n = k + 1, i.e. the average of M^{pn}, ..., M^{pn+p-1}
    with M = B / lambda*.
    """
    if n_terms < 1:
        raise DomainError(f"n_terms must be at least 1, got {n_terms}")
    M = B.to_dense() / sol.lambda_star
    limit = limit_matrix(sol)
    power = np.linalg.matrix_power(M, period - 1)

    errors = []
    for _ in range(n_terms):
        window = np.zeros_like(M)
        for _ in range(period):
            power = power @ M
            window += power
        diff = np.abs(window / period - limit)
        errors.append(float((diff / limit).max() if relative else diff.max()))
    return errors


def check_power_limit(
    B: NonNegMatrix, sol: PFSolution, period: int, n_terms: int, relative: bool = False
) -> PowerLimitCheck:
    gap = spectral_gap(B, sol.lambda_star, period)
    if gap < GAP_WARNING:
        logger.warning("Spectral gap %.4g is below %.2g; power-limit error decays slowly", gap, GAP_WARNING)
    errors = verify_power_limit(B, sol, period, n_terms, relative)
    return PowerLimitCheck(errors=errors, period=period, relative=relative, spectral_gap=gap)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def uniqueness_probe(
    B: NonNegMatrix,
    sol: PFSolution,
    trials: int = 10,
    period: int = 1,
    seed: int = 0,
    start: Optional[np.ndarray] = None,
) -> bool:
    """Random positive starts under v <- Bv / lambda* all settle on the direction of u*"""
    M = B.csr / sol.lambda_star
    u = sol.u_star
    for trial in range(trials):
        if start is not None:
            v = np.asarray(start, dtype=float).copy()
        else:
            v = block_generator(seed, Stream.UNIQUENESS, trial).random(B.n) + 0.1
        converged = False
        for _ in range(PROBE_MAX_ROUNDS):
            window = np.zeros(B.n)
            for _ in range(period):
                v = M @ v
                window += v
            if _cosine(window, u) >= PROBE_COSINE:
                converged = True
                break
            v = v / window.max()
        if not converged:
            logger.warning("Uniqueness probe trial %d did not align with u*", trial)
            return False
    return True
