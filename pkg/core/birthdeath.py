"""
pf-regen Birth-Death Benchmark
Slotted-queue random walk killed at 0: truncated matrices, closed-form
eigenvalues and eigenvectors, first-passage law and the convergence-parameter probe
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from scipy import sparse
from scipy.special import gammaln

from core.errors import DomainError
from core.matrix import NonNegMatrix

logger = logging.getLogger(__name__)

BOUNDARY_MODES = ("killed", "reflecting")
DISCRIMINANT_RTOL = 1e-14
DIVERGENCE_EPS = 1e-3


def _check_p(p: float):
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie strictly between 0 and 1, got {p}", {"p": p})


@dataclass(frozen=True)
class BirthDeathSpec:
    p: float
    L: int
    boundary: str = "killed"

    def __post_init__(self):
        _check_p(self.p)
        if self.L < 2:
            raise DomainError(f"Truncation level L must be at least 2, got {self.L}", {"L": self.L})
        if self.boundary not in BOUNDARY_MODES:
            raise DomainError(f"boundary must be one of {BOUNDARY_MODES}, got {self.boundary!r}")

    @property
    def q(self) -> float:
        return 1.0 - self.p


def bd_matrix(spec: BirthDeathSpec) -> NonNegMatrix:
    """Index k holds state k + 1; row 1 leaks q to 0, row L leaks p unless reflecting"""
    L, p, q = spec.L, spec.p, spec.q
    matrix = sparse.diags([np.full(L - 1, q), np.full(L - 1, p)], offsets=[-1, 1], format="lil")
    if spec.boundary == "reflecting":
        matrix[L - 1, L - 1] = p
    return NonNegMatrix.from_csr(matrix.tocsr())


def closed_form_lambda(p: float) -> float:
    _check_p(p)
    return 2.0 * math.sqrt(p * (1.0 - p))


def truncated_lambda(p: float, L: int) -> float:
    """Perron root of the killed L x L truncation"""
    return closed_form_lambda(p) * math.cos(math.pi / (L + 1))


def _power_profile(x: float, base: float) -> float:
    if x < 1:
        raise DomainError(f"State x must be at least 1, got {x}")
    with np.errstate(over="ignore"):
        return float(x * np.exp(0.5 * x * math.log(base)))


def closed_form_u(p: float, x: float) -> float:
    """Critical column eigenvector x (q/p)^{x/2}"""
    _check_p(p)
    return _power_profile(x, (1.0 - p) / p)


def closed_form_eta(p: float, x: float) -> float:
    """Critical row eigenvector x (p/q)^{x/2}"""
    _check_p(p)
    return _power_profile(x, p / (1.0 - p))


def quad_roots(p: float, lam: float) -> Tuple[float, float]:
    """Roots z1 <= z2 of p z^2 - lam z + q = 0"""
    _check_p(p)
    q = 1.0 - p
    disc = lam * lam - 4.0 * p * q
    if disc < -DISCRIMINANT_RTOL * lam * lam:
        raise DomainError(
            f"lambda={lam} is below 2 sqrt(pq)={closed_form_lambda(p):.10g}; roots are complex",
            {"p": p, "lambda": lam},
        )
    root = math.sqrt(max(disc, 0.0))
    if root == 0.0:
        z = math.sqrt(q / p)
        return z, z
    return (lam - root) / (2.0 * p), (lam + root) / (2.0 * p)


def _supercritical_roots(p: float, lam: float) -> Tuple[float, float]:
    z1, z2 = quad_roots(p, lam)
    if z1 == z2:
        raise DomainError(f"lambda={lam} must exceed 2 sqrt(pq) strictly", {"p": p, "lambda": lam})
    return z1, z2


def _two_root_profile(a: float, r1: float, r2: float, x: float) -> float:
    """a r1^x + r2^x evaluated as r2^x (1 + a (r1/r2)^x)"""
    factor = 1.0 + a * (r1 / r2) ** x
    with np.errstate(over="ignore"):
        return float(np.exp(x * math.log(r2)) * factor)


def supercritical_u(p: float, lam: float, x: float) -> float:
    """Positive column eigenvector a z1^x + z2^x for lambda above 2 sqrt(pq)"""
    z1, z2 = _supercritical_roots(p, lam)
    a = -(z2 / z1) * (lam - p * z2) / (lam - p * z1)
    return _two_root_profile(a, z1, z2, x)


def supercritical_eta(p: float, lam: float, x: float) -> float:
    """Row analogue with the reciprocal roots 1/z2 < 1/z1"""
    z1, z2 = _supercritical_roots(p, lam)
    q = 1.0 - p
    w1, w2 = 1.0 / z2, 1.0 / z1
    b = -(w2 / w1) * (lam - q * w2) / (lam - q * w1)
    return _two_root_profile(b, w1, w2, x)


def supercritical_positivity(p: float, lam: float, x_max: int = 1000) -> bool:
    """u(x) > 0 for x = 1..x_max, checked on the log-domain factor 1 + a (z1/z2)^x"""
    z1, z2 = _supercritical_roots(p, lam)
    a = -(z2 / z1) * (lam - p * z2) / (lam - p * z1)
    xs = np.arange(1, x_max + 1, dtype=float)
    return bool(np.all(1.0 + a * np.power(z1 / z2, xs) > 0))


def _log_first_passage(p: float, n: int) -> float:
    _check_p(p)
    if n < 0:
        raise DomainError(f"n must be nonnegative, got {n}")
    log_binom = gammaln(2 * n + 2) - gammaln(n + 2) - gammaln(n + 1)
    return float(log_binom - math.log(2 * n + 1) + n * math.log(p) + (n + 1) * math.log1p(-p))


def first_passage_pmf(p: float, n: int) -> float:
    """P_1(T_0 = 2n + 1) = C(2n+1, n+1) p^n q^{n+1} / (2n + 1), in log-gamma form"""
    return math.exp(_log_first_passage(p, n))


def first_passage_scaled(p: float, n: int) -> float:
    """pmf(n) n^{3/2} (2 sqrt(pq))^{-(2n+1)}, which settles to sqrt(q/p) / (2 sqrt(pi))"""
    if n < 1:
        raise DomainError(f"n must be at least 1, got {n}")
    log_scale = (2 * n + 1) * math.log(closed_form_lambda(p))
    return math.exp(_log_first_passage(p, n) + 1.5 * math.log(n) - log_scale)


def stirling_constant(p: float) -> float:
    _check_p(p)
    return math.sqrt((1.0 - p) / p) / (2.0 * math.sqrt(math.pi))


def absorption_probability(p: float) -> float:
    """P_1(T_0 < infinity) = min(1, q/p)"""
    _check_p(p)
    return min(1.0, (1.0 - p) / p)


@dataclass(frozen=True)
class ProbeResult:
    partial_sums: List[float] = field(repr=False)
    tail_ratio: float
    lam: float

    @property
    def diverging(self) -> bool:
        return self.tail_ratio >= 1.0 - DIVERGENCE_EPS


def convergence_param_probe(p: float, lam: float, N: int, L: int = 400, x: int = 1) -> ProbeResult:
    """Partial sums of lambda^-n B^n(x, x) on the L-truncation; a numerical signature only.

    The tail ratio compares the last two-step window with the one before it,
    so the period-2 zeros do not matter, and is reported per step.
    """
    if lam <= 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    if N < 4:
        raise DomainError(f"N must be at least 4, got {N}")
    B = bd_matrix(BirthDeathSpec(p, L))
    scaled_T = (B.csr / lam).T.tocsr()
    index = x - 1
    row = np.zeros(L)
    row[index] = 1.0

    terms = np.empty(N + 1)
    terms[0] = 1.0
    for n in range(1, N + 1):
        row = scaled_T @ row
        terms[n] = row[index]
    partial_sums = np.cumsum(terms)

    recent = terms[N] + terms[N - 1]
    earlier = terms[N - 2] + terms[N - 3]
    tail_ratio = math.sqrt(recent / earlier) if earlier > 0 else math.inf
    return ProbeResult(partial_sums=partial_sums.tolist(), tail_ratio=tail_ratio, lam=lam)


def critical_twist_probs(x: int) -> Tuple[float, float]:
    """Up/down probabilities of the twisted walk at criticality, (x+1)/(2x) and (x-1)/(2x)"""
    if x < 1:
        raise DomainError(f"State x must be at least 1, got {x}")
    return (x + 1) / (2 * x), (x - 1) / (2 * x)


def hitting_probability(x: int) -> float:
    """P_x(T_1 < infinity) for the critical twisted walk.

    sum_{y>=x} 1/(y(y+1)) over sum_{y>=1} 1/(y(y+1)); both sums telescope, to 1/x and 1.
    """
    if x < 1:
        raise DomainError(f"State x must be at least 1, got {x}")
    return 1.0 / x


def supercritical_twist_limits(p: float, lam: float) -> Tuple[float, float]:
    """Far-field up/down probabilities of the twisted walk for lambda above 2 sqrt(pq)"""
    _check_p(p)
    ratio = 4.0 * p * (1.0 - p) / (lam * lam)
    if ratio >= 1.0:
        raise DomainError(f"lambda={lam} must exceed 2 sqrt(pq)", {"p": p, "lambda": lam})
    root = math.sqrt(1.0 - ratio)
    return 0.5 * (1.0 + root), 0.5 * (1.0 - root)
