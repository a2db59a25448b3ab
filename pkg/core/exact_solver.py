"""
pf-regen Exact Solver
Deterministic theta, lambda*, u*, eta* for finite irreducible sub-stochastic
matrices via the closed-form cycle transform of the killed chain
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from core.errors import (
    A1FailureError,
    DomainError,
    NonPositiveEigenvectorError,
    ReducibleMatrixError,
    RootToleranceError,
)
from core.linalg import Resolvent, spectral_radius, try_resolvent
from core.matrix import NonNegMatrix, analyze_graph, default_regeneration_state

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-12
DIVERGENT = math.inf
A1_SLACK = 1e-6
THETA_CEILING = 700.0
MAX_ITERATIONS = 400
GAP_MARGIN = 1e-10


@dataclass(frozen=True)
class CycleValue:
    h: float
    dh: float
    resolvent: Resolvent = field(repr=False)


@dataclass(frozen=True, eq=False)
class CycleTransform:
    """h(theta) = a*s + s^2 * r (I - sQ)^-1 c with s = e^theta.

    Covers both the return-to-state cycle (a = B(z,z)) and the split-chain
    cycle (a = delta, r = delta*psi, Q = B-tilde, c = B-tilde 1).
    """

    a: float
    r: np.ndarray = field(repr=False)
    Q: NonNegMatrix = field(repr=False)
    c: np.ndarray = field(repr=False)
    rho_Q: float

    @property
    def theta_ceiling(self) -> float:
        return -math.log(self.rho_Q) if self.rho_Q > 0 else math.inf

    def evaluate(self, theta: float) -> Optional[CycleValue]:
        """h and dh/dtheta at theta, or None past the radius of convergence"""
        if theta >= self.theta_ceiling or theta > THETA_CEILING:
            return None
        s = math.exp(theta)
        resolvent = try_resolvent(self.Q.csr, s) if self.Q.n else Resolvent(self.Q.csr, s)
        if resolvent is None:
            return None
        w = resolvent.solve(self.c)
        y = resolvent.solve_transpose(self.r)
        h = s * self.a + s * s * float(self.r @ w)
        dh = s * self.a + 2.0 * s * s * float(y @ self.c) + s**3 * float(y @ (self.Q.csr @ w))
        if not (math.isfinite(h) and math.isfinite(dh)):
            return None
        return CycleValue(h=h, dh=dh, resolvent=resolvent)


@dataclass(frozen=True, eq=False)
class TabooDecomposition(CycleTransform):
    """B split around the regeneration state z; Q is B restricted to S minus {z}"""

    z: int
    states: np.ndarray = field(repr=False)
    B: NonNegMatrix = field(repr=False)

    @property
    def b_zz(self) -> float:
        return self.a


@dataclass(frozen=True)
class RootResult:
    theta: float
    h: float
    dh: float
    iterations: int

    @property
    def lambda_star(self) -> float:
        return math.exp(-self.theta)


@dataclass(frozen=True, eq=False)
class PFSolution:
    theta: float
    lambda_star: float
    z: Optional[int]
    u_star: np.ndarray = field(repr=False)
    eta_star: np.ndarray = field(repr=False)
    h_residual: float
    eig_residuals: Tuple[float, float]
    h_prime: float = math.nan
    iterations: int = 0
    scale: float = 1.0
    power: int = 1
    ci_halfwidth: Optional[float] = None

    @property
    def lambda_G(self) -> float:
        """Eigenvalue of the un-normalized input matrix"""
        return self.scale * self.lambda_star

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "lambda_star": self.lambda_star,
            "lambda_G": self.lambda_G,
            "scale": self.scale,
            "z": self.z,
            "u_star": self.u_star.tolist(),
            "eta_star": self.eta_star.tolist(),
            "h_residual": self.h_residual,
            "h_prime": self.h_prime,
            "eig_residuals": list(self.eig_residuals),
            "iterations": self.iterations,
            "power": self.power,
            "theta_ci_halfwidth": self.ci_halfwidth,
        }


def taboo_decompose(B: NonNegMatrix, z: int, check_irreducible: bool = True) -> TabooDecomposition:
    if not 0 <= z < B.n:
        raise DomainError(f"Regeneration state {z} out of range for n={B.n}", {"z": z, "n": B.n})
    if check_irreducible:
        graph = analyze_graph(B)
        if not graph.irreducible:
            raise ReducibleMatrixError(graph.scc_witness)

    others = np.array([x for x in range(B.n) if x != z], dtype=int)
    csr = B.csr
    Q = NonNegMatrix.from_csr(csr[others][:, others])
    r = np.asarray(csr[z, others].todense()).ravel() if len(others) else np.zeros(0)
    c = np.asarray(csr[others, z].todense()).ravel() if len(others) else np.zeros(0)
    rho_Q = spectral_radius(Q.csr)
    return TabooDecomposition(
        a=float(csr[z, z]), r=r, Q=Q, c=c, rho_Q=rho_Q, z=z, states=others, B=B
    )


def cycle_transform_h(td: CycleTransform, theta: float) -> float:
    """E_z e^{theta tau} I(T > tau); DIVERGENT (+inf) past the convergence radius"""
    value = td.evaluate(theta)
    return DIVERGENT if value is None else value.h


def _lower_bracket(td: CycleTransform) -> float:
    lo, step = 0.0, 1.0
    for _ in range(MAX_ITERATIONS):
        value = td.evaluate(lo)
        if value is not None and value.h <= 1.0:
            return lo
        lo -= step
        step *= 2.0
    raise A1FailureError("Cycle transform stays above 1 as theta decreases")


def root_resolution(td: CycleTransform, theta: float, dh: float) -> float:
    """Smallest |h - 1| reachable in floating point: one ulp of theta plus elimination rounding"""
    eps = float(np.finfo(float).eps)
    return 8.0 * eps * (abs(dh) * max(abs(theta), 1.0) + td.Q.n + 1.0)


def find_root(td: CycleTransform, tol: float = DEFAULT_TOL) -> RootResult:
    """Safeguarded Newton on h(theta) = 1; divergent points act as h = +inf"""
    lo = _lower_bracket(td)
    hi = td.theta_ceiling
    if not math.isfinite(hi):
        hi, step = max(lo, 0.0) + 1.0, 1.0
        while True:
            value = td.evaluate(hi)
            if value is None or value.h >= 1.0:
                break
            if hi >= THETA_CEILING:
                raise A1FailureError(
                    f"Cycle transform reaches only {value.h:.6g} < 1",
                    {"sup_h": value.h},
                )
            step *= 2.0
            hi = min(hi + step, THETA_CEILING)
        logger.debug("Upper bracket grown to theta=%.6g", hi)

    theta = lo
    best: Optional[CycleValue] = td.evaluate(lo)
    best_theta = lo
    for iteration in range(1, MAX_ITERATIONS + 1):
        value = td.evaluate(theta)
        if value is None:
            hi = theta
        else:
            f = value.h - 1.0
            if best is None or abs(f) < abs(best.h - 1.0):
                best, best_theta = value, theta
            if abs(f) <= tol:
                return RootResult(theta=theta, h=value.h, dh=value.dh, iterations=iteration)
            if f < 0:
                lo = theta
            else:
                hi = theta

        if hi - lo <= 4.0 * np.spacing(max(abs(lo), abs(hi), 1.0)):
            break

        candidate = math.nan
        if value is not None and value.dh > 0:
            candidate = theta - (value.h - 1.0) / value.dh
        if not (lo < candidate < hi):
            candidate = 0.5 * (lo + hi)
        theta = candidate

    if best is None or best.h < 1.0 - A1_SLACK:
        sup_h = None if best is None else best.h
        raise A1FailureError(
            "Cycle transform never reaches 1 before diverging", {"sup_h": sup_h}
        )
    residual = abs(best.h - 1.0)
    floor = root_resolution(td, best_theta, best.dh)
    if residual > max(tol, floor):
        raise RootToleranceError(
            f"Root not resolved: |h - 1| = {residual:.3g} exceeds tol {tol:.3g}",
            {"theta": best_theta, "h_residual": residual, "tol": tol, "resolution": floor},
        )
    logger.debug("Bracket collapsed at theta=%.17g; |h - 1| = %.3g is at the rounding floor", best_theta, residual)
    return RootResult(theta=best_theta, h=best.h, dh=best.dh, iterations=iteration)


def solve_theta(td: CycleTransform, tol: float = DEFAULT_TOL) -> Tuple[float, float]:
    root = find_root(td, tol)
    return root.theta, root.lambda_star


def eigen_residuals(B: NonNegMatrix, lam: float, u: np.ndarray, eta: np.ndarray) -> Tuple[float, float]:
    col = np.abs(B.csr @ u - lam * u).max() / np.abs(u).max()
    row = np.abs(B.csr.T @ eta - lam * eta).max() / np.abs(eta).max()
    return float(col), float(row)


def _check_positive(name: str, vector: np.ndarray, theta: float):
    if not np.all(np.isfinite(vector)) or vector.min() <= 0:
        worst = int(np.argmin(np.nan_to_num(vector, nan=-np.inf)))
        raise NonPositiveEigenvectorError(
            f"{name} has a non-positive component at state {worst}",
            {"state": worst, "value": float(vector[worst]), "theta": theta},
        )


def eigenvectors(
    B: NonNegMatrix, td: TabooDecomposition, theta: float, root: Optional[RootResult] = None
) -> PFSolution:
    s = math.exp(theta)
    resolvent = try_resolvent(td.Q.csr, s) if td.Q.n else Resolvent(td.Q.csr, s)
    if resolvent is None:
        raise A1FailureError(f"theta={theta} lies beyond the taboo radius", {"theta": theta})

    u = np.ones(B.n)
    eta = np.ones(B.n)
    if not (theta == 0.0 and B.is_stochastic):
        u[td.states] = resolvent.solve(s * td.c)
    eta[td.states] = resolvent.solve_transpose(s * td.r)
    _check_positive("u*", u, theta)
    _check_positive("eta*", eta, theta)

    h = root.h if root is not None else cycle_transform_h(td, theta)
    lam = math.exp(-theta)
    return PFSolution(
        theta=theta,
        lambda_star=lam,
        z=td.z,
        u_star=u,
        eta_star=eta,
        h_residual=abs(h - 1.0),
        eig_residuals=eigen_residuals(B, lam, u, eta),
        h_prime=root.dh if root is not None else math.nan,
        iterations=root.iterations if root is not None else 0,
    )


def solve_exact(
    B: NonNegMatrix, z: Optional[int] = None, tol: float = DEFAULT_TOL, scale: float = 1.0
) -> PFSolution:
    """Full exact pipeline: decompose at z, root-find A1, recover both eigenvectors"""
    z = default_regeneration_state(B) if z is None else z
    td = taboo_decompose(B, z)
    root = find_root(td, tol)
    if B.is_stochastic and root.theta != 0.0:
        # irreducible and stochastic: lambda* = 1 and u* = 1 exactly
        at_zero = td.evaluate(0.0)
        root = RootResult(theta=0.0, h=at_zero.h, dh=at_zero.dh, iterations=root.iterations)
    logger.debug("Exact solve at z=%d: theta=%.15g after %d steps", z, root.theta, root.iterations)
    solution = eigenvectors(B, td, root.theta, root)
    if scale != 1.0:
        solution = replace(solution, scale=scale)
    return solution


def check_gap_condition(td: TabooDecomposition) -> Tuple[float, float, bool]:
    """theta1 from rho(B) and theta2 from the taboo radius; the gap condition is theta2 > theta1"""
    rho_B = spectral_radius(td.B.csr)
    theta1 = -math.log(rho_B) if rho_B > 0 else math.inf
    theta2 = td.theta_ceiling
    return theta1, theta2, bool(theta2 > theta1 + GAP_MARGIN)


def _theta_at(B: NonNegMatrix, z: int, tol: float) -> float:
    return find_root(taboo_decompose(B, z, check_irreducible=False), tol).theta


def solidarity_scan(B: NonNegMatrix, tol: float = DEFAULT_TOL, threads: int = 1) -> float:
    """Max pairwise |theta(z) - theta(z')| over every regeneration state"""
    graph = analyze_graph(B)
    if not graph.irreducible:
        raise ReducibleMatrixError(graph.scc_witness)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        thetas = list(pool.map(lambda z: _theta_at(B, z, tol), range(B.n)))
    return float(max(thetas) - min(thetas))
