"""
pf-regen Minorization
Row-similarity certificates for B or B^m, the split B^m = delta psi + B_tilde,
randomized-regeneration cycles and the split-based solver
"""

import logging
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from core.errors import DomainError
from core.exact_solver import CycleTransform, PFSolution, eigen_residuals, find_root
from core.linalg import Resolvent, spectral_radius
from core.matrix import AugmentedChain, NonNegMatrix, augment
from core.mc_solver import (
    DEFAULT_N_MAX,
    RegenCycleSample,
    estimate_eta,
    empirical_h,
    saa_fit,
)
from utils.rng import Stream, block_generator, run_blocks

logger = logging.getLogger(__name__)

RATIO_TOL = 1e-12
DUST_TOL = 1e-14
SELECTION_TOL = 1e-12
DEFAULT_U_CYCLES = 2000


@dataclass(frozen=True, eq=False)
class MinorizationCertificate:
    """B^m(x, .) >= delta psi(.) for every x, witnessed through the row of v"""

    v: int
    m: int
    c1: float
    c2: float
    delta: float
    psi: np.ndarray = field(repr=False)
    B_tilde: NonNegMatrix = field(repr=False)
    Bm: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "v": self.v,
            "m": self.m,
            "c1": self.c1,
            "c2": self.c2,
            "delta": self.delta,
            "psi": self.psi.tolist(),
        }


@dataclass(frozen=True)
class MinorizationFailure:
    reason: str
    m: Optional[int] = None
    details: Dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"reason": self.reason, "m": self.m, "details": self.details}


CertificateResult = Union[MinorizationCertificate, MinorizationFailure]


def _matrix_power(B: NonNegMatrix, m: int) -> Tuple[np.ndarray, float]:
    """B^m as (scaled dense matrix, log scale), rescaled by the max entry after each product"""
    dense = B.to_dense()
    power = dense.copy()
    log_scale = 0.0
    for _ in range(m - 1):
        power = power @ dense
        top = power.max()
        if top > 0:
            power /= top
            log_scale += math.log(top)
    return power, log_scale


def _certify_dense(Bm: np.ndarray, v: int, m: int, log_scale: float = 0.0) -> CertificateResult:
    vrow = Bm[v]
    support = vrow > 0
    if not support.any():
        return MinorizationFailure("empty_reference_row", m, {"v": v})

    outside = Bm[:, ~support]
    if (outside > 0).any():
        x, col = np.argwhere(outside > 0)[0]
        y = int(np.flatnonzero(~support)[col])
        return MinorizationFailure(
            "support_mismatch", m, {"v": v, "x": int(x), "y": y}
        )

    ratios = Bm[:, support] / vrow[support]
    c1, c2 = float(ratios.min()), float(ratios.max())
    if c1 <= 0:
        x, col = np.argwhere(ratios <= 0)[0]
        return MinorizationFailure(
            "zero_lower_bound", m, {"v": v, "x": int(x), "y": int(np.flatnonzero(support)[col])}
        )

    scale = math.exp(log_scale)
    true_power = Bm * scale
    row_total = float(vrow.sum()) * scale
    delta = c1 * row_total
    psi = np.where(support, vrow / vrow.sum(), 0.0)
    B_tilde = true_power - delta * psi[np.newaxis, :]
    if B_tilde.min() < -DUST_TOL:
        return MinorizationFailure("negative_remainder", m, {"v": v, "min": float(B_tilde.min())})
    B_tilde[B_tilde < 0] = 0.0

    return MinorizationCertificate(
        v=v,
        m=m,
        c1=c1,
        c2=c2,
        delta=delta,
        psi=psi,
        B_tilde=NonNegMatrix.from_dense(B_tilde),
        Bm=true_power,
    )


def certify_A3(B: NonNegMatrix, v: int) -> CertificateResult:
    """c1, c2 bound B(x,y)/B(v,y) over every x and every y in the support of B(v, .)"""
    if not 0 <= v < B.n:
        raise DomainError(f"Reference state {v} out of range for n={B.n}")
    return _certify_dense(B.to_dense(), v, 1)


def _best_reference(Bm: np.ndarray, m: int, log_scale: float) -> Tuple[Optional[MinorizationCertificate], Dict]:
    best: Optional[MinorizationCertificate] = None
    reasons: Dict[str, int] = {}
    for v in range(Bm.shape[0]):
        result = _certify_dense(Bm, v, m, log_scale)
        if isinstance(result, MinorizationFailure):
            reasons[result.reason] = reasons.get(result.reason, 0) + 1
            continue
        if best is None or result.c1 / result.c2 > best.c1 / best.c2 + SELECTION_TOL:
            best = result
    return best, reasons


def certify_A3prime(B: NonNegMatrix, m_max: int) -> CertificateResult:
    """Smallest m <= m_max with a certificate for B^m; v maximizes c1/c2 at that m"""
    if m_max < 1:
        raise DomainError(f"m_max must be at least 1, got {m_max}")
    diagnostics = {}
    for m in range(1, m_max + 1):
        power, log_scale = _matrix_power(B, m)
        best, reasons = _best_reference(power, m, log_scale)
        if best is not None:
            logger.debug("Certificate at m=%d, v=%d, c1/c2=%.6g", m, best.v, best.c1 / best.c2)
            return best
        diagnostics[str(m)] = reasons
    return MinorizationFailure("exhausted", m_max, {"per_m": diagnostics})


def theta_gap_bound(cert: MinorizationCertificate, theta1: float) -> float:
    if cert.c1 >= cert.c2:
        return math.inf
    return theta1 - math.log1p(-cert.c1 / cert.c2)


@dataclass(frozen=True)
class CertificateCheck:
    reconstruction_error: float
    remainder_bound_ok: bool
    ratio_bounds_ok: bool


def check_certificate(B: NonNegMatrix, cert: MinorizationCertificate) -> CertificateCheck:
    """Re-derive B^m and confirm delta psi + B_tilde, the (1 - c1/c2) bound and the ratio window"""
    power, log_scale = _matrix_power(B, cert.m)
    Bm = power * math.exp(log_scale)
    rebuilt = cert.delta * cert.psi[np.newaxis, :] + cert.B_tilde.to_dense()
    error = float(np.abs(rebuilt - Bm).max())

    remainder_ok = bool(
        np.all(cert.B_tilde.to_dense() <= (1.0 - cert.c1 / cert.c2) * Bm + DUST_TOL)
    )
    support = Bm[cert.v] > 0
    ratios = Bm[:, support] / Bm[cert.v, support]
    ratios_ok = bool(
        ratios.min() >= cert.c1 * (1 - RATIO_TOL) and ratios.max() <= cert.c2 * (1 + RATIO_TOL)
    )
    return CertificateCheck(error, remainder_ok, ratios_ok)


class SplitChain:
    """Killed chain with the delta psi component marked as regeneration"""

    def __init__(self, B: NonNegMatrix, cert: MinorizationCertificate):
        self.B = B
        self.cert = cert
        self.chain: AugmentedChain = augment(B)
        self._psi_states = np.flatnonzero(cert.psi > 0).tolist()
        self._psi_cum = np.cumsum(cert.psi[cert.psi > 0]).tolist()
        self._psi_cum[-1] = 1.0

    @cached_property
    def _remainder_table(self) -> List[Tuple[List[int], List[float]]]:
        csr = self.cert.B_tilde.csr
        delta = self.cert.delta
        table = []
        for x in range(self.B.n):
            start, end = csr.indptr[x], csr.indptr[x + 1]
            cols = csr.indices[start:end].tolist()
            cum = (delta + np.cumsum(csr.data[start:end])).tolist()
            if self.chain.kill_prob[x] == 0.0:
                if cum:
                    cum[-1] = 1.0
            table.append((cols, cum))
        return table

    def sample_psi(self, u: float) -> int:
        return self._psi_states[bisect_right(self._psi_cum, u)]

    def _one_step(self, x: int, u: float, u_psi: float) -> Tuple[Optional[int], bool]:
        if u < self.cert.delta:
            return self.sample_psi(u_psi), True
        cols, cum = self._remainder_table[x]
        k = bisect_right(cum, u)
        return (cols[k], False) if k < len(cols) else (None, False)

    def _block_step(self, x: int, rng: np.random.Generator) -> Tuple[Optional[int], bool]:
        y = x
        for u in rng.random(self.cert.m):
            y = self.chain.step(y, u)
            if y is None:
                return None, False
        Bm = self.cert.Bm
        coin = self.cert.c1 * Bm[self.cert.v, y] / Bm[x, y]
        return y, bool(rng.random() < coin)

    def step(self, x: int, rng: np.random.Generator) -> Tuple[Optional[int], bool]:
        """(next block-start state or None if killed, regenerated flag)"""
        if self.cert.m == 1:
            u, u_psi = rng.random(2)
            return self._one_step(x, u, u_psi)
        return self._block_step(x, rng)


def split_cycle(
    split: SplitChain,
    rng: np.random.Generator,
    n_max: int = DEFAULT_N_MAX,
    start: Optional[int] = None,
) -> RegenCycleSample:
    """Cycle from X_0 ~ psi (or start) until the first psi-regeneration, a kill, or n_max blocks"""
    if n_max < 1:
        raise DomainError(f"n_max must be at least 1, got {n_max}")
    x = split.sample_psi(rng.random()) if start is None else start
    path = [x]
    for step in range(1, n_max + 1):
        y, regenerated = split.step(x, rng)
        if y is None:
            return RegenCycleSample(tau=step, survived=False, path=np.asarray(path, dtype=np.int64))
        if regenerated:
            return RegenCycleSample(tau=step, survived=True, path=np.asarray(path, dtype=np.int64))
        path.append(y)
        x = y
    return RegenCycleSample(
        tau=n_max, survived=False, truncated=True, path=np.asarray(path[:n_max], dtype=np.int64)
    )


def simulate_split_cycles(
    split: SplitChain,
    n_cycles: int,
    seed: int,
    n_max: int = DEFAULT_N_MAX,
    threads: int = 1,
    start: Optional[int] = None,
) -> List[RegenCycleSample]:
    if n_cycles < 1:
        raise DomainError(f"n_cycles must be at least 1, got {n_cycles}")
    extra = () if start is None else (start + 1,)

    def worker(block: int, items: range) -> List[RegenCycleSample]:
        rng = block_generator(seed, Stream.SPLIT_CYCLES, block, *extra)
        return [split_cycle(split, rng, n_max, start) for _ in items]

    return run_blocks(worker, n_cycles, threads)


def split_transform(cert: MinorizationCertificate) -> CycleTransform:
    """E_psi e^{theta tau} I(T > tau) = s delta psi (I - s B_tilde)^-1 1 in cycle-transform form"""
    Q = cert.B_tilde
    return CycleTransform(
        a=cert.delta,
        r=cert.delta * cert.psi,
        Q=Q,
        c=np.asarray(Q.row_sums, dtype=float),
        rho_Q=spectral_radius(Q.csr),
    )


def _exact_split(B: NonNegMatrix, cert: MinorizationCertificate, tol: float) -> PFSolution:
    root = find_root(split_transform(cert), tol)
    s = math.exp(root.theta)
    Q = cert.B_tilde
    resolvent = Resolvent(Q.csr, s)
    u = s * cert.delta * resolvent.solve(np.ones(B.n))
    eta = resolvent.solve_transpose(cert.psi)

    theta = root.theta / cert.m
    lam = math.exp(-theta)
    return PFSolution(
        theta=theta,
        lambda_star=lam,
        z=None,
        u_star=u,
        eta_star=eta,
        h_residual=abs(root.h - 1.0),
        eig_residuals=eigen_residuals(B, lam, u, eta),
        h_prime=root.dh,
        iterations=root.iterations,
        power=cert.m,
    )


def _mc_split(
    B: NonNegMatrix,
    cert: MinorizationCertificate,
    n_cycles: int,
    seed: int,
    n_max: int,
    threads: int,
    tol: float,
    ci_level: float,
    u_cycles: int,
) -> PFSolution:
    split = SplitChain(B, cert)
    samples = simulate_split_cycles(split, n_cycles, seed, n_max, threads)
    fit = saa_fit(samples, tol, ci_level, seed=seed)
    eta = np.array([e.value for e in estimate_eta(samples, fit.theta, B.n)])
    u = np.array([
        empirical_h(simulate_split_cycles(split, u_cycles, seed, n_max, threads, start=x), fit.theta).value
        for x in range(B.n)
    ])

    theta = fit.theta / cert.m
    lam = math.exp(-theta)
    residuals = eigen_residuals(B, lam, u, eta) if u.max() > 0 and eta.max() > 0 else (math.inf, math.inf)
    return PFSolution(
        theta=theta,
        lambda_star=lam,
        z=None,
        u_star=u,
        eta_star=eta,
        h_residual=fit.h_residual,
        eig_residuals=residuals,
        h_prime=fit.h_prime,
        power=cert.m,
        ci_halfwidth=fit.ci_halfwidth / cert.m,
    )


def solve_via_split(
    B: NonNegMatrix,
    cert: MinorizationCertificate,
    engine: str = "exact",
    tol: float = 1e-12,
    n_cycles: int = 100_000,
    seed: int = 0,
    n_max: int = DEFAULT_N_MAX,
    threads: int = 1,
    ci_level: float = 0.95,
    u_cycles: int = DEFAULT_U_CYCLES,
) -> PFSolution:
    """Perron pair of B from psi-regeneration cycles of B^m; eigenvalue lambda_m^(1/m)"""
    if engine == "exact":
        return _exact_split(B, cert, tol)
    if engine == "mc":
        return _mc_split(B, cert, n_cycles, seed, n_max, threads, tol, ci_level, u_cycles)
    raise DomainError(f"Unknown engine {engine!r}; expected 'exact' or 'mc'")
