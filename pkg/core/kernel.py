"""
pf-regen Continuous-State Kernels
Split-chain regenerative Monte Carlo for killed kernels with a certified
m-step density, the built-in example kernels and a grid discretization oracle
"""

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from core.errors import A4ViolationError, DomainError, GridTooCoarseError
from core.matrix import NonNegMatrix, augment
from core.mc_solver import (
    DEFAULT_N_MAX,
    McEstimate,
    RegenCycleSample,
    SaaFit,
    discount_weights,
    empirical_h,
    saa_fit,
)
from core.minorize import MinorizationCertificate
from utils.rng import Stream, block_generator, run_blocks

logger = logging.getLogger(__name__)

KILLED = None
COIN_SLACK = 1e-12
GRID_ROW_TOL = 1e-6
DEFAULT_U_CYCLES = 2000

State = Any


@dataclass(frozen=True, eq=False)
class KernelModel:
    """Killed kernel with an m-step density b_m w.r.t. a reference measure and A4 constants.

    step_sampler(x, rng) returns the next state or KILLED. Densities must be
    pure; the oracle needs one_step_density and a one-dimensional domain.
    """

    step_sampler: Callable[[State, np.random.Generator], Optional[State]]
    density_m: Callable[[State, State], float]
    psi_sampler: Callable[[np.random.Generator], State]
    m: int
    v: State
    c1: float
    c2: float
    one_step_density: Optional[Callable] = None
    domain: Optional[Tuple[float, float]] = None
    name: str = "custom"

    def __post_init__(self):
        if self.m < 1:
            raise DomainError(f"Block length m must be at least 1, got {self.m}")
        if not 0 < self.c1 <= self.c2:
            raise DomainError(f"Need 0 < c1 <= c2, got c1={self.c1}, c2={self.c2}")

    def run_block(self, x: State, rng: np.random.Generator) -> Optional[State]:
        y = x
        for _ in range(self.m):
            y = self.step_sampler(y, rng)
            if y is KILLED:
                return KILLED
        return y

    def regeneration_coin(self, x: State, y: State) -> float:
        """c1 b(v,y) / b(x,y); A4 needs c1 <= b(x,y) / b(v,y) <= c2 at every sampled pair"""
        b_xy = self.density_m(x, y)
        b_vy = self.density_m(self.v, y)
        coin = self.c1 * b_vy / b_xy if b_xy > 0 else math.inf
        if not 0.0 <= coin <= 1.0 + COIN_SLACK:
            raise A4ViolationError(x, y, coin)
        if b_xy > self.c2 * b_vy * (1.0 + COIN_SLACK):
            ratio = b_xy / b_vy if b_vy > 0 else math.inf
            raise A4ViolationError(x, y, coin, ratio=ratio, c2=self.c2)
        return min(coin, 1.0)


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Weighted atoms (X_{jm}, e^{theta j} / N) accumulated over regeneration cycles"""

    states: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def atoms(self) -> List[Tuple[State, float]]:
        return list(zip(self.states.tolist(), self.weights.tolist()))

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def histogram(self, edges: Sequence[float]) -> np.ndarray:
        counts, _ = np.histogram(self.states, bins=np.asarray(edges, dtype=float), weights=self.weights)
        return counts

    def mass(self, predicate: Callable[[State], bool]) -> float:
        mask = np.fromiter((bool(predicate(s)) for s in self.states.tolist()), dtype=bool, count=len(self.states))
        return float(self.weights[mask].sum())

    def to_dict(self, edges: Optional[Sequence[float]] = None) -> dict:
        summary = {"n_atoms": int(len(self.states)), "total": self.total}
        if edges is not None:
            summary["edges"] = list(map(float, edges))
            summary["histogram"] = self.histogram(edges).tolist()
        return summary


@dataclass(frozen=True)
class KernelEstimate:
    fit: SaaFit
    m: int
    u_at_points: List[Tuple[State, McEstimate]]
    eta: EmpiricalMeasure

    @property
    def lambda_star_B(self) -> float:
        return math.exp(-self.fit.theta / self.m)

    @property
    def ci_halfwidth(self) -> float:
        return self.lambda_star_B * self.fit.ci_halfwidth / self.m

    def to_dict(self, edges: Optional[Sequence[float]] = None) -> dict:
        return {
            "lambda_star_B": self.lambda_star_B,
            "lambda_ci_halfwidth": self.ci_halfwidth,
            "theta_block": self.fit.theta,
            "m": self.m,
            "n_cycles": self.fit.n_samples,
            "n_survived": self.fit.n_survived,
            "u_at_points": [
                {"x": float(x), **estimate.to_dict()} for x, estimate in self.u_at_points
            ],
            "eta": self.eta.to_dict(edges),
        }


def split_block_cycle(
    model: KernelModel,
    rng: np.random.Generator,
    n_max: int = DEFAULT_N_MAX,
    start: Optional[State] = None,
) -> RegenCycleSample:
    """Blocks of m moves from X_0 ~ psi (or start); a retrospective coin decides regeneration"""
    x = model.psi_sampler(rng) if start is None else start
    path = [x]
    for step in range(1, n_max + 1):
        y = model.run_block(x, rng)
        if y is KILLED:
            return RegenCycleSample(tau=step, survived=False, path=np.asarray(path))
        if rng.random() < model.regeneration_coin(x, y):
            return RegenCycleSample(tau=step, survived=True, path=np.asarray(path))
        path.append(y)
        x = y
    return RegenCycleSample(tau=n_max, survived=False, truncated=True, path=np.asarray(path[:n_max]))


def simulate_kernel_cycles(
    model: KernelModel,
    n_cycles: int,
    seed: int,
    n_max: int = DEFAULT_N_MAX,
    threads: int = 1,
    start: Optional[State] = None,
    start_index: int = 0,
) -> List[RegenCycleSample]:
    if n_cycles < 1:
        raise DomainError(f"n_cycles must be at least 1, got {n_cycles}")
    stream, extra = (Stream.KERNEL_CYCLES, ()) if start is None else (Stream.KERNEL_U, (start_index,))

    def worker(block: int, items: range) -> List[RegenCycleSample]:
        rng = block_generator(seed, stream, block, *extra)
        return [split_block_cycle(model, rng, n_max, start) for _ in items]

    return run_blocks(worker, n_cycles, threads)


def empirical_measure(samples: Sequence[RegenCycleSample], theta: float) -> EmpiricalMeasure:
    n = len(samples)
    states = [sample.path for sample in samples]
    weights = [discount_weights(theta, len(sample.path)) / n for sample in samples]
    return EmpiricalMeasure(
        states=np.concatenate(states) if states else np.zeros(0),
        weights=np.concatenate(weights) if weights else np.zeros(0),
    )


def estimate_kernel_pf(
    model: KernelModel,
    n_cycles: int,
    seed: int,
    tol: float = 1e-12,
    query_points: Sequence[State] = (),
    u_cycles: int = DEFAULT_U_CYCLES,
    n_max: int = DEFAULT_N_MAX,
    threads: int = 1,
    ci_level: float = 0.95,
) -> KernelEstimate:
    """theta from block cycles; lambda*_B = e^{-theta/m}; u* at query points; eta* as atoms"""
    samples = simulate_kernel_cycles(model, n_cycles, seed, n_max, threads)
    fit = saa_fit(samples, tol, ci_level, seed=seed)
    u_at_points = [
        (x, empirical_h(simulate_kernel_cycles(model, u_cycles, seed, n_max, threads, x, i), fit.theta))
        for i, x in enumerate(query_points)
    ]
    logger.debug("Kernel %s: lambda_B=%.6g from %d cycles", model.name, math.exp(-fit.theta / model.m), n_cycles)
    return KernelEstimate(fit=fit, m=model.m, u_at_points=u_at_points, eta=empirical_measure(samples, fit.theta))


def discretize_oracle(model: KernelModel, grid_size: int) -> NonNegMatrix:
    """Midpoint-rule matrix B[i, j] = k(x_i, x_j) * h of the one-step kernel on its domain"""
    if model.one_step_density is None or model.domain is None:
        raise DomainError(f"Kernel {model.name!r} has no one-step density or domain for the oracle")
    if grid_size < 1:
        raise DomainError(f"grid_size must be at least 1, got {grid_size}")
    lo, hi = model.domain
    width = (hi - lo) / grid_size
    mids = lo + width * (np.arange(grid_size) + 0.5)
    X, Y = np.meshgrid(mids, mids, indexing="ij")
    density = np.asarray(model.one_step_density(X, Y), dtype=float)
    if density.shape != X.shape:
        density = np.vectorize(model.one_step_density)(X, Y)
    matrix = density * width

    row_sums = matrix.sum(axis=1)
    if row_sums.max() > 1.0 + GRID_ROW_TOL:
        worst = int(np.argmax(row_sums))
        raise GridTooCoarseError(
            f"Grid of {grid_size} cells gives row sum {row_sums[worst]:.8g} > 1; refine the grid",
            {"grid_size": grid_size, "row": worst, "row_sum": float(row_sums[worst])},
        )
    return NonNegMatrix.from_dense(matrix)


# Built-in kernels on [0, 1]

UNIFORM_KILL = 0.2


def uniform_kill_kernel(kill: float = UNIFORM_KILL, m: int = 2) -> KernelModel:
    """Survive w.p. 1 - kill, then jump uniformly on [0, 1]; lambda*_B = 1 - kill"""
    if not 0 <= kill < 1:
        raise DomainError(f"kill probability must lie in [0, 1), got {kill}")
    survive = 1.0 - kill

    def step(x, rng):
        return KILLED if rng.random() < kill else rng.random()

    return KernelModel(
        step_sampler=step,
        density_m=lambda x, y: survive**m,
        psi_sampler=lambda rng: rng.random(),
        m=m,
        v=0.5,
        c1=1.0,
        c2=1.0,
        one_step_density=lambda x, y: np.full(np.shape(x), survive),
        domain=(0.0, 1.0),
        name="uniform_kill",
    )


MIX_WEIGHT = 0.5
MIX_SIGMA = 0.25
SQRT_2PI = math.sqrt(2.0 * math.pi)
CERT_GRID = 201
CERT_MARGIN = 0.02


def _kill_rate(x):
    return 0.1 + 0.2 * x


def _means(x):
    return 0.2 + 0.3 * x, 0.8 - 0.3 * x


def _truncnorm_pdf(y, mu):
    mass = special.ndtr((1.0 - mu) / MIX_SIGMA) - special.ndtr(-mu / MIX_SIGMA)
    z = (y - mu) / MIX_SIGMA
    inside = (y >= 0.0) & (y <= 1.0)
    return np.where(inside, np.exp(-0.5 * z * z) / (MIX_SIGMA * SQRT_2PI * mass), 0.0)


def _mixture_pdf(x, y):
    mu1, mu2 = _means(np.asarray(x, dtype=float))
    return MIX_WEIGHT * _truncnorm_pdf(y, mu1) + (1 - MIX_WEIGHT) * _truncnorm_pdf(y, mu2)


def gaussian_mixture_density(x, y):
    """One-step density on [0, 1]: survival 1 - kappa(x) times a two-component truncated mixture"""
    return (1.0 - _kill_rate(np.asarray(x, dtype=float))) * _mixture_pdf(x, y)


def _sample_truncated(mu: float, rng: np.random.Generator) -> float:
    while True:
        y = rng.normal(mu, MIX_SIGMA)
        if 0.0 <= y <= 1.0:
            return float(y)


def _sample_move(x: float, rng: np.random.Generator) -> float:
    mu1, mu2 = _means(x)
    return _sample_truncated(mu1 if rng.random() < MIX_WEIGHT else mu2, rng)


def _gaussian_step(x, rng):
    if rng.random() < _kill_rate(x):
        return KILLED
    return _sample_move(x, rng)


def certify_on_grid(density: Callable, v_candidates: np.ndarray, grid: np.ndarray, margin: float) -> Tuple[float, float, float]:
    """(v, c1, c2) maximizing c1/c2 on a grid, widened by the safety margin"""
    X, Y = np.meshgrid(grid, grid, indexing="ij")
    values = density(X, Y)
    best = None
    for v in v_candidates:
        reference = density(np.full_like(grid, v), grid)
        ratios = values / reference[np.newaxis, :]
        c1, c2 = float(ratios.min()), float(ratios.max())
        if best is None or c1 / c2 > best[1] / best[2]:
            best = (float(v), c1, c2)
    v, c1, c2 = best
    return v, c1 * (1.0 - margin), c2 * (1.0 + margin)


@lru_cache(maxsize=1)
def gaussian_mixture_kernel() -> KernelModel:
    """Flagship compact kernel: state-dependent killing and a drifting Gaussian mixture, m = 1"""
    grid = np.linspace(0.0, 1.0, CERT_GRID)
    v, c1, c2 = certify_on_grid(gaussian_mixture_density, np.linspace(0.0, 1.0, 21), grid, CERT_MARGIN)
    logger.debug("Gaussian mixture kernel certified: v=%.3f c1=%.6g c2=%.6g", v, c1, c2)

    return KernelModel(
        step_sampler=_gaussian_step,
        density_m=lambda x, y: float(gaussian_mixture_density(x, y)),
        psi_sampler=lambda rng: _sample_move(v, rng),
        m=1,
        v=v,
        c1=c1,
        c2=c2,
        one_step_density=gaussian_mixture_density,
        domain=(0.0, 1.0),
        name="gaussian_mixture",
    )


def finite_kernel_model(B: NonNegMatrix, cert: MinorizationCertificate) -> KernelModel:
    """A certified finite matrix as a kernel on {0..n-1} with counting reference measure"""
    chain = augment(B)
    psi_states = np.flatnonzero(cert.psi > 0)
    psi_weights = cert.psi[psi_states]
    one_step = B.to_dense()

    def step(x, rng):
        return chain.step(int(x), rng.random())

    def psi_sampler(rng):
        return int(rng.choice(psi_states, p=psi_weights))

    return KernelModel(
        step_sampler=step,
        density_m=lambda x, y: float(cert.Bm[int(x), int(y)]),
        psi_sampler=psi_sampler,
        m=cert.m,
        v=cert.v,
        c1=cert.c1,
        c2=cert.c2,
        one_step_density=lambda x, y: one_step[np.asarray(x, dtype=int), np.asarray(y, dtype=int)],
        name="finite",
    )
