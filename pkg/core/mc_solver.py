"""
pf-regen Monte Carlo Solver
Regenerative simulation of the killed chain: cycles from z, the empirical
cycle transform, its sample-average root and confidence intervals
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, special, stats

from core.errors import DomainError, UnestimableError
from core.matrix import AugmentedChain
from utils.rng import Stream, block_generator, run_blocks

logger = logging.getLogger(__name__)

DEFAULT_N_MAX = 1_000_000
UNIFORM_CHUNK = 64
CI_METHODS = ("delta", "bootstrap")
LOG_FLOAT_MAX = math.log(np.finfo(float).max)


@dataclass(frozen=True, eq=False)
class RegenCycleSample:
    """One regeneration cycle; path[j] is X_j for j < tau while the chain was alive"""

    tau: int
    survived: bool
    truncated: bool = False
    path: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64), repr=False)

    @property
    def occupation(self) -> Dict[int, List[int]]:
        visits: Dict[int, List[int]] = {}
        for time, state in enumerate(self.path.tolist()):
            visits.setdefault(state, []).append(time)
        return visits


@dataclass(frozen=True)
class McEstimate:
    value: float
    std_error: float
    n_samples: int
    n_survived: int

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "std_error": self.std_error,
            "n_samples": self.n_samples,
            "n_survived": self.n_survived,
        }


@dataclass(frozen=True)
class SaaFit:
    """Sample-average root of the empirical A1 equation with its interval"""

    theta: float
    ci_halfwidth: float
    h_prime: float
    h_std_error: float
    h_residual: float
    ci_level: float
    ci_method: str
    n_samples: int
    n_survived: int
    n_truncated: int

    @property
    def lambda_star(self) -> float:
        return math.exp(-self.theta)

    @property
    def lambda_halfwidth(self) -> float:
        return self.lambda_star * self.ci_halfwidth

    @property
    def truncated_fraction(self) -> float:
        return self.n_truncated / self.n_samples if self.n_samples else 0.0


def _cycle_arrays(samples: Sequence[RegenCycleSample]) -> Tuple[np.ndarray, np.ndarray]:
    taus = np.fromiter((s.tau for s in samples), dtype=float, count=len(samples))
    survived = np.fromiter((s.survived for s in samples), dtype=bool, count=len(samples))
    return taus, survived


def sample_cycle(
    chain: AugmentedChain,
    z: int,
    rng: np.random.Generator,
    n_max: int = DEFAULT_N_MAX,
    start: Optional[int] = None,
) -> RegenCycleSample:
    """Run from start (default z) until the first return to z, a kill, or n_max steps"""
    if n_max < 1:
        raise DomainError(f"n_max must be at least 1, got {n_max}")
    x = z if start is None else start
    path = [x]
    uniforms = rng.random(UNIFORM_CHUNK)
    cursor = 0
    for step in range(1, n_max + 1):
        if cursor == UNIFORM_CHUNK:
            uniforms = rng.random(UNIFORM_CHUNK)
            cursor = 0
        y = chain.step(x, uniforms[cursor])
        cursor += 1
        if y is None:
            return RegenCycleSample(tau=step, survived=False, path=np.asarray(path, dtype=np.int64))
        if y == z:
            return RegenCycleSample(tau=step, survived=True, path=np.asarray(path, dtype=np.int64))
        path.append(y)
        x = y
    return RegenCycleSample(
        tau=n_max, survived=False, truncated=True, path=np.asarray(path[:n_max], dtype=np.int64)
    )


def simulate_cycles(
    chain: AugmentedChain,
    z: int,
    n_cycles: int,
    seed: int,
    n_max: int = DEFAULT_N_MAX,
    threads: int = 1,
    start: Optional[int] = None,
) -> List[RegenCycleSample]:
    if n_cycles < 1:
        raise DomainError(f"n_cycles must be at least 1, got {n_cycles}")
    stream, extra = (Stream.CYCLES, ()) if start is None else (Stream.U_ESTIMATE, (start,))

    def worker(block: int, items: range) -> List[RegenCycleSample]:
        rng = block_generator(seed, stream, block, *extra)
        return [sample_cycle(chain, z, rng, n_max, start) for _ in items]

    samples = run_blocks(worker, n_cycles, threads)
    n_truncated = sum(s.truncated for s in samples)
    if n_truncated:
        logger.warning("%d of %d cycles hit the n_max=%d cap", n_truncated, n_cycles, n_max)
    return samples


def _check_discount(theta: float, steps: float):
    if theta * steps > LOG_FLOAT_MAX:
        raise UnestimableError(
            f"e^(theta j) overflows: theta={theta:.6g} over {int(steps)} steps",
            {"theta": theta, "steps": int(steps)},
        )


def discount_weights(theta: float, length: int) -> np.ndarray:
    """e^{theta j} for j = 0..length-1"""
    _check_discount(theta, max(length - 1, 0))
    return np.exp(theta * np.arange(length))


def _discounted(taus: np.ndarray, survived: np.ndarray, theta: float) -> np.ndarray:
    """e^{theta tau} on surviving cycles, 0 on killed or truncated ones"""
    values = np.zeros(len(taus))
    if survived.any():
        _check_discount(theta, taus[survived].max())
    values[survived] = np.exp(theta * taus[survived])
    return values


def _mean_and_error(values: np.ndarray) -> Tuple[float, float]:
    n = len(values)
    mean = float(values.mean())
    if n < 2:
        return mean, 0.0
    return mean, float(values.std(ddof=1) / math.sqrt(n))


def empirical_h(samples: Sequence[RegenCycleSample], theta: float) -> McEstimate:
    if not samples:
        raise DomainError("empirical_h needs at least one cycle")
    taus, survived = _cycle_arrays(samples)
    values = _discounted(taus, survived, theta)
    mean, error = _mean_and_error(values)
    return McEstimate(mean, error, len(samples), int(survived.sum()))


def _saa_root(taus: np.ndarray, n_total: int, tol: float) -> float:
    """Root of log mean(e^{theta tau}) = 0 over the surviving cycle lengths"""
    log_n = math.log(n_total)

    def log_h(theta: float) -> float:
        return float(special.logsumexp(theta * taus)) - log_n

    at_zero = log_h(0.0)
    if at_zero == 0.0:
        return 0.0
    if at_zero > 0:
        lo, hi = -1.0, 0.0
        while log_h(lo) > 0:
            lo *= 2.0
    else:
        lo, hi = 0.0, (log_n - math.log(len(taus))) / taus.min() + 1.0
    return float(optimize.bisect(log_h, lo, hi, xtol=tol, maxiter=500))


def _bootstrap_halfwidth(
    taus: np.ndarray, survived: np.ndarray, level: float, reps: int, seed: int, tol: float
) -> float:
    rng = block_generator(seed, Stream.BOOTSTRAP, 0)
    n = len(taus)
    thetas = []
    for _ in range(reps):
        index = rng.integers(0, n, size=n)
        kept = taus[index][survived[index]]
        if len(kept):
            thetas.append(_saa_root(kept, n, tol))
    if len(thetas) < 2:
        return math.inf
    lower, upper = np.quantile(thetas, [(1 - level) / 2, (1 + level) / 2])
    return float(upper - lower) / 2.0


def saa_fit(
    samples: Sequence[RegenCycleSample],
    tol: float = 1e-12,
    ci_level: float = 0.95,
    ci_method: str = "delta",
    bootstrap_reps: int = 200,
    seed: int = 0,
) -> SaaFit:
    if ci_method not in CI_METHODS:
        raise DomainError(f"Unknown ci_method {ci_method!r}; expected one of {CI_METHODS}")
    if not 0 < ci_level < 1:
        raise DomainError(f"ci_level must lie in (0, 1), got {ci_level}")
    taus, survived = _cycle_arrays(samples)
    n_survived = int(survived.sum())
    if n_survived == 0:
        raise UnestimableError(
            "No cycle returned before killing; A1 cannot be estimated",
            {"n_cycles": len(samples)},
        )
    n_truncated = sum(s.truncated for s in samples)

    theta = _saa_root(taus[survived], len(samples), tol)
    values = _discounted(taus, survived, theta)
    h_hat, h_error = _mean_and_error(values)
    h_prime = float((taus * values).mean())

    if ci_method == "delta":
        quantile = stats.norm.ppf((1 + ci_level) / 2)
        halfwidth = float(quantile * h_error / h_prime)
    else:
        halfwidth = _bootstrap_halfwidth(taus, survived, ci_level, bootstrap_reps, seed, tol)

    return SaaFit(
        theta=theta,
        ci_halfwidth=halfwidth,
        h_prime=h_prime,
        h_std_error=h_error,
        h_residual=abs(h_hat - 1.0),
        ci_level=ci_level,
        ci_method=ci_method,
        n_samples=len(samples),
        n_survived=n_survived,
        n_truncated=n_truncated,
    )


def saa_solve_theta(samples: Sequence[RegenCycleSample], tol: float = 1e-12) -> Tuple[float, float]:
    fit = saa_fit(samples, tol)
    return fit.theta, fit.ci_halfwidth


def estimate_u(
    chain: AugmentedChain,
    z: int,
    x: int,
    theta_hat: float,
    n_cycles: int,
    seed: int,
    n_max: int = DEFAULT_N_MAX,
    threads: int = 1,
) -> McEstimate:
    """u*(x) = E_x e^{theta tau} I(T > tau), tau the first hitting time of z"""
    samples = simulate_cycles(chain, z, n_cycles, seed, n_max, threads, start=x)
    return empirical_h(samples, theta_hat)


def estimate_eta(
    samples: Sequence[RegenCycleSample], theta_hat: float, n_states: int
) -> List[McEstimate]:
    """Per-state mean of sum_j e^{theta j} over visits made while alive, killed cycles included"""
    n = len(samples)
    total = np.zeros(n_states)
    total_sq = np.zeros(n_states)
    max_len = max((len(s.path) for s in samples), default=0)
    discount = discount_weights(theta_hat, max_len)
    for sample in samples:
        contribution = np.bincount(
            sample.path, weights=discount[: len(sample.path)], minlength=n_states
        )
        total += contribution
        total_sq += contribution * contribution

    mean = total / n
    if n > 1:
        variance = np.maximum(total_sq / n - mean * mean, 0.0) * n / (n - 1)
        errors = np.sqrt(variance / n)
    else:
        errors = np.zeros(n_states)
    n_survived = sum(s.survived for s in samples)
    return [McEstimate(float(m), float(e), n, n_survived) for m, e in zip(mean, errors)]


@dataclass(frozen=True)
class MonteCarloResult:
    fit: SaaFit
    z: int
    seed: int
    u_estimates: List[McEstimate]
    eta_estimates: List[McEstimate]

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.fit.theta,
            "theta_ci_halfwidth": self.fit.ci_halfwidth,
            "lambda_hat": self.fit.lambda_star,
            "lambda_ci_halfwidth": self.fit.lambda_halfwidth,
            "ci_level": self.fit.ci_level,
            "ci_method": self.fit.ci_method,
            "h_prime": self.fit.h_prime,
            "z": self.z,
            "u_hat": [e.to_dict() for e in self.u_estimates],
            "eta_hat": [e.to_dict() for e in self.eta_estimates],
        }


def solve_mc(
    chain: AugmentedChain,
    z: int,
    n_cycles: int,
    seed: int,
    n_max: int = DEFAULT_N_MAX,
    threads: int = 1,
    ci_level: float = 0.95,
    ci_method: str = "delta",
    u_cycles: int = 0,
    tol: float = 1e-12,
) -> MonteCarloResult:
    """Cycles from z, SAA root, eta* from the same cycles and u* from per-state runs"""
    samples = simulate_cycles(chain, z, n_cycles, seed, n_max, threads)
    fit = saa_fit(samples, tol, ci_level, ci_method, seed=seed)
    eta = estimate_eta(samples, fit.theta, chain.n)
    u_estimates = []
    if u_cycles > 0:
        u_estimates = [
            estimate_u(chain, z, x, fit.theta, u_cycles, seed, n_max, threads)
            for x in range(chain.n)
        ]
    logger.debug(
        "MC fit: theta=%.8g +/- %.3g from %d/%d surviving cycles",
        fit.theta, fit.ci_halfwidth, fit.n_survived, fit.n_samples,
    )
    return MonteCarloResult(fit=fit, z=z, seed=seed, u_estimates=u_estimates, eta_estimates=eta)
