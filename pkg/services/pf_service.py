"""
pf-regen Solver Service
Runs the engines for each command and assembles RunReports; shared by the
CLI and the HTTP routes
"""

import logging
import math
import time
from contextlib import contextmanager
from functools import lru_cache
from typing import Any, Dict, Iterator, Optional

import numpy as np

from config import Settings, get_settings
from core.birthdeath import (
    BirthDeathSpec,
    absorption_probability,
    bd_matrix,
    closed_form_lambda,
    closed_form_u,
    convergence_param_probe,
    critical_twist_probs,
    first_passage_pmf,
    first_passage_scaled,
    stirling_constant,
    supercritical_twist_limits,
    truncated_lambda,
)
from core.errors import A1FailureError, DomainError, ReducibleMatrixError
from core.exact_solver import (
    check_gap_condition,
    find_root,
    solve_exact,
    taboo_decompose,
)
from core.kernel import (
    discretize_oracle,
    estimate_kernel_pf,
    gaussian_mixture_kernel,
    uniform_kill_kernel,
)
from core.linalg import spectral_radius
from core.matrix import (
    NonNegMatrix,
    analyze_graph,
    augment,
    default_regeneration_state,
    load_matrix,
    normalize,
)
from core.mc_solver import CI_METHODS, solve_mc
from core.minorize import (
    MinorizationCertificate,
    certify_A3prime,
    check_certificate,
    solve_via_split,
    theta_gap_bound,
)
from core.reports import RunReport
from core.twist import check_power_limit, doob_transform, uniqueness_probe, verify_stationarity
from utils.rng import fresh_seed

logger = logging.getLogger(__name__)

POWER_LIMIT_MAX_N = 200
POWER_LIMIT_TERMS = 200
UNIQUENESS_TRIALS = 5
DENSE_REPORT_MAX_N = 50
BD_POWER_LIMIT_MAX_L = 100
BD_POWER_TERMS = 3000
BD_PROFILE_STATES = 20
BD_PASSAGE_POINTS = (500, 1000, 2000)
BD_PROBE_STEPS = 2000
SUPERCRITICAL_FACTOR = 1.05
KERNELS = ("gaussian_mixture", "uniform_kill")
KERNEL_QUERY_POINTS = (0.25, 0.5, 0.75)
KERNEL_HISTOGRAM_BINS = 10


class Timer:
    """Wall-clock seconds per named phase"""

    def __init__(self):
        self.timings: Dict[str, float] = {}

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = time.perf_counter() - start


def _prepare(matrix_text: str):
    """Parse, normalize to sub-stochastic and analyse the support graph"""
    G = load_matrix(matrix_text)
    normalized = normalize(G)
    return normalized, analyze_graph(normalized.B)


def _require_irreducible(graph):
    if not graph.irreducible:
        raise ReducibleMatrixError(graph.scc_witness)


def _check_state(B: NonNegMatrix, z: Optional[int]):
    if z is not None and not 0 <= z < B.n:
        raise DomainError(f"Regeneration state z={z} out of range for n={B.n}", {"z": z, "n": B.n})


class PFService:
    """Command implementations; per-run arguments override the settings defaults"""

    def __init__(self, settings: Optional[Settings] = None):
        self.settings = settings or get_settings()

    def resolve_seed(self, seed: Optional[int]) -> int:
        if seed is not None:
            return int(seed)
        if self.settings.seed is not None:
            return self.settings.seed
        return fresh_seed()

    # ===== solve =====

    def solve(self, matrix_text: str, z: Optional[int] = None, tol: Optional[float] = None) -> RunReport:
        tol = tol or self.settings.tol
        config = {"z": z, "tol": tol}
        timer = Timer()

        with timer.phase("parse"):
            normalized, graph = _prepare(matrix_text)
        B = normalized.B
        _require_irreducible(graph)
        _check_state(B, z)

        with timer.phase("solve"):
            solution = solve_exact(B, z, tol, scale=normalized.s)
        with timer.phase("twist"):
            twisted = doob_transform(B, solution)
            stationarity = verify_stationarity(twisted)

        result = {**solution.to_dict(), "n": B.n, "period": graph.period, "pi_star": twisted.pi_star}
        if B.n <= DENSE_REPORT_MAX_N:
            result["P_star"] = twisted.P_star.to_dense()

        diagnostics: Dict[str, Any] = {
            "h_residual": solution.h_residual,
            "eig_residuals": list(solution.eig_residuals),
            "a2_holds": bool(math.isfinite(solution.h_prime)),
            "stationarity_residual": stationarity,
        }
        if B.n <= POWER_LIMIT_MAX_N:
            with timer.phase("power_limit"):
                check = check_power_limit(B, solution, graph.period, POWER_LIMIT_TERMS)
            diagnostics["power_limit"] = _power_limit_summary(check)
            diagnostics["unique_direction"] = uniqueness_probe(B, solution, UNIQUENESS_TRIALS, graph.period)
        else:
            diagnostics["power_limit"] = {"skipped": f"n={B.n} exceeds {POWER_LIMIT_MAX_N}"}
        diagnostics["timings"] = timer.timings

        logger.info("solve: n=%d z=%d lambda*=%.12g", B.n, solution.z, solution.lambda_star)
        return RunReport(command="solve", config=config, result=result, diagnostics=diagnostics)

    # ===== mc =====

    def mc(
        self,
        matrix_text: str,
        seed: Optional[int] = None,
        n_cycles: Optional[int] = None,
        n_max: Optional[int] = None,
        z: Optional[int] = None,
        ci_level: Optional[float] = None,
        ci_method: str = "delta",
        u_cycles: int = 0,
        threads: Optional[int] = None,
        tol: Optional[float] = None,
    ) -> RunReport:
        if ci_method not in CI_METHODS:
            raise DomainError(f"Unknown ci_method {ci_method!r}; expected one of {CI_METHODS}")
        if u_cycles < 0:
            raise DomainError(f"u_cycles must be nonnegative, got {u_cycles}")
        seed = self.resolve_seed(seed)
        n_cycles = self.settings.n_cycles if n_cycles is None else n_cycles
        n_max = n_max or self.settings.n_max
        ci_level = ci_level or self.settings.ci_level
        threads = threads or self.settings.threads
        tol = tol or self.settings.tol
        if n_cycles < 1:
            raise DomainError(f"n_cycles must be at least 1, got {n_cycles}", {"n_cycles": n_cycles})
        timer = Timer()

        with timer.phase("parse"):
            normalized, graph = _prepare(matrix_text)
        B = normalized.B
        _require_irreducible(graph)
        _check_state(B, z)
        z = default_regeneration_state(B) if z is None else z
        config = {
            "seed": seed,
            "n_cycles": n_cycles,
            "n_max": n_max,
            "z": z,
            "ci_level": ci_level,
            "ci_method": ci_method,
            "u_cycles": u_cycles,
            "threads": threads,
            "tol": tol,
        }

        with timer.phase("simulate"):
            outcome = solve_mc(augment(B), z, n_cycles, seed, n_max, threads, ci_level, ci_method, u_cycles, tol)
        fit = outcome.fit
        result = {
            **outcome.to_dict(),
            "lambda_G": normalized.s * fit.lambda_star,
            "scale": normalized.s,
            "period": graph.period,
        }
        diagnostics = {
            "n_samples": fit.n_samples,
            "n_survived": fit.n_survived,
            "n_truncated": fit.n_truncated,
            "truncated_fraction": fit.truncated_fraction,
            "h_std_error": fit.h_std_error,
            "h_residual": fit.h_residual,
            "timings": timer.timings,
        }
        logger.info("mc: n=%d seed=%d lambda_hat=%.8g +/- %.3g", B.n, seed, fit.lambda_star, fit.lambda_halfwidth)
        return RunReport(command="mc", config=config, result=result, diagnostics=diagnostics)

    # ===== conditions =====

    def conditions(self, matrix_text: str, m_max: int = 4, tol: Optional[float] = None) -> RunReport:
        tol = tol or self.settings.tol
        config = {"m_max": m_max, "tol": tol}
        timer = Timer()

        with timer.phase("parse"):
            normalized, graph = _prepare(matrix_text)
        B = normalized.B
        rho_B = spectral_radius(B.csr)
        theta1 = -math.log(rho_B) if rho_B > 0 else math.inf
        result: Dict[str, Any] = {
            "n": B.n,
            "scale": normalized.s,
            "irreducible": graph.irreducible,
            "period": graph.period,
            "n_components": graph.n_components,
            "theta1": theta1,
        }
        if not graph.irreducible:
            result["witness"] = list(graph.scc_witness)
            logger.info("conditions: n=%d reducible, witness=%s", B.n, graph.scc_witness)
            return RunReport(command="conditions", config=config, result=result, diagnostics={"timings": timer.timings})

        z = default_regeneration_state(B)
        with timer.phase("cycle_transform"):
            td = taboo_decompose(B, z, check_irreducible=False)
            _, theta2, gap_ok = check_gap_condition(td)
            try:
                root = find_root(td, tol)
                a1 = {"holds": True, "theta": root.theta, "h_prime": root.dh, "a2_holds": math.isfinite(root.dh)}
            except A1FailureError as e:
                a1 = {"holds": False, "reason": e.message, "a2_holds": False}
        result.update({"z": z, "theta2": theta2, "theta_gap_holds": gap_ok, "a1": a1})

        with timer.phase("minorize"):
            certificate = certify_A3prime(B, m_max)
        if isinstance(certificate, MinorizationCertificate):
            check = check_certificate(B, certificate)
            result["minorization"] = {
                "certified": True,
                **certificate.to_dict(),
                "theta_gap_bound": theta_gap_bound(certificate, theta1),
                "reconstruction_error": check.reconstruction_error,
                "remainder_bound_ok": check.remainder_bound_ok,
                "ratio_bounds_ok": check.ratio_bounds_ok,
            }
        else:
            result["minorization"] = {"certified": False, **certificate.to_dict()}

        logger.info("conditions: n=%d period=%d certified=%s", B.n, graph.period, result["minorization"]["certified"])
        return RunReport(command="conditions", config=config, result=result, diagnostics={"timings": timer.timings})

    # ===== split =====

    def split(
        self,
        matrix_text: str,
        m_max: int = 4,
        engine: str = "exact",
        seed: Optional[int] = None,
        n_cycles: Optional[int] = None,
        threads: Optional[int] = None,
        tol: Optional[float] = None,
    ) -> RunReport:
        """Split-chain solve from a certified minorization, compared with the state engine"""
        tol = tol or self.settings.tol
        seed = self.resolve_seed(seed)
        n_cycles = self.settings.n_cycles if n_cycles is None else n_cycles
        threads = threads or self.settings.threads
        config = {"m_max": m_max, "engine": engine, "seed": seed, "n_cycles": n_cycles, "threads": threads, "tol": tol}
        timer = Timer()

        with timer.phase("parse"):
            normalized, graph = _prepare(matrix_text)
        B = normalized.B
        _require_irreducible(graph)
        with timer.phase("minorize"):
            certificate = certify_A3prime(B, m_max)
        if not isinstance(certificate, MinorizationCertificate):
            raise DomainError(
                f"No minorization certificate for m <= {m_max} ({certificate.reason})",
                certificate.to_dict(),
            )
        with timer.phase("split_solve"):
            split = solve_via_split(
                B, certificate, engine, tol, n_cycles, seed, self.settings.n_max, threads, self.settings.ci_level
            )
        with timer.phase("state_solve"):
            state = solve_exact(B, tol=tol)

        result = {
            **split.to_dict(),
            "certificate": certificate.to_dict(),
            "lambda_state_engine": state.lambda_star,
            "lambda_difference": abs(split.lambda_star - state.lambda_star),
        }
        logger.info("split: engine=%s m=%d lambda=%.12g", engine, certificate.m, split.lambda_star)
        return RunReport(command="split", config=config, result=result, diagnostics={"timings": timer.timings})

    # ===== examples =====

    def example_bd(
        self, p: float, L: int, boundary: str = "killed", tol: Optional[float] = None, power_terms: int = BD_POWER_TERMS
    ) -> RunReport:
        tol = tol or self.settings.tol
        spec = BirthDeathSpec(p, L, boundary)
        config = {"name": "bd", "p": p, "L": L, "boundary": boundary, "tol": tol, "power_terms": power_terms}
        timer = Timer()

        with timer.phase("solve"):
            B = bd_matrix(spec)
            graph = analyze_graph(B)
            solution = solve_exact(B, tol=tol)
        lam_closed = closed_form_lambda(p)

        states = np.arange(1, min(BD_PROFILE_STATES, L) + 1)
        u_profile = solution.u_star[states - 1] / solution.u_star[0]
        u_closed = np.array([closed_form_u(p, x) for x in states]) / closed_form_u(p, 1)
        u_relative_error = float(np.max(np.abs(u_profile - u_closed) / u_closed))

        result: Dict[str, Any] = {
            "lambda_L": solution.lambda_star,
            "lambda_closed_form": lam_closed,
            "lambda_error": abs(solution.lambda_star - lam_closed),
            "period": graph.period,
            "z": solution.z,
            "u_profile": u_profile,
            "u_closed_form": u_closed,
            "u_max_relative_error": u_relative_error,
        }
        if boundary == "killed":
            result["lambda_truncated_closed_form"] = truncated_lambda(p, L)

        with timer.phase("first_passage"):
            result["first_passage"] = _first_passage_summary(p)
        with timer.phase("convergence"):
            critical = convergence_param_probe(p, lam_closed, BD_PROBE_STEPS)
            above = convergence_param_probe(p, SUPERCRITICAL_FACTOR * lam_closed, BD_PROBE_STEPS)
        result["convergence"] = {
            "critical": {"lambda": critical.lam, "tail_ratio": critical.tail_ratio, "diverging": critical.diverging},
            "supercritical": {"lambda": above.lam, "tail_ratio": above.tail_ratio, "diverging": above.diverging},
        }
        result["twist"] = {
            "critical_probs": [list(critical_twist_probs(x)) for x in range(1, 6)],
            "supercritical_limits": list(supercritical_twist_limits(p, SUPERCRITICAL_FACTOR * lam_closed)),
        }

        diagnostics: Dict[str, Any] = {"eig_residuals": list(solution.eig_residuals), "h_residual": solution.h_residual}
        if L <= BD_POWER_LIMIT_MAX_L:
            with timer.phase("power_limit"):
                check = check_power_limit(B, solution, graph.period, power_terms, relative=True)
            diagnostics["power_limit"] = _power_limit_summary(check)
        else:
            diagnostics["power_limit"] = {"skipped": f"L={L} exceeds {BD_POWER_LIMIT_MAX_L}"}
        diagnostics["timings"] = timer.timings

        logger.info("example bd: p=%g L=%d lambda_L=%.10g", p, L, solution.lambda_star)
        return RunReport(command="example", config=config, result=result, diagnostics=diagnostics)

    def example_kernel(
        self,
        cycles: Optional[int] = None,
        seed: Optional[int] = None,
        grid: int = 200,
        kernel: str = "gaussian_mixture",
        u_cycles: int = 2000,
        threads: Optional[int] = None,
        ci_level: Optional[float] = None,
    ) -> RunReport:
        if kernel not in KERNELS:
            raise DomainError(f"Unknown kernel {kernel!r}; expected one of {KERNELS}")
        seed = self.resolve_seed(seed)
        cycles = self.settings.n_cycles if cycles is None else cycles
        threads = threads or self.settings.threads
        ci_level = ci_level or self.settings.ci_level
        if cycles < 1:
            raise DomainError(f"cycles must be at least 1, got {cycles}", {"cycles": cycles})
        config = {
            "name": "kernel",
            "kernel": kernel,
            "cycles": cycles,
            "seed": seed,
            "grid": grid,
            "u_cycles": u_cycles,
            "threads": threads,
            "ci_level": ci_level,
        }
        timer = Timer()

        model = gaussian_mixture_kernel() if kernel == "gaussian_mixture" else uniform_kill_kernel()
        with timer.phase("oracle"):
            oracle = solve_exact(discretize_oracle(model, grid), tol=self.settings.tol)
        with timer.phase("simulate"):
            estimate = estimate_kernel_pf(
                model,
                cycles,
                seed,
                self.settings.tol,
                KERNEL_QUERY_POINTS,
                u_cycles,
                self.settings.n_max,
                threads,
                ci_level,
            )

        edges = np.linspace(0.0, 1.0, KERNEL_HISTOGRAM_BINS + 1)
        halfwidth = estimate.ci_halfwidth
        deviation = abs(estimate.lambda_star_B - oracle.lambda_star)
        result = {
            **estimate.to_dict(edges),
            "certificate": {"v": model.v, "m": model.m, "c1": model.c1, "c2": model.c2},
            "lambda_oracle": oracle.lambda_star,
            "oracle_deviation": deviation,
            "within_3_halfwidths": bool(deviation <= 3 * halfwidth),
        }
        diagnostics = {
            "n_truncated": estimate.fit.n_truncated,
            "truncated_fraction": estimate.fit.truncated_fraction,
            "timings": timer.timings,
        }
        logger.info("example kernel: %s lambda_B=%.6g +/- %.3g", kernel, estimate.lambda_star_B, halfwidth)
        return RunReport(command="example", config=config, result=result, diagnostics=diagnostics)


def _power_limit_summary(check) -> Dict[str, Any]:
    return {
        "period": check.period,
        "relative": check.relative,
        "errors": check.errors,
        "final_error": check.final_error,
        "spectral_gap": check.spectral_gap,
        "gap_ok": check.gap_ok,
    }


def _first_passage_summary(p: float) -> Dict[str, Any]:
    horizon = max(BD_PASSAGE_POINTS)
    cumulative = math.fsum(first_passage_pmf(p, n) for n in range(horizon + 1))
    return {
        "scaled": {str(n): first_passage_scaled(p, n) for n in BD_PASSAGE_POINTS},
        "stirling_constant": stirling_constant(p),
        "cumulative": cumulative,
        "horizon": horizon,
        "absorption_probability": absorption_probability(p),
    }


@lru_cache(maxsize=1)
def get_pf_service() -> PFService:
    return PFService()
