"""
pf-regen Solver Routes
HTTP front end for the solve, mc, conditions, split and example commands
"""

from typing import Any, Callable, Dict, Literal, Optional

from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, ConfigDict, Field

from core.errors import PFError
from core.reports import RunReport
from services.pf_service import get_pf_service

router = APIRouter(prefix="/api/v1", tags=["solver"])


# Pydantic models for API
class StrictRequest(BaseModel):
    """Unknown fields are rejected rather than ignored"""

    model_config = ConfigDict(extra="forbid")


class MatrixRequest(StrictRequest):
    matrix: str = Field(..., description="Coordinate-format matrix text: a state count line, then 'row col weight' lines")
    tol: Optional[float] = Field(None, gt=0)


class SolveRequest(MatrixRequest):
    z: Optional[int] = Field(None, ge=0)


class MonteCarloRequest(MatrixRequest):
    seed: Optional[int] = Field(None, ge=0)
    n_cycles: Optional[int] = Field(None, ge=1)
    n_max: Optional[int] = Field(None, ge=1)
    z: Optional[int] = Field(None, ge=0)
    ci_level: Optional[float] = Field(None, gt=0, lt=1)
    ci_method: Literal["delta", "bootstrap"] = "delta"
    u_cycles: int = Field(0, ge=0)
    threads: Optional[int] = Field(None, ge=1)


class ConditionsRequest(MatrixRequest):
    m_max: int = Field(4, ge=1)


class SplitRequest(MatrixRequest):
    m_max: int = Field(4, ge=1)
    engine: Literal["exact", "mc"] = "exact"
    seed: Optional[int] = Field(None, ge=0)
    n_cycles: Optional[int] = Field(None, ge=1)
    threads: Optional[int] = Field(None, ge=1)


class BirthDeathRequest(StrictRequest):
    p: float = Field(..., gt=0, lt=1)
    L: int = Field(..., ge=2)
    boundary: Literal["killed", "reflecting"] = "killed"
    tol: Optional[float] = Field(None, gt=0)


class KernelRequest(StrictRequest):
    cycles: Optional[int] = Field(None, ge=1)
    seed: Optional[int] = Field(None, ge=0)
    grid: int = Field(200, ge=1)
    kernel: Literal["gaussian_mixture", "uniform_kill"] = "gaussian_mixture"
    u_cycles: int = Field(2000, ge=1)
    threads: Optional[int] = Field(None, ge=1)


def _run(action: Callable[[], RunReport]) -> Dict[str, Any]:
    """Solver errors become 422 (bad input) or 409 (model fails a condition)"""
    try:
        return action().to_dict()
    except HTTPException:
        raise
    except PFError as e:
        raise HTTPException(status_code=422 if e.usage_error else 409, detail=e.to_dict())
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Solver failed: {str(e)}")


# ===== MATRIX ENDPOINTS =====

@router.post("/solve")
def solve(request: SolveRequest):
    """Exact Perron pair, Doob twist and power-limit check"""
    service = get_pf_service()
    return _run(lambda: service.solve(request.matrix, request.z, request.tol))


@router.post("/mc")
def monte_carlo(request: MonteCarloRequest):
    """Regenerative Monte Carlo estimate with confidence interval"""
    service = get_pf_service()
    return _run(
        lambda: service.mc(
            request.matrix,
            seed=request.seed,
            n_cycles=request.n_cycles,
            n_max=request.n_max,
            z=request.z,
            ci_level=request.ci_level,
            ci_method=request.ci_method,
            u_cycles=request.u_cycles,
            threads=request.threads,
            tol=request.tol,
        )
    )


@router.post("/conditions")
def conditions(request: ConditionsRequest):
    service = get_pf_service()
    return _run(lambda: service.conditions(request.matrix, request.m_max, request.tol))


@router.post("/split")
def split(request: SplitRequest):
    service = get_pf_service()
    return _run(
        lambda: service.split(
            request.matrix,
            m_max=request.m_max,
            engine=request.engine,
            seed=request.seed,
            n_cycles=request.n_cycles,
            threads=request.threads,
            tol=request.tol,
        )
    )


# ===== EXAMPLE ENDPOINTS =====

@router.post("/examples/bd")
def example_birth_death(request: BirthDeathRequest):
    service = get_pf_service()
    return _run(lambda: service.example_bd(request.p, request.L, request.boundary, request.tol))


@router.post("/examples/kernel")
def example_kernel(request: KernelRequest):
    service = get_pf_service()
    return _run(
        lambda: service.example_kernel(
            cycles=request.cycles,
            seed=request.seed,
            grid=request.grid,
            kernel=request.kernel,
            u_cycles=request.u_cycles,
            threads=request.threads,
        )
    )
