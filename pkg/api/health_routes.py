"""
pf-regen Health Routes
Service status and effective run defaults for monitoring
"""

from datetime import datetime, timezone

from fastapi import APIRouter, HTTPException

from config import get_settings
from core.reports import SCHEMA_VERSION

SERVICE_NAME = "pf-regen API"
VERSION = "0.1.0"

router = APIRouter(prefix="/api/v1", tags=["health"])


@router.get("/health")
async def health_check():
    """Detailed health check for monitoring"""
    try:
        settings = get_settings()
        return {
            "status": "healthy",
            "service": SERVICE_NAME,
            "version": VERSION,
            "schema_version": SCHEMA_VERSION,
            "environment": settings.environment,
            "settings": settings.model_dump(),
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
    except Exception as e:
        raise HTTPException(status_code=503, detail=f"Service unavailable: {str(e)}")
