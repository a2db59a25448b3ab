import logging

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from api.health_routes import SERVICE_NAME, VERSION, router as health_router
from api.solver_routes import router as solver_router
from config import configure_logging, get_settings

logger = logging.getLogger(__name__)

app = FastAPI(
    title=SERVICE_NAME,
    version=VERSION,
    description="Perron-Frobenius eigenpairs of nonnegative matrices and kernels by regeneration",
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_methods=["GET", "POST", "OPTIONS"],
    allow_headers=["*"],
)

# Include all route modules
app.include_router(health_router)
app.include_router(solver_router)


@app.on_event("startup")
async def startup_event():
    configure_logging()
    settings = get_settings()
    logger.info("Starting %s %s (%s)", SERVICE_NAME, VERSION, settings.environment)


# Root endpoint
@app.get("/")
async def root():
    return {
        "status": "healthy",
        "service": SERVICE_NAME,
        "version": VERSION,
        "environment": get_settings().environment,
    }


if __name__ == "__main__":
    import uvicorn

    settings = get_settings()
    configure_logging()
    uvicorn.run(app, host="0.0.0.0", port=settings.port, log_level=settings.log_level.lower())
