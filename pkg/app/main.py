import logging
from contextlib import asynccontextmanager

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app.core.config import settings
from app.core.logging import configure_logging
from app.api.v1.api import api_router
from app.schemas.experiment import ExperimentKind

logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    configure_logging(settings.LOG_LEVEL)
    logger.info("%s %s ready (output dir %s, default seed %d)",
                settings.APP_NAME, settings.APP_VERSION, settings.OUTPUT_DIR, settings.DEFAULT_SEED)
    yield


app = FastAPI(
    title=settings.APP_NAME,
    version=settings.APP_VERSION,
    debug=settings.DEBUG,
    description="Insider control of stochastic Volterra equations: Donsker fields, adjoints, "
                "maximum principles and portfolios",
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_methods=["GET", "POST"],
    allow_headers=["*"],
)

app.include_router(api_router, prefix="/api/v1")


@app.get("/")
async def root():
    """Service summary with the available pipelines"""
    return {
        "message": settings.APP_NAME,
        "version": settings.APP_VERSION,
        "pipelines": [kind.value for kind in ExperimentKind],
        "run": "/api/v1/experiments/run",
        "validate": "/api/v1/experiments/validate",
        "docs": "/docs",
    }


@app.get("/health")
async def health_check():
    return {"status": "healthy"}


if __name__ == "__main__":
    import uvicorn
    uvicorn.run("app.main:app", host="0.0.0.0", port=8000, reload=settings.DEBUG)
