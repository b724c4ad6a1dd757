import logging
from contextlib import asynccontextmanager

from fastapi import FastAPI
from fastapi.responses import Response
from prometheus_client import CONTENT_TYPE_LATEST, generate_latest

from sivnode import __version__
from sivnode.core.dependencies import get_config
from sivnode.core.errors import ConfigError
from sivnode.routes import api
from sivnode.validation import config_hash

logger = logging.getLogger(__name__)

# App configuration
APP_NAME = "SiV Network Node Simulator"
VERSION = __version__


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Load and validate the base config during application startup."""
    try:
        config = get_config()
        logger.info("Loaded base config %s", config_hash(config)[:12])
    except ConfigError as error:
        logger.error("Base config is invalid: %s", error)
        raise

    yield


# Create FastAPI app
app = FastAPI(title=APP_NAME, version=VERSION, lifespan=lifespan)

# Include routers
app.include_router(api.router)

# Prometheus metrics endpoint (import registers metrics)
from sivnode.services import prometheus_metrics  # noqa: F401, E402


@app.get("/metrics")
def metrics():
    """Prometheus metrics scrape endpoint."""
    return Response(
        content=generate_latest(),
        media_type=CONTENT_TYPE_LATEST,
    )


# Basic health check
@app.get("/health")
def health_check():
    return {"status": "healthy"}
