import logging
import os
import time
from typing import Any, Dict

from fastapi import Body, Depends, FastAPI, Path, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from src import VERSION
from src.core.errors import StoppingError
from src.core.services import COMMANDS, StoppingService
from src.infrastructure.cache.redis_service import RedisService
from src.infrastructure.config.loader import parse_config
from src.infrastructure.persistence.report_repo import MemoryResultSink

# Setup Logging
logging.basicConfig(
    level=os.getenv("LOG_LEVEL", "INFO").upper(),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger("StoppingSolver")

tags_metadata = [
    {"name": "Health", "description": "API health and status"},
    {"name": "Solvers", "description": "Solvers, simulation and property checks"},
]

app = FastAPI(
    title="Stopping Solver API",
    version=VERSION,
    description="Risk-sensitive optimal stopping of continuous-time Markov chains",
    openapi_tags=tags_metadata,
    docs_url="/docs",
    redoc_url="/redoc"
)

# --- Request Logging Middleware ---
@app.middleware("http")
async def log_requests(request: Request, call_next):
    start_time = time.time()
    response = await call_next(request)
    duration = time.time() - start_time

    response.headers["X-Response-Time"] = f"{duration:.3f}s"

    logger.info(f"{request.method} {request.url.path} - {response.status_code} - {duration:.3f}s")
    return response

# --- Error Handlers ---
@app.exception_handler(StoppingError)
async def stopping_error_handler(request: Request, exc: StoppingError):
    status = 422 if exc.exit_code == 1 else 409
    logger.warning(f"{request.url.path} failed: {exc}")
    return JSONResponse(status_code=status, content={**exc.to_dict(), "exit_code": exc.exit_code})

@app.exception_handler(Exception)
async def global_exception_handler(request: Request, exc: Exception):
    logger.error(f"Unhandled error: {exc}", exc_info=True)
    return JSONResponse(
        status_code=500,
        content={"detail": "Internal server error", "type": type(exc).__name__}
    )

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_methods=["*"],
    allow_headers=["*"],
)

request_stats = {"total_requests": 0, "cache_hits": 0, "start_time": time.time()}

@app.middleware("http")
async def count_requests(request: Request, call_next):
    request_stats["total_requests"] += 1
    return await call_next(request)

# --- Dependency Injection ---
redis_cache = RedisService()

def get_service() -> StoppingService:
    return StoppingService()

def get_cache() -> RedisService:
    return redis_cache

# --- Health & Stats Endpoints ---

@app.get("/health", tags=["Health"])
async def health():
    return {"status": "healthy", "version": VERSION, "cache": "redis" if redis_cache.enabled else "disabled"}

@app.get("/v1/stats", tags=["Health"])
async def get_stats():
    """API usage statistics."""
    uptime = time.time() - request_stats["start_time"]
    return {
        "total_requests": request_stats["total_requests"],
        "cache_hits": request_stats["cache_hits"],
        "uptime_seconds": round(uptime, 2),
        "version": VERSION,
        "commands": list(COMMANDS),
    }

# --- Commands ---

@app.post("/v1/{command}", tags=["Solvers"])
async def run_command(
    command: str = Path(..., description=f"One of {', '.join(COMMANDS)}"),
    config: Dict[str, Any] = Body(..., description="Run config, schema 1"),
    service: StoppingService = Depends(get_service),
    cache: RedisService = Depends(get_cache),
):
    """
    Run one command on a config and return `{exit_code, report, tables}`.
    Results are cached for 300s when REDIS_URL is set.
    """
    if command not in COMMANDS:
        return JSONResponse(status_code=404, content={"detail": f"unknown command {command!r}",
                                                      "commands": list(COMMANDS)})
    cache_key = cache.key_for(command, config)
    cached = cache.get(cache_key)
    if cached:
        request_stats["cache_hits"] += 1
        return cached

    loaded = parse_config(config)
    result = await service.run(command, loaded)
    sink = MemoryResultSink()
    result.persist(sink)
    payload = {"exit_code": result.exit_code, "report": sink.reports["report"], "tables": sink.tables}
    cache.set(cache_key, payload)
    return payload
