from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.middleware.cors import CORSMiddleware
import uuid

from app.core.config import settings
from app.core.exceptions import CoopSchedError, PropertyViolation
from app.core.logging import configure_logging

from .routers import conflict, phy, reference, simulation

SERVICE_NAME = "coopsched"
VERSION = "1.0.0"


def create_app() -> FastAPI:
    configure_logging(settings.log_level)
    app = FastAPI(
        title="D2D Cooperative Scheduling",
        description="Virtual-MIMO PHY, relay-queue stability and cooperative downlink scheduling",
        version=VERSION,
    )

    @app.get("/", tags=["health"])
    def root():
        """Root endpoint - health check."""
        return {
            "status": "healthy",
            "service": SERVICE_NAME,
            "version": VERSION,
        }

    @app.get("/health", tags=["health"])
    def health_check():
        return {"status": "healthy"}

    # Comma-separated list, or "*" for all
    cors_origins = settings.cors_origins.split(",") if settings.cors_origins != "*" else ["*"]
    cors_origins = [origin.strip() for origin in cors_origins]

    app.add_middleware(
        CORSMiddleware,
        allow_origins=cors_origins,
        allow_credentials=True,
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.middleware("http")
    async def add_trace_id(request: Request, call_next):
        trace_id = request.headers.get("x-trace-id") or str(uuid.uuid4())
        request.state.trace_id = trace_id
        response = await call_next(request)
        response.headers["x-trace-id"] = trace_id
        return response

    def error_body(request: Request, status_code: int, detail: str, **extra) -> JSONResponse:
        trace_id = getattr(request.state, "trace_id", str(uuid.uuid4()))
        return JSONResponse(status_code=status_code, content={"detail": detail, **extra, "trace_id": trace_id})

    @app.exception_handler(PropertyViolation)
    async def property_violation_handler(request: Request, exc: PropertyViolation):
        return error_body(request, 500, str(exc), kind="property_violation")

    @app.exception_handler(CoopSchedError)
    async def domain_exception_handler(request: Request, exc: CoopSchedError):
        return error_body(request, 400, str(exc))

    @app.exception_handler(Exception)
    async def generic_exception_handler(request: Request, exc: Exception):
        return error_body(request, 500, "Internal Server Error")

    app.include_router(phy.router, prefix="/phy", tags=["phy"])
    app.include_router(conflict.router, prefix="/conflict", tags=["conflict"])
    app.include_router(reference.router, prefix="/reference", tags=["reference"])
    app.include_router(simulation.router, prefix="", tags=["simulation"])

    return app


app = create_app()
