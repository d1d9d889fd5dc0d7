"""
Simulation endpoint: small runs with summary quantiles. The CLI is the batch surface.
"""

import logging

from fastapi import APIRouter, HTTPException, Query, Request, status

from app.schemas.simulation import SimConfig, SimulationSummary
from app.services.simulation_service import SimulationService

router = APIRouter()
logger = logging.getLogger(__name__)

# users x frames x drops accepted over HTTP
MAX_WORK = 2_000_000


@router.post("/simulate", response_model=SimulationSummary)
def post_simulate(
    payload: SimConfig,
    baseline: bool = Query(False, description="Also run the non-cooperative baseline"),
    request: Request = None,
):
    """
    POST /simulate
    Runs the configured drops and returns throughput and relaying quantiles.
    """
    trace_id = getattr(request.state, "trace_id", "")
    work = payload.network.n * payload.frames * payload.drops * (2 if baseline else 1)
    if work > MAX_WORK:
        raise HTTPException(
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            detail="configuration too large for the HTTP endpoint; use the coopsched CLI",
        )
    try:
        run = SimulationService().simulate(payload, baseline=baseline)
    except ValueError as exc:
        logger.info("simulate rejected (trace %s): %s", trace_id, exc)
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(exc))
    return run.summary()
