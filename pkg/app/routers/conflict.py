"""
Conflict-graph API endpoints: stability inner bound and exact membership.
"""

import logging

from fastapi import APIRouter, HTTPException, Request, status

from app.schemas.conflict import StabilityCheckRequest, StabilityCheckResponse
from app.services.conflict_service import stability_check

router = APIRouter()
logger = logging.getLogger(__name__)


@router.post("/stability-check", response_model=StabilityCheckResponse)
def post_stability_check(payload: StabilityCheckRequest, request: Request = None):
    """
    POST /conflict/stability-check
    Chordal completion, maximal cliques with their loads, and the membership
    verdicts (brute force only up to 12 vertices).
    """
    trace_id = getattr(request.state, "trace_id", "")
    try:
        return stability_check(payload)
    except ValueError as exc:
        logger.info("stability-check rejected (trace %s): %s", trace_id, exc)
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(exc))
