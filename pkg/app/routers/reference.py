"""
Reference solver endpoint.
"""

import logging

from fastapi import APIRouter, HTTPException, Request, status

from app.schemas.reference import SolveReport, SolveRequest
from app.services.reference_service import solve_table

router = APIRouter()
logger = logging.getLogger(__name__)


@router.post("/solve", response_model=SolveReport)
def post_solve(payload: SolveRequest, request: Request = None):
    """
    POST /reference/solve
    Optimal occupancy for a fixed rate table; the barrier problem when
    `barrier_index` is set.
    """
    trace_id = getattr(request.state, "trace_id", "")
    try:
        return solve_table(payload)
    except ValueError as exc:
        logger.info("solve rejected (trace %s): %s", trace_id, exc)
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(exc))
