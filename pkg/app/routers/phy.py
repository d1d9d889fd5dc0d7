"""
PHY API endpoints: capacity gap of the compress-forward virtual MIMO link.
"""

import logging

from fastapi import APIRouter, HTTPException, Request, status

from app.schemas.phy import GapCheckRequest, GapCheckResponse, GapRow
from app.services.phy_service import gap_check, gap_sweep

router = APIRouter()
logger = logging.getLogger(__name__)

MAX_BATCH = 20_000


def _row(seed: int, M: int, report) -> GapRow:
    return GapRow(
        seed=seed,
        M=M,
        r_mimo=report.r_mimo,
        cutset=report.cutset,
        gap=report.gap,
        stream_rates=list(report.stream_rates),
    )


@router.post("/gap-check", response_model=GapCheckResponse)
def post_gap_check(payload: GapCheckRequest, request: Request = None):
    """
    POST /phy/gap-check
    Gap report for one explicit (H, g), or for `trials` random instances per
    antenna count when no channel is given.
    """
    trace_id = getattr(request.state, "trace_id", "")
    try:
        if payload.H is not None:
            pair = payload.channel()
            rows = [_row(payload.seed, pair.num_antennas, gap_check(pair.H, pair.d2d_gain))]
        else:
            if payload.trials * len(payload.M) > MAX_BATCH:
                raise HTTPException(
                    status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
                    detail=f"at most {MAX_BATCH} instances per request",
                )
            rows = [_row(t, M, r) for t, M, r in gap_sweep(payload.trials, payload.seed, payload.M)]
    except ValueError as exc:
        logger.info("gap-check rejected (trace %s): %s", trace_id, exc)
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(exc))

    gaps = [r.gap for r in rows]
    return GapCheckResponse(
        rows=rows,
        max_gap=max(gaps),
        min_gap=min(gaps),
        within_bound=all(-1e-9 <= x <= 2.0 + 1e-9 for x in gaps),
    )
