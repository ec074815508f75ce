from typing import List

from fastapi import APIRouter, Depends, HTTPException, status
from fastapi.responses import Response
from sqlalchemy import select
from sqlalchemy.ext.asyncio import AsyncSession

from app.bench.report import emit_report, load_report
from app.db_depends import get_async_db
from app.models import ExperimentRun as ExperimentRunModel
from app.schemas import ReportFormat, StoredRun


router = APIRouter(prefix="/reports", tags=["reports"])

MEDIA_TYPES = {
    ReportFormat.json_lines: "application/x-ndjson",
    ReportFormat.csv: "text/csv",
    ReportFormat.pretty: "text/plain",
}


@router.get("/", response_model=List[StoredRun], status_code=status.HTTP_200_OK)
async def get_all_reports(db: AsyncSession = Depends(get_async_db)):
    result = await db.scalars(select(ExperimentRunModel).order_by(ExperimentRunModel.id))
    return result.all()


@router.get("/{run_id}", status_code=status.HTTP_200_OK)
async def get_report(
    run_id: int,
    format: ReportFormat = ReportFormat.json_lines,
    db: AsyncSession = Depends(get_async_db),
):
    report = await load_report(db, run_id)
    if report is None:
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND, detail="Run not found"
        )
    return Response(content=emit_report(report, format), media_type=MEDIA_TYPES[format])
