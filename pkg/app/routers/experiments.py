from functools import partial
from typing import List

import anyio
from anyio import to_thread
from fastapi import APIRouter, Depends, HTTPException, status
from sqlalchemy.ext.asyncio import AsyncSession

from app.bench.experiment import TransportOptions, run_experiment
from app.bench.report import store_report
from app.bench.workload import gen_workload
from app.db_depends import get_async_db
from app.exceptions import (
    ConfigError,
    EncodingError,
    LeakageIntegrityError,
    ProtocolViolation,
    SessionError,
)
from app.schemas import ExperimentRequest, StoredRun


router = APIRouter(prefix="/experiments", tags=["experiments"])


@router.post("/", response_model=List[StoredRun], status_code=status.HTTP_201_CREATED)
async def create_experiment(request: ExperimentRequest, db: AsyncSession = Depends(get_async_db)):
    """Generate the workload, run every requested scheme and store the runs"""
    ops = gen_workload(request.workload)
    options = TransportOptions(request.transport, chunk_size=request.chunk_size)
    experiment = partial(
        run_experiment,
        request.schemes,
        ops,
        request.workload,
        options,
        latencies_ms=request.latency_ms,
        checkpoints=request.checkpoints,
        verify=request.verify,
    )
    # CPU-bound: own event loop in a worker thread
    try:
        report = await to_thread.run_sync(anyio.run, experiment)
    except (ConfigError, EncodingError) as exc:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=exc.detail)
    except (SessionError, ProtocolViolation, LeakageIntegrityError) as exc:
        raise HTTPException(status_code=status.HTTP_502_BAD_GATEWAY, detail=exc.detail)
    rows = await store_report(db, report)
    return rows
