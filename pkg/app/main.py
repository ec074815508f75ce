from contextlib import asynccontextmanager
from uuid import uuid4

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from loguru import logger


from app.database import init_db
from app.log import setup_logging
from app.routers import experiments, reports


setup_logging()


@asynccontextmanager
async def lifespan(app: FastAPI):
    await init_db()
    yield


app = FastAPI(
    title="POPE range-query bench",
    version="0.1.0",
    lifespan=lifespan,
)


@app.middleware("http")
async def log_middleware(request: Request, call_next):
    log_id = str(uuid4())
    with logger.contextualize(session_id=log_id):
        try:
            response = await call_next(request)
            if response.status_code in [400, 404, 422, 502]:
                logger.warning(f"Request to {request.url.path} failed")
            else:
                logger.info("Successfully accessed " + request.url.path)
        except Exception as ex:
            logger.error(f"Request to {request.url.path} failed: {ex}")
            response = JSONResponse(content={"success": False}, status_code=500)
        return response


app.include_router(experiments.router)
app.include_router(reports.router)


@app.get("/")
async def root():
    return {"message": "POPE range-query bench: POST /experiments/, GET /reports/"}
