import os
import random
import tempfile

os.environ.setdefault(
    "POPE_DATABASE_URL",
    f"sqlite+aiosqlite:///{os.path.join(tempfile.gettempdir(), 'pope-tests.db')}",
)
os.environ.setdefault("POPE_LOG_FILE", os.path.join(tempfile.gettempdir(), "pope-tests.log"))

import anyio
import pytest
from fastapi.testclient import TestClient
from sqlalchemy.ext.asyncio import async_sessionmaker

from app.client import PopeClient
from app.codec import keygen
from app.database import init_db, make_engine
from app.db_depends import get_async_db
from app.pope.service import PopeService
from app.protocol.session import LocalEndpoint


@pytest.fixture
def anyio_backend():
    return "asyncio"


@pytest.fixture
def key():
    return keygen(seed="tests")


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def pope(key):
    """Factory for a client, a POPE service and an in-process endpoint sharing one key."""

    def make(capacity: int = 4, seed: int = 7, observer=None, chunk_size: int | None = None):
        service = PopeService(capacity, seed=seed, observer=observer)
        client = PopeClient(key, capacity, rng=random.Random(seed))
        return client, service, LocalEndpoint(service, chunk_size=chunk_size)

    return make


@pytest.fixture
def db_maker(tmp_path):
    engine = make_engine(f"sqlite+aiosqlite:///{tmp_path / 'runs.db'}")
    anyio.run(init_db, engine)
    try:
        yield async_sessionmaker(engine, expire_on_commit=False)
    finally:
        anyio.run(engine.dispose)


@pytest.fixture
def api(db_maker):
    from app.main import app

    async def override_get_db():
        async with db_maker() as session:
            yield session

    app.dependency_overrides[get_async_db] = override_get_db
    with TestClient(app) as client:
        yield client
    app.dependency_overrides.clear()
