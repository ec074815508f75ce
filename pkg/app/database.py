from sqlalchemy.ext.asyncio import AsyncEngine, AsyncSession, async_sessionmaker, create_async_engine
from sqlalchemy.orm import DeclarativeBase
from sqlalchemy.pool import NullPool

from app.config import DATABASE_URL


def make_engine(url: str = DATABASE_URL) -> AsyncEngine:
    # sqlite: one connection per session, the CLI opens several event loops
    if url.startswith("sqlite"):
        return create_async_engine(url, poolclass=NullPool)
    return create_async_engine(url)


async_engine = make_engine()

async_session_maker = async_sessionmaker(
    async_engine, expire_on_commit=False, class_=AsyncSession
)


class Base(DeclarativeBase):
    pass


async def init_db(bind: AsyncEngine = async_engine) -> None:
    from app import models  # noqa: F401  registers the tables

    async with bind.begin() as conn:
        await conn.run_sync(Base.metadata.create_all)
