from datetime import datetime

from sqlalchemy import BigInteger, Boolean, DateTime, Float, Integer, String, Text, func
from sqlalchemy.orm import Mapped, mapped_column

from app.database import Base


class ExperimentRun(Base):
    __tablename__ = "experiment_runs"

    id: Mapped[int] = mapped_column(Integer, primary_key=True)
    scheme: Mapped[str] = mapped_column(String(10), nullable=False)
    n: Mapped[int] = mapped_column(Integer, nullable=False)
    m: Mapped[int] = mapped_column(Integer, nullable=False)
    capacity: Mapped[int] = mapped_column(Integer, nullable=False)
    placement: Mapped[str] = mapped_column(String(30), nullable=False)
    seed: Mapped[int] = mapped_column(Integer, nullable=False)
    transport: Mapped[str] = mapped_column(String(10), nullable=False)
    failed: Mapped[bool] = mapped_column(Boolean, default=False)
    total_rounds: Mapped[int] = mapped_column(Integer, default=0)
    amortized_ciphertexts: Mapped[float] = mapped_column(Float, default=0.0)
    incomparable_pairs: Mapped[int] = mapped_column(BigInteger, default=0)
    environment_json: Mapped[str] = mapped_column(Text, nullable=False)
    result_json: Mapped[str] = mapped_column(Text, nullable=False)
    created_at: Mapped[datetime] = mapped_column(
        DateTime, default=datetime.now, nullable=False, server_default=func.now()
    )
