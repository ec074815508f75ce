from datetime import datetime
try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        def __str__(self):
            return str(self.value)

        def __format__(self, format_spec):
            return str(self.value).__format__(format_spec)
from math import isqrt
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, PositiveInt, model_validator


REPORT_SCHEMA_VERSION = 1


class Placement(StrEnum):
    uniform = "uniform-interleaved"
    bunched = "bunched-at-end"
    repeated = "single-repeated"


class Scheme(StrEnum):
    pope = "pope"
    mope = "mope"


class TransportKind(StrEnum):
    inproc = "inproc"
    socket = "socket"


class ReportFormat(StrEnum):
    json_lines = "json-lines"
    csv = "csv"
    pretty = "pretty"


class WorkloadSpec(BaseModel):
    n: PositiveInt = Field(..., description="Number of inserts")
    m: Optional[int] = Field(None, ge=0, description="Number of range queries, default isqrt(n)")
    capacity: Optional[int] = Field(
        None, ge=2, description="Node capacity L, default max(2, floor(n ** 0.25))"
    )
    placement: Placement = Field(Placement.uniform, description="Where queries sit among inserts")
    mean_range: float = Field(100.0, ge=1, description="Mean number of items a query should cover")
    seed: int = Field(0, ge=0, description="Seed for every random choice of the run")
    label_space: int = Field(2**32, ge=2, le=2**64, description="Labels are drawn from [0, label_space)")

    @model_validator(mode="after")
    def fill_defaults(self):
        if self.m is None:
            self.m = isqrt(self.n)
        if self.capacity is None:
            self.capacity = max(2, int(self.n**0.25))
        return self


class ExperimentRequest(BaseModel):
    workload: WorkloadSpec
    schemes: list[Scheme] = Field(default_factory=lambda: [Scheme.pope, Scheme.mope])
    transport: TransportKind = TransportKind.inproc
    latency_ms: list[float] = Field(default_factory=lambda: [0.0])
    chunk_size: Optional[int] = Field(None, ge=1)
    checkpoints: list[int] = Field(default_factory=list)
    verify: bool = True


class BucketModel(BaseModel):
    lo_gap: int
    hi_gap: int
    size: int


class Checkpoint(BaseModel):
    queries: int
    ops: int
    rounds: int
    ciphertexts_sent: int
    incomparable_pairs: int
    pivot_count: int
    buckets: list[BucketModel] = Field(default_factory=list)


class BoundModel(BaseModel):
    k: int
    measured: int
    closed_form: float
    regime_ok: bool


class RunResult(BaseModel):
    scheme: Scheme
    n: int
    m: int
    capacity: int
    placement: Placement
    seed: int
    transport: TransportKind
    latency_ms: float
    chunk_size: int
    inserts: int = 0
    searches: int = 0
    total_rounds: int = 0
    insert_rounds: int = 0
    search_rounds: int = 0
    mean_rounds_per_search: float = 0.0
    mean_rounds_per_insert: float = 0.0
    one_way_msgs: int = 0
    ciphertexts_sent: int = 0
    amortized_ciphertexts: float = 0.0
    categories: dict[str, int] = Field(default_factory=dict)
    result_items: int = 0
    mismatches: int = 0
    insert_violations: int = 0
    peak_client_working_set: int = 0
    incomparable_pairs: int = 0
    pivot_count: int = 0
    bound: Optional[BoundModel] = None
    tree: dict[str, int] = Field(default_factory=dict)
    checkpoints: list[Checkpoint] = Field(default_factory=list)
    wall_seconds: float = 0.0
    ops_per_sec: float = 0.0
    failed: bool = False
    error: Optional[str] = None


class LatencyFit(BaseModel):
    scheme: Scheme
    slope: float
    intercept: float
    r_squared: float
    points: int


class Environment(BaseModel):
    schema_version: int = REPORT_SCHEMA_VERSION
    python: str
    platform: str
    packages: dict[str, str] = Field(default_factory=dict)
    created_at: datetime


class Report(BaseModel):
    environment: Environment
    runs: list[RunResult] = Field(default_factory=list)
    latency_fits: list[LatencyFit] = Field(default_factory=list)


class StoredRun(BaseModel):
    id: int = Field(..., description="Stored run identifier")
    scheme: Scheme
    n: int
    m: int
    capacity: int
    failed: bool
    created_at: datetime

    model_config = ConfigDict(from_attributes=True)
