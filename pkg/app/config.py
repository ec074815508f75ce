import os

from dotenv import load_dotenv

from app.exceptions import ConfigError


load_dotenv()

LABEL_BITS = os.getenv("POPE_LABEL_BITS", "64")
CHUNK_SIZE = os.getenv("POPE_CHUNK_SIZE", "16")
LATENCY_MS = os.getenv("POPE_LATENCY_MS", "0")
MAX_FRAME_BYTES = os.getenv("POPE_MAX_FRAME_BYTES", str(64 * 1024 * 1024))
DATABASE_URL = os.getenv("POPE_DATABASE_URL", "sqlite+aiosqlite:///pope_results.db")
LOG_FILE = os.getenv("POPE_LOG_FILE", "pope.log")
LOG_LEVEL = os.getenv("POPE_LOG_LEVEL", "INFO")
SOCKET_HOST = os.getenv("POPE_SOCKET_HOST", "127.0.0.1")


def _as_int(name: str, raw: str, low: int, high: int | None = None) -> int:
    try:
        value = int(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be an integer, got {raw!r}")
    if value < low or (high is not None and value > high):
        bound = f"[{low}, {high}]" if high is not None else f">= {low}"
        raise ConfigError(f"{name} must be in {bound}, got {value}")
    return value


def label_bits() -> int:
    # label plus two origin bits must fit in one cipher block
    return _as_int("POPE_LABEL_BITS", LABEL_BITS, 1, 126)


def chunk_size() -> int:
    return _as_int("POPE_CHUNK_SIZE", CHUNK_SIZE, 1)


def max_frame_bytes() -> int:
    return _as_int("POPE_MAX_FRAME_BYTES", MAX_FRAME_BYTES, 64)


def latency_seconds() -> float:
    try:
        value = float(LATENCY_MS)
    except ValueError:
        raise ConfigError(f"POPE_LATENCY_MS must be a number, got {LATENCY_MS!r}")
    if value < 0:
        raise ConfigError("POPE_LATENCY_MS must be non-negative")
    return value / 1000.0
