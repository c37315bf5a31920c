import os

from dotenv import load_dotenv

load_dotenv()


def _flag(name: str, default: str = "false") -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


class Settings:
    LOG_LEVEL      = os.getenv("ERDMD_LOG_LEVEL", "INFO").upper()
    MAX_DENSE_DIM  = int(os.getenv("ERDMD_MAX_DENSE_DIM", 5000))   # dense eigensolve guard
    WORKERS        = int(os.getenv("ERDMD_WORKERS", 1))            # thread pool width
    RECORD_TIMINGS = _flag("ERDMD_RECORD_TIMINGS")                 # wall clock in summary.json

settings = Settings()
