import logging
from pathlib import Path
from typing import Callable, List, Optional, Sequence

from dotenv import load_dotenv
from joblib import Parallel, delayed

# Load .env file before importing settings
env_path = Path(__file__).parent.parent / '.env'
load_dotenv(env_path)

from teleop.config import settings

logger = logging.getLogger(__name__)

JOB_BACKEND = "loky"
JOB_TIMEOUT_S = 3600  # 1 hour max per job


def resolve_threads(threads: Optional[int] = None) -> int:
    """Worker count: explicit value, else TELEOP_THREADS, never below 1"""
    return max(1, int(threads if threads is not None else settings.threads))


def run_jobs(func: Callable, jobs: Sequence[tuple], threads: Optional[int] = None, label: str = "jobs") -> List:
    """
    Run func(*args) for every args tuple in jobs and return results in job order.

    One worker runs in-process and in order, which keeps single-threaded
    pipelines bit-reproducible; more workers use joblib's process pool.
    """
    n_jobs = min(resolve_threads(threads), max(len(jobs), 1))
    if n_jobs == 1:
        logger.debug(f"Running {len(jobs)} {label} in-process")
        return [func(*args) for args in jobs]
    logger.info(f"Running {len(jobs)} {label} on {n_jobs} workers")
    return Parallel(n_jobs=n_jobs, backend=JOB_BACKEND, timeout=JOB_TIMEOUT_S)(
        delayed(func)(*args) for args in jobs
    )
