import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Optional, TypeVar

from app.config import get_settings, Settings
from lab.errors import InvalidInputError, ReportIOError

logger = logging.getLogger("coarsegrain")

T = TypeVar("T")
R = TypeVar("R")


def resolve_jobs(jobs: Optional[int] = None, settings: Optional[Settings] = None) -> int:
    """
    Worker count: the explicit value if given, otherwise COARSEGRAIN_JOBS, otherwise 1

    :param jobs: Value of --jobs, if passed
    :param settings: Process settings, loaded when omitted
    :return: Worker count >= 1
    """
    if jobs is None:
        jobs = (settings or get_settings()).jobs
    if jobs < 1:
        raise InvalidInputError(f"Worker count must be at least 1, got {jobs}")
    return jobs


def parallel_map(fn: Callable[[T], R], items: Iterable[T], jobs: int = 1) -> list[R]:
    """
    Apply ``fn`` to every item, in worker processes when ``jobs > 1``. Results are returned in item order whatever
    the completion order, so anything aggregated from them does not depend on the worker count

    :param fn: Picklable module-level function
    :param items: Picklable work items
    :param jobs: Worker count
    :return: Results in item order
    """
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    workers = min(jobs, len(items))
    logger.debug(f"Dispatching {len(items)} tasks to {workers} workers")
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def ensure_writable_dir(path: Path) -> Path:
    """
    Create the output directory if needed and check that files can be written into it, before any report is started

    :param path: Output directory
    :return: The resolved directory
    """
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=path):
            pass
    except OSError as e:
        raise ReportIOError(f"Output directory {path} is not writable: {e.strerror or e}")
    if not os.access(path, os.W_OK):
        raise ReportIOError(f"Output directory {path} is not writable")
    return path
