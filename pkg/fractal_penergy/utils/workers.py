import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

from tqdm import tqdm

T = TypeVar("T")
R = TypeVar("R")

logger = logging.getLogger(__name__)


def run_jobs(fn: Callable[[T], R], items: Iterable[T], jobs: int = 1, desc: str = "") -> List[R]:
    """Apply ``fn`` to every item, fanning out over a thread pool; results keep input order."""
    items = list(items)
    show = jobs > 1 and len(items) > 1 and sys.stderr.isatty()
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in tqdm(items, desc=desc, disable=not show)]
    logger.debug("Dispatching %d %s jobs over %d workers", len(items), desc or "solver", jobs)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(tqdm(pool.map(fn, items), total=len(items), desc=desc, disable=not show))
