"""
Data-parallel helpers: ordered parallel map and a fixed-order pairwise reduction
"""
from typing import Callable, List, Sequence, TypeVar

from joblib import Parallel, delayed

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Sequence[T], n_jobs: int = 1) -> List[R]:
    """
    Apply `fn` to every item, returning results in input order.

    Args:
        fn: Function applied to each item; must not share mutable state across items
        items: Work items (landmark-block buckets in practice)
        n_jobs: Number of worker threads; 1 runs inline

    Returns:
        List of results, ordered like `items`
    """
    if n_jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    # numpy releases the GIL inside its kernels, so threads are enough
    return Parallel(n_jobs=n_jobs, prefer="threads")(delayed(fn)(item) for item in items)


def tree_reduce(values: Sequence[T]) -> T:
    """Sum values pairwise in a fixed order so results do not depend on scheduling."""
    if not values:
        raise ValueError("tree_reduce needs at least one value")
    level = list(values)
    while len(level) > 1:
        merged = [level[i] + level[i + 1] for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            merged.append(level[-1])
        level = merged
    return level[0]
