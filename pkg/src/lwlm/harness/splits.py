"""Location-level train/val/test splits."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..dataio import DatasetContainer

# train : val : test
DEFAULT_RATIO = (10, 1, 10)


class Split(NamedTuple):
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def split_sizes(n_locations: int, ratio=DEFAULT_RATIO) -> tuple[int, int, int]:
    """Validation takes floor(N * r_val / sum), test floor of its share of the rest; train gets the remainder."""
    r_train, r_val, r_test = ratio
    n_val = n_locations * r_val // (r_train + r_val + r_test)
    n_test = (n_locations - n_val) * r_test // (r_train + r_test)
    return n_locations - n_val - n_test, n_val, n_test


def label_budget_split(ds: DatasetContainer | np.ndarray, budget: int | None, rng: np.random.Generator,
                       n_val: int | None = None, n_test: int | None = None, ratio=DEFAULT_RATIO) -> Split:
    """Disjoint location-id split.

    ``n_val`` / ``n_test`` default to the ratio rule on the full location
    count.  ``budget=None`` gives every remaining location to training.
    """
    locs = ds.location_ids if isinstance(ds, DatasetContainer) else np.asarray(ds, dtype=np.int64)
    n = len(locs)
    _, d_val, d_test = split_sizes(n, ratio)
    n_val = d_val if n_val is None else n_val
    n_test = d_test if n_test is None else n_test
    if min(n_val, n_test) < 0 or (budget is not None and budget < 1):
        raise ValueError("split sizes must be nonnegative and the budget positive")
    n_train = n - n_val - n_test if budget is None else budget
    if n_train < 1 or n_train + n_val + n_test > n:
        raise ValueError(
            f"need {n_train} train + {n_val} val + {n_test} test locations, dataset has {n}"
        )
    perm = locs[rng.permutation(n)]
    test = np.sort(perm[:n_test])
    val = np.sort(perm[n_test:n_test + n_val])
    train = np.sort(perm[n_test + n_val:n_test + n_val + n_train])
    return Split(train, val, test)
