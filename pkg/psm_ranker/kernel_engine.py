"""
Gaussian kernel evaluation and the LRU cache of kernel rows used by the solvers.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Hashable, Optional, Tuple

import numpy as np
from sklearn.metrics.pairwise import rbf_kernel

from psm_ranker.errors import ConfigError

DEFAULT_CACHE_CAPACITY = 512
# Rows per block when materializing large kernel blocks.
BLOCK_ROWS = 1024


@dataclass(frozen=True)
class KernelParams:
    sigma: float = 1.0

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise ConfigError(f"kernel sigma must be positive, got {self.sigma}")

    @property
    def gamma(self) -> float:
        return 1.0 / (2.0 * self.sigma * self.sigma)


def kernel_value(x_i: np.ndarray, x_j: np.ndarray, p: KernelParams) -> float:
    """exp(-||x_i - x_j||^2 / (2 sigma^2))."""
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    if x_i.shape != x_j.shape:
        raise ValueError(f"kernel arguments differ in dimension: {x_i.shape} vs {x_j.shape}")
    diff = x_i - x_j
    return float(np.exp(-p.gamma * np.dot(diff, diff)))


def kernel_vector(x: np.ndarray, rows: np.ndarray, p: KernelParams) -> np.ndarray:
    """k(x, r) for every row r of `rows`."""
    return rbf_kernel(np.asarray(x, dtype=np.float64)[None, :], rows, gamma=p.gamma)[0]


def cross_kernel(a: np.ndarray, b: np.ndarray, p: KernelParams) -> np.ndarray:
    """|a| x |b| block of kernel values, built in row blocks to bound memory."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    out = np.empty((len(a), len(b)), dtype=np.float64)
    step = max(1, BLOCK_ROWS * 64 // max(1, len(b)))
    for start in range(0, len(a), step):
        out[start:start + step] = rbf_kernel(a[start:start + step], b, gamma=p.gamma)
    return out


def gram_matrix(x: np.ndarray, p: KernelParams) -> np.ndarray:
    return rbf_kernel(np.asarray(x, dtype=np.float64), gamma=p.gamma)


class KernelCache:
    """
    Least-recently-used cache of kernel rows.

    A row is k(x_i, x_s) for s in an index set; entries are keyed by
    (i, version) where the caller bumps `version` whenever the index set
    changes, so a row for an outdated set is never served.
    """

    def __init__(self, x: np.ndarray, params: KernelParams,
                 capacity: int = DEFAULT_CACHE_CAPACITY, enabled: bool = True) -> None:
        if capacity < 1:
            raise ConfigError(f"kernel cache capacity must be >= 1, got {capacity}")
        self.x = x
        self.params = params
        self.capacity = capacity
        self.enabled = enabled
        self._rows: "OrderedDict[Tuple[int, Hashable], np.ndarray]" = OrderedDict()
        self.computations = 0
        self.hits = 0
        self.kernel_evaluations = 0

    def __len__(self) -> int:
        return len(self._rows)

    def row(self, i: int, index_set: Optional[np.ndarray], version: Hashable = 0) -> np.ndarray:
        """Row of k(x_i, x_s); `index_set=None` means every row of `x`."""
        key = (int(i), version)
        if self.enabled:
            cached = self._rows.get(key)
            if cached is not None:
                self._rows.move_to_end(key)
                self.hits += 1
                return cached

        rows = self.x if index_set is None else self.x[index_set]
        values = kernel_vector(self.x[i], rows, self.params)
        self.computations += 1
        self.kernel_evaluations += len(values)
        if self.enabled:
            values.setflags(write=False)
            self._rows[key] = values
            if len(self._rows) > self.capacity:
                self._rows.popitem(last=False)
        return values

    def diagonal(self, i: int) -> float:
        """K_ii through the general interface (1.0 for the Gaussian kernel)."""
        return kernel_value(self.x[i], self.x[i], self.params)

    def invalidate(self, version: Optional[Hashable] = None) -> None:
        """Drops every row, or only rows of one version."""
        if version is None:
            self._rows.clear()
        else:
            for key in [k for k in self._rows if k[1] == version]:
                del self._rows[key]
        logging.debug(f"Kernel cache invalidated (version={version}); {len(self._rows)} rows kept")


class DenseKernel:
    """Same row interface as KernelCache, served from a precomputed Gram matrix."""

    def __init__(self, x: np.ndarray, params: KernelParams) -> None:
        self.x = x
        self.params = params
        self.gram = gram_matrix(x, params)
        self.computations = len(x)
        self.hits = 0
        self.kernel_evaluations = len(x) * len(x)

    def row(self, i: int, index_set: Optional[np.ndarray], version: Hashable = 0) -> np.ndarray:
        self.hits += 1
        if index_set is None:
            return self.gram[i]
        return self.gram[i, index_set]

    def diagonal(self, i: int) -> float:
        return float(self.gram[i, i])
