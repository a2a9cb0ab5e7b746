"""Grid and fixation data model.

Coordinates follow image conventions throughout the package: ``x`` is the
column index, ``y`` the row index, origin at the top-left pixel, 0-indexed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy import ndimage

from .errors import AllZeroMap, EmptyFixations, SaliencyError

DEFAULT_EPS = 1e-7

_SUM_TOL = 1e-9
_MEAN_TOL = 1e-9


def check_eps(eps: float) -> float:
    """Validate a log-regularisation constant and return it as a float."""
    eps = float(eps)
    if not 0.0 < eps < 1e-3:
        raise SaliencyError(f"eps must lie in (0, 1e-3), got {eps!r}")
    return eps


class MapState(enum.Enum):
    RAW = "raw"
    DISTRIBUTION = "distribution"
    STANDARDIZED = "standardized"


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    """An H x W grid of saliency values tagged with its normalisation state.

    The array is copied on construction and frozen, so maps can be shared
    freely between threads and processes.
    """

    values: np.ndarray
    state: MapState = MapState.RAW

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise SaliencyError(f"saliency map must be a non-empty 2-D grid, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise SaliencyError("saliency map contains non-finite values")
        if self.state is not MapState.STANDARDIZED and np.any(arr < 0):
            raise SaliencyError(f"{self.state.value} map contains negative values")
        if self.state is MapState.DISTRIBUTION and abs(arr.sum() - 1.0) > _SUM_TOL:
            raise SaliencyError(f"distribution sums to {arr.sum()!r}, expected 1")
        if self.state is MapState.STANDARDIZED and abs(arr.mean()) > _MEAN_TOL:
            raise SaliencyError("standardized map does not have zero mean")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def __repr__(self):
        return f"SaliencyMap({self.height}x{self.width}, state={self.state.value})"


def as_map(obj) -> SaliencyMap:
    """Pass SaliencyMap through; wrap anything array-like as a raw map."""
    if isinstance(obj, SaliencyMap):
        return obj
    return SaliencyMap(np.asarray(obj, dtype=np.float64), MapState.RAW)


@dataclass(frozen=True, eq=False)
class FixationSet:
    """Discrete fixation pixels for one image.

    ``points`` is an ``(N, 2)`` integer array of ``(x, y)`` pairs.  Duplicates
    are kept: several observers may fixate the same pixel.
    """

    points: np.ndarray
    bounds: tuple[int, int]

    def __post_init__(self):
        pts = np.asarray(self.points)
        if pts.size == 0:
            pts = np.zeros((0, 2), dtype=np.int64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise SaliencyError(f"fixations must be (N, 2) x,y pairs, got shape {pts.shape}")
        if not np.issubdtype(pts.dtype, np.integer):
            if not np.all(np.equal(np.mod(pts, 1), 0)):
                raise SaliencyError("fixation coordinates must be integers")
        pts = pts.astype(np.int64)
        h, w = (int(b) for b in self.bounds)
        if h < 1 or w < 1:
            raise SaliencyError(f"invalid bounds {self.bounds!r}")
        bad = (pts[:, 0] < 0) | (pts[:, 0] >= w) | (pts[:, 1] < 0) | (pts[:, 1] >= h)
        if np.any(bad):
            x, y = pts[np.argmax(bad)]
            raise SaliencyError(f"fixation ({x}, {y}) outside {h}x{w} grid")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "bounds", (h, w))

    @classmethod
    def from_points(cls, points: Iterable[tuple[int, int]], shape: tuple[int, int]) -> "FixationSet":
        return cls(np.array(list(points), dtype=np.int64).reshape(-1, 2), shape)

    def __len__(self):
        return self.points.shape[0]

    @property
    def xs(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def ys(self) -> np.ndarray:
        return self.points[:, 1]

    def unique(self) -> "FixationSet":
        return FixationSet(np.unique(self.points, axis=0), self.bounds)

    def sample(self, values: np.ndarray) -> np.ndarray:
        """Values of a grid at every fixation, duplicates included."""
        return np.asarray(values)[self.ys, self.xs]


def normalize_to_distribution(smap) -> SaliencyMap:
    smap = as_map(smap)
    if smap.state is MapState.STANDARDIZED:
        raise SaliencyError("cannot turn a standardized map into a distribution")
    if smap.state is MapState.DISTRIBUTION:
        return smap
    total = smap.values.sum()
    if total <= 0:
        raise AllZeroMap("map has no positive mass")
    return SaliencyMap(smap.values / total, MapState.DISTRIBUTION)


def standardize(smap) -> SaliencyMap:
    """Z-score a map using the population standard deviation.

    Constant maps become all zeros instead of raising.
    """
    vals = as_map(smap).values
    if np.ptp(vals) == 0:
        return SaliencyMap(np.zeros_like(vals), MapState.STANDARDIZED)
    centered = vals - vals.mean()
    out = centered / centered.std()
    # second centering pass removes the rounding residue of the first
    out -= out.mean()
    return SaliencyMap(out, MapState.STANDARDIZED)


def binary_map(fix: FixationSet) -> SaliencyMap:
    grid = np.zeros(fix.bounds, dtype=np.float64)
    grid[fix.ys, fix.xs] = 1.0
    return SaliencyMap(grid, MapState.RAW)


def density_from_fixations(fix: FixationSet, sigma_px: float) -> SaliencyMap:
    """Blur fixations into a continuous ground-truth distribution.

    Each fixation contributes an isotropic Gaussian kernel of standard
    deviation ``sigma_px`` truncated at four standard deviations; mass blurred
    past the border is dropped before normalisation.
    """
    if len(fix) == 0:
        raise EmptyFixations("cannot build a density from zero fixations")
    if not sigma_px > 0:
        raise SaliencyError(f"sigma_px must be positive, got {sigma_px!r}")
    counts = np.zeros(fix.bounds, dtype=np.float64)
    np.add.at(counts, (fix.ys, fix.xs), 1.0)
    blurred = ndimage.gaussian_filter(counts, sigma=sigma_px, mode="constant", cval=0.0, truncate=4.0)
    return normalize_to_distribution(np.clip(blurred, 0.0, None))


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    # row k holds the fraction of each input cell covered by output cell k
    edges_out = np.linspace(0.0, n_in, n_out + 1)
    lo = np.maximum(edges_out[:-1, None], np.arange(n_in)[None, :])
    hi = np.minimum(edges_out[1:, None], np.arange(1, n_in + 1)[None, :])
    return np.clip(hi - lo, 0.0, None)


def downsample_area(values: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Area-average a grid onto a coarser ``shape`` (non-integer ratios allowed)."""
    values = np.asarray(values, dtype=np.float64)
    h, w = shape
    rows = _area_weights(values.shape[0], h)
    cols = _area_weights(values.shape[1], w)
    summed = rows @ values @ cols.T
    return summed / (rows.sum(axis=1)[:, None] * cols.sum(axis=1)[None, :])


def fit_within(shape: tuple[int, int], max_side: int) -> tuple[int, int]:
    """Largest aspect-preserving shape whose longer side is at most ``max_side``."""
    h, w = shape
    scale = min(1.0, max_side / max(h, w))
    return max(1, int(round(h * scale))), max(1, int(round(w * scale)))
