"""Distribution-based and location-based saliency metrics.

Log bases differ on purpose: ``kldiv`` uses the natural log, ``info_gain``
uses log2 (bits), following the usual benchmark conventions.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    DEFAULT_EPS,
    FixationSet,
    MapState,
    SaliencyMap,
    as_map,
    check_eps,
    downsample_area,
    fit_within,
    normalize_to_distribution,
    standardize,
)
from .errors import (
    ConstantMap,
    EmptyFixations,
    EmptyNegatives,
    GridTooLarge,
    SaliencyError,
    ShapeMismatch,
    WrongState,
)

METRIC_NAMES = ("kldiv", "cc", "nss", "sim", "auc", "sauc", "ig", "emd")
EMD_MAX_CELLS = 4096
EMD_MAX_SIDE = 64


def _same_shape(a: SaliencyMap, b: SaliencyMap):
    if a.shape != b.shape:
        raise ShapeMismatch(f"map shapes differ: {a.shape} vs {b.shape}")


def _require_distribution(*maps: SaliencyMap):
    for m in maps:
        if m.state is not MapState.DISTRIBUTION:
            raise WrongState(f"expected a distribution, got a {m.state.value} map")


def _check_fixations(fix: FixationSet, shape, exc=EmptyFixations):
    if len(fix) == 0:
        raise exc("fixation set is empty")
    if tuple(fix.bounds) != tuple(shape):
        raise ShapeMismatch(f"fixations bounded by {fix.bounds}, map is {shape}")


def kldiv(P: SaliencyMap, Q: SaliencyMap, eps: float = DEFAULT_EPS) -> float:
    """sum_i Q_i * ln(eps + Q_i / (P_i + eps)) for prediction P and target Q.

    Not symmetric: mass in Q that P misses (a false negative) is punished
    far harder than spurious mass in P.
    """
    _require_distribution(P, Q)
    _same_shape(P, Q)
    eps = check_eps(eps)
    p, q = P.values, Q.values
    return float(np.sum(q * np.log(eps + q / (p + eps))))


def cc(P, Q) -> float:
    """Pearson correlation between two maps viewed as paired pixel samples."""
    P, Q = as_map(P), as_map(Q)
    _same_shape(P, Q)
    a = P.values - P.values.mean()
    b = Q.values - Q.values.mean()
    if np.ptp(P.values) == 0 or np.ptp(Q.values) == 0:
        raise ConstantMap("correlation is undefined for a constant map")
    r = np.sum(a * b) / np.sqrt(np.sum(a * a) * np.sum(b * b))
    return float(np.clip(r, -1.0, 1.0))


def nss(P, fix: FixationSet) -> float:
    P = as_map(P)
    _check_fixations(fix, P.shape)
    return float(np.mean(fix.sample(standardize(P).values)))


def sim(P: SaliencyMap, Q: SaliencyMap) -> float:
    _require_distribution(P, Q)
    _same_shape(P, Q)
    return float(np.sum(np.minimum(P.values, Q.values)))


def _threshold_auc(pos: np.ndarray, neg: np.ndarray) -> float:
    # thresholds at the positive scores; a score >= threshold counts as detected
    thresholds = np.sort(pos)[::-1]
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)
    tp = (pos.size - np.searchsorted(pos_sorted, thresholds, side="left")) / pos.size
    fp = (neg.size - np.searchsorted(neg_sorted, thresholds, side="left")) / neg.size
    tpr = np.concatenate(([0.0], tp, [1.0]))
    fpr = np.concatenate(([0.0], fp, [1.0]))
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def auc_judd(P, fix: FixationSet) -> float:
    """ROC area with fixated pixels as positives and every other pixel as negative."""
    P = as_map(P)
    _check_fixations(fix, P.shape)
    mask = np.zeros(P.shape, dtype=bool)
    mask[fix.ys, fix.xs] = True
    if mask.all():
        raise SaliencyError("every pixel is fixated; no negatives for AUC")
    return _threshold_auc(P.values[mask], P.values[~mask])


def sauc(P, fix: FixationSet, negatives: FixationSet) -> float:
    """Shuffled AUC: negatives are the caller's pixels (typically other images' fixations).

    The curve is built exactly as in ``auc_judd`` with the negative set swapped in.
    """
    P = as_map(P)
    _check_fixations(fix, P.shape)
    _check_fixations(negatives, P.shape, exc=EmptyNegatives)
    pos = fix.unique().sample(P.values)
    neg = negatives.unique().sample(P.values)
    return _threshold_auc(pos, neg)


def info_gain(P: SaliencyMap, baseline: SaliencyMap, fix: FixationSet, eps: float = DEFAULT_EPS) -> float:
    """Mean log2 advantage of P over the baseline at fixated pixels (bits per fixation)."""
    _require_distribution(P, baseline)
    _same_shape(P, baseline)
    _check_fixations(fix, P.shape)
    eps = check_eps(eps)
    p = fix.sample(P.values)
    b = fix.sample(baseline.values)
    return float(np.mean(np.log2(p + eps) - np.log2(b + eps)))


def _load_pot():
    # POT probes every array backend on import; only numpy is needed here
    for key in ("PYTORCH", "JAX", "CUPY", "TENSORFLOW"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{key}", "1")
    import ot

    return ot


def emd(P: SaliencyMap, Q: SaliencyMap) -> float:
    """Exact earth mover's distance with a Euclidean ground metric in pixels.

    Solved with a network simplex over the supports of both maps.  Grids
    above 4096 cells must be downsampled first (see ``emd_downsampled``).
    """
    _require_distribution(P, Q)
    _same_shape(P, Q)
    h, w = P.shape
    if h * w > EMD_MAX_CELLS:
        raise GridTooLarge(f"{h}x{w} grid exceeds {EMD_MAX_CELLS} cells; downsample first")
    rows, cols = np.divmod(np.arange(h * w), w)
    coords = np.stack([rows, cols], axis=1).astype(np.float64)
    p, q = P.values.ravel(), Q.values.ravel()
    src, dst = np.flatnonzero(p > 0), np.flatnonzero(q > 0)
    a = p[src] / p[src].sum()
    b = q[dst] / q[dst].sum()
    diff = coords[src][:, None, :] - coords[dst][None, :, :]
    cost = np.sqrt(np.sum(diff * diff, axis=-1))
    ot = _load_pot()
    value = ot.emd2(a, b, cost, numItermax=10_000_000)
    return max(float(value), 0.0)


def emd_downsampled(P: SaliencyMap, Q: SaliencyMap, max_side: int = EMD_MAX_SIDE):
    """EMD after area-averaging both maps so the longer side is at most ``max_side``.

    Returns ``(value, shape)``; distances are in pixels of the reduced grid.
    """
    _require_distribution(P, Q)
    _same_shape(P, Q)
    shape = P.shape
    if shape[0] * shape[1] > EMD_MAX_CELLS or max(shape) > max_side:
        shape = fit_within(shape, max_side)
        P = normalize_to_distribution(downsample_area(P.values, shape))
        Q = normalize_to_distribution(downsample_area(Q.values, shape))
    return emd(P, Q), shape


@dataclass
class MetricReport:
    kldiv: Optional[float] = None
    cc: Optional[float] = None
    nss: Optional[float] = None
    sim: Optional[float] = None
    auc: Optional[float] = None
    sauc: Optional[float] = None
    ig: Optional[float] = None
    emd: Optional[float] = None
    emd_shape: Optional[tuple] = None

    def as_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k in METRIC_NAMES and v is not None}


def evaluate_all(
    P,
    Q_density,
    fix: Optional[FixationSet],
    negatives: Optional[FixationSet] = None,
    baseline: Optional[SaliencyMap] = None,
    eps: float = DEFAULT_EPS,
    *,
    uniform_baseline: bool = True,
    metrics: Optional[Sequence[str]] = None,
) -> MetricReport:
    """Compute every requested metric whose inputs are available.

    ``P`` may be in any non-standardized state; it is normalised where a
    metric needs a distribution.  ``sauc`` is skipped without negatives and
    ``ig`` without a baseline unless ``uniform_baseline`` is set.
    """
    wanted = METRIC_NAMES if metrics is None else tuple(metrics)
    unknown = set(wanted) - set(METRIC_NAMES)
    if unknown:
        raise SaliencyError(f"unknown metrics: {sorted(unknown)}")
    P = as_map(P)
    P_dist = normalize_to_distribution(P)
    Q = normalize_to_distribution(Q_density) if Q_density is not None else None
    if Q is not None:
        _same_shape(P, Q)
    report = MetricReport()
    if Q is not None:
        if "kldiv" in wanted:
            report.kldiv = kldiv(P_dist, Q, eps)
        if "cc" in wanted:
            report.cc = cc(P, Q)
        if "sim" in wanted:
            report.sim = sim(P_dist, Q)
        if "emd" in wanted:
            report.emd, report.emd_shape = emd_downsampled(P_dist, Q)
    if fix is not None:
        if "nss" in wanted:
            report.nss = nss(P, fix)
        if "auc" in wanted:
            report.auc = auc_judd(P, fix)
        if "sauc" in wanted and negatives is not None:
            report.sauc = sauc(P, fix, negatives)
        if "ig" in wanted:
            if baseline is None and uniform_baseline:
                baseline = SaliencyMap(np.full(P.shape, 1.0 / P.values.size), MapState.DISTRIBUTION)
            if baseline is not None:
                report.ig = info_gain(P_dist, normalize_to_distribution(baseline), fix, eps)
    return report
