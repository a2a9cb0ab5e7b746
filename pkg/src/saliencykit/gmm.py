"""2-D Gaussian mixtures over normalised image coordinates.

Positions are ``(x, y)`` in ``[0, 1]^2`` with ``x`` along columns, so one
mixture can be rasterised at any resolution.  Internally every component is
evaluated through the lower-triangular Cholesky factor ``L`` of its
precision matrix (``inv(cov) = L @ L.T``); the diagonal mode is simply the
special case ``L = diag(1/sx, 1/sy)``.

Unconstrained parameter layout, one row per component:

* diagonal: ``[logit, mx, my, log sx, log sy]``
* full:     ``[logit, mx, my, log L00, L10, log L11]``
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .core import DEFAULT_EPS, MapState, SaliencyMap, check_eps
from .errors import LengthMismatch, SaliencyError, SchemaError, SingularCovariance, WrongState

MAX_COMPONENTS = 64
# log-scale slots are clamped to this range; keeps decode total for huge inputs
LOG_SCALE_MIN = float(np.log(1e-4))
LOG_SCALE_MAX = float(np.log(1e4))
_LOG_2PI = float(np.log(2.0 * np.pi))
_TINY = np.finfo(np.float64).tiny


class CovMode(enum.Enum):
    DIAGONAL = "diag"
    FULL = "full"

    @property
    def width(self) -> int:
        return 5 if self is CovMode.DIAGONAL else 6

    @classmethod
    def parse(cls, value) -> "CovMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            raise SaliencyError(f"unknown covariance mode {value!r}; expected 'diag' or 'full'") from None


def _cov_from_prec_chol(L: np.ndarray) -> np.ndarray:
    l00, l10, l11 = L[:, 0, 0], L[:, 1, 0], L[:, 1, 1]
    m10 = -l10 / (l00 * l11)
    cov = np.empty_like(L)
    cov[:, 0, 0] = 1.0 / l00**2 + m10**2
    cov[:, 0, 1] = cov[:, 1, 0] = m10 / l11
    cov[:, 1, 1] = 1.0 / l11**2
    return cov


def _prec_chol_from_cov(cov: np.ndarray) -> np.ndarray:
    det = cov[:, 0, 0] * cov[:, 1, 1] - cov[:, 0, 1] * cov[:, 1, 0]
    if np.any(det <= 1e-300):
        raise SingularCovariance("covariance determinant is not positive")
    try:
        return np.linalg.cholesky(np.linalg.inv(cov))
    except np.linalg.LinAlgError as exc:
        raise SaliencyError("covariance is not positive definite") from exc


@dataclass(frozen=True, eq=False)
class Gmm2D:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    cov_mode: CovMode = CovMode.DIAGONAL
    prec_chol: Optional[np.ndarray] = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        mu = np.array(self.means, dtype=np.float64).reshape(-1, 2)
        cov = np.array(self.covs, dtype=np.float64).reshape(-1, 2, 2)
        mode = CovMode.parse(self.cov_mode)
        c = w.size
        if not 1 <= c <= MAX_COMPONENTS:
            raise SaliencyError(f"mixture needs 1..{MAX_COMPONENTS} components, got {c}")
        if mu.shape[0] != c or cov.shape[0] != c:
            raise SaliencyError("weights, means and covariances disagree on component count")
        for name, arr in (("weights", w), ("means", mu), ("covariances", cov)):
            if not np.all(np.isfinite(arr)):
                raise SaliencyError(f"non-finite {name}")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise SaliencyError("mixture weights must be positive and sum to 1")
        if not np.array_equal(cov[:, 0, 1], cov[:, 1, 0]):
            raise SaliencyError("covariances must be symmetric")
        if mode is CovMode.DIAGONAL and (np.any(cov[:, 0, 1] != 0) or np.any(cov[:, 0, 0] <= 0) or np.any(cov[:, 1, 1] <= 0)):
            raise SaliencyError("diagonal mode needs zero off-diagonals and positive variances")
        if self.prec_chol is None:
            L = _prec_chol_from_cov(cov)
            if mode is CovMode.DIAGONAL:
                L[:, 1, 0] = 0.0
        else:
            L = np.array(self.prec_chol, dtype=np.float64).reshape(-1, 2, 2)
            if L.shape[0] != c or np.any(L[:, 0, 1] != 0) or np.any(L[:, 0, 0] <= 0) or np.any(L[:, 1, 1] <= 0):
                raise SaliencyError("precision factor must be lower-triangular with positive diagonal")
        for name, arr in (("weights", w), ("means", mu), ("covs", cov), ("prec_chol", L)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "cov_mode", mode)

    @property
    def n_components(self) -> int:
        return self.weights.size

    def cov_determinants(self) -> np.ndarray:
        return 1.0 / (self.prec_chol[:, 0, 0] * self.prec_chol[:, 1, 1]) ** 2

    def cov_eigenvalues(self) -> np.ndarray:
        """(C, 2) eigenvalues, smallest first; stable for badly conditioned covariances."""
        tr = self.covs[:, 0, 0] + self.covs[:, 1, 1]
        det = self.cov_determinants()
        half = tr / 2.0
        big = half + np.sqrt(np.maximum(half * half - det, 0.0))
        return np.stack([det / big, big], axis=1)

    @classmethod
    def isotropic(cls, weights, means, sigmas, cov_mode=CovMode.DIAGONAL) -> "Gmm2D":
        sig = np.broadcast_to(np.asarray(sigmas, dtype=np.float64), np.shape(weights))
        covs = np.zeros((sig.size, 2, 2))
        covs[:, 0, 0] = covs[:, 1, 1] = sig**2
        return cls(np.asarray(weights, dtype=np.float64), means, covs, cov_mode)


def cell_centers(height: int, width: int) -> np.ndarray:
    """Row-major ``(H*W, 2)`` array of ``(x, y)`` cell centres in normalised units."""
    ys, xs = np.meshgrid((np.arange(height) + 0.5) / height, (np.arange(width) + 0.5) / width, indexing="ij")
    return np.stack([xs.ravel(), ys.ravel()], axis=1)


def _component_log_densities(means, L, pts):
    dx = pts[None, :, 0] - means[:, 0, None]
    dy = pts[None, :, 1] - means[:, 1, None]
    l00, l10, l11 = L[:, 0, 0, None], L[:, 1, 0, None], L[:, 1, 1, None]
    z0 = l00 * dx + l10 * dy
    z1 = l11 * dy
    logn = np.log(l00) + np.log(l11) - _LOG_2PI - 0.5 * (z0 * z0 + z1 * z1)
    return logn, dx, dy, z0, z1


def density(g: Gmm2D, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    if np.any(g.cov_determinants() <= 1e-300):
        raise SingularCovariance("component covariance is singular")
    logn = _component_log_densities(g.means, g.prec_chol, pts)[0]
    # far tails underflow to 0 in float64; the true density never does
    return np.maximum(np.exp(logsumexp(logn + np.log(g.weights)[:, None], axis=0)), _TINY)


def density_at(g: Gmm2D, x) -> float:
    """Mixture density at a single point ``x = (x, y)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (2,) or not np.all(np.isfinite(x)):
        raise SaliencyError(f"expected a finite 2-vector, got {x!r}")
    return float(density(g, x[None, :])[0])


def rasterize(g: Gmm2D, height: int, width: int) -> SaliencyMap:
    """Density at each cell centre times the cell area, as a raw map."""
    if height < 2 or width < 2:
        raise SaliencyError("raster needs at least 2x2 cells")
    p = density(g, cell_centers(height, width)) / (height * width)
    return SaliencyMap(p.reshape(height, width), MapState.RAW)


def nll(g: Gmm2D, Q: SaliencyMap, eps: float = DEFAULT_EPS) -> float:
    """-sum_i q_i ln(p_i + eps), with p_i the density at cell centre i."""
    if Q.state is not MapState.DISTRIBUTION:
        raise WrongState("nll target must be a distribution")
    eps = check_eps(eps)
    p = density(g, cell_centers(*Q.shape))
    return float(-np.sum(Q.values.ravel() * np.log(p + eps)))


# --- unconstrained parameterisation -------------------------------------------------


def _reshape_theta(theta, n_components: int, cov_mode: CovMode) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    k = cov_mode.width
    if theta.ndim != 1 or theta.size != n_components * k:
        raise LengthMismatch(f"expected {n_components * k} parameters for C={n_components} {cov_mode.value}, got {theta.size}")
    if not np.all(np.isfinite(theta)):
        raise SaliencyError("parameter vector contains non-finite entries")
    return theta.reshape(n_components, k)


def _unpack(theta, n_components, cov_mode):
    """Decoded quantities plus the masks needed by the backward pass."""
    rows = _reshape_theta(theta, n_components, cov_mode)
    logits = rows[:, 0]
    weights = np.exp(logits - logsumexp(logits))
    weights = np.maximum(weights, _TINY)
    weights /= weights.sum()
    means = rows[:, 1:3].copy()
    L = np.zeros((n_components, 2, 2))
    if cov_mode is CovMode.DIAGONAL:
        raw = rows[:, 3:5]
        ls = np.clip(raw, LOG_SCALE_MIN, LOG_SCALE_MAX)
        L[:, 0, 0] = np.exp(-ls[:, 0])
        L[:, 1, 1] = np.exp(-ls[:, 1])
    else:
        raw = rows[:, [3, 5]]
        ls = np.clip(raw, LOG_SCALE_MIN, LOG_SCALE_MAX)
        L[:, 0, 0] = np.exp(ls[:, 0])
        L[:, 1, 0] = rows[:, 4]
        L[:, 1, 1] = np.exp(ls[:, 1])
    active = (raw >= LOG_SCALE_MIN) & (raw <= LOG_SCALE_MAX)
    return weights, means, L, active


def decode(theta, n_components: int, cov_mode=CovMode.DIAGONAL) -> Gmm2D:
    cov_mode = CovMode.parse(cov_mode)
    weights, means, L, _ = _unpack(theta, n_components, cov_mode)
    covs = _cov_from_prec_chol(L)
    if cov_mode is CovMode.DIAGONAL:
        covs[:, 0, 1] = covs[:, 1, 0] = 0.0
    return Gmm2D(weights, means, covs, cov_mode, prec_chol=L)


def encode(g: Gmm2D) -> np.ndarray:
    """Inverse of ``decode``; logits are returned centred to zero mean."""
    logits = np.log(g.weights)
    logits = logits - logits.mean()
    L = g.prec_chol
    if g.cov_mode is CovMode.DIAGONAL:
        rows = np.column_stack([logits, g.means, -np.log(L[:, 0, 0]), -np.log(L[:, 1, 1])])
    else:
        rows = np.column_stack([logits, g.means, np.log(L[:, 0, 0]), L[:, 1, 0], np.log(L[:, 1, 1])])
    return rows.ravel()


def mixture_forward(theta, n_components: int, cov_mode: CovMode, pts: np.ndarray):
    """Density at ``pts`` and a closure mapping dLoss/dp to dLoss/dtheta."""
    cov_mode = CovMode.parse(cov_mode)
    weights, means, L, active = _unpack(theta, n_components, cov_mode)
    logn, dx, dy, z0, z1 = _component_log_densities(means, L, pts)
    comp = weights[:, None] * np.exp(logn)
    p = comp.sum(axis=0)

    def backward(upstream: np.ndarray) -> np.ndarray:
        gc = comp * upstream[None, :]
        s = gc.sum(axis=1)
        grad = np.zeros((n_components, cov_mode.width))
        # softmax chain rule; s.sum() equals upstream . p and makes C=1 exactly zero
        grad[:, 0] = s - weights * s.sum()
        l00, l10, l11 = L[:, 0, 0, None], L[:, 1, 0, None], L[:, 1, 1, None]
        grad[:, 1] = np.sum(gc * z0 * l00, axis=1)
        grad[:, 2] = np.sum(gc * (z0 * l10 + z1 * l11), axis=1)
        d_log_l00 = np.sum(gc * (1.0 - z0 * l00 * dx), axis=1)
        d_log_l11 = np.sum(gc * (1.0 - z1 * l11 * dy), axis=1)
        if cov_mode is CovMode.DIAGONAL:
            # log sx = -log L00
            grad[:, 3] = -d_log_l00 * active[:, 0]
            grad[:, 4] = -d_log_l11 * active[:, 1]
        else:
            grad[:, 3] = d_log_l00 * active[:, 0]
            grad[:, 4] = np.sum(gc * (-z0 * dy), axis=1)
            grad[:, 5] = d_log_l11 * active[:, 1]
        return grad.ravel()

    return p, backward


def nll_value_and_grad(theta, Q: SaliencyMap, n_components: int, cov_mode=CovMode.DIAGONAL, eps: float = DEFAULT_EPS):
    if Q.state is not MapState.DISTRIBUTION:
        raise WrongState("nll target must be a distribution")
    eps = check_eps(eps)
    q = Q.values.ravel()
    p, backward = mixture_forward(theta, n_components, cov_mode, cell_centers(*Q.shape))
    value = -np.sum(q * np.log(p + eps))
    return float(value), backward(-q / (p + eps))


def nll_grad(theta, Q: SaliencyMap, n_components: int, cov_mode=CovMode.DIAGONAL, eps: float = DEFAULT_EPS) -> np.ndarray:
    return nll_value_and_grad(theta, Q, n_components, cov_mode, eps)[1]


# --- JSON document ------------------------------------------------------------------


def gmm_to_dict(g: Gmm2D) -> dict:
    return {
        "cov_mode": g.cov_mode.value,
        "components": [
            {
                "weight": float(w),
                "mean": [float(m[0]), float(m[1])],
                "cov": [[float(c[0, 0]), float(c[0, 1])], [float(c[1, 0]), float(c[1, 1])]],
            }
            for w, m, c in zip(g.weights, g.means, g.covs)
        ],
    }


def gmm_from_dict(doc) -> Gmm2D:
    if not isinstance(doc, dict) or "components" not in doc or "cov_mode" not in doc:
        raise SchemaError("GMM document needs 'cov_mode' and 'components'")
    if doc["cov_mode"] not in ("diag", "full"):
        raise SchemaError(f"cov_mode must be 'diag' or 'full', got {doc['cov_mode']!r}")
    comps = doc["components"]
    if not isinstance(comps, list) or not comps:
        raise SchemaError("'components' must be a non-empty list")
    try:
        weights = np.array([float(c["weight"]) for c in comps])
        means = np.array([[float(v) for v in c["mean"]] for c in comps])
        covs = np.array([[[float(v) for v in row] for row in c["cov"]] for c in comps])
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed component: {exc}") from exc
    if means.shape != (len(comps), 2) or covs.shape != (len(comps), 2, 2):
        raise SchemaError("each component needs a 2-vector mean and a 2x2 covariance")
    if abs(weights.sum() - 1.0) > 1e-6:
        raise SchemaError(f"weights sum to {weights.sum()!r}, expected 1 within 1e-6")
    if np.any(weights <= 0):
        raise SchemaError("weights must be positive")
    try:
        return Gmm2D(weights / weights.sum(), means, covs, CovMode(doc["cov_mode"]))
    except SaliencyError as exc:
        raise SchemaError(str(exc)) from exc
