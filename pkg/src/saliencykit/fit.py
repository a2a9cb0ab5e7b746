"""Composite saliency losses, Adam, and gradient-descent mixture fitting."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional

import numpy as np

from . import metrics
from .core import DEFAULT_EPS, FixationSet, MapState, SaliencyMap, as_map, check_eps, normalize_to_distribution
from .errors import LengthMismatch, MissingFixations, SaliencyError, WrongState
from .gmm import MAX_COMPONENTS, CovMode, Gmm2D, cell_centers, decode, mixture_forward

LOSS_KINDS = ("kl", "cc", "nss", "nll")


@dataclass(frozen=True)
class LossSpec:
    """Weighted sum of loss terms.

    The CC weight multiplies ``1 - cc`` and the NSS weight multiplies
    ``-nss`` so that every term is minimised.  NLL is the mixture-domain
    counterpart of KL; the two are never combined.
    """

    terms: Mapping[str, float]
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        terms = {str(k).lower(): float(v) for k, v in dict(self.terms).items()}
        if not terms:
            raise SaliencyError("a loss needs at least one term")
        unknown = set(terms) - set(LOSS_KINDS)
        if unknown:
            raise SaliencyError(f"unknown loss terms {sorted(unknown)}; choose from {LOSS_KINDS}")
        if "kl" in terms and "nll" in terms:
            raise SaliencyError("KL and NLL terms cannot be combined in one loss")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "eps", check_eps(self.eps))

    def weight(self, kind: str) -> float:
        return self.terms.get(kind, 0.0)

    @classmethod
    def kl_cc(cls, eps=DEFAULT_EPS):
        return cls({"kl": 1.0, "cc": 1.0}, eps)

    @classmethod
    def kl_cc_nss(cls, eps=DEFAULT_EPS):
        return cls({"kl": 1.0, "cc": 1.0, "nss": 1.0}, eps)

    @classmethod
    def nll_cc(cls, eps=DEFAULT_EPS):
        return cls({"nll": 1.0, "cc": 1.0}, eps)


# --- dense-map losses ---------------------------------------------------------------


def composite_map_loss(P, Q: SaliencyMap, fix: Optional[FixationSet], spec: LossSpec) -> float:
    if "nll" in spec.terms:
        raise SaliencyError("NLL applies to mixtures; use composite_gmm_loss")
    if "nss" in spec.terms and fix is None:
        raise MissingFixations("NSS term requested without fixations")
    P = as_map(P)
    total = 0.0
    if "kl" in spec.terms:
        total += spec.weight("kl") * metrics.kldiv(normalize_to_distribution(P), Q, spec.eps)
    if "cc" in spec.terms:
        total += spec.weight("cc") * (1.0 - metrics.cc(P, Q))
    if "nss" in spec.terms:
        total += spec.weight("nss") * -metrics.nss(P, fix)
    return total


def _cc_grad(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    """Pearson r between flat a and b, and dr/da."""
    ac = a - a.mean()
    bc = b - b.mean()
    saa = np.dot(ac, ac)
    sbb = np.dot(bc, bc)
    r = np.dot(ac, bc) / np.sqrt(saa * sbb)
    return float(r), bc / np.sqrt(saa * sbb) - r * ac / saa


def composite_map_loss_grad(P, Q: SaliencyMap, fix: Optional[FixationSet], spec: LossSpec) -> np.ndarray:
    """Gradient of ``composite_map_loss`` with respect to the raw values of P.

    The KL term differentiates through the normalisation ``P / sum(P)``.
    """
    if "nll" in spec.terms:
        raise SaliencyError("NLL applies to mixtures; use composite_gmm_loss")
    if "nss" in spec.terms and fix is None:
        raise MissingFixations("NSS term requested without fixations")
    p = as_map(P).values.ravel()
    q = Q.values.ravel()
    grad = np.zeros_like(p)
    if "kl" in spec.terms:
        eps = spec.eps
        total = p.sum()
        ph = p / total
        g = -(q * q) / ((ph + eps) * (eps * (ph + eps) + q))
        grad += spec.weight("kl") * (g - np.dot(g, ph)) / total
    if "cc" in spec.terms:
        grad -= spec.weight("cc") * _cc_grad(p, q)[1]
    if "nss" in spec.terms:
        n = p.size
        mu = p.mean()
        sd = p.std()
        counts = np.zeros(n)
        np.add.at(counts, fix.ys * Q.width + fix.xs, 1.0)
        score = np.mean((p[fix.ys * Q.width + fix.xs] - mu) / sd)
        dnss = (counts / len(fix) - 1.0 / n) / sd - score * (p - mu) / (n * sd * sd)
        grad -= spec.weight("nss") * dnss
    return grad.reshape(Q.shape)


# --- mixture losses -----------------------------------------------------------------


def composite_gmm_loss(theta, Q: SaliencyMap, spec: LossSpec, n_components: int, cov_mode=CovMode.DIAGONAL):
    """Weighted NLL + (1 - CC) of a parameter vector, with its analytic gradient.

    CC is taken between the raw raster of the decoded mixture and Q; the
    raster's cell-area scale drops out of the correlation.
    """
    if Q.state is not MapState.DISTRIBUTION:
        raise WrongState("target must be a distribution")
    if "nll" not in spec.terms:
        raise SaliencyError("mixture loss requires an NLL term")
    if set(spec.terms) - {"nll", "cc"}:
        raise SaliencyError("mixture loss supports only NLL and CC terms")
    q = Q.values.ravel()
    p, backward = mixture_forward(theta, n_components, cov_mode, cell_centers(*Q.shape))
    w_nll = spec.weight("nll")
    value = -w_nll * np.sum(q * np.log(p + spec.eps))
    upstream = -w_nll * q / (p + spec.eps)
    if "cc" in spec.terms:
        r, dr = _cc_grad(p, q)
        value += spec.weight("cc") * (1.0 - r)
        upstream = upstream - spec.weight("cc") * dr
    return float(value), backward(upstream)


# --- optimiser ----------------------------------------------------------------------


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8

    @classmethod
    def fresh(cls, n: int, **hyper) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), **hyper)


def adam_step(state: AdamState, theta, grad):
    """One bias-corrected Adam update.  Returns ``(new_state, new_theta)``; inputs are not modified."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if not (theta.shape == grad.shape == state.m.shape):
        raise LengthMismatch(f"theta {theta.shape}, grad {grad.shape}, state {state.m.shape}")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * (grad * grad)
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_theta = theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps_opt)
    return replace(state, m=m, v=v, step=t), new_theta


# --- fitting ------------------------------------------------------------------------


@dataclass
class FitResult:
    gmm: Gmm2D
    theta: np.ndarray
    loss_trace: np.ndarray
    iterations: int
    converged: bool
    best_loss: float = field(default=float("nan"))


INIT_SIGMA = 0.1
INIT_DRAWS = 64


def _theta_from_cells(pts: np.ndarray, cov_mode: CovMode) -> np.ndarray:
    rows = []
    for x, y in pts:
        if cov_mode is CovMode.DIAGONAL:
            rows.append([0.0, x, y, np.log(INIT_SIGMA), np.log(INIT_SIGMA)])
        else:
            rows.append([0.0, x, y, -np.log(INIT_SIGMA), 0.0, -np.log(INIT_SIGMA)])
    return np.array(rows).ravel()


def init_theta(
    Q: SaliencyMap,
    n_components: int,
    cov_mode=CovMode.DIAGONAL,
    seed: int = 0,
    spec: Optional[LossSpec] = None,
    draws: int = INIT_DRAWS,
) -> np.ndarray:
    """Seeded start: means at cells drawn in proportion to Q, sigma 0.1, uniform weights.

    ``draws`` independent sets of cells are drawn and the set with the
    lowest loss is kept, which keeps small-C starts from piling several
    means onto one mode.
    """
    cov_mode = CovMode.parse(cov_mode)
    spec = spec or LossSpec.nll_cc()
    rng = np.random.default_rng(seed)
    pts = cell_centers(*Q.shape)
    q = Q.values.ravel()
    best, best_theta = np.inf, None
    for _ in range(max(1, draws)):
        theta = _theta_from_cells(pts[rng.choice(q.size, size=n_components, p=q)], cov_mode)
        value = composite_gmm_loss(theta, Q, spec, n_components, cov_mode)[0]
        if value < best:
            best, best_theta = value, theta
    return best_theta


def fit_gmm(
    Q: SaliencyMap,
    n_components: int,
    cov_mode=CovMode.DIAGONAL,
    spec: Optional[LossSpec] = None,
    iters: int = 2000,
    seed: int = 0,
    *,
    lr: float = 1e-4,
    tol: float = 1e-7,
    patience: int = 50,
    theta0: Optional[np.ndarray] = None,
) -> FitResult:
    """Fit a mixture to ``Q`` by Adam on the composite NLL + CC loss.

    Stops after ``iters`` evaluations or once the best loss improved by less
    than ``tol`` over the last ``patience`` steps, and returns the best
    parameters seen rather than the last iterate.
    """
    cov_mode = CovMode.parse(cov_mode)
    if not 1 <= n_components <= MAX_COMPONENTS:
        raise SaliencyError(f"n_components must be in 1..{MAX_COMPONENTS}")
    if Q.state is not MapState.DISTRIBUTION:
        raise WrongState("fit target must be a distribution")
    spec = spec or LossSpec.nll_cc()
    theta = init_theta(Q, n_components, cov_mode, seed, spec) if theta0 is None else np.array(theta0, dtype=np.float64)
    state = AdamState.fresh(theta.size, lr=lr)
    trace: list[float] = []
    best_hist: list[float] = []
    best, best_theta = np.inf, theta.copy()
    converged = False
    for it in range(iters):
        value, grad = composite_gmm_loss(theta, Q, spec, n_components, cov_mode)
        trace.append(value)
        if value < best:
            best, best_theta = value, theta.copy()
        best_hist.append(best)
        if it >= patience and best_hist[it - patience] - best < tol:
            converged = True
            break
        state, theta = adam_step(state, theta, grad)
    return FitResult(
        gmm=decode(best_theta, n_components, cov_mode),
        theta=best_theta,
        loss_trace=np.array(trace),
        iterations=len(trace),
        converged=converged,
        best_loss=float(best),
    )


def grad_check_errors(
    theta,
    Q: SaliencyMap,
    spec: LossSpec,
    step: float = 1e-5,
    *,
    n_components: int,
    cov_mode=CovMode.DIAGONAL,
    value_and_grad: Optional[Callable] = None,
) -> np.ndarray:
    """Per-coordinate relative error between analytic and central-difference gradients."""
    if not 1e-7 <= step <= 1e-3:
        raise SaliencyError("finite-difference step must lie in [1e-7, 1e-3]")
    theta = np.asarray(theta, dtype=np.float64)
    if value_and_grad is None:

        def value_and_grad(th):
            return composite_gmm_loss(th, Q, spec, n_components, cov_mode)

    analytic = np.asarray(value_and_grad(theta)[1])
    numeric = np.empty_like(theta)
    for k in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[k] += step
        down[k] -= step
        numeric[k] = (value_and_grad(up)[0] - value_and_grad(down)[0]) / (2.0 * step)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return np.abs(analytic - numeric) / scale


def grad_check(theta, Q, spec, step=1e-5, **kwargs) -> float:
    return float(np.max(grad_check_errors(theta, Q, spec, step, **kwargs)))
