"""Synthetic loss-behaviour sweeps.

A sweep holds a ground-truth mixture fixed, varies one parameter of a
predicted mixture over a grid and records how each loss or metric responds.
"""

from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import metrics
from .core import DEFAULT_EPS, FixationSet, MapState, SaliencyMap, check_eps, normalize_to_distribution
from .errors import IncompatibleScenario, SaliencyError, SchemaError
from .formats import atomic_write
from .gmm import CovMode, Gmm2D, gmm_from_dict, gmm_to_dict, nll, rasterize

CURVE_KINDS = ("kldiv", "cc", "nss", "sim", "nll", "ig", "emd")
DEFAULT_CURVES = ("kldiv", "cc", "nll", "nss", "sim")
# metrics where larger is better; loss_curve flips them
_HIGHER_IS_BETTER = {"cc": lambda v: 1.0 - v, "sim": lambda v: 1.0 - v, "nss": lambda v: -v, "ig": lambda v: -v}


class Scenario(enum.Enum):
    VARIANCE = "variance"
    SINGLE_MODE_LOCATION = "single-mode-location"
    TWO_MODE_LOCATION = "two-mode-location"
    TWO_MODE_WEIGHT = "two-mode-weight"

    @classmethod
    def names(cls) -> list[str]:
        return [s.value for s in cls]


@dataclass(frozen=True, eq=False)
class SweepSpec:
    scenario: Scenario
    gt: Gmm2D
    lo: float
    hi: float
    steps: int
    height: int = 256
    width: int = 256
    losses: tuple = DEFAULT_CURVES
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        try:
            scenario = Scenario(self.scenario) if not isinstance(self.scenario, Scenario) else self.scenario
        except ValueError:
            raise IncompatibleScenario(f"unknown scenario {self.scenario!r}; valid: {', '.join(Scenario.names())}") from None
        object.__setattr__(self, "scenario", scenario)
        object.__setattr__(self, "losses", tuple(self.losses))
        object.__setattr__(self, "eps", check_eps(self.eps))
        if not self.lo < self.hi:
            raise SaliencyError(f"sweep range needs lo < hi, got ({self.lo}, {self.hi})")
        if self.steps < 3:
            raise SaliencyError("a sweep needs at least 3 steps")
        if self.height < 2 or self.width < 2:
            raise SaliencyError("raster must be at least 2x2")
        bad = set(self.losses) - set(CURVE_KINDS)
        if bad or not self.losses:
            raise SaliencyError(f"unknown curve kinds {sorted(bad)}; choose from {CURVE_KINDS}")
        c = self.gt.n_components
        if scenario in (Scenario.TWO_MODE_LOCATION, Scenario.TWO_MODE_WEIGHT) and c != 2:
            raise IncompatibleScenario(f"{scenario.value} needs a 2-component ground truth, got {c}")
        if scenario is Scenario.SINGLE_MODE_LOCATION and c != 1:
            raise IncompatibleScenario(f"{scenario.value} needs a 1-component ground truth, got {c}")
        if scenario is Scenario.VARIANCE and self.lo <= 0:
            raise IncompatibleScenario("variance sweep needs positive sigmas")
        if scenario is Scenario.TWO_MODE_WEIGHT and not (0 < self.lo and self.hi < 1):
            raise IncompatibleScenario("weight sweep must stay inside (0, 1)")

    @property
    def params(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.steps)

    @property
    def gt_param(self) -> Optional[float]:
        g = self.gt
        if self.scenario is Scenario.VARIANCE:
            var = g.covs[:, [0, 1], [0, 1]]
            isotropic = np.all(g.covs[:, 0, 1] == 0) and np.allclose(var, var[0, 0], rtol=1e-12, atol=0)
            return float(np.sqrt(var[0, 0])) if isotropic else None
        if self.scenario in (Scenario.SINGLE_MODE_LOCATION, Scenario.TWO_MODE_LOCATION):
            return float(g.means[0, 0])
        return float(g.weights[0])


def prediction_for(spec: SweepSpec, value: float) -> Gmm2D:
    """The predicted mixture at one sweep value."""
    g = spec.gt
    weights, means, covs = g.weights.copy(), g.means.copy(), g.covs.copy()
    if spec.scenario is Scenario.VARIANCE:
        covs = np.zeros_like(covs)
        covs[:, 0, 0] = covs[:, 1, 1] = value**2
        return Gmm2D(weights, means, covs, CovMode.DIAGONAL)
    if spec.scenario in (Scenario.SINGLE_MODE_LOCATION, Scenario.TWO_MODE_LOCATION):
        means[0, 0] = value
    else:
        weights = np.array([value, 1.0 - value])
    return Gmm2D(weights, means, covs, g.cov_mode)


def _mode_fixations(g: Gmm2D, height: int, width: int) -> FixationSet:
    cols = np.clip(np.floor(g.means[:, 0] * width), 0, width - 1)
    rows = np.clip(np.floor(g.means[:, 1] * height), 0, height - 1)
    return FixationSet(np.stack([cols, rows], axis=1).astype(np.int64), (height, width))


@dataclass
class _Target:
    Q: SaliencyMap
    fix: FixationSet
    uniform: SaliencyMap


def _target(spec: SweepSpec) -> _Target:
    h, w = spec.height, spec.width
    return _Target(
        Q=normalize_to_distribution(rasterize(spec.gt, h, w)),
        fix=_mode_fixations(spec.gt, h, w),
        uniform=SaliencyMap(np.full((h, w), 1.0 / (h * w)), MapState.DISTRIBUTION),
    )


def _evaluate(spec: SweepSpec, target: _Target, value: float) -> dict:
    pred = prediction_for(spec, value)
    raw = rasterize(pred, spec.height, spec.width)
    P = normalize_to_distribution(raw)
    out = {}
    for kind in spec.losses:
        if kind == "kldiv":
            out[kind] = metrics.kldiv(P, target.Q, spec.eps)
        elif kind == "cc":
            out[kind] = metrics.cc(raw, target.Q)
        elif kind == "nss":
            out[kind] = metrics.nss(raw, target.fix)
        elif kind == "sim":
            out[kind] = metrics.sim(P, target.Q)
        elif kind == "nll":
            out[kind] = nll(pred, target.Q, spec.eps)
        elif kind == "ig":
            out[kind] = metrics.info_gain(P, target.uniform, target.fix, spec.eps)
        elif kind == "emd":
            out[kind] = metrics.emd_downsampled(P, target.Q)[0]
    return out


def evaluate_at(spec: SweepSpec, value: float) -> dict:
    """Every requested curve evaluated at a single, possibly off-grid, value."""
    return _evaluate(spec, _target(spec), float(value))


@dataclass
class SweepResult:
    params: np.ndarray
    curves: dict
    gt_param: Optional[float]
    spec: Optional[SweepSpec] = field(default=None, repr=False)

    def loss_curve(self, kind: str) -> np.ndarray:
        """Curve oriented so that lower is better (1 - cc, 1 - sim, -nss, -ig)."""
        flip = _HIGHER_IS_BETTER.get(kind)
        values = self.curves[kind]
        return flip(values) if flip else values

    def gt_index(self) -> Optional[int]:
        if self.gt_param is None:
            return None
        return int(np.argmin(np.abs(self.params - self.gt_param)))


def run_sweep(spec: SweepSpec) -> SweepResult:
    target = _target(spec)
    rows = [_evaluate(spec, target, float(v)) for v in spec.params]
    curves = {k: np.array([row[k] for row in rows]) for k in spec.losses}
    return SweepResult(spec.params, curves, spec.gt_param, spec)


def builtin_scenarios(height: int = 256, width: int = 256) -> list[SweepSpec]:
    """Four ready-made sweeps.

    Single-mode ground truth: one isotropic Gaussian at (0.5, 0.5), sigma 0.1.
    Two-mode ground truth: equal-weight Gaussians at (0.3, 0.5) and
    (0.7, 0.5), sigma 0.08.  Every range contains the ground-truth value as
    an exact grid point.
    """
    single = Gmm2D.isotropic([1.0], [[0.5, 0.5]], 0.1)
    double = Gmm2D.isotropic([0.5, 0.5], [[0.3, 0.5], [0.7, 0.5]], 0.08)
    return [
        SweepSpec(Scenario.VARIANCE, single, 0.02, 0.4, 20, height, width),
        SweepSpec(Scenario.SINGLE_MODE_LOCATION, single, 0.2, 0.8, 31, height, width),
        SweepSpec(Scenario.TWO_MODE_LOCATION, double, 0.1, 0.9, 41, height, width),
        SweepSpec(Scenario.TWO_MODE_WEIGHT, double, 0.1, 0.9, 17, height, width),
    ]


def builtin_scenario(name: str, height: int = 256, width: int = 256) -> SweepSpec:
    for spec in builtin_scenarios(height, width):
        if spec.scenario.value == name:
            return spec
    raise IncompatibleScenario(f"unknown scenario {name!r}; valid: {', '.join(Scenario.names())}")


# --- files --------------------------------------------------------------------------


def spec_to_dict(spec: SweepSpec) -> dict:
    return {
        "scenario": spec.scenario.value,
        "gt": gmm_to_dict(spec.gt),
        "range": [spec.lo, spec.hi, spec.steps],
        "raster": [spec.height, spec.width],
        "losses": list(spec.losses),
        "eps": spec.eps,
    }


def spec_from_dict(doc: dict) -> SweepSpec:
    try:
        lo, hi, steps = doc["range"]
        height, width = doc.get("raster", [256, 256])
        return SweepSpec(
            scenario=doc["scenario"],
            gt=gmm_from_dict(doc["gt"]),
            lo=float(lo),
            hi=float(hi),
            steps=int(steps),
            height=int(height),
            width=int(width),
            losses=tuple(doc.get("losses", DEFAULT_CURVES)),
            eps=float(doc.get("eps", DEFAULT_EPS)),
        )
    except SaliencyError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed sweep spec: {exc}") from exc


def write_sweep(result: SweepResult, path, spec: Optional[SweepSpec] = None) -> tuple[Path, Path]:
    """Write the curve table as CSV and the spec next to it as ``<stem>.json``."""
    path = Path(path)
    spec = spec or result.spec
    names = list(result.curves)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["param", *names])
    for i, v in enumerate(result.params):
        writer.writerow([repr(float(v)), *(repr(float(result.curves[n][i])) for n in names)])
    sidecar = path.with_suffix(".json")
    doc = {"spec": spec_to_dict(spec) if spec else None, "gt_param": result.gt_param}
    atomic_write(sidecar, json.dumps(doc, indent=2) + "\n")
    atomic_write(path, buf.getvalue())
    return path, sidecar


def read_sweep_csv(path) -> tuple[np.ndarray, dict]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    table = np.array([[float(v) for v in r] for r in body])
    return table[:, 0], {name: table[:, i + 1] for i, name in enumerate(header[1:])}
