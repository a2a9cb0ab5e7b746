"""Saliency evaluation metrics, Gaussian-mixture saliency readouts and loss sweeps."""

from .core import (
    DEFAULT_EPS,
    FixationSet,
    MapState,
    SaliencyMap,
    binary_map,
    density_from_fixations,
    normalize_to_distribution,
    standardize,
)
from .errors import SaliencyError
from .fit import AdamState, FitResult, LossSpec, adam_step, composite_gmm_loss, composite_map_loss, fit_gmm, grad_check
from .gmm import CovMode, Gmm2D, decode, density_at, encode, nll, nll_grad, rasterize
from .losslab import Scenario, SweepResult, SweepSpec, builtin_scenarios, run_sweep
from .metrics import MetricReport, auc_judd, cc, emd, evaluate_all, info_gain, kldiv, nss, sauc, sim

__version__ = "0.1.0"
