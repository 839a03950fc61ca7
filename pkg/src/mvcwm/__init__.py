"""Matrix-normal cluster-weighted models.

Mixtures whose components pair a matrix normal law for ``q x r`` covariate
matrices with a matrix normal regression of ``p x r`` responses, fitted by
ECM.  Also provides the matrix-variate mixture of regressions (MN-FMR) and
the unstructured vectorized model (MMN-CWM) as baselines, three
initialization strategies, BIC model selection, classification metrics and
the simulation scenarios used to benchmark them.

The hot loops run in a compiled extension when it is available; see
``mvcwm.kernels.BACKEND``.
"""
__version__ = "0.1.0"

from .baselines import FmrParams, MmnCwmParams, fit_fmr, fit_mmn_cwm, fit_model, vec, unvec
from .cwm import (
    CwmParams, Dataset, ECMConfig, FittedModel, ModelKind, bic, count_free_params, e_step,
    fit_ecm, observed_loglik,
)
from .errors import *  # noqa: F401,F403
from .evaluation import (
    align_labels_to_truth, ari, bias_mse, compare_bic, detect_spurious,
    misclassification_rate, select_model,
)
from .init import Strategy, best_initialization, random_spd
from .io import load_dataset, load_model, save_dataset, save_model
from .kernels import BACKEND
from .matnorm import MatNormParams, log_density, normalize_identifiability, weighted_flipflop_mle
from .sim import generate_dataset, replicate_study, scenario, scenario_catalog
