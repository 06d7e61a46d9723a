"""Exactly invertible diffusion probability-flow ODE solvers on analytic Gaussian-mixture models."""
from .analysis import (
    ComparisonReport,
    compare,
    convergence_order,
    energy_distance,
    gamma_sweep,
    reconstruction_error,
    run_roundtrip,
    run_sample,
    sliced_w1,
    verify_invariants,
)
from .config import ConfigError, RunConfig
from .core import NoiseSchedule, TimeGrid, ddim_coeffs, make_time_grid
from .ddim import BdiaConfig, bdia_invert_chain, bdia_roundtrip, bdia_sample, ddim_sample
from .dpm import bdia_dpmpp_sample, dpmpp_sample
from .edict import CbdiaConfig, cbdia_sample, edict_sample
from .edm import bdia_edm_sample, edm_sample
from .estimators import DiffusionSampler
from .models import GaussianMixture, MixturePredictor, exact_sample
from .trace import SolverTrace

__version__ = "0.1.0"
