"""Active-subspace Monte Carlo samplers.

Pseudo-marginal MH on the active variables, AS-SMC with a fixed or
adaptively re-estimated subspace, nested AS-SMC^2, a standard SMC
baseline, and toy models with analytic oracles.
"""

from .adaptive import run_adaptive_assmc
from .asmh import run_asmh
from .assmc import estimate_expectation, run_assmc
from .assmc2 import inner_smc, run_assmc2
from .baseline import run_standard_smc
from .model import AnnealedLikelihood, DataTemperedLikelihood, GaussianPrior, TargetModel, project_prior
from .smc_core import RngStream, SmcResult, SmcSettings, TemperingSchedule, pilot_adaptive_schedule
from .subspace import GapRule, SubspaceBasis, eigendecompose, estimate_as_matrix, estimate_basis, split_basis
from .toymodels import BananaModel, GaussCauchyModel, PlaneModel, make_model, plane_log_evidence, plane_posterior_moments

__version__ = "0.1.0"

__all__ = [
    "AnnealedLikelihood",
    "BananaModel",
    "DataTemperedLikelihood",
    "GapRule",
    "GaussCauchyModel",
    "GaussianPrior",
    "PlaneModel",
    "RngStream",
    "SmcResult",
    "SmcSettings",
    "SubspaceBasis",
    "TargetModel",
    "TemperingSchedule",
    "eigendecompose",
    "estimate_as_matrix",
    "estimate_basis",
    "estimate_expectation",
    "inner_smc",
    "make_model",
    "pilot_adaptive_schedule",
    "plane_log_evidence",
    "plane_posterior_moments",
    "project_prior",
    "run_adaptive_assmc",
    "run_asmh",
    "run_assmc",
    "run_assmc2",
    "run_standard_smc",
    "split_basis",
]
