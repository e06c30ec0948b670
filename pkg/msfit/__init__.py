"""Parametric multi-state survival models for hospital pathways."""

from .const import VERSION as __version__
from .coordinator import CandidateSet, ModelSelectionCoordinator, procedure_candidates
from .csh import CshFit, CshModelSpec, fit_csh
from .dist import DistributionSpec, LinkedDistribution, get_family
from .exceptions import ConfigError, MsfitError, NumericalError
from .mixture import EmControls, MixtureFit, MixtureModelSpec, SubmodelSpec, fit_mixture
from .model import CovariateDesign, Dataset, ModelStructure, load_dataset, read_observations
from .nonparam import aalen_johansen, gof_table, kaplan_meier
from .quantities import compute_quantities, quantities_with_intervals
from .results import load_results, results_to_dict
from .synthdata import SynthConfig, generate

__all__ = [
    "CandidateSet",
    "ConfigError",
    "CovariateDesign",
    "CshFit",
    "CshModelSpec",
    "Dataset",
    "DistributionSpec",
    "EmControls",
    "LinkedDistribution",
    "MixtureFit",
    "MixtureModelSpec",
    "ModelSelectionCoordinator",
    "ModelStructure",
    "MsfitError",
    "NumericalError",
    "SubmodelSpec",
    "SynthConfig",
    "__version__",
    "aalen_johansen",
    "compute_quantities",
    "fit_csh",
    "fit_mixture",
    "generate",
    "get_family",
    "gof_table",
    "kaplan_meier",
    "load_dataset",
    "load_results",
    "procedure_candidates",
    "quantities_with_intervals",
    "read_observations",
    "results_to_dict",
]
