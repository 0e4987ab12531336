"""Uncertainty quantification for Burgers' equation with stochastic-Galerkin and dynamical low-rank solvers."""
from .basis import Density1D, Quadrature, TensorBasis, UncertainSpace, gauss_quadrature, legendre_eval
from .burgers import BurgersProblem, SpatialGrid, UnsupportedCase, lf_flux, physical_flux
from .config import ConfigError, RunConfig, parse_config
from .dlra import DLRAContext, FactorState, dlra_run, psi_step, truncated_svd_init, ui_step
from .filters import FilterConfig, filter_factors
from .postprocess import FieldPair, l2_error, moments_to_fields, total_variation
from .runlog import NumericalFailure, RunLog
from .sg import sg_run, sg_step

__version__ = "0.1.0"

__all__ = [
    "BurgersProblem", "ConfigError", "DLRAContext", "Density1D", "FactorState", "FieldPair",
    "FilterConfig", "NumericalFailure", "Quadrature", "RunConfig", "RunLog", "SpatialGrid",
    "TensorBasis", "UncertainSpace", "UnsupportedCase", "dlra_run", "filter_factors",
    "gauss_quadrature", "l2_error", "legendre_eval", "lf_flux", "moments_to_fields",
    "parse_config", "physical_flux", "psi_step", "sg_run", "sg_step", "total_variation",
    "truncated_svd_init", "ui_step",
]
