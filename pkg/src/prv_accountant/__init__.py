"""Numerical privacy accounting by composing privacy loss random variables.

Fine discretization is only used where it is needed: early compositions run
on a fine grid over a narrow range, later ones on a coarse grid over a wide
range.
"""

from prv_accountant.accountants import (CompositionResult, compose, compose_heterogeneous,
                                        compose_recursive, compose_single_stage,
                                        compose_two_stage)
from prv_accountant.convolution import circular_convolve, self_convolve_power
from prv_accountant.discretization import DiscretePrv, discrete_cdf, discretize, rediscretize
from prv_accountant.mechanisms import (Direction, Mechanism, MechanismSpec, PrvView, build_prv,
                                       delta_exact, eps_upper_bound)
from prv_accountant.params import (ErrorBudget, RecursiveParams, SingleStageParams,
                                   TwoStageParams, select_heterogeneous, select_recursive,
                                   select_single_stage, select_two_stage, tail_radius)
from prv_accountant.report import (ComposeReport, DeltaSandwich, EpsSandwich, build_report,
                                   compose_directions, delta_from_pmf, eps_from_delta,
                                   sandwich)

__version__ = "0.1.0"

__all__ = [
    "ComposeReport", "CompositionResult", "DeltaSandwich", "Direction", "DiscretePrv",
    "EpsSandwich", "ErrorBudget", "Mechanism", "MechanismSpec", "PrvView", "RecursiveParams",
    "SingleStageParams", "TwoStageParams", "build_prv", "build_report", "circular_convolve",
    "compose", "compose_directions", "compose_heterogeneous", "compose_recursive",
    "compose_single_stage", "compose_two_stage", "delta_exact", "delta_from_pmf",
    "discrete_cdf", "discretize", "eps_from_delta", "eps_upper_bound", "rediscretize",
    "sandwich", "select_heterogeneous", "select_recursive", "select_single_stage",
    "select_two_stage", "self_convolve_power", "tail_radius",
]
