"""Nonparametric instrumental variable regression by Newton-type inversion of
density-based operator equations."""

from .numerics import Grid1D, Grid3, GridFn, Field3
from .kde import DensityModel, KernelSpec, Sample
from .operators import IvProblem, OpImage
from .regularization import FilterParams, PenaltySpace, filter_g, filter_r, iterated_tikhonov
from .irgnm import IrgnmConfig, IrgnmRun, run
from .stopping import LepskiiRule, NoiseLevels, PhiBound, TheoryConstants, lepskii_select
from .estimators import ConditionalMeanIVRegressor, IndependenceIVRegressor, QuantileIVRegressor

__version__ = "0.1.0"
