"""Stability certification of Q(U)-controlled DERs in distribution grids.

Multi-DER voltage control is modelled as a Lur'e system and certified
with the circle criterion; a quasi-static simulator cross-checks the
certified slopes.
"""

from importlib import resources

from .circle import (
    REPRESENTATIONS,
    SearchError,
    SectorBounds,
    SingularFeedthroughError,
    SlopeSearchResult,
    SprVerdict,
    assess_slope,
    build_omega,
    loop_model,
    max_slope_search,
    spr_eigen_test,
    spr_sweep_test,
)
from .der import (
    PT2_DER,
    PT2_TAR,
    DerControlParams,
    Pt2Params,
    QuCharacteristic,
    build_control_loop,
    build_pt2,
    default_params,
    qu_evaluate,
    sector_bound,
)
from .grid import GridError, GridModel, import_simbench, load_grid, load_grid_file, penetration_factor
from .lti import RationalTransfer, StateSpaceModel, TransferMatrix, freq_response, pade_delay, realize, step_response
from .powerflow import PowerFlowError, SensitivityMatrix, sensitivity, solve
from .pt2fit import FitConfig, Pt2Fit, TarStepSpec, fit_der, fit_tar, step_metrics
from .timesim import Ramp, SimScenario, classify, find_sim_threshold, simulate

__version__ = "0.1.0"


def fixture_path(name: str):
    """Path of a grid document shipped in ``qucircle/data``."""
    return resources.files(__package__) / "data" / name
