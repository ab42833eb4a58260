"""Statistical MIMO power-line channel toolkit.

Generation of correlated log-normal channel frequency responses on a
mode-pair x frequency grid, characterization of measured or synthetic
channel sets back into model parameters, standard channel metrics, and
water-filling capacity.
"""

from .errors import (
    DegenerateChannelError,
    DimensionError,
    FormatError,
    InsufficientDataError,
    NumericalError,
    ParameterError,
    PlcMimoError,
    UndefinedStatisticError,
)
from .model import (
    DB_LOG_SCALE,
    ChannelSet,
    MimoGrid,
    ModeCombination,
    ModelParameters,
    ReshapedVector,
    combine_cfr_db,
    decimate_grid,
    default_grid,
    mode_mu_vector,
    mode_sigma_vector,
    mu_profile,
    reshape,
    scheme_grid,
    sigma_profile,
    split_cfr_db,
    unreshape,
    wrap_phase,
)

__version__ = "0.1.0"

__all__ = [
    "DB_LOG_SCALE",
    "ChannelSet",
    "MimoGrid",
    "ModeCombination",
    "ModelParameters",
    "ReshapedVector",
    "combine_cfr_db",
    "decimate_grid",
    "default_grid",
    "mode_mu_vector",
    "mode_sigma_vector",
    "mu_profile",
    "reshape",
    "scheme_grid",
    "sigma_profile",
    "split_cfr_db",
    "unreshape",
    "wrap_phase",
    "PlcMimoError",
    "DimensionError",
    "DegenerateChannelError",
    "ParameterError",
    "FormatError",
    "NumericalError",
    "InsufficientDataError",
    "UndefinedStatisticError",
    "__version__",
]
