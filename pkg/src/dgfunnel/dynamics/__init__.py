"""Powered-descent vehicle model: dynamics, Jacobians, structured
nonlinearity channels, disturbance model, and nominal-trajectory handling."""

from .vehicle import (
    IDX_M,
    IDX_R,
    IDX_V,
    IDX_TH,
    IDX_W,
    N_STATES,
    N_CONTROLS,
    VehicleParams,
    State13,
    Control6,
    euler_dcm,
    euler_rate_map,
    eval_f,
    jacobians,
    check_state,
    control_violations,
)
from .channels import (
    ChannelSpec,
    make_channel_spec,
    eval_channels,
    eval_channel_shift,
    lipschitz_bound,
    estimate_lipschitz,
)
from .disturbance import DisturbanceModel, paper_disturbance
from .nominal import (
    NominalTrajectory,
    load_nominal_csv,
    save_nominal_csv,
    surrogate_nominal,
    NOMINAL_CSV_HEADER,
)

__all__ = [
    "IDX_M", "IDX_R", "IDX_V", "IDX_TH", "IDX_W", "N_STATES", "N_CONTROLS",
    "VehicleParams", "State13", "Control6",
    "euler_dcm", "euler_rate_map", "eval_f", "jacobians", "check_state",
    "control_violations",
    "ChannelSpec", "make_channel_spec", "eval_channels", "eval_channel_shift",
    "lipschitz_bound", "estimate_lipschitz",
    "DisturbanceModel", "paper_disturbance",
    "NominalTrajectory", "load_nominal_csv", "save_nominal_csv",
    "surrogate_nominal", "NOMINAL_CSV_HEADER",
]
