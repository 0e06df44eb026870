"""Distributed team-MMSE precoding for cell-free massive MIMO on radio stripes.

Simulation library and CLI covering stripe deployment geometry,
Ricean channel statistics with per-TX local CSI, closed-form team-MMSE
precoders for every stripe CSIT sharing pattern, duality-based downlink
rate evaluation under sum and per-TX power constraints, and an exact
finite-support team-decision oracle used to verify the closed forms.
"""

__version__ = "0.1.0"

from .channel import (
    ChannelSample,
    ChannelStatistics,
    Ensemble,
    FiniteSupportModel,
    InformationStructure,
    LocalCsiModel,
    build_statistics,
    channel_gain,
    draw_ensemble,
    finite_support_statistics,
    from_local_supports,
    noise_power_dbm,
    path_loss_db,
    sample_channel,
)
from .cli import ScenarioConfig, emit_cdf, run
from .evaluation import (
    InfeasiblePowerError,
    MomentEstimates,
    PowerSolution,
    allocate,
    compute_mse,
    dual_sinr_targets,
    duality_power_allocation,
    estimate_moments,
    hardening_rates,
    per_tx_scaling,
)
from .oracle import FiniteTeamProblem, mse_exact, solve_team_exact, verify_stationarity
from .precoding import (
    SCHEMES,
    SchemeState,
    SingularSweepError,
    StripeStatistics,
    apply_scheme,
    bidirectional_coupling,
    centralized_mmse,
    estimate_stripe_statistics,
    fit_scheme,
    local_filter,
    local_mmse_baseline,
    local_mmse_coefficients,
    no_sharing_statistics,
    solve_statistical_precoders_bi,
    solve_statistical_precoders_no_sharing,
    solve_statistical_precoders_uni,
    stripe_forward_pass,
    tmmse_bidirectional,
    tmmse_no_sharing,
    tmmse_unidirectional,
)
from .topology import (
    AssociationMap,
    Deployment,
    assign_serving_stripes,
    build_grid_deployment,
    map_index,
    stripe_layout,
    tx_index,
)
