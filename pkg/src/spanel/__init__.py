"""Heterogeneous dynamic spatial panels with latent common factors.

Estimation toolkit covering data-driven network recovery, defactored
instrumental-variables estimation (pooled and mean-group), spatial effect
decomposition, and network-formation diagnostics, with a built-in synthetic
data generator used as the test oracle.
"""

from .bolmt import BolmtConfig, RecoveredNetwork, pairwise_t, recover_network, recover_row
from .effects import (
    EffectsTable,
    Multiplier,
    average_effects,
    effect_standard_errors,
    multiplier,
    pairwise_effect,
    spill_in,
    spill_out,
)
from .factors import (
    Annihilator,
    FactorBasis,
    build_factor_basis,
    extract_factors,
    select_rank,
)
from .iv import (
    InstrumentSet,
    PooledEstimate,
    UnitEstimate,
    build_instruments,
    compute_rho,
    estimate_pooled,
    estimate_unit,
    estimate_units,
)
from .mgiv import MgEstimate, mean_group, trimmed_mean_group
from .network import (
    HomophilyResult,
    LinkLogitResult,
    bilateral_log_average,
    count_same_links,
    homophily_excess,
    homophily_test,
    link_logit,
    relative_homophily,
)
from .panel import (
    IngestConfig,
    PanelDataset,
    TransformedPanel,
    build_transformed,
    load_panel,
    save_panel,
)
from .simulate import DgpSpec, SimulatedPanel, brute_force_effects, simulate
from .weights import (
    NetworkStats,
    WeightScheme,
    contiguity_weights,
    flow_weights,
    inverse_distance_weights,
    network_stats,
    row_standardize,
    spatial_lag,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
