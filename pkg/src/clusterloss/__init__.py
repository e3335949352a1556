"""Portfolio credit-loss models with common-shock cluster defaults.

Exact loss distributions (forward Kolmogorov / Panjer), Monte Carlo
simulation of cluster defaults under four repeated-default treatments,
credit index and CDO tranche pricing, and greedy joint calibration to
tranche quote panels.
"""
from .calibrator import (
    CalibrationResult,
    PanelPricer,
    fit_intensities,
    greedy_calibrate,
    objective,
    weighted_error,
)
from .loss_engine import (
    GPCL,
    GPL,
    STRATEGIES,
    IntensitySchedule,
    LossDistribution,
    PoolSpec,
    cluster_cumulated_intensity,
    counting_intensity,
    cumulated_generator,
    distribution_term_structure,
    gpcl_distribution,
    gpl_distribution,
    matrix_exponential,
)
from .market_data import (
    DiscountCurve,
    IndexQuote,
    PaymentSchedule,
    QuotePanel,
    TrancheQuote,
    load_curve,
    load_quotes,
)
from .pricer import (
    LegValues,
    LossGrid,
    TrancheDef,
    default_leg,
    expected_tranched_loss,
    index_spread,
    tranche_legs,
    tranche_premium_leg,
    tranche_spread_or_upfront,
    tranched_loss,
)
from .simulator import (
    ShockEvent,
    Trajectory,
    apply_strategy,
    empirical_distribution,
    empirical_distributions,
    sample_shock_stream,
    single_name_default_times,
)

__version__ = "0.1.0"
