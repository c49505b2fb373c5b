"""Pricing and worst-case allocation control for target-volatility options."""
from .market import (
    CorrelationMatrix,
    LocalVolSurface,
    MarketData,
    MarketDataError,
    NonPositiveDefiniteError,
    TermStructure,
    build_nu,
    bundled_market,
    covariance,
    discount,
    integrate_curve,
    load_market,
    market_from_dict,
    market_to_dict,
    save_market,
)
from .pricing import (
    McResult,
    TvoSpec,
    black_formula,
    bs_closed_price,
    drift_adjustment_integral,
    mc_price,
    mc_price_run,
    tvs_forward,
)
from .simulator import (
    PathSet,
    SimConfig,
    SimulationError,
    UnsupportedModeError,
    fixing_grid,
    realized_vol,
    simulate_projection,
    simulate_tvs,
)
from .strategy import (
    AllocationStrategy,
    BangBangStrategy,
    BoxConstraint,
    ConstantStrategy,
    ConstrainedStrategy,
    DegenerateAllocationError,
    OptimalFreeStrategy,
    RankError,
    TimetableStrategy,
    baseline,
    optimal_bang_bang,
    optimal_constrained,
    optimal_free,
)

__version__ = "0.1.0"
