"""Contract-fulfillment bid planning for real-time second-price auctions."""
from .curves import MonotoneCurve
from .errors import (ConfigurationError, InfeasibleError, ParameterError, SizeError,
                     SolverError, SupplyExceededError)
from .planner import BidPlan, PlanningInstance, build_instance, solve
from .supply import (MarketParticipant, RawWinCurve, SteadyStateMarket, TimeVaryingSupplyCurve,
                     fixed_market_win_prob, smooth_curve, steady_state_win_prob)
from .targeting import Contract, Decomposition, decompose

__version__ = "0.1.0"

__all__ = [
    "BidPlan", "ConfigurationError", "Contract", "Decomposition", "InfeasibleError",
    "MarketParticipant", "MonotoneCurve", "ParameterError", "PlanningInstance", "RawWinCurve",
    "SizeError", "SolverError", "SteadyStateMarket", "SupplyExceededError",
    "TimeVaryingSupplyCurve", "build_instance", "decompose", "fixed_market_win_prob", "solve",
    "smooth_curve", "steady_state_win_prob",
]
