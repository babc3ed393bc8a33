"""Cache placement and delivery-phase radio resource allocation for two-tier
OFDMA heterogeneous networks, with fairness-aware planning objectives."""

__version__ = "0.1.0"

from .netmodel import (ChannelDraw, RequestVector, Scenario, build_scenario,
                       sample_channel_draw, sample_draws, sample_requests,
                       scenario_from_config, zipf_popularity)
from .rates import Allocation, ErgodicRates, ergodic_rates
from .latency import EvalContext, LatencyReport, check_feasibility, objective

__all__ = [
    "Allocation", "ChannelDraw", "ErgodicRates", "EvalContext", "LatencyReport",
    "RequestVector", "Scenario", "build_scenario", "check_feasibility",
    "ergodic_rates", "objective", "sample_channel_draw", "sample_draws",
    "sample_requests", "scenario_from_config", "zipf_popularity",
]
