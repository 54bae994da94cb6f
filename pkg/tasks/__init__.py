"""The periodically executed adaptation loop."""

from .mape_loop import AdaptationEngine, run_scenario

__all__ = ["AdaptationEngine", "run_scenario"]
