"""Engine services: model I/O, transformation, knowledge, planning and simulation."""

from .context_store import ContextModel, context_from_runtime
from .tactics import TacticLibrary, default_library
from .model_io import load_model, parse_model, serialize_model
from .transform import transform, verify_causal_connection
from .configuration import ConfigurationManager
from .planner import AdaptationPlanner
from .simulator import SimulatorState, init_sim

__all__ = [
    "ContextModel",
    "context_from_runtime",
    "TacticLibrary",
    "default_library",
    "load_model",
    "parse_model",
    "serialize_model",
    "transform",
    "verify_causal_connection",
    "ConfigurationManager",
    "AdaptationPlanner",
    "SimulatorState",
    "init_sim",
]
