"""Co-simulation of DNN model streams on chiplet systems.

Compute is evaluated per layer segment by a pluggable backend, inter-chiplet
traffic by a cycle-level wormhole network simulator, and both advance on one
integer-nanosecond clock. Power traces feed a compact RC thermal model.
"""

__version__ = "0.1.0"

from .coordinator import (SimulationReport, run_comm_only, run_cosim, run_decoupled,  # noqa: E402
                          run_weight_stationary)
from .errors import ConfigError, ConsistencyError, CosimError, NotMappableError, SchedulingError  # noqa: E402
from .hardware import SystemConfig, build_mesh, compute_routes, load_config, mesh_config  # noqa: E402
from .workload import DnnModel, LayerDescriptor, derive_layer_stats, generate_workload  # noqa: E402

__all__ = [
    "ConfigError", "ConsistencyError", "CosimError", "DnnModel", "LayerDescriptor", "NotMappableError",
    "SchedulingError", "SimulationReport", "SystemConfig", "build_mesh", "compute_routes",
    "derive_layer_stats", "generate_workload", "load_config", "mesh_config", "run_comm_only", "run_cosim",
    "run_decoupled", "run_weight_stationary",
]
