from .kernels import backend_name, get_kernel
from .metrics import Metrics, compute_metrics, dissipation_check, settling_time
from .scenario import (Disturbance, Event, Scenario,
                       layer_activation_scenario, load_change_scenario)
from .simulate import (DroopController, Trajectory, consensus_injection_matrix,
                       droop_baseline, simulate)

__all__ = [
    "backend_name", "get_kernel",
    "Metrics", "compute_metrics", "dissipation_check", "settling_time",
    "Disturbance", "Event", "Scenario", "layer_activation_scenario",
    "load_change_scenario",
    "DroopController", "Trajectory", "consensus_injection_matrix",
    "droop_baseline", "simulate",
]
