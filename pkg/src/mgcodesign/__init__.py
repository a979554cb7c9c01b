"""Dissipativity-based controller and communication-topology co-design for DC microgrids.

Pipeline: describe the microgrid (grid), pick the sharing setpoint
(equilibrium), synthesize local gains and subsystem passivity indices
(codesign.design_local), co-design the distributed gains and the
communication graph (codesign.design_global), then validate in closed loop
(sim) against regulation, sharing and dissipativity checks.
"""

from .codesign import (CodesignResult, DesignParams, LocalDesign,
                       design_global, design_local, extract_topology,
                       necessary_condition_matrices,
                       scalar_necessary_conditions)
from .dissipativity import (PassivityCertificate, SupplyRate,
                            analyze_network_yeid, analyze_xeid,
                            build_network_yeid_synthesis,
                            line_passivity_closed_form, synthesize_local_xeid)
from .equilibrium import (EquilibriumPoint, SharingSetpoint,
                          check_equilibrium_existence, compute_equilibrium,
                          optimize_reference, steady_state_inputs)
from .grid import (DgParams, LineParams, MicrogridSpec, PhysicalTopology,
                   benchmark_microgrid, random_geometric_topology)
from .sim import (Disturbance, DroopController, Event, Metrics, Scenario,
                  Trajectory, compute_metrics, dissipation_check,
                  droop_baseline, simulate)

__version__ = "0.1.0"
