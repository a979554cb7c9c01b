from .matrices import (InterconnectionMatrix, assemble_interconnection,
                       check_gain_structure, coupling_matrices,
                       dg_state_matrices, disturbance_blocks,
                       extract_consensus_entries, line_state_matrices,
                       performance_blocks)
from .params import (TABLE1, DgParams, LineParams, MicrogridSpec,
                     benchmark_microgrid, microgrid_from_dict,
                     microgrid_to_dict)
from .topology import (PhysicalTopology, bi_adjacency_from_lines,
                       random_geometric_topology, topology_from_edges)

__all__ = [
    "InterconnectionMatrix", "assemble_interconnection", "check_gain_structure",
    "coupling_matrices", "dg_state_matrices", "disturbance_blocks",
    "extract_consensus_entries", "line_state_matrices", "performance_blocks",
    "TABLE1", "DgParams", "LineParams", "MicrogridSpec", "benchmark_microgrid",
    "microgrid_from_dict", "microgrid_to_dict",
    "PhysicalTopology", "bi_adjacency_from_lines", "random_geometric_topology",
    "topology_from_edges",
]
