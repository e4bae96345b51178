"""Flow state estimation for multi-commodity energy networks on hetero-functional graphs."""

__version__ = "0.1.0"

from .core import (ArchitectureError, Buffer, BufferKind, Capability, IncidenceEntry, Operand,
                   ProcessKind, ProcessSpec, SystemArchitecture, build_incidence_tensors,
                   check_architecture, incidence_matrices, matricize, validate_architecture)
from .petri import (EngineeringSystemNet, FiringSchedule, OperandNet, SyncMatrices, check_sync,
                    simulate, step_esn, step_operand_net)
from .qp import (QuadraticProgram, Solution, Status, dump_qp, kkt_residuals, load_qp_dump,
                 solve_eq_qp, solve_qp)
from .hfnmcf import (BoundaryData, CollapseError, DecisionLayout, HfnmcfInstance, assemble_hfnmcf,
                     check_theorem1_collapse, extract_trajectories)
from .wlse import (CapacitySet, EstimationResult, MeasurementSeries, WeightingScheme,
                   assemble_wlse, build_capability_aggregation, build_measurement_matrix,
                   build_temporal_aggregation, compute_weights, downsample_fine_data,
                   error_report, estimate)
from .estimator import WLSEStateEstimator

__all__ = [
    "ArchitectureError", "Buffer", "BufferKind", "Capability", "IncidenceEntry", "Operand",
    "ProcessKind", "ProcessSpec", "SystemArchitecture", "build_incidence_tensors",
    "check_architecture", "incidence_matrices", "matricize", "validate_architecture",
    "EngineeringSystemNet", "FiringSchedule", "OperandNet", "SyncMatrices", "check_sync",
    "simulate", "step_esn", "step_operand_net",
    "QuadraticProgram", "Solution", "Status", "dump_qp", "kkt_residuals", "load_qp_dump",
    "solve_eq_qp", "solve_qp",
    "BoundaryData", "CollapseError", "DecisionLayout", "HfnmcfInstance", "assemble_hfnmcf",
    "check_theorem1_collapse", "extract_trajectories",
    "CapacitySet", "EstimationResult", "MeasurementSeries", "WeightingScheme", "assemble_wlse",
    "build_capability_aggregation", "build_measurement_matrix", "build_temporal_aggregation",
    "compute_weights", "downsample_fine_data", "error_report", "estimate",
    "WLSEStateEstimator",
]
