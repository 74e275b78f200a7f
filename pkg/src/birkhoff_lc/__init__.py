"""LC-circuit netlists as implicit second-order (Birkhoffian) systems.

Pipeline: parse_netlist -> build_incidence/build_loop_basis -> build_config
-> assemble -> (reduce) -> simulate, with an independent linear state-space
oracle for verification.
"""

from .birkhoff import (AnalysisReport, BirkhoffSystem, EnergyFunction, assemble,
                       build_energy, check_conservative, check_regularity)
from .config import ConfigSpace, build_config, verify_kernel_identity
from .graph import (IncidenceMatrix, LoopClassification, LoopMatrix,
                    build_incidence, build_loop_basis, check_tellegen,
                    classify_loops)
from .mna import compare_oracle
from .netlist import Circuit, DeviceModel, parse_netlist, serialize_circuit
from .reduce import (ConservedQuantity, ReducedSystem, conserved_quantities,
                     initial_velocity, reduce_capacitor_loops,
                     reduce_inductor_loops_linear, regularize)
from .sim import SimConfig, Trajectory, accel, estimate_min_period, simulate

__version__ = "0.1.0"

__all__ = [
    "AnalysisReport", "BirkhoffSystem", "Circuit", "ConfigSpace",
    "ConservedQuantity", "DeviceModel", "EnergyFunction", "IncidenceMatrix",
    "LoopClassification", "LoopMatrix", "ReducedSystem", "SimConfig",
    "Trajectory", "accel", "assemble", "build_config", "build_energy",
    "build_incidence", "build_loop_basis", "check_conservative",
    "check_regularity", "check_tellegen", "classify_loops", "compare_oracle",
    "conserved_quantities", "estimate_min_period", "initial_velocity",
    "parse_netlist", "reduce_capacitor_loops", "reduce_inductor_loops_linear",
    "regularize", "serialize_circuit", "simulate", "verify_kernel_identity",
]
