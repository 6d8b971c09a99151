"""Quantum state tomography of two qubits from bath currents and their noise."""

from .entangle import (
    ConcurrenceResult,
    concurrence_transport_general,
    concurrence_transport_special,
    concurrence_x_state,
    wootters_full,
)
from .estimation import (
    EstimationProblem,
    EstimationResult,
    estimate_degenerate,
    estimate_g_res_gamma_tilde,
    estimate_general,
    estimate_resonant,
    krylov_closure_coefficients,
    suggest_probe_times,
)
from .krylov import arnoldi, direction_membership, krylov_bases, spectral_analysis
from .lindblad import Propagator, Superoperator, adjoint, build_lindbladian, evolve, steady_state
from .model import (
    BathSpec,
    CaseAssumptionError,
    ConditioningError,
    DensityOperator,
    InconsistentDataError,
    SystemConfig,
    TransportQSTError,
    ValidationError,
    basis_state,
    bell_state,
    maximally_mixed,
    random_density,
)
from .qst import ReconstructionInput, completeness_report, reconstruct_state, steady_state_qst
from .transport import MomentEvaluator, TransportRecord, current_moment, transport_record

__version__ = "0.1.0"
