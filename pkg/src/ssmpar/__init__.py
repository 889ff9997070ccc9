"""Spectral submanifold reduced-order models for parametrically and externally forced mechanical systems."""

from .model import (
    FirstOrderModel,
    ForcingExpansion,
    ModelError,
    NonlinearityExpansion,
    SecondOrderModel,
    evaluate_full_rhs,
    lift_to_first_order,
    parse_model_file,
    serialize_model,
)
from .spectral import MasterSubspace, check_outer_resonances, full_spectrum, solve_master_modes
from .ssm_autonomous import AutonomousSSM, autonomous_residual, compute_autonomous_ssm
from .ssm_nonautonomous import NonAutonomousSSM, compute_nonautonomous_ssm, nonautonomous_residual
from .ssm_firstorder import FirstOrderSSM, compute_autonomous_first, compute_nonautonomous_first
from .reduced_dynamics import (
    FRCBranch,
    FRCPoint,
    PolarROM,
    build_polar_rom,
    classify_stability,
    find_fixed_points,
    frc_sweep,
    lift_to_physical,
    split_branches,
)
from .floquet import (
    MonodromyResult,
    TongueBoundary,
    full_system_monodromy,
    reduced_monodromy,
    shoot_periodic_orbit,
    subharmonic_branch,
    trace_tongue,
    verify_periodic_response,
)
from .models_gallery import GALLERY, bernoulli_beam, coupled_mathieu, prismatic_beam, self_excited_oscillator

__version__ = "0.1.0"

__all__ = [
    "FirstOrderModel",
    "ForcingExpansion",
    "ModelError",
    "NonlinearityExpansion",
    "SecondOrderModel",
    "evaluate_full_rhs",
    "lift_to_first_order",
    "parse_model_file",
    "serialize_model",
    "MasterSubspace",
    "check_outer_resonances",
    "solve_master_modes",
    "full_spectrum",
    "AutonomousSSM",
    "autonomous_residual",
    "compute_autonomous_ssm",
    "NonAutonomousSSM",
    "compute_nonautonomous_ssm",
    "nonautonomous_residual",
    "FirstOrderSSM",
    "compute_autonomous_first",
    "compute_nonautonomous_first",
    "FRCBranch",
    "FRCPoint",
    "PolarROM",
    "build_polar_rom",
    "classify_stability",
    "find_fixed_points",
    "frc_sweep",
    "lift_to_physical",
    "split_branches",
    "MonodromyResult",
    "TongueBoundary",
    "full_system_monodromy",
    "reduced_monodromy",
    "shoot_periodic_orbit",
    "subharmonic_branch",
    "trace_tongue",
    "verify_periodic_response",
    "GALLERY",
    "bernoulli_beam",
    "coupled_mathieu",
    "prismatic_beam",
    "self_excited_oscillator",
]
