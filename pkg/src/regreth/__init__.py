"""Safe regret-optimal, H2 and H-infinity receding horizon synthesis."""

from .lti import (DimensionError, HorizonStack, Polytope, SystemModel,
                  box_polytope, build_stack, cross_polytope, simulate,
                  stack_polytope, trajectory_cost)
from .clairvoyant import ClairvoyantData, check_monotonicity, clairvoyant_gain
from .terminal import (HinfSolution, TerminalIngredients, bisect_gamma_f,
                       dare_residual, dissipation_gap, solve_dare_h2,
                       solve_dare_hinf)
from .invariant import (AdmissibilityReport, RpiResult, check_admissible,
                        mrpi_approx, rpi_certificate, support)
from .synthesis import (ClosedLoopResponse, H2Engine, HinfEngine,
                        InfeasibleError, Plan, RegretEngine, SolverFailure,
                        SynthesisError, SynthesisProblem, SynthesisResult,
                        min_gain, regret_upper_bound, solve_h2, solve_hinf,
                        solve_regret_energy, solve_regret_fixed_gamma)
from .simulate import (DETERMINISTIC_KINDS, PROFILE_KINDS, DecayFit,
                       DisturbanceProfile, RegretLedger, ReplanRecord,
                       SimulationTrace, clairvoyant_benchmark_cost,
                       clairvoyant_trajectory, decay_envelope,
                       dissipation_residuals, fixed_gamma_level,
                       make_profile, max_safety_violation,
                       receding_horizon_run, regret_ledger)
from .presets import (Preset, custom_preset, get_preset, paper_preset,
                      reduced_preset, scalar_preset, select_terminal)
from .bench import (CSV_HEADER, BenchRow, ConfigError, ExperimentConfig,
                    RunSpec, build_run_specs, execute, profile_label,
                    resolve_preset, write_pivot_csv, write_runs_csv)

__version__ = "0.1.0"

__all__ = [
    "AdmissibilityReport", "BenchRow", "CSV_HEADER", "ClairvoyantData",
    "ClosedLoopResponse", "ConfigError", "DETERMINISTIC_KINDS", "DecayFit",
    "DimensionError", "DisturbanceProfile", "ExperimentConfig", "H2Engine",
    "HinfEngine", "HinfSolution", "HorizonStack", "InfeasibleError",
    "PROFILE_KINDS", "Plan", "Polytope", "Preset", "RegretEngine",
    "RegretLedger", "ReplanRecord", "RpiResult", "RunSpec",
    "SimulationTrace", "SolverFailure", "SynthesisError", "SynthesisProblem",
    "SynthesisResult", "SystemModel", "TerminalIngredients",
    "bisect_gamma_f", "box_polytope", "build_run_specs", "build_stack",
    "check_admissible", "check_monotonicity", "clairvoyant_benchmark_cost",
    "clairvoyant_gain", "clairvoyant_trajectory", "cross_polytope",
    "custom_preset", "dare_residual", "decay_envelope", "dissipation_gap",
    "dissipation_residuals", "execute", "fixed_gamma_level", "get_preset",
    "make_profile", "max_safety_violation", "min_gain", "mrpi_approx",
    "paper_preset", "profile_label", "receding_horizon_run",
    "reduced_preset", "regret_ledger", "regret_upper_bound",
    "resolve_preset", "rpi_certificate", "scalar_preset", "select_terminal",
    "simulate", "solve_dare_h2", "solve_dare_hinf", "solve_h2", "solve_hinf",
    "solve_regret_energy", "solve_regret_fixed_gamma", "stack_polytope",
    "support", "trajectory_cost", "write_pivot_csv", "write_runs_csv",
]
