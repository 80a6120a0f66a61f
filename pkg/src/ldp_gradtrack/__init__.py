"""Locally differentially private gradient tracking for distributed online
learning over directed graphs: simulator, privacy accountant, and metrics."""

from .dp_noise import (NoiseSchedule, NoiseSource, StepsizeSchedule, sample_noise,
                       std_at, validate_compat)
from .graph_topology import (DirectedWeights, EigEstimate, PerronVectors,
                             build_random_strongly_connected, build_ring,
                             eig_estimator_step, fit_geometric_envelope,
                             init_eig_estimate, left_perron, validate_weights)
from .learners import (AgentState, AgentStates, DivergenceError, PushPullStates,
                       RoundTrace, gradtrack_round, init_states, pushpull_noisy_round,
                       run)
from .online_problem import (DataPoint, SampleBuffer, StreamProblem, global_grad,
                             grad_empirical, load_dataset_csv, loss_grad)
from .oracle_and_metrics import (MetricRow, OracleSolution, drift_check, emit_metrics,
                                 fit_decay_rate, metric_rows, solve_centralized)
from .privacy_accounting import (BudgetReport, SensitivitySeries, budget_curve,
                                 cumulative_budget, empirical_sensitivity,
                                 envelope_checks, sensitivity_series)

__version__ = "0.1.0"

__all__ = [
    "AgentState", "AgentStates", "BudgetReport", "DataPoint", "DirectedWeights",
    "DivergenceError", "EigEstimate", "MetricRow", "NoiseSchedule", "NoiseSource",
    "OracleSolution", "PerronVectors", "PushPullStates", "RoundTrace", "SampleBuffer",
    "SensitivitySeries", "StepsizeSchedule", "StreamProblem",
    "budget_curve", "build_random_strongly_connected", "build_ring",
    "cumulative_budget", "drift_check", "eig_estimator_step", "emit_metrics",
    "empirical_sensitivity", "envelope_checks", "fit_decay_rate",
    "fit_geometric_envelope", "global_grad", "grad_empirical", "gradtrack_round",
    "init_eig_estimate", "init_states", "left_perron", "load_dataset_csv",
    "loss_grad", "metric_rows", "pushpull_noisy_round", "run", "sample_noise",
    "sensitivity_series", "solve_centralized", "std_at", "validate_compat",
    "validate_weights",
]
