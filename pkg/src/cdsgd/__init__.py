"""Consensus-based distributed SGD over fixed agent networks, with Lyapunov checks."""
from .analysis import (
    LyapunovReport,
    NoiseConstants,
    bound_prop1_consensus,
    bound_thm1,
    bound_thm2_avg_grad,
    consensus_residuals,
    effective_constants,
    estimate_noise_constants,
    lyapunov_gradient,
    lyapunov_value,
    stochastic_lyapunov_gradient,
)
from .data import Dataset, DatasetShard, generate_blobs, load_idx, partition
from .objectives import LogisticObjective, MLPObjective, QuadraticObjective
from .optimizers import (
    OptimizerKind,
    StepSchedule,
    SwarmState,
    cdmsgd_nesterov_step,
    cdmsgd_polyak_step,
    cdsgd_step,
    centralized_sgd_step,
    fedavg_round,
    max_stable_step_size,
    step_size,
)
from .runner import ExperimentConfig, MetricsLog, fit_convergence_rate, run_experiment, run_sweep
from .topology import InteractionMatrix, build_from_edges, build_fully_connected, build_ring, spectral_summary, validate

__version__ = "0.1.0"
