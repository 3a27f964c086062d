"""cfgflow: particle-flow sampling on inequality-constrained domains."""

from .domains import (ConstraintDomain, adaptive_bandwidth, in_band,
                      make_block, make_cardioid, make_double_moon,
                      make_lq_ball, make_ring)
from .engine import Ensemble, RunConfig, cfg_run, init_ensemble, step_particles
from .flow import ParticlePartition, boundary_term, partition, rsd_loss, \
    rsd_loss_grad, velocity
from .metrics import MetricReport, energy_distance, exact_w2_small, ratio_out, \
    sinkhorn_w2
from .net import AdamState, MlpParams, adam_step, divergence_h, forward_f, \
    h_net_eval, init_mlp
from .oracle import boundary_mc_estimate, boundary_quadrature, finite_diff, \
    mse_slope_experiment, rejection_sample
from .targets import (LassoProblem, TargetDistribution, block_gaussian_mixture,
                      double_moon_target, lasso_posterior, make_synthetic_lasso,
                      truncated_std_gaussian)

__version__ = "0.1.0"

__all__ = [
    "AdamState", "ConstraintDomain", "Ensemble", "LassoProblem",
    "MetricReport", "MlpParams", "ParticlePartition", "RunConfig",
    "TargetDistribution", "adam_step", "adaptive_bandwidth",
    "block_gaussian_mixture", "boundary_mc_estimate", "boundary_quadrature",
    "boundary_term", "cfg_run", "divergence_h", "double_moon_target",
    "energy_distance", "exact_w2_small", "finite_diff", "forward_f",
    "h_net_eval", "in_band", "init_ensemble", "init_mlp", "lasso_posterior",
    "make_block", "make_cardioid", "make_double_moon", "make_lq_ball",
    "make_ring", "make_synthetic_lasso", "mse_slope_experiment", "partition",
    "ratio_out", "rejection_sample", "rsd_loss", "rsd_loss_grad",
    "sinkhorn_w2", "step_particles", "truncated_std_gaussian", "velocity",
]
