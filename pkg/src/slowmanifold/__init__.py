"""Stochastic center/slow manifolds for spectrally discretized evolution equations."""

from .noise import (
    TimeGrid,
    BrownianPath,
    OUPath,
    NoisePath,
    sample_brownian,
    ou_stationary,
    ou_convolution,
    ergodic_diagnostics,
    make_noise,
    path_seed,
)
from .spectral import (
    SpectralModel,
    TrichotomySplit,
    GapReport,
    split_spectrum,
    verify_trichotomy,
    gap_condition,
    builtin_reaction_diffusion,
    builtin_damped_wave,
    builtin_coupled_slow,
    smooth_bump,
)
from .conjugacy import to_random_frame, from_random_frame, conjugated_nonlinearity, pull_back_manifold
from .evolve import Trajectory, state_transition, integrate_mild, cocycle_check
from .lyapunov_perron import (
    WeightedTrajectory,
    ManifoldGraph,
    ManifoldSolver,
    weighted_norm,
    apply_Jc,
    solve_fixed_point,
    manifold_point,
    manifold_graph,
    invariance_check,
)
from .expansion import (
    ExpansionGraph,
    reaction_diffusion_expansion,
    coupled_slow_manifold,
    invariance_residual,
    order_fit,
)
from .attraction import (
    DecayFit,
    fit_decay,
    stable_defect,
    integrate_reduced,
    tracking_errors,
)

__version__ = "0.1.0"
