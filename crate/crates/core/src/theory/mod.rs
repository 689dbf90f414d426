//! Exact Markov-chain analysis of perturbation graphs on enumerable output
//! spaces: connectivity, period, stationary law, spectral gap and mixing.

mod bounds;
mod chain;
mod graph;

pub use bounds::{percentile, q_min, quality_percentile, quality_samples, success_lower_bound};
pub use chain::{
    empirical_mixing_time, is_aperiodic, is_irreducible, max_tv_distance, mixing_time_bound,
    period, spectral_gap, stationary_distribution, step_distribution, SpectralReport,
    DEFAULT_EIGEN_CAP,
};
pub use graph::{
    build_quality_graph, DenseKernel, KernelSource, PerturbationGraph, TransitionMatrix,
    WeightedDigraph,
};
