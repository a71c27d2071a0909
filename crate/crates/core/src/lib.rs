//! Exact laboratory for planner-aware masked diffusion over tiny vocabularies.
//!
//! Everything is tabular: the denoiser stores one logit vector per (masked
//! state, position), planners are evaluated by enumerating candidate draws,
//! and sampler laws are computed by enumerating paths. This makes every
//! bound and every sampler checkable against an exact oracle.

pub mod chains;
pub mod data;
pub mod denoiser;
pub mod elbo;
pub mod error;
pub mod par;
pub mod planners;
pub mod quadrature;
pub mod sampling;
pub mod sequence;
pub mod stats;
pub mod training;

pub use chains::{
    exact_terminal_distribution, exact_terminal_distribution_p2, kl_categorical, path_kl,
    reference_chain_marginals, reference_chain_marginals_p2, KlValue, PathDistribution,
};
pub use data::DataDistribution;
pub use denoiser::{DenoiserTable, TabularDenoiser};
pub use elbo::{
    beta_identity_check, counterexample_prop1, elbo_greedy, elbo_p2_topk, elbo_softmax, elbo_uniform_permutation_form,
    elbo_uniform_timestep_form, evaluate_bound, p_elbo, BoundKind, ElboReport, Schedule,
};
pub use error::{Error, Result};
pub use planners::{effective_planner_f, p2_effective_f, EvalMode, Estimate, PositionPlanner, SetPlanner};
pub use sequence::{enumerate_masked_states, hamming, Sequence, Token, Vocab};
pub use training::{
    grad_analytic, loss, loss_and_grad, loss_papl, loss_pure_planner, loss_vanilla, train, Example, LossKind,
    TrainConfig, TrainMetrics, TrainRun,
};
pub use sampling::{sample_p2, sample_planned, sample_vanilla, SampleSet, SamplerConfig};
