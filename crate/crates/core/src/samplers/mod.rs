//! Metropolis and Gibbs samplers for quasi-posteriors.

pub mod chain;
pub mod gibbs;
pub mod metropolis;

pub use chain::{
    quasi_bayes_estimate, AdaptConfig, Adjusted, BlockStats, Chain, ChainConfig, ChainMeta, Proposal,
};
pub use gibbs::{
    conditional_ofs_gibbs, conjugate_normal_draw, gibbs_run, marginal_ofs_gibbs, BlockUpdate, DirectDraw,
    GibbsBlock, GibbsSpec, LogConditional,
};
pub use metropolis::{adapt_proposal, curvature_metropolis, rw_metropolis, AdaptState};
