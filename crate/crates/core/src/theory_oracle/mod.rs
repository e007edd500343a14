//! Closed forms used as validation targets: special functions, the
//! Dirichlet splitting law, permutation-mixture moments and exact draws on
//! a splitting manifold.

mod dirichlet;
mod manifold;
mod mixture;
mod special;

pub use dirichlet::{
    beta_marginal, dirichlet_moments, mu_k_alpha, sample_gamma, sample_symmetric_dirichlet,
    splitting_alpha, theorem_moments, BetaMarginal, DirichletLaw, DirichletMoments,
    TheoremMoments,
};
pub use manifold::sample_manifold_posterior;
pub use mixture::{mixture_moments, MixtureMoments};
pub use special::{log_beta, log_gamma, regularized_incomplete_beta};
