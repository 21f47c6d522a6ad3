//! Desk-scale laboratory for POEM: posterior-sampling (Thompson) outlier
//! mining for out-of-distribution detection.
//!
//! The crate is organised around the pieces of the method:
//!
//! - [`linalg`] — dense symmetric linear algebra (Cholesky, SPD solves,
//!   multivariate normal sampling) backing the posterior machinery.
//! - [`posterior`] — the Bayesian linear-regression posterior over the
//!   outlier-head weights and the feature queue that feeds it.
//! - [`mining`] — boundary-score outlier selection: Thompson sampling plus
//!   greedy and random baselines.
//! - [`model`] — a small two-branch network (shared encoder, softmax head),
//!   the energy function, the energy-regularized objective and its
//!   Nesterov-momentum optimizer.
//! - [`synthdata`] — synthetic generators: the 2-D three-Gaussian toy, the
//!   symmetric GMM pair, the boundary-score-constrained auxiliary sampler,
//!   and the generalized mixture model.
//! - [`metrics`] — FPR95, AUROC, AUPR, ID accuracy and threshold selection.
//! - [`theory`] — closed-form boundary score under the GMM, the
//!   constraint-translation lemma, the mean-difference estimator, and
//!   Monte-Carlo verification of the sample-complexity lower bound.
//! - [`runner`] — the end-to-end epoch loop interleaving mining, training,
//!   queue updates and posterior updates.
//!
//! Everything is deterministic given an explicit [`rng::RngStream`]; no
//! global RNG state is used anywhere.

pub mod linalg;
pub mod metrics;
pub mod mining;
pub mod model;
pub mod posterior;
pub mod rng;
pub mod runner;
pub mod synthdata;
pub mod theory;

pub use linalg::{cholesky, sample_mvn, CholeskyFactor, LinalgError, Matrix};
pub use metrics::{auroc, aupr, fpr_at_tpr, threshold_at_tpr, MetricsReport, ScoreSet};
pub use mining::{boundary_score_est, mine, select_top_n, MinedSet, OutlierPool, SamplerKind};
pub use model::{energy, reg_loss, total_loss, Batch, EnergyModel, ModelConfig, OptimState};
pub use posterior::{FeatureQueue, PosteriorState, TargetScheme};
pub use rng::RngStream;
pub use runner::{DatasetKind, EpochLog, RunConfig, RunOutput};
pub use synthdata::{TheoryConfig, ToyConfig};
pub use theory::{q_function, theorem_bound, verify_theorem, GmmOracle, TheoremReport};
