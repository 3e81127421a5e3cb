//! Desk-scale preference alignment.
//!
//! The crate covers the whole loop a unified reward model drives:
//!
//! * [`prefdata`]: preference record schemas, the pairwise answer grammar and
//!   line-delimited record files.
//! * [`judge`]: judges that rank pairs and score single candidates (ground-truth
//!   oracle, a noisy Bradley–Terry judge and a small learned multi-task judge).
//! * [`construct`]: two-stage preference-pair construction (pair ranking, then
//!   point sifting) plus the baseline strategies.
//! * [`toymodels`]: a factorized softmax sequence policy, an affine Gaussian
//!   diffusion model and the ground-truth quality oracle.
//! * [`dpo`]: sequence-level and diffusion DPO losses with analytic gradients
//!   and SGD trainers.
//! * [`eval`]: accuracy metrics, win rate and the ablation runners.
//! * [`scenario`]: seeded end-to-end toy setups shared by the CLI and tests.

pub mod construct;
pub mod dpo;
pub mod error;
pub mod eval;
pub mod judge;
pub mod matfile;
pub mod par;
pub mod prefdata;
pub mod scenario;
pub mod seed;
pub mod stats;
pub mod toymodels;

pub use error::{Error, Result};
