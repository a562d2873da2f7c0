//! Contrastive meta-learning in model space.
//!
//! Meta-learners map a dataset to a task model; each task model is projected
//! to a fixed-length vector and a contrastive term pulls together models
//! trained on subsets of one task while pushing apart models of different
//! tasks. The crate ships its own reverse-mode autodiff so the MAML inner
//! step stays differentiable end to end.

pub mod autodiff;
pub mod cli;
pub mod contrastive;
pub mod eval;
pub mod learners;
pub mod rng;
pub mod tasks;
pub mod training;
