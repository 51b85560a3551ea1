//! Split-learning label leakage laboratory.
//!
//! Simulates two-party split training of small regression MLPs, records the
//! cut-layer gradients the user party observes, and mounts a learning-based
//! label inference attack against them, with noise defenses and a
//! reproducible experiment runner on top.
//!
//! Modules, bottom-up:
//!
//! * [`tensor`], [`graph`]: dense tensors and a reverse-mode graph.
//! * [`mlp`], [`optim`]: networks, closed-form cut-layer gradients, Adam.
//! * [`protocol`]: the two-party training loop and its gradient log.
//! * [`attack`]: gradient-matching label inference and the supervised baseline.
//! * [`defense`]: Laplace label noise and Gaussian gradient noise.
//! * [`metrics`], [`data`], [`experiment`]: scoring, datasets and sweeps.

pub mod attack;
pub mod data;
pub mod defense;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod metrics;
pub mod mlp;
pub mod optim;
pub mod protocol;
pub mod tensor;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/split-learning.md")]
    mod split_learning {}
    #[doc = include_str!("../../../book/src/attack.md")]
    mod attack {}
    #[doc = include_str!("../../../book/src/defenses.md")]
    mod defenses {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
