//! A desk-scale laboratory for the implicit regularization of SGD with
//! label noise.
//!
//! When a network is trained by per-sample SGD on squared loss and a fresh
//! zero-mean perturbation is added to the label at every step, the dynamics
//! near the zero-error manifold do two things: coordinates with a positive
//! Gram eigenvalue mean-revert like an Ornstein-Uhlenbeck process with
//! stationary second moment `η·Var[e]`, and the remaining flat coordinates
//! drift downhill on the squared-gradient regularizer
//! `R(θ) = Σ_i ‖∇_θ f(x_i; θ)‖²`.
//!
//! The crate implements the machinery to state and check those claims
//! empirically: exact gradients and Hessians for tiny networks, seeded
//! trainers, the γ-spectrum and repellence classifier, OU moment and drift
//! estimators, the Lyapunov-equation route to the same regularizer, 1-d
//! ReLU geometry (kinks, convexity certificates, regularizer-decreasing
//! perturbations), and closed-form characterizations for single-datapoint
//! logistic/tanh networks.

pub mod cli;
pub mod error;
pub mod linalg;
pub mod model;
pub mod ou_stats;
pub mod regularizer;
pub mod relu_geometry;
pub mod single_point;
pub mod spectrum;
pub mod trainer;

pub use error::{Error, Result};
