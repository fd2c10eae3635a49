//! Stochastically forced 2D vorticity dynamics on the torus and the
//! structure-function machinery behind the Kármán–Howarth–Monin flux laws.
//!
//! Fourier convention used everywhere: `f̂(k) = ⨍ f(x) e^{-ik·x} dx` and
//! `f(x) = Σ_k f̂(k) e^{ik·x}`, so that `‖f‖_λ² = ⨍|f|² = Σ_k |f̂(k)|²`
//! (see [`grid::norm_sq`]).

pub mod budgets;
pub mod cascade;
pub mod correlations;
pub mod dd;
pub mod error;
pub mod forcing;
pub mod grid;
pub mod khm;
pub mod quad;
pub mod rng;
pub mod sim2d;
pub mod special;
pub mod sphere;

pub use error::{Error, Result};
