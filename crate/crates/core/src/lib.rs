//! Numerical laboratory for aggregation-diffusion equations
//! `∂tρ = β⁻¹Δρ^m + ∇·(ρ∇W⋆ρ)` on the torus.
//!
//! Densities live on a cell-centred periodic grid; interaction potentials
//! are given by finitely many cosine coefficients, so convolutions and
//! free energies are evaluated exactly in the trigonometric basis.

pub mod spectral;
pub mod potential;
pub mod energy;
pub mod dynamics;
pub mod stationary;
pub mod bifurcation;
pub mod transition;
pub mod mesa;
pub mod cli;

pub use potential::Potential;
pub use spectral::{Field, Grid, Mode, Torus};
