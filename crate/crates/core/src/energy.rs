//! Free energy `F = S + E`, the a-priori sup bound on stationary states, and
//! stationarity diagnostics based on the self-consistency equation.

use serde::Serialize;
use thiserror::Error;

use crate::potential::Potential;
use crate::spectral::{Convolution, Field, Grid, SpectralError};

/// Cells with `ρ ≤ SUPPORT_EPS·ρ_∞` count as vacuum.
pub const SUPPORT_EPS: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("inverse temperature must be positive and finite, got {0}")]
    InvalidBeta(f64),
    #[error("diffusion exponent out of range: {0}")]
    InvalidExponent(f64),
    #[error("density has vacuum cells (min = {0:e}); the single constant is undefined")]
    MultiComponentUnsupported(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub entropy: f64,
    pub interaction: f64,
    pub total: f64,
    pub beta: f64,
    pub m: f64,
}

/// `x^p` for `x ≥ 0`, exact for integer `p`.
pub(crate) fn pow_real(x: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() < 64.0 {
        x.powi(p as i32)
    } else if x == 0.0 {
        if p > 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        x.powf(p)
    }
}

pub(crate) fn check_beta(beta: f64) -> Result<(), EnergyError> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(EnergyError::InvalidBeta(beta))
    }
}

/// The free energy on a fixed grid with the convolution precomputed.
#[derive(Debug, Clone)]
pub struct Functional {
    conv: Convolution,
    beta: f64,
    m: f64,
}

impl Functional {
    pub fn new(w: &Potential, grid: &Grid, beta: f64, m: f64) -> Result<Self, EnergyError> {
        check_beta(beta)?;
        if !(m >= 1.0 && m.is_finite()) {
            return Err(EnergyError::InvalidExponent(m));
        }
        Ok(Self { conv: Convolution::new(w, grid)?, beta, m })
    }

    pub fn grid(&self) -> &Grid {
        self.conv.grid()
    }

    pub fn convolution(&self) -> &Convolution {
        &self.conv
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self, EnergyError> {
        check_beta(beta)?;
        Ok(Self { conv: self.conv.clone(), beta, m: self.m })
    }

    pub fn entropy(&self, rho: &[f64]) -> f64 {
        let hv = self.grid().cell_volume();
        if self.m == 1.0 {
            let s: f64 = rho.iter().map(|&r| if r > 0.0 { r * r.ln() } else { 0.0 }).sum();
            hv * s / self.beta
        } else {
            let s: f64 = rho.iter().map(|&r| pow_real(r.max(0.0), self.m)).sum();
            (hv * s - 1.0) / (self.beta * (self.m - 1.0))
        }
    }

    pub fn interaction(&self, rho: &[f64]) -> f64 {
        0.5 * self.conv.bilinear(rho)
    }

    pub fn energy(&self, rho: &[f64]) -> EnergyBreakdown {
        let entropy = self.entropy(rho);
        let interaction = self.interaction(rho);
        EnergyBreakdown { entropy, interaction, total: entropy + interaction, beta: self.beta, m: self.m }
    }

    /// Energy of the flat state.
    pub fn flat_energy(&self) -> EnergyBreakdown {
        self.energy(Field::flat(*self.grid()).values())
    }

    /// `β⁻¹m/(m−1)ρ^{m−1} + W⋆ρ` given `W⋆ρ`.
    pub fn entropy_variable_with(&self, rho: &[f64], phi: &[f64]) -> Vec<f64> {
        let a = self.m / (self.beta * (self.m - 1.0));
        rho.iter()
            .zip(phi)
            .map(|(&r, &p)| a * pow_real(r.max(0.0), self.m - 1.0) + p)
            .collect()
    }

    pub fn entropy_variable(&self, rho: &[f64]) -> Vec<f64> {
        let phi = self.conv.apply(rho);
        self.entropy_variable_with(rho, &phi)
    }
}

pub fn free_energy(rho: &Field, w: &Potential, beta: f64, m: f64) -> Result<EnergyBreakdown, EnergyError> {
    Ok(Functional::new(w, rho.grid(), beta, m)?.energy(rho.values()))
}

/// A-priori bound `B_{β,m}` on `‖ρ‖_∞` for stationary states.
pub fn linf_bound(beta: f64, m: f64, w: &Potential) -> Result<f64, EnergyError> {
    check_beta(beta)?;
    if !(m > 1.0 && m.is_finite()) {
        return Err(EnergyError::InvalidExponent(m));
    }
    let vol = w.torus().volume();
    let w_neg = w.negative_part_sup();
    let q = 1.0 / (m - 1.0);
    let vol_pow = pow_real(vol, m - 1.0);
    let b1 = (2.0 / vol_pow + beta * (m - 1.0) * w_neg).powf(q);
    let s_star = 0.5 * w_neg + 1.0 / (beta * (m - 1.0) * vol_pow);
    // The flat state has zero interaction energy for a mean-zero kernel.
    let e_star = 0.5 * w_neg;
    let inner = m * (1.0 + 2f64.powf(m) * (m + 1.0)) * s_star + 8.0 * e_star + 0.5 * w_neg;
    let b2 = ((m - 1.0) * beta * inner).powf(q);
    Ok(b1.max(2.0 * b2))
}

/// The constant `C` of the self-consistency equation for a fully supported
/// density. The `W⋆ρ` average vanishes for mean-zero kernels but is kept.
pub fn self_consistency_constant(rho: &Field, w: &Potential, beta: f64, m: f64) -> Result<f64, EnergyError> {
    let f = Functional::new(w, rho.grid(), beta, m)?;
    if m == 1.0 {
        return Err(EnergyError::InvalidExponent(m));
    }
    let floor = SUPPORT_EPS * rho.grid().torus.rho_inf();
    let min = rho.min();
    if min <= floor {
        return Err(EnergyError::MultiComponentUnsupported(min));
    }
    Ok(constant_full_support(&f, rho.values(), &f.conv.apply(rho.values())))
}

fn constant_full_support(f: &Functional, rho: &[f64], phi: &[f64]) -> f64 {
    let grid = f.grid();
    let hv = grid.cell_volume();
    let vol = grid.torus.volume();
    let m = f.m;
    let s: f64 = rho.iter().map(|&r| pow_real(r, m - 1.0)).sum();
    let p: f64 = phi.iter().sum();
    m / (f.beta * vol * (m - 1.0)) * hv * s + hv * p / vol
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stationarity {
    /// Sup over the support of `|ξ − C|`.
    pub residual: f64,
    /// `(∫ρ|∇ξ|²)^{1/2}` with centred differences.
    pub slope: f64,
    pub constant: f64,
    pub support_fraction: f64,
}

impl Functional {
    pub fn stationarity(&self, rho: &[f64]) -> Stationarity {
        let phi = self.conv.apply(rho);
        self.stationarity_with(rho, &phi)
    }

    pub fn stationarity_with(&self, rho: &[f64], phi: &[f64]) -> Stationarity {
        let grid = *self.grid();
        let floor = SUPPORT_EPS * grid.torus.rho_inf();
        let xi = self.entropy_variable_with(rho, phi);
        let support: Vec<usize> = (0..rho.len()).filter(|&i| rho[i] > floor).collect();
        let support_fraction = support.len() as f64 / rho.len() as f64;
        let constant = if support.len() == rho.len() {
            constant_full_support(self, rho, phi)
        } else if support.is_empty() {
            0.0
        } else {
            support.iter().map(|&i| xi[i]).sum::<f64>() / support.len() as f64
        };
        let residual = support.iter().map(|&i| (xi[i] - constant).abs()).fold(0.0, f64::max);
        Stationarity { residual, slope: slope(&grid, rho, &xi), constant, support_fraction }
    }
}

fn slope(grid: &Grid, rho: &[f64], xi: &[f64]) -> f64 {
    let n = grid.n;
    let h = grid.h();
    let mut acc = 0.0;
    match grid.d() {
        1 => {
            for i in 0..n {
                let g = (xi[(i + 1) % n] - xi[(i + n - 1) % n]) / (2.0 * h);
                acc += rho[i] * g * g;
            }
        }
        _ => {
            for a in 0..n {
                for b in 0..n {
                    let at = |p: usize, q: usize| xi[p * n + q];
                    let gx = (at((a + 1) % n, b) - at((a + n - 1) % n, b)) / (2.0 * h);
                    let gy = (at(a, (b + 1) % n) - at(a, (b + n - 1) % n)) / (2.0 * h);
                    acc += rho[a * n + b] * (gx * gx + gy * gy);
                }
            }
        }
    }
    (grid.cell_volume() * acc).sqrt()
}

pub fn stationarity_residual(rho: &Field, w: &Potential, beta: f64, m: f64) -> Result<Stationarity, EnergyError> {
    if !(m > 1.0 && m.is_finite()) {
        return Err(EnergyError::InvalidExponent(m));
    }
    Ok(Functional::new(w, rho.grid(), beta, m)?.stationarity(rho.values()))
}
