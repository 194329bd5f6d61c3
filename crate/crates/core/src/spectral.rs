//! Periodic grids, the mixed cosine/sine Fourier basis, and spectral
//! convolution on the torus `[0, L)^d`, `d ∈ {1, 2}`.
//!
//! The basis is indexed by signed multi-indices: a positive component selects
//! a cosine, a negative one a sine and a zero component the constant. Every
//! basis function carries the normalisation `N_k = Θ(k) / L^{d/2}` with
//! `Θ(k) = Π (2 - δ_{k_i,0})^{1/2}`, which makes the family orthonormal in
//! `L²`. On the uniform cell-centred grid the rectangle rule reproduces these
//! inner products exactly for every pair of modes below the Nyquist index.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::potential::Potential;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("unsupported dimension {0}; only d = 1 and d = 2 are available")]
    UnsupportedDimension(usize),
    #[error("side length must be positive and finite, got {0}")]
    InvalidLength(f64),
    #[error("grid size must be a power of two and at least 8, got {0}")]
    InvalidGridSize(usize),
    #[error("mode {mode} is beyond the Nyquist index {limit}")]
    InvalidMode { mode: Mode, limit: i64 },
    #[error("mode {0} has the wrong dimension")]
    ModeDimension(Mode),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("field has {got} values, grid needs {expected}")]
    FieldLength { expected: usize, got: usize },
    #[error("not a density: {0}")]
    NotADensity(String),
}

/// The torus `[0, L)^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Torus {
    pub d: usize,
    #[serde(rename = "L")]
    pub l: f64,
}

impl Torus {
    pub fn new(d: usize, l: f64) -> Result<Self, SpectralError> {
        if d != 1 && d != 2 {
            return Err(SpectralError::UnsupportedDimension(d));
        }
        if !(l > 0.0 && l.is_finite()) {
            return Err(SpectralError::InvalidLength(l));
        }
        Ok(Self { d, l })
    }

    /// `|Ω| = L^d`.
    pub fn volume(&self) -> f64 {
        self.l.powi(self.d as i32)
    }

    /// Density of the flat state, `ρ_∞ = L^{-d}`.
    pub fn rho_inf(&self) -> f64 {
        1.0 / self.volume()
    }

    /// Normalisation constant `N_k`.
    pub fn norm_const(&self, k: &Mode) -> f64 {
        k.theta() / self.l.powf(self.d as f64 / 2.0)
    }

    pub(crate) fn same_as(&self, other: &Torus) -> bool {
        self.d == other.d && (self.l - other.l).abs() <= 1e-12 * self.l.max(other.l)
    }
}

/// Signed multi-index `k ∈ Z^d`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mode(Vec<i64>);

impl Mode {
    pub fn new(components: Vec<i64>) -> Self {
        Self(components)
    }

    /// One-dimensional mode.
    pub fn one(k: i64) -> Self {
        Self(vec![k])
    }

    pub fn zero(d: usize) -> Self {
        Self(vec![0; d])
    }

    pub fn d(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[i64] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&k| k == 0)
    }

    /// True when every component is non-negative (a pure cosine/constant mode).
    pub fn is_cosine(&self) -> bool {
        self.0.iter().all(|&k| k >= 0)
    }

    pub fn max_abs(&self) -> i64 {
        self.0.iter().map(|k| k.abs()).max().unwrap_or(0)
    }

    pub fn nonzero_count(&self) -> usize {
        self.0.iter().filter(|&&k| k != 0).count()
    }

    /// `Θ(k) = Π (2 - δ_{k_i,0})^{1/2}`.
    pub fn theta(&self) -> f64 {
        SQRT_2.powi(self.nonzero_count() as i32)
    }

    /// Component-wise absolute value.
    pub fn abs(&self) -> Mode {
        Mode(self.0.iter().map(|k| k.abs()).collect())
    }

    /// Component-wise product with a sign vector.
    pub fn flipped(&self, signs: &[i64]) -> Mode {
        Mode(self.0.iter().zip(signs).map(|(k, s)| k * s).collect())
    }

    pub fn add(&self, other: &Mode) -> Mode {
        Mode(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// Images of `self` under the sign-flip group `Sym(Λ)`, with the
    /// stabiliser `H_k` quotiented out (no repeated indices). The identity
    /// image comes first.
    pub fn sign_orbit(&self) -> Vec<Mode> {
        let mut out: Vec<Mode> = Vec::with_capacity(1 << self.d());
        for signs in sign_vectors(self.d()) {
            let image = self.flipped(&signs);
            if !out.contains(&image) {
                out.push(image);
            }
        }
        out
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.len() == 1 {
            write!(f, "{}", self.0[0])
        } else {
            let parts: Vec<String> = self.0.iter().map(|k| k.to_string()).collect();
            write!(f, "({})", parts.join(","))
        }
    }
}

/// All sign vectors in `{1,-1}^d`, identity first.
pub fn sign_vectors(d: usize) -> Vec<Vec<i64>> {
    (0..(1usize << d))
        .map(|bits| {
            (0..d)
                .map(|i| if bits >> i & 1 == 1 { -1 } else { 1 })
                .collect()
        })
        .collect()
}

/// Every multi-index in `N^d \ {0}` with `|k|_∞ ≤ k_max`, lexicographic order.
pub fn positive_modes(d: usize, k_max: i64) -> Vec<Mode> {
    let mut out = Vec::new();
    match d {
        1 => out.extend((1..=k_max).map(Mode::one)),
        _ => {
            for a in 0..=k_max {
                for b in 0..=k_max {
                    if a != 0 || b != 0 {
                        out.push(Mode::new(vec![a, b]));
                    }
                }
            }
        }
    }
    out
}

/// Uniform cell-centred grid with `n` points per dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub torus: Torus,
    pub n: usize,
}

impl Grid {
    pub fn new(d: usize, l: f64, n: usize) -> Result<Self, SpectralError> {
        let torus = Torus::new(d, l)?;
        Self::on(torus, n)
    }

    pub fn on(torus: Torus, n: usize) -> Result<Self, SpectralError> {
        if n < 8 || !n.is_power_of_two() {
            return Err(SpectralError::InvalidGridSize(n));
        }
        Ok(Self { torus, n })
    }

    pub fn d(&self) -> usize {
        self.torus.d
    }

    pub fn l(&self) -> f64 {
        self.torus.l
    }

    /// Mesh width `h = L/n`.
    pub fn h(&self) -> f64 {
        self.torus.l / self.n as f64
    }

    /// Cell volume `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.d() as i32)
    }

    /// Number of cells, `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.d() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Default spectral truncation, one below Nyquist.
    pub fn k_max(&self) -> i64 {
        self.n as i64 / 2 - 1
    }

    /// One-dimensional node coordinates `x_i = (i + ½) L / n`.
    pub fn axis(&self) -> Vec<f64> {
        let h = self.h();
        (0..self.n).map(|i| (i as f64 + 0.5) * h).collect()
    }

    /// Coordinates of the cell with flat (row-major) index `idx`.
    pub fn node(&self, idx: usize) -> Vec<f64> {
        let h = self.h();
        match self.d() {
            1 => vec![(idx as f64 + 0.5) * h],
            _ => {
                let (i, j) = (idx / self.n, idx % self.n);
                vec![(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]
            }
        }
    }

    pub fn check_mode(&self, k: &Mode) -> Result<(), SpectralError> {
        if k.d() != self.d() {
            return Err(SpectralError::ModeDimension(k.clone()));
        }
        let limit = self.n as i64 / 2;
        if k.max_abs() > limit {
            return Err(SpectralError::InvalidMode { mode: k.clone(), limit });
        }
        Ok(())
    }

    /// Normalised one-dimensional basis factor `√((2-δ_{k,0})/L) · e_k(x)`,
    /// so that `e_k(x) = Π_i b_{k_i}(x_i)`.
    fn factor(&self, k: i64, x: f64) -> f64 {
        basis_factor(k, x, self.torus.l)
    }

    /// Samples of `e_k` at every node.
    pub fn sample_mode(&self, k: &Mode) -> Result<Vec<f64>, SpectralError> {
        self.check_mode(k)?;
        let axis = self.axis();
        let c = k.components();
        Ok(match self.d() {
            1 => axis.iter().map(|&x| self.factor(c[0], x)).collect(),
            _ => {
                let f0: Vec<f64> = axis.iter().map(|&x| self.factor(c[0], x)).collect();
                let f1: Vec<f64> = axis.iter().map(|&x| self.factor(c[1], x)).collect();
                let mut out = Vec::with_capacity(self.len());
                for a in &f0 {
                    for b in &f1 {
                        out.push(a * b);
                    }
                }
                out
            }
        })
    }
}

pub(crate) fn basis_factor(k: i64, x: f64, l: f64) -> f64 {
    let w = 2.0 * PI * k.abs() as f64 / l;
    match k.cmp(&0) {
        std::cmp::Ordering::Greater => (2.0 / l).sqrt() * (w * x).cos(),
        std::cmp::Ordering::Equal => (1.0 / l).sqrt(),
        std::cmp::Ordering::Less => (2.0 / l).sqrt() * (w * x).sin(),
    }
}

/// `e_k(x)` including the normalisation `N_k`.
pub fn basis_eval(k: &Mode, x: &[f64], grid: &Grid) -> Result<f64, SpectralError> {
    grid.check_mode(k)?;
    if x.len() != grid.d() {
        return Err(SpectralError::GridMismatch(format!(
            "point has {} coordinates, grid has d = {}",
            x.len(),
            grid.d()
        )));
    }
    Ok(k.components()
        .iter()
        .zip(x)
        .map(|(&ki, &xi)| basis_factor(ki, xi, grid.l()))
        .product())
}

/// Real-valued grid function. Densities are non-negative with unit mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

const MASS_TOL: f64 = 1e-12;

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self, SpectralError> {
        if values.len() != grid.len() {
            return Err(SpectralError::FieldLength {
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    /// Checked density: non-negative with mass `1 ± 1e-12`.
    pub fn density(grid: Grid, values: Vec<f64>) -> Result<Self, SpectralError> {
        let f = Self::new(grid, values)?;
        if let Some(v) = f.values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(SpectralError::NotADensity(format!("value {v} is negative or not finite")));
        }
        let mass = f.mass();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(SpectralError::NotADensity(format!("mass {mass} differs from 1")));
        }
        Ok(f)
    }

    /// Scales non-negative values to unit mass.
    pub fn normalized_density(grid: Grid, values: Vec<f64>) -> Result<Self, SpectralError> {
        let mut f = Self::new(grid, values)?;
        if f.values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(SpectralError::NotADensity("negative or non-finite value".into()));
        }
        let mass = f.mass();
        if mass <= 0.0 {
            return Err(SpectralError::NotADensity("zero mass".into()));
        }
        f.values.iter_mut().for_each(|v| *v /= mass);
        Ok(f)
    }

    /// The flat state `ρ_∞`.
    pub fn flat(grid: Grid) -> Self {
        let v = grid.torus.rho_inf();
        Self { grid, values: vec![v; grid.len()] }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.node(i))).collect();
        Self { grid, values }
    }

    /// `ρ_∞ + amplitude · e_k`, checked to be a density.
    pub fn flat_plus_mode(grid: Grid, k: &Mode, amplitude: f64) -> Result<Self, SpectralError> {
        let e = grid.sample_mode(k)?;
        let rho_inf = grid.torus.rho_inf();
        let values: Vec<f64> = e.iter().map(|v| rho_inf + amplitude * v).collect();
        if values.iter().any(|v| *v < -1e-14) {
            return Err(SpectralError::NotADensity(format!(
                "ρ_∞ + {amplitude}·e_{k} is negative somewhere"
            )));
        }
        Ok(Self {
            grid,
            values: values.into_iter().map(|v| v.max(0.0)).collect(),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `h^d Σ values`.
    pub fn mass(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().sum::<f64>()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `‖self - other‖_∞`.
    pub fn dist_sup(&self, other: &Field) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |a, (x, y)| a.max((x - y).abs()))
    }

    /// `‖self - ρ_∞‖_∞`.
    pub fn dist_from_flat(&self) -> f64 {
        let r = self.grid.torus.rho_inf();
        self.values.iter().fold(0.0, |a, v| a.max((v - r).abs()))
    }

    /// `h^d Σ self · other`.
    pub fn inner(&self, other: &[f64]) -> f64 {
        self.grid.cell_volume() * self.values.iter().zip(other).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Periodic shift by whole cells: `out[i] = self[i - s]`.
    pub fn shift(&self, s: &[i64]) -> Field {
        let n = self.grid.n as i64;
        let values = match self.grid.d() {
            1 => (0..n)
                .map(|i| self.values[(i - s[0]).rem_euclid(n) as usize])
                .collect(),
            _ => {
                let mut out = Vec::with_capacity(self.values.len());
                for i in 0..n {
                    for j in 0..n {
                        let si = (i - s[0]).rem_euclid(n);
                        let sj = (j - s[1]).rem_euclid(n);
                        out.push(self.values[(si * n + sj) as usize]);
                    }
                }
                out
            }
        };
        Field { grid: self.grid, values }
    }
}

/// Coefficient table `f̂(k)` over signed indices with `|k_i| ≤ k_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoeffs {
    d: usize,
    k_max: i64,
    values: Vec<f64>,
}

impl SpectralCoeffs {
    pub fn zeros(d: usize, k_max: i64) -> Self {
        let side = (2 * k_max + 1) as usize;
        Self { d, k_max, values: vec![0.0; side.pow(d as u32)] }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k_max(&self) -> i64 {
        self.k_max
    }

    fn index(&self, k: &Mode) -> Option<usize> {
        if k.d() != self.d || k.max_abs() > self.k_max {
            return None;
        }
        let side = 2 * self.k_max + 1;
        let c = k.components();
        Some(match self.d {
            1 => (c[0] + self.k_max) as usize,
            _ => ((c[0] + self.k_max) * side + c[1] + self.k_max) as usize,
        })
    }

    /// Coefficient of `e_k`; zero outside the truncation.
    pub fn get(&self, k: &Mode) -> f64 {
        self.index(k).map_or(0.0, |i| self.values[i])
    }

    pub fn set(&mut self, k: &Mode, value: f64) -> Result<(), SpectralError> {
        let i = self.index(k).ok_or_else(|| SpectralError::InvalidMode {
            mode: k.clone(),
            limit: self.k_max,
        })?;
        self.values[i] = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (Mode, f64)> + '_ {
        let side = 2 * self.k_max + 1;
        let k_max = self.k_max;
        let d = self.d;
        self.values.iter().enumerate().map(move |(i, &v)| {
            let i = i as i64;
            let mode = match d {
                1 => Mode::one(i - k_max),
                _ => Mode::new(vec![i / side - k_max, i % side - k_max]),
            };
            (mode, v)
        })
    }

    /// `Σ_k f̂(k)²`.
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Table of the normalised 1-D factors `b_k(x_i)` for `k ∈ [-k_max, k_max]`.
fn factor_table(grid: &Grid, k_max: i64) -> Vec<Vec<f64>> {
    let axis = grid.axis();
    (-k_max..=k_max)
        .map(|k| axis.iter().map(|&x| basis_factor(k, x, grid.l())).collect())
        .collect()
}

/// Fourier coefficients up to the default truncation `n/2 - 1`.
pub fn analyze(f: &Field) -> SpectralCoeffs {
    analyze_to(f, f.grid.k_max())
}

/// Fourier coefficients `⟨f, e_k⟩` by the rectangle rule, `|k_i| ≤ k_max`.
pub fn analyze_to(f: &Field, k_max: i64) -> SpectralCoeffs {
    let grid = f.grid;
    let k_max = k_max.min(grid.n as i64 / 2);
    let table = factor_table(&grid, k_max);
    let h = grid.h();
    let n = grid.n;
    let mut out = SpectralCoeffs::zeros(grid.d(), k_max);
    match grid.d() {
        1 => {
            for (slot, row) in out.values.iter_mut().zip(&table) {
                *slot = h * row.iter().zip(&f.values).map(|(b, v)| b * v).sum::<f64>();
            }
        }
        _ => {
            // partial transform along the second axis first
            let side = table.len();
            let mut partial = vec![0.0; n * side];
            for i in 0..n {
                let slice = &f.values[i * n..(i + 1) * n];
                for (q, row) in table.iter().enumerate() {
                    partial[i * side + q] =
                        h * row.iter().zip(slice).map(|(b, v)| b * v).sum::<f64>();
                }
            }
            for (p, row_p) in table.iter().enumerate() {
                for q in 0..side {
                    let mut s = 0.0;
                    for (i, b) in row_p.iter().enumerate() {
                        s += b * partial[i * side + q];
                    }
                    out.values[p * side + q] = h * s;
                }
            }
        }
    }
    out
}

/// `Σ_k c(k) e_k` sampled on `grid`.
pub fn synthesize(c: &SpectralCoeffs, grid: &Grid) -> Result<Field, SpectralError> {
    if c.d != grid.d() {
        return Err(SpectralError::GridMismatch(format!(
            "coefficients have d = {}, grid has d = {}",
            c.d,
            grid.d()
        )));
    }
    if c.k_max > grid.n as i64 / 2 {
        return Err(SpectralError::InvalidMode {
            mode: Mode::new(vec![c.k_max; c.d]),
            limit: grid.n as i64 / 2,
        });
    }
    let table = factor_table(grid, c.k_max);
    let n = grid.n;
    let mut values = vec![0.0; grid.len()];
    match grid.d() {
        1 => {
            for (coef, row) in c.values.iter().zip(&table) {
                if *coef != 0.0 {
                    values.iter_mut().zip(row).for_each(|(v, b)| *v += coef * b);
                }
            }
        }
        _ => {
            let side = table.len();
            // partial[p][j] = Σ_q c(p,q) b_q(x_j)
            let mut partial = vec![0.0; side * n];
            for p in 0..side {
                for (q, row_q) in table.iter().enumerate() {
                    let coef = c.values[p * side + q];
                    if coef != 0.0 {
                        for j in 0..n {
                            partial[p * n + j] += coef * row_q[j];
                        }
                    }
                }
            }
            for (p, row_p) in table.iter().enumerate() {
                for i in 0..n {
                    let b = row_p[i];
                    if b != 0.0 {
                        for j in 0..n {
                            values[i * n + j] += b * partial[p * n + j];
                        }
                    }
                }
            }
        }
    }
    Field::new(*grid, values)
}

#[derive(Debug, Clone)]
struct ConvTerm {
    mode: Mode,
    /// `Ŵ(k)/N_k` for the cosine parent `k` of this signed image.
    weight: f64,
    basis: Vec<f64>,
}

/// Convolution with an even potential, precomputed on a grid.
///
/// Only the signed images of modes with `Ŵ(k) ≠ 0` contribute, so one
/// application costs `O(n^d · #modes)`.
#[derive(Debug, Clone)]
pub struct Convolution {
    grid: Grid,
    terms: Vec<ConvTerm>,
}

impl Convolution {
    pub fn new(w: &Potential, grid: &Grid) -> Result<Self, SpectralError> {
        if !w.torus().same_as(&grid.torus) {
            return Err(SpectralError::GridMismatch(format!(
                "potential lives on L = {}, d = {}; grid has L = {}, d = {}",
                w.torus().l,
                w.torus().d,
                grid.l(),
                grid.d()
            )));
        }
        let mut terms = Vec::new();
        for (k, coeff) in w.modes() {
            if coeff == 0.0 {
                continue;
            }
            if k.max_abs() > grid.k_max() {
                return Err(SpectralError::InvalidMode { mode: k.clone(), limit: grid.k_max() });
            }
            let weight = coeff / grid.torus.norm_const(k);
            for image in k.sign_orbit() {
                let basis = grid.sample_mode(&image)?;
                terms.push(ConvTerm { mode: image, weight, basis });
            }
        }
        Ok(Self { grid: *grid, terms })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Signed modes through which the potential acts.
    pub fn active_modes(&self) -> Vec<Mode> {
        self.terms.iter().map(|t| t.mode.clone()).collect()
    }

    /// `Ŵ(|k|)/N_k` for each active mode, aligned with [`Self::active_modes`].
    pub fn active_weights(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.weight).collect()
    }

    pub fn is_trivial(&self) -> bool {
        self.terms.is_empty()
    }

    /// Coefficients `f̂(σ(k))` of `f` on the active modes.
    pub fn coefficients(&self, f: &[f64]) -> Vec<f64> {
        let cv = self.grid.cell_volume();
        self.terms
            .iter()
            .map(|t| cv * t.basis.iter().zip(f).map(|(b, v)| b * v).sum::<f64>())
            .collect()
    }

    /// `W ⋆ f` reconstructed from active-mode coefficients.
    pub fn potential_from_coefficients(&self, coeffs: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (t, c) in self.terms.iter().zip(coeffs) {
            let a = t.weight * c;
            if a != 0.0 {
                out.iter_mut().zip(&t.basis).for_each(|(v, b)| *v += a * b);
            }
        }
    }

    /// `W ⋆ f` written into `out`.
    pub fn apply_into(&self, f: &[f64], out: &mut [f64]) {
        let coeffs = self.coefficients(f);
        self.potential_from_coefficients(&coeffs, out);
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        self.apply_into(f, &mut out);
        out
    }

    /// `∬ W(x-y) f(x) f(y)` from the Fourier series.
    pub fn bilinear(&self, f: &[f64]) -> f64 {
        let coeffs = self.coefficients(f);
        self.terms.iter().zip(&coeffs).map(|(t, c)| t.weight * c * c).sum()
    }
}

/// `W ⋆ f`.
pub fn convolve(w: &Potential, f: &Field) -> Result<Field, SpectralError> {
    let conv = Convolution::new(w, &f.grid)?;
    Field::new(f.grid, conv.apply(&f.values))
}

/// `∬ W(x-y) f(x) f(y) dx dy` via the Fourier expansion.
pub fn bilinear_form(w: &Potential, f: &Field) -> Result<f64, SpectralError> {
    let conv = Convolution::new(w, &f.grid)?;
    Ok(conv.bilinear(&f.values))
}

/// Direct `O(n^{2d})` tensor quadrature of `∬ W(x-y) f(x) f(y)`.
///
/// `w_lattice` holds `W` sampled at the lattice offsets `r·h`, `r ∈ [0, n)^d`
/// (see [`Potential::sample_offsets`]), so `W(x_i - x_j)` is a table lookup.
pub fn double_quadrature(w_lattice: &[f64], f: &Field) -> Result<f64, SpectralError> {
    let grid = f.grid;
    if w_lattice.len() != grid.len() {
        return Err(SpectralError::FieldLength { expected: grid.len(), got: w_lattice.len() });
    }
    let n = grid.n;
    let cv = grid.cell_volume();
    let v = &f.values;
    let total = match grid.d() {
        1 => {
            let mut s = 0.0;
            for i in 0..n {
                let mut row = 0.0;
                for j in 0..n {
                    row += w_lattice[(i + n - j) % n] * v[j];
                }
                s += v[i] * row;
            }
            s
        }
        _ => {
            let mut s = 0.0;
            for i0 in 0..n {
                for i1 in 0..n {
                    let fi = v[i0 * n + i1];
                    if fi == 0.0 {
                        continue;
                    }
                    let mut row = 0.0;
                    for j0 in 0..n {
                        let r0 = (i0 + n - j0) % n;
                        for j1 in 0..n {
                            let r1 = (i1 + n - j1) % n;
                            row += w_lattice[r0 * n + r1] * v[j0 * n + j1];
                        }
                    }
                    s += fi * row;
                }
            }
            s
        }
    };
    Ok(cv * cv * total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1(l: f64, n: usize) -> Grid {
        Grid::new(1, l, n).unwrap()
    }

    #[test]
    fn basis_values_by_hand() {
        let g = grid1(1.0, 16);
        assert!((basis_eval(&Mode::one(0), &[0.3], &g).unwrap() - 1.0).abs() < 1e-15);
        assert!((basis_eval(&Mode::one(1), &[0.0], &g).unwrap() - SQRT_2).abs() < 1e-15);
        assert!((basis_eval(&Mode::one(-1), &[0.25], &g).unwrap() - SQRT_2).abs() < 1e-14);
    }

    #[test]
    fn basis_rejects_modes_past_nyquist() {
        let g = grid1(1.0, 16);
        assert!(matches!(
            basis_eval(&Mode::one(9), &[0.1], &g),
            Err(SpectralError::InvalidMode { .. })
        ));
        assert!(basis_eval(&Mode::one(-8), &[0.1], &g).is_ok());
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(1, 1.0, 6).is_err());
        assert!(Grid::new(1, 1.0, 12).is_err());
        assert!(Grid::new(3, 1.0, 16).is_err());
        assert!(Grid::new(1, -1.0, 16).is_err());
        let g = Grid::new(2, 2.0, 8).unwrap();
        assert_eq!(g.len(), 64);
        assert!((g.cell_volume() - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn sign_orbit_deduplicates_zero_components() {
        assert_eq!(Mode::one(3).sign_orbit(), vec![Mode::one(3), Mode::one(-3)]);
        assert_eq!(Mode::new(vec![2, 0]).sign_orbit().len(), 2);
        assert_eq!(Mode::new(vec![1, 1]).sign_orbit().len(), 4);
    }

    #[test]
    fn analyze_flat_and_single_mode() {
        let g = grid1(1.0, 32);
        let c = analyze(&Field::flat(g));
        assert!((c.get(&Mode::one(0)) - 1.0).abs() < 1e-14);
        for (k, v) in c.iter() {
            if !k.is_zero() {
                assert!(v.abs() < 1e-14, "mode {k} = {v}");
            }
        }
        let f = Field::flat_plus_mode(g, &Mode::one(1), 0.3).unwrap();
        let c = analyze(&f);
        assert!((c.get(&Mode::one(1)) - 0.3).abs() < 1e-14);
        assert!((c.get(&Mode::one(0)) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn square_of_first_mode() {
        let g = grid1(1.0, 32);
        let e1 = g.sample_mode(&Mode::one(1)).unwrap();
        let sq = Field::new(g, e1.iter().map(|v| v * v).collect()).unwrap();
        let c = analyze(&sq);
        assert!((c.get(&Mode::one(0)) - 1.0).abs() < 1e-14);
        assert!((c.get(&Mode::one(2)) - 1.0 / SQRT_2).abs() < 1e-14);
    }

    #[test]
    fn convolution_examples() {
        let g = grid1(1.0, 64);
        let w = Potential::neg_cos(1.0).unwrap();
        let flat = convolve(&w, &Field::flat(g)).unwrap();
        assert!(flat.sup_norm() < 1e-14);

        let alpha = 0.4;
        let f = Field::flat_plus_mode(g, &Mode::one(1), alpha).unwrap();
        let out = convolve(&w, &f).unwrap();
        let e1 = g.sample_mode(&Mode::one(1)).unwrap();
        for (v, e) in out.values().iter().zip(&e1) {
            assert!((v + alpha / 2.0 * e).abs() < 1e-14);
        }

        let w2 = Potential::from_modes(Torus::new(1, 1.0).unwrap(), vec![(Mode::one(2), 1.0)]).unwrap();
        let e2 = Field::new(g, g.sample_mode(&Mode::one(2)).unwrap()).unwrap();
        let out = convolve(&w2, &e2).unwrap();
        for (v, e) in out.values().iter().zip(e2.values()) {
            assert!((v - e / SQRT_2).abs() < 1e-14);
        }
    }

    #[test]
    fn bilinear_examples() {
        let g = grid1(1.0, 64);
        let w = Potential::neg_cos(1.0).unwrap();
        assert!(bilinear_form(&w, &Field::flat(g)).unwrap().abs() < 1e-15);
        let e1 = Field::new(g, g.sample_mode(&Mode::one(1)).unwrap()).unwrap();
        assert!((bilinear_form(&w, &e1).unwrap() + 0.5).abs() < 1e-14);
        let alpha = 0.6;
        let f = Field::flat_plus_mode(g, &Mode::one(1), alpha).unwrap();
        assert!((bilinear_form(&w, &f).unwrap() + alpha * alpha / 2.0).abs() < 1e-14);
    }

    #[test]
    fn double_quadrature_examples() {
        let g = grid1(1.0, 64);
        let w = Potential::neg_cos(1.0).unwrap();
        let lattice = w.sample_offsets(&g);
        let e1 = Field::new(g, g.sample_mode(&Mode::one(1)).unwrap()).unwrap();
        assert!((double_quadrature(&lattice, &e1).unwrap() + 0.5).abs() < 1e-10);
        assert!(double_quadrature(&lattice, &Field::flat(g)).unwrap().abs() < 1e-12);
    }

    #[test]
    fn convolution_rejects_mismatched_grid() {
        let w = Potential::neg_cos(2.0).unwrap();
        let g = grid1(1.0, 32);
        assert!(matches!(convolve(&w, &Field::flat(g)), Err(SpectralError::GridMismatch(_))));
    }

    #[test]
    fn two_dimensional_round_trip() {
        let g = Grid::new(2, 1.5, 16).unwrap();
        let mut c = SpectralCoeffs::zeros(2, g.k_max());
        c.set(&Mode::new(vec![0, 0]), 0.7).unwrap();
        c.set(&Mode::new(vec![1, -2]), 0.2).unwrap();
        c.set(&Mode::new(vec![-3, 0]), -0.1).unwrap();
        c.set(&Mode::new(vec![2, 5]), 0.05).unwrap();
        let f = synthesize(&c, &g).unwrap();
        let back = analyze(&f);
        for (k, v) in c.iter() {
            assert!((back.get(&k) - v).abs() < 1e-13, "{k}");
        }
    }

    #[test]
    fn density_constructor_checks_mass_and_sign() {
        let g = grid1(1.0, 8);
        assert!(Field::density(g, vec![1.0; 8]).is_ok());
        assert!(Field::density(g, vec![2.0; 8]).is_err());
        let mut v = vec![1.0; 8];
        v[0] = -0.5;
        v[1] = 1.5;
        assert!(Field::density(g, v).is_err());
    }
}
