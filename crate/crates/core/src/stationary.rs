//! Stationary states from the self-consistency fixed point
//! `ρ = ((m−1)β/m·(C − W⋆ρ))₊^{1/(m−1)}`, with `C` fixed by the mass.
//!
//! Since `W⋆ρ` only sees the coefficients of `ρ` on the modes carried by
//! the potential, the damped iteration `ρ ← (1−θ)ρ + θ·T(ρ)` is run on
//! those coefficients. Each mode gets its own damping, taken from the
//! diagonal of the map's Jacobian, and once the iteration contracts a
//! Newton step with a translation gauge finishes the job.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{pow_real, EnergyError, Functional};
use crate::potential::{dominant_mode, Potential, DEFAULT_K_MAX};
use crate::spectral::{Field, Grid, Mode, SpectralError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StationaryError {
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("fixed-point solver is implemented for d = 1 only (got d = {0})")]
    UnsupportedDimension(usize),
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
    #[error("mass bisection failed: {0}")]
    BisectFailed(String),
    #[error("no convergence after {iterations} iterations (last change {change:e}, residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        change: f64,
        residual: f64,
        last: Box<Field>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixedPointConfig {
    /// Largest damping factor θ.
    pub theta: f64,
    pub max_iter: usize,
    /// Sup-norm change between successive iterates at which to stop.
    pub tol: f64,
    /// Allowed mass defect after the bisection for `C`.
    pub bisect_tol: f64,
    /// Relative amplitude of the `e_{k♯}` perturbation.
    pub kick: f64,
    /// Allow Newton steps once the iteration contracts.
    pub newton: bool,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self { theta: 0.5, max_iter: 20_000, tol: 1e-11, bisect_tol: 1e-12, kick: 1e-3, newton: true }
    }
}

impl FixedPointConfig {
    pub fn validate(&self) -> Result<(), StationaryError> {
        let bad = |m: &str| Err(StationaryError::InvalidConfig(m.into()));
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return bad("theta must lie in (0, 1]");
        }
        if !(self.tol > 0.0 && self.bisect_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1");
        }
        if !(self.kick >= 0.0 && self.kick.is_finite()) {
            return bad("kick must be non-negative");
        }
        Ok(())
    }
}

/// Pointwise `((m−1)β/m·(C − φ))₊^{1/(m−1)}`.
pub fn sc_map_values(phi: &[f64], beta: f64, m: f64, c: f64) -> Vec<f64> {
    let a = (m - 1.0) * beta / m;
    let p = 1.0 / (m - 1.0);
    phi.iter()
        .map(|&f| {
            let x = a * (c - f);
            if x > 0.0 { pow_real(x, p) } else { 0.0 }
        })
        .collect()
}

/// The self-consistency map for a given constant `C`.
pub fn sc_map(rho: &Field, w: &Potential, beta: f64, m: f64, c: f64) -> Result<Field, StationaryError> {
    if !(m > 1.0) {
        return Err(EnergyError::InvalidExponent(m).into());
    }
    let f = Functional::new(w, rho.grid(), beta, m)?;
    let phi = f.convolution().apply(rho.values());
    Ok(Field::new(*rho.grid(), sc_map_values(&phi, beta, m, c))?)
}

/// The constant `C` for which the image of `φ = W⋆ρ` has unit mass.
pub fn mass_bisect(phi: &Field, beta: f64, m: f64, tol: f64) -> Result<f64, StationaryError> {
    if !(m > 1.0) {
        return Err(EnergyError::InvalidExponent(m).into());
    }
    crate::energy::check_beta(beta)?;
    let grid = phi.grid();
    let c = mass_balance(phi.values(), beta, m, grid.cell_volume(), grid.torus.rho_inf(), tol)?.0;
    let mass = |c: f64| grid.cell_volume() * sc_map_values(phi.values(), beta, m, c).iter().sum::<f64>();
    let defect = mass(c) - 1.0;
    if defect.abs() <= tol {
        return Ok(c);
    }
    // Snap to the closest representable constant: walk to the neighbouring
    // float on the other side of unit mass and keep the better of the two.
    let other = if defect < 0.0 { c.next_up() } else { c.next_down() };
    let other_defect = mass(other) - 1.0;
    if other_defect.signum() == defect.signum() {
        return Err(StationaryError::BisectFailed(format!("mass defect {defect:e} at C = {c:e} does not change sign")));
    }
    Ok(if other_defect.abs() < defect.abs() { other } else { c })
}

/// The constant together with the unit-mass image. Prefer this over
/// [`mass_bisect`] for large `m`, where mapping `φ` through `C` again can
/// lose the mass of the cells sitting at the edge of the support.
pub fn mass_balanced(phi: &Field, beta: f64, m: f64, tol: f64) -> Result<(f64, Field), StationaryError> {
    if !(m > 1.0) {
        return Err(EnergyError::InvalidExponent(m).into());
    }
    crate::energy::check_beta(beta)?;
    let grid = *phi.grid();
    let (c, rho) = mass_balance(phi.values(), beta, m, grid.cell_volume(), grid.torus.rho_inf(), tol)?;
    Ok((c, Field::new(grid, rho)?))
}

/// Solves for the mass-normalising constant and returns it with the image.
///
/// For large `m` the image jumps from zero to `O(1)` within one ulp of `C`,
/// so `C` itself cannot be resolved. Instead the cells are sorted by `φ`;
/// the level set is bracketed between two consecutive values, and the
/// unknown is the density `r` of the cells sitting on the lower of them.
/// This density is the only one that crosses zero inside the bracket, and
/// the mass is close to linear in it.
fn mass_balance(
    phi: &[f64],
    beta: f64,
    m: f64,
    cell: f64,
    rho_inf: f64,
    tol: f64,
) -> Result<(f64, Vec<f64>), StationaryError> {
    let n = phi.len();
    if n == 0 || phi.iter().any(|v| !v.is_finite()) {
        return Err(StationaryError::BisectFailed("potential is not finite".into()));
    }
    let a = (m - 1.0) * beta / m;
    let p = 1.0 / (m - 1.0);
    let mut sorted = phi.to_vec();
    sorted.sort_by(f64::total_cmp);

    // Mass with C placed at the j-th smallest value of φ.
    let level_mass = |j: usize| -> f64 {
        let top = sorted[j];
        cell * sorted[..j].iter().map(|&f| pow_real(a * (top - f), p)).sum::<f64>()
    };
    let (mut lo, mut hi) = (0usize, n);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if level_mass(mid) >= 1.0 {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    // Level lies in [sorted[j], upper).
    let (j, y_max) = if lo == n {
        let upper = sorted[n - 1] + m / ((m - 1.0) * beta) * pow_real(rho_inf, m - 1.0);
        (n - 1, upper - sorted[n - 1])
    } else {
        let j = lo.saturating_sub(1);
        (j, sorted[lo] - sorted[j])
    };
    let base = sorted[j];
    let deeper: Vec<f64> = sorted[..j].iter().filter(|&&f| f < base).map(|&f| base - f).collect();
    let ties = sorted.iter().filter(|&&f| f == base).count() as f64;
    let y_of = |r: f64| pow_real(r, m - 1.0) / a;
    let mass = |r: f64| {
        let y = y_of(r);
        cell * (deeper.iter().map(|&d| pow_real(a * (d + y), p)).sum::<f64>() + ties * r)
    };

    let mut r_hi = pow_real(a * y_max, p);
    let mut g_hi = mass(r_hi) - 1.0;
    let mut grow = 0;
    while g_hi < 0.0 {
        // Only reachable through rounding in the upper bound.
        r_hi *= 1.0 + 1e-12 + f64::EPSILON * grow as f64;
        g_hi = mass(r_hi) - 1.0;
        grow += 1;
        if grow > 100 {
            return Err(StationaryError::BisectFailed("could not bracket the mass".into()));
        }
    }
    let mut r_lo = 0.0;
    let mut g_lo = mass(0.0) - 1.0;
    if g_lo > 0.0 {
        return Err(StationaryError::BisectFailed("mass is not monotone in C".into()));
    }
    let (mut f_lo, mut f_hi) = (g_lo, g_hi);
    let mut side = 0i8;
    let mut r = r_hi;
    if g_lo == 0.0 {
        r = 0.0;
    } else if g_hi != 0.0 {
        // Illinois variant of regula falsi with periodic bisection.
        for it in 0..300 {
            let mut c = if it % 8 == 7 { 0.5 * (r_lo + r_hi) } else { (r_lo * f_hi - r_hi * f_lo) / (f_hi - f_lo) };
            if !(c > r_lo && c < r_hi) {
                c = 0.5 * (r_lo + r_hi);
            }
            if c <= r_lo || c >= r_hi {
                break;
            }
            let gc = mass(c) - 1.0;
            if gc == 0.0 {
                r_lo = c;
                g_lo = 0.0;
                r_hi = c;
                g_hi = 0.0;
                break;
            }
            if gc < 0.0 {
                if gc < g_lo {
                    return Err(StationaryError::BisectFailed("mass is not monotone in C".into()));
                }
                r_lo = c;
                g_lo = gc;
                f_lo = gc;
                if side == -1 {
                    f_hi *= 0.5;
                }
                side = -1;
            } else {
                r_hi = c;
                g_hi = gc;
                f_hi = gc;
                if side == 1 {
                    f_lo *= 0.5;
                }
                side = 1;
            }
        }
        r = if g_lo.abs() <= g_hi.abs() { r_lo } else { r_hi };
    }
    let defect = mass(r) - 1.0;
    if defect.abs() > tol {
        return Err(StationaryError::BisectFailed(format!("mass defect {defect:e} exceeds {tol:e}")));
    }
    let y = y_of(r);
    let rho = phi
        .iter()
        .map(|&f| {
            if f < base {
                pow_real(a * ((base - f) + y), p)
            } else if f == base {
                r
            } else {
                0.0
            }
        })
        .collect();
    Ok((base + y, rho))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solution {
    #[serde(skip)]
    pub state: Field,
    pub constant: f64,
    /// Sup-norm defect of the self-consistency equation on the support.
    pub residual: f64,
    pub iterations: usize,
    pub newton_steps: usize,
    pub change: f64,
}

/// Fixed-point solver for one parameter set.
#[derive(Debug, Clone)]
pub struct FixedPointSolver {
    functional: Functional,
    config: FixedPointConfig,
}

struct Image {
    rho: Vec<f64>,
    coeffs: Vec<f64>,
    constant: f64,
}

impl FixedPointSolver {
    pub fn new(w: &Potential, grid: &Grid, beta: f64, m: f64, config: FixedPointConfig) -> Result<Self, StationaryError> {
        if grid.d() != 1 {
            return Err(StationaryError::UnsupportedDimension(grid.d()));
        }
        if !(m > 1.0 && m.is_finite()) {
            return Err(EnergyError::InvalidExponent(m).into());
        }
        config.validate()?;
        Ok(Self { functional: Functional::new(w, grid, beta, m)?, config })
    }

    pub fn functional(&self) -> &Functional {
        &self.functional
    }

    pub fn config(&self) -> &FixedPointConfig {
        &self.config
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self, StationaryError> {
        Ok(Self { functional: self.functional.with_beta(beta)?, config: self.config })
    }

    fn grid(&self) -> &Grid {
        self.functional.grid()
    }

    /// `T` evaluated on coefficients `a`.
    fn image(&self, a: &[f64], phi: &mut [f64]) -> Result<Image, StationaryError> {
        let conv = self.functional.convolution();
        conv.potential_from_coefficients(a, phi);
        let (beta, m) = (self.functional.beta(), self.functional.m());
        let grid = self.grid();
        let (constant, rho) = mass_balance(phi, beta, m, grid.cell_volume(), grid.torus.rho_inf(), self.config.bisect_tol)?;
        let coeffs = conv.coefficients(&rho);
        Ok(Image { rho, coeffs, constant })
    }

    /// Translation tangent in coefficient space.
    fn gauge(&self, a: &[f64]) -> Vec<f64> {
        let modes = self.functional.convolution().active_modes();
        let l = self.grid().l();
        let mut t = vec![0.0; a.len()];
        for (i, k) in modes.iter().enumerate() {
            let kk = k.components()[0];
            if kk > 0 {
                if let Some(j) = modes.iter().position(|q| q.components()[0] == -kk) {
                    let omega = 2.0 * std::f64::consts::PI * kk as f64 / l;
                    t[i] = -omega * a[j];
                    t[j] = omega * a[i];
                }
            }
        }
        t
    }

    /// Central-difference Jacobian of `a ↦ G(a) − a`.
    fn jacobian(&self, a: &[f64], phi: &mut [f64]) -> Result<DMatrix<f64>, StationaryError> {
        let n = a.len();
        let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs())) + self.grid().torus.rho_inf() * self.grid().l().sqrt();
        let eps = 1e-6 * scale;
        let mut jac = DMatrix::zeros(n, n);
        let mut probe = a.to_vec();
        for j in 0..n {
            probe[j] = a[j] + eps;
            let plus = self.image(&probe, phi)?.coeffs;
            probe[j] = a[j] - eps;
            let minus = self.image(&probe, phi)?.coeffs;
            probe[j] = a[j];
            for i in 0..n {
                jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * eps) - if i == j { 1.0 } else { 0.0 };
            }
        }
        Ok(jac)
    }

    fn newton_direction(&self, a: &[f64], r: &[f64], jac: &DMatrix<f64>) -> Option<Vec<f64>> {
        let n = a.len();
        let t = self.gauge(a);
        let mut big = DMatrix::zeros(n + 1, n);
        big.view_mut((0, 0), (n, n)).copy_from(jac);
        let tn = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        if tn > 0.0 {
            let jn = jac.norm().max(1.0);
            for j in 0..n {
                big[(n, j)] = jn * t[j] / tn;
            }
        }
        let mut rhs = DVector::zeros(n + 1);
        for i in 0..n {
            rhs[i] = -r[i];
        }
        let svd = big.svd(true, true);
        let cutoff = 1e-12 * svd.singular_values.max();
        let delta = svd.solve(&rhs, cutoff).ok()?;
        let out: Vec<f64> = delta.iter().copied().collect();
        out.iter().all(|v| v.is_finite()).then_some(out)
    }

    /// Runs the damped iteration from `init`.
    pub fn solve(&self, init: &Field) -> Result<Solution, StationaryError> {
        if init.grid() != self.grid() {
            return Err(SpectralError::GridMismatch("initial density and solver grids differ".into()).into());
        }
        let conv = self.functional.convolution();
        let cfg = self.config;
        let n = init.values().len();
        let mut phi = vec![0.0; n];

        let mut a = conv.coefficients(init.values());
        let mut img = self.image(&a, &mut phi)?;
        let mut prev_rho = init.values().to_vec();
        let mut theta = cfg.theta;
        let mut damp = vec![1.0; a.len()];
        let mut prev_r: Option<(Vec<f64>, f64)> = None;
        let mut contracting = 0usize;
        let mut newton_steps = 0;
        let mut change = f64::INFINITY;
        let basis_sup = (2.0 / self.grid().l()).sqrt();

        for it in 1..=cfg.max_iter {
            change = sup_diff(&img.rho, &prev_rho);
            let r: Vec<f64> = img.coeffs.iter().zip(&a).map(|(g, x)| g - x).collect();
            let rn = norm(&r);
            // A slow iteration can take tiny steps far from a fixed point,
            // so the undamped defect must be small as well.
            if change <= cfg.tol && rn * basis_sup <= cfg.tol {
                return self.finish(img, it, newton_steps, change);
            }

            if let Some((pr, pn)) = &prev_r {
                if rn < *pn {
                    contracting += 1;
                    theta = (theta * 1.2).min(cfg.theta);
                } else {
                    contracting = 0;
                    let dot: f64 = r.iter().zip(pr).map(|(x, y)| x * y).sum();
                    if dot < 0.0 {
                        theta = (theta * 0.5).max(1e-6);
                    }
                }
            }
            prev_r = Some((r.clone(), rn));

            let refresh = !a.is_empty() && (it % 10 == 1 || (cfg.newton && contracting >= 3));
            let mut jac = None;
            if refresh {
                let j = self.jacobian(&a, &mut phi)?;
                for (s, d) in damp.iter_mut().enumerate() {
                    // diagonal of G' is jac + 1
                    let g = j[(s, s)] + 1.0;
                    *d = 1.0 / (1.0 - g).max(1.0);
                }
                jac = Some(j);
            }

            let mut next: Option<(Vec<f64>, Image)> = None;
            if cfg.newton && contracting >= 3 {
                if let Some(delta) = jac.as_ref().and_then(|j| self.newton_direction(&a, &r, j)) {
                    for frac in [1.0, 0.5] {
                        let cand: Vec<f64> = a.iter().zip(&delta).map(|(x, d)| x + frac * d).collect();
                        let ci = self.image(&cand, &mut phi)?;
                        let cr: Vec<f64> = ci.coeffs.iter().zip(&cand).map(|(g, x)| g - x).collect();
                        if norm(&cr) < 0.9 * rn {
                            next = Some((cand, ci));
                            newton_steps += 1;
                            break;
                        }
                    }
                }
            }
            let (na, ni) = match next {
                Some(v) => v,
                None => {
                    let cand: Vec<f64> = a
                        .iter()
                        .zip(&r)
                        .zip(&damp)
                        .map(|((x, d), s)| x + theta * s * d)
                        .collect();
                    let ci = self.image(&cand, &mut phi)?;
                    (cand, ci)
                }
            };
            prev_rho = std::mem::replace(&mut img, ni).rho;
            a = na;
        }
        let residual = self.functional.stationarity(&img.rho).residual;
        Err(StationaryError::NoConvergence {
            iterations: cfg.max_iter,
            change,
            residual,
            last: Box::new(Field::new(*self.grid(), normalise(img.rho, self.grid()))?),
        })
    }

    fn finish(&self, img: Image, iterations: usize, newton_steps: usize, change: f64) -> Result<Solution, StationaryError> {
        let rho = normalise(img.rho, self.grid());
        let residual = self.functional.stationarity(&rho).residual;
        Ok(Solution {
            state: Field::density(*self.grid(), rho)?,
            constant: img.constant,
            residual,
            iterations,
            newton_steps,
            change,
        })
    }
}

fn normalise(mut rho: Vec<f64>, grid: &Grid) -> Vec<f64> {
    let mass = grid.cell_volume() * rho.iter().sum::<f64>();
    if mass > 0.0 {
        rho.iter_mut().for_each(|v| *v /= mass);
    }
    rho
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `ρ + kick·ρ_∞·e_k/N_k`, clipped at zero and renormalised.
pub fn kicked(rho: &Field, k: &Mode, kick: f64) -> Result<Field, StationaryError> {
    let grid = *rho.grid();
    let e = grid.sample_mode(k)?;
    let scale = kick * grid.torus.rho_inf() / grid.torus.norm_const(k);
    let values: Vec<f64> = rho.values().iter().zip(&e).map(|(r, b)| (r + scale * b).max(0.0)).collect();
    Ok(Field::normalized_density(grid, values)?)
}

/// Mode used for kicks: `k♯` when it exists, the first mode otherwise.
pub fn kick_mode(w: &Potential) -> Mode {
    dominant_mode(w, DEFAULT_K_MAX)
        .map(|r| r.k_sharp)
        .unwrap_or_else(|_| {
            let mut k = vec![0; w.torus().d];
            k[0] = 1;
            Mode::new(k)
        })
}

pub fn solve(w: &Potential, beta: f64, m: f64, init: &Field, config: &FixedPointConfig) -> Result<Solution, StationaryError> {
    FixedPointSolver::new(w, init.grid(), beta, m, *config)?.solve(init)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchPoint {
    pub beta: f64,
    #[serde(skip)]
    pub state: Field,
    pub converged: bool,
    pub residual: f64,
    pub iterations: usize,
    pub sup_norm: f64,
    pub min_rho: f64,
    pub f_branch: f64,
    pub f_flat: f64,
    pub support_fraction: f64,
    /// Distance to the flat state in sup norm.
    pub amplitude: f64,
    pub fold: bool,
}

impl BranchPoint {
    pub fn from_state(functional: &Functional, state: Field, converged: bool, iterations: usize) -> Self {
        let st = functional.stationarity(state.values());
        Self {
            beta: functional.beta(),
            converged,
            residual: st.residual,
            iterations,
            sup_norm: state.sup_norm(),
            min_rho: state.min(),
            f_branch: functional.energy(state.values()).total,
            f_flat: functional.flat_energy().total,
            support_fraction: st.support_fraction,
            amplitude: state.dist_from_flat(),
            fold: false,
            state,
        }
    }

    pub fn is_flat(&self) -> bool {
        self.amplitude <= FLAT_TOL * self.state.grid().torus.rho_inf().max(1.0)
    }
}

/// States within this sup distance of `ρ_∞` count as flat.
pub const FLAT_TOL: f64 = 1e-6;

/// Warm-started continuation over `betas` starting from the flat state.
pub fn continue_branch(
    w: &Potential,
    grid: &Grid,
    m: f64,
    betas: &[f64],
    config: &FixedPointConfig,
) -> Result<Vec<BranchPoint>, StationaryError> {
    continue_from(w, grid, m, betas, config, Field::flat(*grid))
}

/// Continuation starting from a given state.
pub fn continue_from(
    w: &Potential,
    grid: &Grid,
    m: f64,
    betas: &[f64],
    config: &FixedPointConfig,
    start: Field,
) -> Result<Vec<BranchPoint>, StationaryError> {
    let sorted = betas.windows(2).all(|p| p[0] <= p[1]) || betas.windows(2).all(|p| p[0] >= p[1]);
    if !sorted {
        return Err(StationaryError::InvalidConfig("beta grid must be sorted".into()));
    }
    let Some(&first) = betas.first() else {
        return Ok(Vec::new());
    };
    let k = kick_mode(w);
    let base = FixedPointSolver::new(w, grid, first, m, *config)?;
    let mut out: Vec<BranchPoint> = Vec::with_capacity(betas.len());
    let mut warm = start;
    for &beta in betas {
        let solver = base.with_beta(beta)?;
        let init = kicked(&warm, &k, config.kick)?;
        let point = match solver.solve(&init) {
            Ok(sol) => {
                let p = BranchPoint::from_state(solver.functional(), sol.state, true, sol.iterations);
                warm = p.state.clone();
                p
            }
            Err(StationaryError::NoConvergence { iterations, last, .. }) => {
                BranchPoint::from_state(solver.functional(), *last, false, iterations)
            }
            Err(e) => return Err(e),
        };
        out.push(point);
    }
    mark_folds(&mut out);
    Ok(out)
}

fn mark_folds(points: &mut [BranchPoint]) {
    for i in 1..points.len() {
        let (prev, cur) = (&points[i - 1], &points[i]);
        let failed = !cur.converged && prev.converged;
        let collapsed = cur.converged && prev.converged && !prev.is_flat() && cur.is_flat();
        if failed || collapsed {
            points[i].fold = true;
        }
    }
}

pub const BRANCH_CSV_HEADER: &str = "beta,sup_norm,F_branch,F_flat,residual,min_rho,support_fraction,converged";

pub fn branch_csv<'a>(points: impl IntoIterator<Item = &'a BranchPoint>) -> String {
    let mut out = format!("{BRANCH_CSV_HEADER}\n");
    for p in points {
        let _ = writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            p.beta, p.sup_norm, p.f_branch, p.f_flat, p.residual, p.min_rho, p.support_fraction, p.converged
        );
    }
    out
}
