//! The `m → ∞` limit. The limiting energy is the interaction energy on
//! densities bounded by one and `+∞` elsewhere. Sweeps in `m` approach its
//! minimisers through stationary states of the finite-`m` problem.

use serde::Serialize;
use thiserror::Error;

use crate::energy::{EnergyError, Functional};
use crate::potential::{h_stability, Potential};
use crate::spectral::{Convolution, Field, Grid, SpectralError};
use crate::stationary::{kick_mode, kicked, FixedPointConfig, FixedPointSolver, StationaryError};

/// Slack on the constraint `ρ ≤ 1` for round-off.
pub const CAP_TOL: f64 = 1e-12;
/// Allowed overshoot of the final sup norm above one.
pub const SUP_SLACK: f64 = 0.05;
/// Band around one that counts as the plateau.
pub const PLATEAU_BAND: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MesaError {
    #[error(transparent)]
    Stationary(#[from] StationaryError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("m list must be non-empty, ascending and above 1")]
    InvalidExponents,
    #[error("domain volume {0} does not exceed 1: no density fits under the cap")]
    Infeasible(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MesaCase {
    Infeasible,
    UniqueFlat,
    FlatOptimal,
    NontrivialOptimal,
}

/// Which minimisers the limiting problem has, from the volume of the domain
/// and the stability of `W`.
pub fn mesa_classify(w: &Potential) -> MesaCase {
    let volume = w.torus().volume();
    if (volume - 1.0).abs() <= CAP_TOL {
        MesaCase::UniqueFlat
    } else if volume < 1.0 {
        MesaCase::Infeasible
    } else if h_stability(w).is_stable() {
        // W ≡ 0 leaves every capped density optimal, the flat one included.
        MesaCase::FlatOptimal
    } else {
        MesaCase::NontrivialOptimal
    }
}

/// `½∬W(x−y)ρ(x)ρ(y)` when `max ρ ≤ 1`, `+∞` otherwise.
pub fn mesa_energy(rho: &Field, w: &Potential) -> Result<f64, MesaError> {
    if rho.max() > 1.0 + CAP_TOL {
        return Ok(f64::INFINITY);
    }
    let conv = Convolution::new(w, rho.grid())?;
    Ok(0.5 * conv.bilinear(rho.values()))
}

/// Euclidean projection onto unit-mass densities bounded by one:
/// `clamp(ρ + λ, 0, 1)` with `λ` fixed by the mass.
pub fn project_to_cap(rho: &Field) -> Result<Field, MesaError> {
    let grid = *rho.grid();
    let volume = grid.torus.volume();
    if volume < 1.0 - CAP_TOL {
        return Err(MesaError::Infeasible(volume));
    }
    let dv = grid.cell_volume();
    let mass = |lambda: f64| rho.values().iter().map(|r| (r + lambda).clamp(0.0, 1.0)).sum::<f64>() * dv;
    let (mut lo, mut hi) = (-rho.max(), 1.0 - rho.min());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    let lambda = 0.5 * (lo + hi);
    let values = rho.values().iter().map(|r| (r + lambda).clamp(0.0, 1.0)).collect();
    Ok(Field::new(grid, values)?)
}

/// Share of cells with `|ρ − 1| ≤ PLATEAU_BAND`.
pub fn plateau_fraction(rho: &Field) -> f64 {
    let v = rho.values();
    v.iter().filter(|r| (**r - 1.0).abs() <= PLATEAU_BAND).count() as f64 / v.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MesaRow {
    pub m: f64,
    pub sup_norm: f64,
    #[serde(rename = "F")]
    pub energy: f64,
    pub plateau_fraction: f64,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MesaResult {
    pub case: MesaCase,
    pub beta: f64,
    #[serde(skip)]
    pub minimiser: Option<Field>,
    /// Limiting energy of the projected final state; `None` stands for `+∞`.
    #[serde(rename = "F_inf")]
    pub f_inf: Option<f64>,
    pub m_sweep: Vec<MesaRow>,
    /// Every solve converged.
    pub complete: bool,
    /// The sup norms never increase along the sweep.
    pub sup_decreasing: bool,
    /// The final sup norm is within `SUP_SLACK` of one.
    pub sup_capped: bool,
    /// Change in plateau fraction over the last two exponents.
    pub plateau_change: Option<f64>,
}

impl MesaResult {
    pub fn plateau_stable(&self) -> bool {
        self.plateau_change.is_some_and(|c| c <= PLATEAU_BAND)
    }

    /// CSV of the final profile.
    pub fn profile_csv(&self) -> Option<String> {
        let rho = self.minimiser.as_ref()?;
        let mut out = String::from("x,rho\n");
        for (x, r) in rho.grid().axis().iter().zip(rho.values()) {
            out.push_str(&format!("{x:.16e},{r:.16e}\n"));
        }
        Some(out)
    }
}

/// Solves for stationary states at each `m`, warm starting from the previous
/// exponent, and evaluates the limiting energy of the last state.
pub fn mesa_sweep(
    w: &Potential,
    grid: &Grid,
    beta: f64,
    ms: &[f64],
    config: &FixedPointConfig,
) -> Result<MesaResult, MesaError> {
    if ms.is_empty() || ms[0] <= 1.0 || !ms.windows(2).all(|p| p[0] < p[1]) {
        return Err(MesaError::InvalidExponents);
    }
    let case = mesa_classify(w);
    let volume = grid.torus.volume();
    if volume < 1.0 - CAP_TOL {
        return Err(MesaError::Infeasible(volume));
    }
    let k = kick_mode(w);
    let mut warm = Field::flat(*grid);
    let mut rows = Vec::with_capacity(ms.len());
    let mut complete = true;
    let mut last = None;
    for &m in ms {
        let solver = FixedPointSolver::new(w, grid, beta, m, *config)?;
        let init = kicked(&warm, &k, config.kick)?;
        let (state, converged, residual) = match solver.solve(&init) {
            Ok(sol) => (sol.state, true, sol.residual),
            Err(StationaryError::NoConvergence { residual, last, .. }) => (*last, false, residual),
            Err(e) => return Err(e.into()),
        };
        let f = Functional::new(w, grid, beta, m)?;
        rows.push(MesaRow {
            m,
            sup_norm: state.sup_norm(),
            energy: f.energy(state.values()).total,
            plateau_fraction: plateau_fraction(&state),
            residual,
            converged,
        });
        if !converged {
            complete = false;
            break;
        }
        warm = state.clone();
        last = Some(state);
    }
    let sup_decreasing = rows.windows(2).all(|p| p[1].sup_norm <= p[0].sup_norm);
    let sup_capped = rows.last().is_some_and(|r| r.sup_norm <= 1.0 + SUP_SLACK);
    let plateau_change = (rows.len() >= 2).then(|| {
        let n = rows.len();
        (rows[n - 1].plateau_fraction - rows[n - 2].plateau_fraction).abs()
    });
    let minimiser = last.map(|s| project_to_cap(&s)).transpose()?;
    let f_inf = match &minimiser {
        Some(rho) => Some(mesa_energy(rho, w)?).filter(|f| f.is_finite()),
        None => None,
    };
    Ok(MesaResult {
        case,
        beta,
        minimiser,
        f_inf,
        m_sweep: rows,
        complete,
        sup_decreasing,
        sup_capped,
        plateau_change,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Torus;
    use std::f64::consts::PI;

    #[test]
    fn classification_cases() {
        let on = |l: f64| Potential::neg_cos(l).unwrap();
        assert_eq!(mesa_classify(&on(0.5)), MesaCase::Infeasible);
        assert_eq!(mesa_classify(&on(1.0)), MesaCase::UniqueFlat);
        assert_eq!(mesa_classify(&on(2.0)), MesaCase::NontrivialOptimal);
        assert_eq!(mesa_classify(&Potential::pos_cos(2.0).unwrap()), MesaCase::FlatOptimal);
        assert_eq!(mesa_classify(&Potential::zero(Torus::new(2, 1.5).unwrap())), MesaCase::FlatOptimal);
    }

    #[test]
    fn energy_examples() {
        let w = Potential::neg_cos(2.0).unwrap();
        let g = Grid::new(1, 2.0, 256).unwrap();
        assert!(mesa_energy(&Field::flat(g), &w).unwrap().abs() < 1e-15);
        let half = Field::density(g, g.axis().iter().map(|x| if *x < 1.0 { 1.0 } else { 0.0 }).collect()).unwrap();
        let x = g.axis();
        let h = g.h();
        let direct: f64 = x[..128]
            .iter()
            .flat_map(|a| x[..128].iter().map(move |b| -(PI * (a - b)).cos()))
            .sum::<f64>()
            * 0.5
            * h
            * h;
        let f = mesa_energy(&half, &w).unwrap();
        assert!((f - direct).abs() < 1e-13);
        assert!((f + 2.0 / (PI * PI)).abs() < 1e-4);
        let tall = Field::density(g, g.axis().iter().map(|x| if *x < 0.5 { 1.2 } else { 0.4 / 1.5 }).collect()).unwrap();
        assert_eq!(mesa_energy(&tall, &w).unwrap(), f64::INFINITY);
    }

    #[test]
    fn projection_respects_cap_and_mass() {
        let g = Grid::new(1, 4.0, 64).unwrap();
        let rho = Field::normalized_density(g, g.axis().iter().map(|x| (-(x - 2.0).powi(2) * 8.0).exp()).collect()).unwrap();
        assert!(rho.max() > 1.0);
        let p = project_to_cap(&rho).unwrap();
        assert!(p.max() <= 1.0);
        assert!((p.mass() - 1.0).abs() < 1e-12);
        let flat = Field::flat(g);
        assert!(project_to_cap(&flat).unwrap().dist_sup(&flat) < 1e-15);
    }

    #[test]
    fn stable_sweep_stays_flat() {
        let w = Potential::pos_cos(4.0).unwrap();
        let g = Grid::new(1, 4.0, 64).unwrap();
        let r = mesa_sweep(&w, &g, 1.0, &[4.0, 8.0], &FixedPointConfig::default()).unwrap();
        assert_eq!(r.case, MesaCase::FlatOptimal);
        assert!(r.complete);
        assert!(r.minimiser.unwrap().dist_from_flat() < 1e-8);
        assert!(r.f_inf.unwrap().abs() < 1e-12);
    }
}
