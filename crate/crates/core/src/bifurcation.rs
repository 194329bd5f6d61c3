//! Local bifurcation data at the flat state: the bifurcation points `β*`,
//! the linear-stability threshold `β_♯`, and the curvature `β''(0)` of the
//! bifurcating branch.

use serde::Serialize;
use thiserror::Error;

use crate::energy::pow_real;
use crate::potential::{dominant_mode, p2_p3, Potential, PotentialError};
use crate::spectral::{Grid, Mode, Torus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BifurcationError {
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error("mode {mode} has coefficient {coeff} >= 0 and does not bifurcate")]
    NotABifurcationMode { mode: Mode, coeff: f64 },
    #[error("potential is H-stable: the flat state never loses stability")]
    NoTransition,
    #[error("diffusion exponent must exceed 1, got {0}")]
    InvalidExponent(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BranchClass {
    Supercritical,
    Subcritical,
    Degenerate,
}

impl BranchClass {
    pub fn from_curvature(c: f64) -> Self {
        if c > 0.0 {
            BranchClass::Supercritical
        } else if c < 0.0 {
            BranchClass::Subcritical
        } else {
            BranchClass::Degenerate
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BifurcationPoint {
    pub k_star: Mode,
    pub beta_star: f64,
    pub curvature: f64,
    /// Curvature including the feedback of the `P₂(k*)` modes.
    pub coupled_curvature: f64,
    pub branch_class: BranchClass,
    /// Whether the ratio `Ŵ(k*)/Θ(k*)` is attained by `k*` alone among the
    /// scanned modes.
    pub conditions_ok: bool,
}

fn check_m(m: f64) -> Result<(), BifurcationError> {
    if m > 1.0 && m.is_finite() {
        Ok(())
    } else {
        Err(BifurcationError::InvalidExponent(m))
    }
}

/// `β* = −mρ_∞^{m−3/2}Θ(k*)/Ŵ(k*)`.
pub fn beta_star(w: &Potential, m: f64, k: &Mode) -> Result<f64, BifurcationError> {
    check_m(m)?;
    let coeff = w.coeff(k);
    if !(coeff < 0.0) {
        return Err(BifurcationError::NotABifurcationMode { mode: k.clone(), coeff });
    }
    let rho_inf = w.torus().rho_inf();
    Ok(-m * rho_inf.powf(m - 1.5) * k.theta() / coeff)
}

/// `β_♯ = −mρ_∞^{m−3/2}/min_k Ŵ(k)/Θ(k)`.
pub fn beta_sharp(w: &Potential, m: f64, k_max: i64) -> Result<f64, BifurcationError> {
    check_m(m)?;
    let report = match dominant_mode(w, k_max) {
        Ok(r) => r,
        Err(PotentialError::NoNegativeMode(_)) => return Err(BifurcationError::NoTransition),
        Err(e) => return Err(e.into()),
    };
    let rho_inf = w.torus().rho_inf();
    Ok(-m * rho_inf.powf(m - 1.5) / report.ratio)
}

/// `∫ e_k⁴` by the rectangle rule on a grid fine enough to be exact.
pub fn fourth_moment(k: &Mode, torus: &Torus) -> Result<f64, BifurcationError> {
    let n = ((8 * k.max_abs()) as usize).next_power_of_two().max(8);
    let grid = Grid::on(*torus, n).map_err(PotentialError::from)?;
    let e = grid.sample_mode(k).map_err(PotentialError::from)?;
    let value = grid.cell_volume() * e.iter().map(|v| v.powi(4)).sum::<f64>();
    if torus.d == 1 && k.is_cosine() {
        debug_assert!((value - 1.5 / torus.l).abs() <= 1e-12 * value);
    }
    Ok(value)
}

/// `β''(0) = β*(m−2)(m−3)/(3ρ_∞²)·∫e_{k*}⁴`.
pub fn curvature(w: &Potential, m: f64, k: &Mode) -> Result<f64, BifurcationError> {
    let bs = beta_star(w, m, k)?;
    let rho_inf = w.torus().rho_inf();
    let moment = fourth_moment(k, w.torus())?;
    Ok(bs * (m - 2.0) * (m - 3.0) / (3.0 * rho_inf * rho_inf) * moment)
}

/// `β''(0)` with the second-order response of the modes in `P₂(k*)`
/// included. It subtracts `m(m−2)²ρ_∞^{m−4} Σ_j c_j²/λ_j`, where
/// `λ_j = mρ_∞^{m−2}/β* + Ŵ(j)/N_j` is the flat-state Hessian on `e_j`.
pub fn coupled_curvature(w: &Potential, m: f64, k: &Mode) -> Result<f64, BifurcationError> {
    let base = curvature(w, m, k)?;
    let bs = beta_star(w, m, k)?;
    let torus = w.torus();
    let rho_inf = torus.rho_inf();
    let expansion = p2_p3(k, torus)?;
    let mut sum = 0.0;
    for (j, c) in &expansion.p2 {
        let lambda = m * pow_real(rho_inf, m - 2.0) / bs + w.coeff(j) / torus.norm_const(j);
        sum += c * c / lambda;
    }
    Ok(base - m * (m - 2.0) * (m - 2.0) * pow_real(rho_inf, m - 4.0) * sum)
}

/// Every negatively weighted mode up to `k_max`, sorted by `β*`.
pub fn enumerate_bifurcations(w: &Potential, m: f64, k_max: i64) -> Result<Vec<BifurcationPoint>, BifurcationError> {
    check_m(m)?;
    let candidates: Vec<(Mode, f64)> = w
        .modes()
        .filter(|(k, c)| *c < 0.0 && k.max_abs() <= k_max)
        .map(|(k, _)| (k.clone(), w.ratio(k)))
        .collect();
    let mut points = Vec::with_capacity(candidates.len());
    for (k, ratio) in &candidates {
        let twins = candidates
            .iter()
            .filter(|(_, r)| (r - ratio).abs() <= 1e-12 * ratio.abs())
            .count();
        let c = curvature(w, m, k)?;
        points.push(BifurcationPoint {
            k_star: k.clone(),
            beta_star: beta_star(w, m, k)?,
            curvature: c,
            coupled_curvature: coupled_curvature(w, m, k)?,
            branch_class: BranchClass::from_curvature(c),
            conditions_ok: twins == 1,
        });
    }
    points.sort_by(|a, b| a.beta_star.total_cmp(&b.beta_star).then_with(|| a.k_star.cmp(&b.k_star)));
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::DEFAULT_K_MAX;

    fn w1(modes: &[(i64, f64)]) -> Potential {
        Potential::from_modes(Torus::new(1, 1.0).unwrap(), modes.iter().map(|&(k, c)| (Mode::one(k), c))).unwrap()
    }

    #[test]
    fn thresholds_for_negative_cosine() {
        for l in [1.0, 10.0] {
            let w = Potential::neg_cos(l).unwrap();
            for m in [1.5, 2.0, 3.0, 4.0] {
                let expect = 2.0 * m * l.powf(1.0 - m);
                let bs = beta_sharp(&w, m, DEFAULT_K_MAX).unwrap();
                assert!((bs - expect).abs() <= 1e-13 * expect);
                let b = beta_star(&w, m, &Mode::one(1)).unwrap();
                assert!((b - expect).abs() <= 1e-13 * expect);
            }
        }
        let w = Potential::neg_cos(10.0).unwrap();
        assert!((beta_sharp(&w, 2.0, DEFAULT_K_MAX).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(
            beta_sharp(&Potential::pos_cos(1.0).unwrap(), 2.0, DEFAULT_K_MAX),
            Err(BifurcationError::NoTransition)
        );
        assert!(matches!(
            beta_star(&w1(&[(1, 1.0)]), 2.0, &Mode::one(1)),
            Err(BifurcationError::NotABifurcationMode { .. })
        ));
    }

    #[test]
    fn curvature_examples() {
        let w = Potential::neg_cos(1.0).unwrap();
        assert_eq!(curvature(&w, 2.0, &Mode::one(1)).unwrap(), 0.0);
        assert_eq!(curvature(&w, 3.0, &Mode::one(1)).unwrap(), 0.0);
        assert!((curvature(&w, 4.0, &Mode::one(1)).unwrap() - 8.0).abs() < 1e-12);
        assert!(curvature(&w, 2.5, &Mode::one(1)).unwrap() < 0.0);
        for l in [1.0, 3.0] {
            let t = Torus::new(1, l).unwrap();
            for k in 1..5 {
                assert!((fourth_moment(&Mode::one(k), &t).unwrap() - 1.5 / l).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn coupled_curvature_for_negative_cosine() {
        let w = Potential::neg_cos(1.0).unwrap();
        for m in [2.5, 3.0, 4.0, 6.0] {
            let c = coupled_curvature(&w, m, &Mode::one(1)).unwrap();
            let bs = 2.0 * m;
            assert!((c + bs * (m - 2.0) / 2.0).abs() < 1e-10, "m = {m}");
        }
    }

    #[test]
    fn branch_classes() {
        let w = Potential::neg_cos(1.0).unwrap();
        let expect = [
            (1.5, BranchClass::Supercritical),
            (2.0, BranchClass::Degenerate),
            (2.5, BranchClass::Subcritical),
            (3.0, BranchClass::Degenerate),
            (4.0, BranchClass::Supercritical),
        ];
        for (m, class) in expect {
            let pts = enumerate_bifurcations(&w, m, DEFAULT_K_MAX).unwrap();
            assert_eq!(pts.len(), 1);
            assert_eq!(pts[0].branch_class, class, "m = {m}");
        }
    }

    #[test]
    fn enumeration_examples() {
        let pts = enumerate_bifurcations(&w1(&[(1, -1.0), (2, -0.5), (3, -1.0 / 3.0), (4, -0.25)]), 2.0, 8).unwrap();
        assert_eq!(pts.len(), 4);
        assert!(pts.iter().all(|p| p.conditions_ok));
        assert!(pts.windows(2).all(|p| p[0].beta_star <= p[1].beta_star));
        let pts = enumerate_bifurcations(&w1(&[(1, -1.0), (2, -1.0)]), 2.0, 8).unwrap();
        assert_eq!(pts.len(), 2);
        assert!(pts.iter().all(|p| !p.conditions_ok));
    }
}
