//! Locating and classifying phase transitions from two-way β sweeps, the
//! degenerate `m = 2` family, and a rule-based predictor.

use std::fmt::Write;

use serde::Serialize;
use thiserror::Error;

use crate::bifurcation::{beta_sharp, BifurcationError};
use crate::energy::{EnergyBreakdown, EnergyError, Functional};
use crate::potential::{check_m4_conditions, dominant_mode, find_delta_star, h_stability, Potential, PotentialError, DEFAULT_K_MAX};
use crate::spectral::{Field, Grid, SpectralError};
use crate::stationary::{continue_from, kick_mode, kicked, BranchPoint, FixedPointConfig, BRANCH_CSV_HEADER, FixedPointSolver, StationaryError, FLAT_TOL};

/// Energy gap below which the flat state still counts as optimal.
pub const ENERGY_TOL: f64 = 1e-8;
/// Jump threshold, relative to `ρ_∞`, for a discontinuous call.
pub const JUMP_FRACTION: f64 = 0.1;
/// Smallest amplitude exponent accepted as a continuous onset.
pub const MIN_EXPONENT: f64 = 0.25;
/// Number of points above `β_c` used for the amplitude fit.
pub const FIT_POINTS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransitionError {
    #[error(transparent)]
    Stationary(#[from] StationaryError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Bifurcation(#[from] BifurcationError),
    #[error("no energy crossing found on the sweep")]
    NoTransitionDetected,
    #[error("classification inconclusive: {0}")]
    Inconclusive(String),
    #[error("beta grid must be ascending with at least two points")]
    InvalidGrid,
    #[error("α = {alpha} outside [0, {max}]: ρ_α is not a density")]
    NotADensity { alpha: f64, max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Direction {
    Ascending,
    Descending,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub beta: f64,
    pub sup_norm: f64,
    #[serde(rename = "F_branch")]
    pub f_branch: f64,
    #[serde(rename = "F_flat")]
    pub f_flat: f64,
    pub residual: f64,
    pub min_rho: f64,
    pub support_fraction: f64,
    pub converged: bool,
    pub amplitude: f64,
    pub source: Direction,
    #[serde(skip)]
    pub state: Field,
}

impl SweepRecord {
    fn from_point(p: &BranchPoint, source: Direction) -> Self {
        Self {
            beta: p.beta,
            sup_norm: p.sup_norm,
            f_branch: p.f_branch,
            f_flat: p.f_flat,
            residual: p.residual,
            min_rho: p.min_rho,
            support_fraction: p.support_fraction,
            converged: p.converged,
            amplitude: p.amplitude,
            source,
            state: p.state.clone(),
        }
    }

    pub fn gap(&self) -> f64 {
        self.f_branch - self.f_flat
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sweep {
    pub m: f64,
    /// Merged records, ascending in β.
    pub records: Vec<SweepRecord>,
    #[serde(skip)]
    pub ascending: Vec<BranchPoint>,
    #[serde(skip)]
    pub descending: Vec<BranchPoint>,
    /// Largest amplitude difference between the two directions at a β where
    /// both converged.
    pub hysteresis: f64,
    /// `min(F_branch, F_flat) − F_flat` never increases along the grid and
    /// the flat state never wins again once it has lost.
    pub envelope_monotone: bool,
}

/// Runs warm-started continuation up and down `betas` and keeps the lower
/// energy state at every β.
pub fn sweep(
    w: &Potential,
    grid: &Grid,
    m: f64,
    betas: &[f64],
    config: &FixedPointConfig,
) -> Result<Sweep, TransitionError> {
    if betas.len() < 2 || !betas.windows(2).all(|p| p[0] < p[1]) {
        return Err(TransitionError::InvalidGrid);
    }
    let down_grid: Vec<f64> = betas.iter().rev().copied().collect();
    let flat = Field::flat(*grid);
    let (up, down) = rayon::join(
        || continue_from(w, grid, m, betas, config, flat.clone()),
        || continue_from(w, grid, m, &down_grid, config, flat.clone()),
    );
    let up = up?;
    let mut down = down?;
    down.reverse();

    let mut records = Vec::with_capacity(betas.len());
    let mut hysteresis: f64 = 0.0;
    for (a, d) in up.iter().zip(&down) {
        if a.converged && d.converged {
            hysteresis = hysteresis.max((a.amplitude - d.amplitude).abs());
        }
        let pick_down = match (a.converged, d.converged) {
            (true, false) => false,
            (false, true) => true,
            _ => d.f_branch < a.f_branch,
        };
        records.push(if pick_down {
            SweepRecord::from_point(d, Direction::Descending)
        } else {
            SweepRecord::from_point(a, Direction::Ascending)
        });
    }
    let envelope_monotone = envelope_is_monotone(&records);
    Ok(Sweep { m, records, ascending: up, descending: down, hysteresis, envelope_monotone })
}

/// Merged records in the branch CSV layout.
pub fn records_csv(records: &[SweepRecord]) -> String {
    let mut out = format!("{BRANCH_CSV_HEADER}\n");
    for r in records {
        let _ = writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            r.beta, r.sup_norm, r.f_branch, r.f_flat, r.residual, r.min_rho, r.support_fraction, r.converged
        );
    }
    out
}

fn envelope_is_monotone(records: &[SweepRecord]) -> bool {
    let mut last = f64::INFINITY;
    let mut lost = false;
    for r in records.iter().filter(|r| r.converged) {
        let env = r.gap().min(0.0);
        if env > last + ENERGY_TOL {
            return false;
        }
        let wins = r.gap() < -ENERGY_TOL;
        if lost && !wins {
            return false;
        }
        lost |= wins;
        last = env;
    }
    true
}

/// Everything needed to refine a bracket by extra solves.
#[derive(Debug, Clone)]
pub struct Refinement<'a> {
    pub potential: &'a Potential,
    pub grid: &'a Grid,
    pub m: f64,
    pub config: FixedPointConfig,
    /// Target bracket width.
    pub width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    /// Amplitude of the winning state at `hi`.
    pub amplitude_hi: f64,
    /// Whether the crossing lies before the first grid point.
    pub below_grid: bool,
}

impl Bracket {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Containment with a relative slack for round-off in the grid.
    pub fn contains(&self, beta: f64) -> bool {
        let slack = 1e-9 * beta.abs();
        self.lo - slack <= beta && beta <= self.hi + slack
    }
}

/// The first grid interval on which `F_branch − F_flat` drops below
/// `−ENERGY_TOL`, optionally narrowed by bisection.
pub fn locate_beta_c(records: &[SweepRecord], refine: Option<&Refinement>) -> Result<Bracket, TransitionError> {
    let i = records
        .iter()
        .position(|r| r.converged && r.gap() < -ENERGY_TOL)
        .ok_or(TransitionError::NoTransitionDetected)?;
    let hi_rec = &records[i];
    let mut bracket = Bracket {
        lo: if i > 0 { records[i - 1].beta } else { hi_rec.beta },
        hi: hi_rec.beta,
        amplitude_hi: hi_rec.amplitude,
        below_grid: i == 0,
    };
    let Some(ctx) = refine else {
        return Ok(bracket);
    };
    if bracket.below_grid {
        return Ok(bracket);
    }
    let k = kick_mode(ctx.potential);
    let base = FixedPointSolver::new(ctx.potential, ctx.grid, bracket.hi, ctx.m, ctx.config)?;
    let mut warm = hi_rec.state.clone();
    while bracket.width() > ctx.width {
        let mid = bracket.midpoint();
        let solver = base.with_beta(mid)?;
        let init = kicked(&warm, &k, ctx.config.kick)?;
        let won = match solver.solve(&init) {
            Ok(sol) => {
                let f = solver.functional();
                let gap = f.energy(sol.state.values()).total - f.flat_energy().total;
                if gap < -ENERGY_TOL {
                    bracket.amplitude_hi = sol.state.dist_from_flat();
                    warm = sol.state;
                    true
                } else {
                    false
                }
            }
            Err(StationaryError::NoConvergence { .. }) => false,
            Err(e) => return Err(e.into()),
        };
        if won {
            bracket.hi = mid;
        } else {
            bracket.lo = mid;
        }
    }
    Ok(bracket)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TransitionKind {
    Continuous,
    Discontinuous,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionReport {
    pub beta_sharp: Option<f64>,
    pub beta_c_bracket: Option<(f64, f64)>,
    pub kind: TransitionKind,
    /// Amplitude `‖ρ − ρ_∞‖_∞` just above `β_c`.
    pub jump: Option<f64>,
    /// Fitted exponent of the amplitude against `β − β_♯`.
    pub exponent: Option<f64>,
    pub hysteresis: f64,
    pub prediction: Option<Prediction>,
}

/// Least-squares slope of `log a` against `log(β − β₀)`.
fn power_law_exponent(points: &[(f64, f64)], beta0: f64) -> Option<f64> {
    let xy: Vec<(f64, f64)> = points
        .iter()
        .filter(|(b, a)| *b > beta0 && *a > 0.0)
        .map(|(b, a)| ((b - beta0).ln(), a.ln()))
        .collect();
    if xy.len() < 3 {
        return None;
    }
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Classifies a located transition. `beta_sharp = None` marks an H-stable
/// potential.
pub fn classify_transition(
    sweep: &Sweep,
    bracket: Option<&Bracket>,
    beta_sharp: Option<f64>,
    rho_inf: f64,
) -> Result<TransitionReport, TransitionError> {
    let mut report = TransitionReport {
        beta_sharp,
        beta_c_bracket: bracket.map(|b| (b.lo, b.hi)),
        kind: TransitionKind::None,
        jump: None,
        exponent: None,
        hysteresis: sweep.hysteresis,
        prediction: None,
    };
    let Some(bracket) = bracket else {
        return Ok(report);
    };
    let above: Vec<(f64, f64)> = sweep
        .records
        .iter()
        .filter(|r| r.converged && r.beta > bracket.hi * (1.0 + 1e-12) && r.gap() < -ENERGY_TOL)
        .take(FIT_POINTS)
        .map(|r| (r.beta, r.amplitude))
        .collect();
    let jump = bracket.amplitude_hi;
    report.jump = Some(jump);
    let threshold = JUMP_FRACTION * rho_inf;
    let hysteretic = sweep.hysteresis > threshold;

    if let Some(bs) = beta_sharp.filter(|bs| bracket.contains(*bs)) {
        report.exponent = power_law_exponent(&above, bs);
        if !hysteretic {
            match report.exponent {
                Some(e) if e > MIN_EXPONENT => {
                    report.kind = TransitionKind::Continuous;
                    return Ok(report);
                }
                None if jump <= threshold => {
                    return Err(TransitionError::Inconclusive(format!(
                        "only {} converged points above the bracket",
                        above.len()
                    )));
                }
                _ => {}
            }
        }
    } else {
        report.exponent = power_law_exponent(&above, bracket.midpoint());
    }
    if jump > threshold || hysteretic {
        report.kind = TransitionKind::Discontinuous;
        Ok(report)
    } else {
        Err(TransitionError::Inconclusive(format!(
            "amplitude {jump:e} at the bracket is below the jump threshold and no power law fits"
        )))
    }
}

/// Sweep, bracket, classify and predict in one go.
pub fn analyze(
    w: &Potential,
    grid: &Grid,
    m: f64,
    betas: &[f64],
    config: &FixedPointConfig,
) -> Result<(Sweep, TransitionReport), TransitionError> {
    let sharp = match beta_sharp(w, m, DEFAULT_K_MAX) {
        Ok(b) => Some(b),
        Err(BifurcationError::NoTransition) => None,
        Err(e) => return Err(e.into()),
    };
    let s = sweep(w, grid, m, betas, config)?;
    let scale = sharp.unwrap_or(betas[betas.len() - 1]);
    let ctx = Refinement { potential: w, grid, m, config: *config, width: 1e-3 * scale };
    let bracket = match locate_beta_c(&s.records, Some(&ctx)) {
        Ok(b) => Some(b),
        Err(TransitionError::NoTransitionDetected) => None,
        Err(e) => return Err(e),
    };
    let mut report = classify_transition(&s, bracket.as_ref(), sharp, grid.torus.rho_inf())?;
    report.prediction = Some(predict(w, m)?);
    Ok((s, report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyMember {
    pub alpha: f64,
    #[serde(skip)]
    pub density: Field,
    pub beta: f64,
    pub energy: EnergyBreakdown,
    pub flat_energy: f64,
}

/// `ρ_α = ρ_∞ + α e_{k♯}` and its free energy at `m = 2`, `β = β_♯`.
pub fn m2_family(alpha: f64, w: &Potential, grid: &Grid) -> Result<FamilyMember, TransitionError> {
    let k = dominant_mode(w, DEFAULT_K_MAX)?.k_sharp;
    let max = 1.0 / (grid.torus.volume().sqrt() * k.theta());
    if !(0.0..=max * (1.0 + 1e-12)).contains(&alpha) {
        return Err(TransitionError::NotADensity { alpha, max });
    }
    let beta = beta_sharp(w, 2.0, DEFAULT_K_MAX)?;
    let density = Field::flat_plus_mode(*grid, &k, alpha)?;
    let f = Functional::new(w, grid, beta, 2.0)?;
    Ok(FamilyMember {
        alpha,
        beta,
        energy: f.energy(density.values()),
        flat_energy: f.flat_energy().total,
        density,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PredictedKind {
    None,
    Continuous,
    Discontinuous,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Confidence {
    Proven,
    Suggestive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub kind: PredictedKind,
    pub rule: String,
    pub anchor: String,
    pub confidence: Confidence,
    pub beta_sharp: Option<f64>,
    /// Set when `β_c` is known to equal `β_♯`.
    pub beta_c: Option<f64>,
    /// Upper bound `β_c ≤ β_♯` whenever the flat state can lose stability.
    pub beta_c_upper: Option<f64>,
}

/// Ordered rules: the first one that applies decides.
pub fn predict(w: &Potential, m: f64) -> Result<Prediction, TransitionError> {
    let mk = |kind, rule: &str, anchor: &str, confidence, sharp: Option<f64>, exact: bool| Prediction {
        kind,
        rule: rule.into(),
        anchor: anchor.into(),
        confidence,
        beta_sharp: sharp,
        beta_c: if exact { sharp } else { None },
        beta_c_upper: sharp,
    };
    if h_stability(w).is_stable() {
        return Ok(mk(
            PredictedKind::None,
            "h-stable",
            "an H-stable kernel has the flat state as unique minimiser for every beta",
            Confidence::Proven,
            None,
            false,
        ));
    }
    let sharp = beta_sharp(w, m, DEFAULT_K_MAX)?;
    if m == 2.0 {
        return Ok(mk(
            PredictedKind::Discontinuous,
            "m = 2",
            "at m = 2 the transition is discontinuous and happens exactly at the linear threshold",
            Confidence::Proven,
            Some(sharp),
            true,
        ));
    }
    if (2.0..=3.0).contains(&m) {
        return Ok(mk(
            PredictedKind::Discontinuous,
            "m in [2,3]",
            "for 2 <= m <= 3 every transition point is discontinuous",
            Confidence::Proven,
            Some(sharp),
            false,
        ));
    }
    if m == 4.0 {
        if let Ok(report) = check_m4_conditions(w, DEFAULT_K_MAX) {
            if report.holds() {
                return Ok(mk(
                    PredictedKind::Continuous,
                    "m = 4 with dominant harmonics",
                    "at m = 4 a unique dominant mode with strongly positive second and third harmonics gives a continuous transition at the linear threshold",
                    Confidence::Proven,
                    Some(sharp),
                    true,
                ));
            }
        }
    }
    if let Some(ds) = find_delta_star(w, DEFAULT_K_MAX)? {
        let (confidence, rule) = if ds.delta == 0.0 {
            (Confidence::Proven, "resonant dominant modes")
        } else {
            (Confidence::Suggestive, "near-resonant modes")
        };
        return Ok(mk(
            PredictedKind::Discontinuous,
            rule,
            "an additive triple among the (nearly) dominant modes drives a discontinuous transition",
            confidence,
            Some(sharp),
            false,
        ));
    }
    Ok(mk(
        PredictedKind::Unknown,
        "unstable kernel",
        "a negative mode guarantees a transition point no larger than the linear threshold",
        Confidence::Proven,
        Some(sharp),
        false,
    ))
}

/// Whether a prediction and a numerical classification contradict each other.
pub fn consistent(prediction: &Prediction, report: &TransitionReport) -> bool {
    let kind_ok = match (prediction.kind, report.kind) {
        (PredictedKind::Unknown, k) => k != TransitionKind::None,
        (PredictedKind::None, TransitionKind::None) => true,
        (PredictedKind::Continuous, TransitionKind::Continuous) => true,
        (PredictedKind::Discontinuous, TransitionKind::Discontinuous) => true,
        _ => false,
    };
    let bracket = report.beta_c_bracket.map(|(lo, hi)| Bracket { lo, hi, amplitude_hi: 0.0, below_grid: false });
    let exact_ok = match (prediction.beta_c, bracket) {
        (Some(b), Some(br)) => br.contains(b),
        (Some(_), None) => false,
        _ => true,
    };
    let upper_ok = match (prediction.beta_c_upper, bracket) {
        (Some(b), Some(br)) => br.lo <= b * (1.0 + 1e-9),
        _ => true,
    };
    kind_ok && exact_ok && upper_ok
}

/// `true` when a merged record is indistinguishable from the flat state.
pub fn is_flat(record: &SweepRecord, rho_inf: f64) -> bool {
    record.amplitude <= FLAT_TOL * rho_inf.max(1.0)
}
