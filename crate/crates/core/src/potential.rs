//! Interaction potentials given by their cosine coefficients, H-stability,
//! the dominant (destabilising) mode, and the mode conditions that decide
//! the character of a phase transition.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::spectral::{positive_modes, sign_vectors, Grid, Mode, SpectralError, Torus};

/// Default truncation for mode searches.
pub const DEFAULT_K_MAX: i64 = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("potential has no negative mode up to k_max = {0}")]
    NoNegativeMode(i64),
    #[error("invalid mode {0}: potentials use non-zero cosine modes only")]
    InvalidMode(Mode),
    #[error("mode {0} listed twice")]
    DuplicateMode(Mode),
    #[error("coefficient of mode {0} is not finite")]
    NonFinite(Mode),
    #[error("dominant mode is not unique: {0:?}")]
    NonUniqueDominantMode(Vec<Mode>),
    #[error("secondary mode {0} has a negative coefficient")]
    NegativeSecondaryMode(Mode),
    #[error("potential format: {0}")]
    Format(String),
}

/// Even, mean-zero interaction kernel `W(x) = Σ_{k ∈ N^d\{0}} Ŵ(k) e_k(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    torus: Torus,
    coeffs: BTreeMap<Mode, f64>,
    label: Option<String>,
}

impl Potential {
    pub fn from_modes(
        torus: Torus,
        modes: impl IntoIterator<Item = (Mode, f64)>,
    ) -> Result<Self, PotentialError> {
        let mut coeffs = BTreeMap::new();
        for (k, c) in modes {
            if k.d() != torus.d || k.is_zero() || !k.is_cosine() {
                return Err(PotentialError::InvalidMode(k));
            }
            if !c.is_finite() {
                return Err(PotentialError::NonFinite(k));
            }
            if coeffs.contains_key(&k) {
                return Err(PotentialError::DuplicateMode(k));
            }
            if c != 0.0 {
                coeffs.insert(k, c);
            }
        }
        Ok(Self { torus, coeffs, label: None })
    }

    /// `W(x) = -cos(2πx/L)` in one dimension, i.e. `Ŵ(1) = -√(L/2)`.
    pub fn neg_cos(l: f64) -> Result<Self, PotentialError> {
        let torus = Torus::new(1, l)?;
        let mut w = Self::from_modes(torus, [(Mode::one(1), -(l / 2.0).sqrt())])?;
        w.label = Some("neg_cos".into());
        Ok(w)
    }

    /// `W(x) = cos(2πx/L)`, an H-stable kernel.
    pub fn pos_cos(l: f64) -> Result<Self, PotentialError> {
        let torus = Torus::new(1, l)?;
        let mut w = Self::from_modes(torus, [(Mode::one(1), (l / 2.0).sqrt())])?;
        w.label = Some("pos_cos".into());
        Ok(w)
    }

    pub fn zero(torus: Torus) -> Self {
        Self { torus, coeffs: BTreeMap::new(), label: Some("zero".into()) }
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    /// `Ŵ(k)`; zero for unlisted modes.
    pub fn coeff(&self, k: &Mode) -> f64 {
        self.coeffs.get(&k.abs()).copied().unwrap_or(0.0)
    }

    pub fn modes(&self) -> impl Iterator<Item = (&Mode, f64)> {
        self.coeffs.iter().map(|(k, c)| (k, *c))
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Largest `|k|_∞` among listed modes.
    pub fn max_mode(&self) -> i64 {
        self.coeffs.keys().map(Mode::max_abs).max().unwrap_or(0)
    }

    /// `Ŵ(k)/Θ(k)`.
    pub fn ratio(&self, k: &Mode) -> f64 {
        self.coeff(k) / k.theta()
    }

    /// Point evaluation of the cosine series.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let l = self.torus.l;
        self.coeffs
            .iter()
            .map(|(k, c)| {
                let n_k = self.torus.norm_const(k);
                let prod: f64 = k
                    .components()
                    .iter()
                    .zip(x)
                    .map(|(&ki, &xi)| {
                        if ki == 0 {
                            1.0
                        } else {
                            (2.0 * std::f64::consts::PI * ki as f64 * xi / l).cos()
                        }
                    })
                    .product();
                c * n_k * prod
            })
            .sum()
    }

    /// `W` sampled at lattice offsets `r·h`, `r ∈ [0, n)^d`, row-major.
    pub fn sample_offsets(&self, grid: &Grid) -> Vec<f64> {
        let h = grid.h();
        let n = grid.n;
        match grid.d() {
            1 => (0..n).map(|r| self.eval(&[r as f64 * h])).collect(),
            _ => {
                let mut out = Vec::with_capacity(n * n);
                for a in 0..n {
                    for b in 0..n {
                        out.push(self.eval(&[a as f64 * h, b as f64 * h]));
                    }
                }
                out
            }
        }
    }

    /// `‖W₋‖_∞` estimated by dense sampling.
    pub fn negative_part_sup(&self) -> f64 {
        let per_dim = match self.torus.d {
            1 => (16 * self.max_mode() as usize).max(4096),
            _ => (16 * self.max_mode() as usize).clamp(256, 1024),
        };
        let h = self.torus.l / per_dim as f64;
        let mut worst: f64 = 0.0;
        match self.torus.d {
            1 => {
                for r in 0..per_dim {
                    worst = worst.max(-self.eval(&[r as f64 * h]));
                }
            }
            _ => {
                for a in 0..per_dim {
                    for b in 0..per_dim {
                        worst = worst.max(-self.eval(&[a as f64 * h, b as f64 * h]));
                    }
                }
            }
        }
        worst.max(0.0)
    }

    /// Parses the JSON potential format.
    pub fn from_json(value: &Value) -> Result<Self, PotentialError> {
        let obj = value
            .as_object()
            .ok_or_else(|| PotentialError::Format("potential must be a JSON object".into()))?;
        let l = obj
            .get("L")
            .ok_or_else(|| PotentialError::Format("missing key `L`".into()))?
            .as_f64()
            .ok_or_else(|| PotentialError::Format("`L` must be a number".into()))?;
        if let Some(name) = obj.get("named") {
            reject_unknown(obj, &["named", "L"])?;
            let name = name
                .as_str()
                .ok_or_else(|| PotentialError::Format("`named` must be a string".into()))?;
            return match name {
                "neg_cos" => Self::neg_cos(l),
                "pos_cos" => Self::pos_cos(l),
                "zero" => Ok(Self::zero(Torus::new(1, l)?)),
                other => Err(PotentialError::Format(format!("`named`: unknown potential `{other}`"))),
            };
        }
        reject_unknown(obj, &["L", "d", "modes"])?;
        let d = obj
            .get("d")
            .ok_or_else(|| PotentialError::Format("missing key `d`".into()))?
            .as_u64()
            .ok_or_else(|| PotentialError::Format("`d` must be a positive integer".into()))?
            as usize;
        let torus = Torus::new(d, l)?;
        let modes = obj
            .get("modes")
            .ok_or_else(|| PotentialError::Format("missing key `modes`".into()))?
            .as_array()
            .ok_or_else(|| PotentialError::Format("`modes` must be an array".into()))?;
        let mut parsed = Vec::with_capacity(modes.len());
        for (i, entry) in modes.iter().enumerate() {
            let row = entry
                .as_array()
                .filter(|r| r.len() == d + 1)
                .ok_or_else(|| {
                    PotentialError::Format(format!("`modes[{i}]` must be [k_1, .., k_d, coeff]"))
                })?;
            let mut k = Vec::with_capacity(d);
            for c in &row[..d] {
                let v = c.as_f64().filter(|v| v.fract() == 0.0).ok_or_else(|| {
                    PotentialError::Format(format!("`modes[{i}]`: indices must be integers"))
                })?;
                k.push(v as i64);
            }
            let coeff = row[d]
                .as_f64()
                .ok_or_else(|| PotentialError::Format(format!("`modes[{i}]`: coefficient must be a number")))?;
            parsed.push((Mode::new(k), coeff));
        }
        Self::from_modes(torus, parsed)
    }

    pub fn to_json(&self) -> Value {
        match self.label.as_deref() {
            Some(name @ ("neg_cos" | "pos_cos")) => json!({"named": name, "L": self.torus.l}),
            _ => {
                let modes: Vec<Value> = self
                    .coeffs
                    .iter()
                    .map(|(k, c)| {
                        let mut row: Vec<Value> = k.components().iter().map(|v| json!(v)).collect();
                        row.push(json!(c));
                        Value::Array(row)
                    })
                    .collect();
                json!({"L": self.torus.l, "d": self.torus.d, "modes": modes})
            }
        }
    }
}

fn reject_unknown(obj: &Map<String, Value>, allowed: &[&str]) -> Result<(), PotentialError> {
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(PotentialError::Format(format!("unknown key `{key}`")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum HStability {
    Stable,
    Unstable { witness: Mode, coeff: f64 },
}

impl HStability {
    pub fn is_stable(&self) -> bool {
        matches!(self, HStability::Stable)
    }
}

/// Stable iff every listed coefficient is non-negative. The witness is the
/// lexicographically first negative mode.
pub fn h_stability(w: &Potential) -> HStability {
    match w.modes().find(|(_, c)| *c < 0.0) {
        None => HStability::Stable,
        Some((k, c)) => HStability::Unstable { witness: k.clone(), coeff: c },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeReport {
    pub k_sharp: Mode,
    pub ratio: f64,
    pub unique: bool,
    /// Every mode attaining the minimum ratio.
    pub minimisers: Vec<Mode>,
    pub k_max: i64,
}

fn ties(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300)
}

/// Minimiser of `Ŵ(k)/Θ(k)` over `k ∈ N^d \ {0}`, `|k|_∞ ≤ k_max`.
pub fn dominant_mode(w: &Potential, k_max: i64) -> Result<ModeReport, PotentialError> {
    let mut best: Option<f64> = None;
    for (k, _) in w.modes().filter(|(k, c)| *c < 0.0 && k.max_abs() <= k_max) {
        let r = w.ratio(k);
        best = Some(best.map_or(r, |b: f64| b.min(r)));
    }
    let ratio = best.ok_or(PotentialError::NoNegativeMode(k_max))?;
    let minimisers: Vec<Mode> = w
        .modes()
        .filter(|(k, c)| *c < 0.0 && k.max_abs() <= k_max && ties(w.ratio(k), ratio))
        .map(|(k, _)| k.clone())
        .collect();
    Ok(ModeReport {
        k_sharp: minimisers[0].clone(),
        ratio,
        unique: minimisers.len() == 1,
        minimisers,
        k_max,
    })
}

/// `K^δ = {k : Ŵ(k)/Θ(k) ≤ min ratio + δ}` over all `|k|_∞ ≤ k_max`,
/// including modes whose coefficient is zero.
pub fn k_delta_set(w: &Potential, delta: f64, k_max: i64) -> Result<BTreeSet<Mode>, PotentialError> {
    let min = dominant_mode(w, k_max)?.ratio;
    let level = min + delta;
    let slack = 1e-12 * (1.0 + min.abs());
    Ok(positive_modes(w.torus().d, k_max)
        .into_iter()
        .filter(|k| w.ratio(k) <= level + slack)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaStar {
    pub delta: f64,
    /// `(k^a, k^b, k^c)` with `k^a = k^b + k^c`.
    pub triple: (Mode, Mode, Mode),
    pub k_max: i64,
}

/// Smallest `δ` on the ladder of distinct ratios at which `K^δ` contains an
/// additive triple. Only modes with `Ŵ(k) ≠ 0` are placed on the ladder.
pub fn find_delta_star(w: &Potential, k_max: i64) -> Result<Option<DeltaStar>, PotentialError> {
    let min = dominant_mode(w, k_max)?.ratio;
    let mut ladder: Vec<(f64, Mode)> = w
        .modes()
        .filter(|(k, _)| k.max_abs() <= k_max)
        .map(|(k, _)| (w.ratio(k), k.clone()))
        .collect();
    ladder.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    let mut members: BTreeSet<Mode> = BTreeSet::new();
    let mut i = 0;
    while i < ladder.len() {
        let level = ladder[i].0;
        while i < ladder.len() && ties(ladder[i].0, level) {
            members.insert(ladder[i].1.clone());
            i += 1;
        }
        if let Some(triple) = additive_triple(&members) {
            return Ok(Some(DeltaStar { delta: (level - min).max(0.0), triple, k_max }));
        }
    }
    Ok(None)
}

fn additive_triple(set: &BTreeSet<Mode>) -> Option<(Mode, Mode, Mode)> {
    for a in set {
        for b in set {
            if b > a {
                break;
            }
            let c = Mode::new(a.components().iter().zip(b.components()).map(|(x, y)| x - y).collect());
            if c <= *b && set.contains(&c) {
                return Some((a.clone(), b.clone(), c));
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrigExpansion {
    pub k: Mode,
    /// `P₂(k)` with coefficients `c_j`.
    pub p2: Vec<(Mode, f64)>,
    pub c0: f64,
    /// `P₃(k)` with coefficients `c_ℓ`.
    pub p3: Vec<(Mode, f64)>,
    pub ck: f64,
}

/// Expansions `e_k² = Σ_{P₂} c_j e_j + c_0 e_0` and
/// `e_k³ = Σ_{P₃} c_ℓ e_ℓ + c_k e_k` for `k ∈ N^d \ {0}`.
///
/// With `p` the number of non-zero components of `k`, `c_j = ρ_∞/N_j`,
/// `c_0 = ρ_∞/N_0` and `c_ℓ = ρ_∞ 2^{-p} 3^q`, `q` counting the non-zero
/// components where `ℓ_i = k_i`.
pub fn p2_p3(k: &Mode, torus: &Torus) -> Result<TrigExpansion, PotentialError> {
    if k.d() != torus.d || k.is_zero() || !k.is_cosine() {
        return Err(PotentialError::InvalidMode(k.clone()));
    }
    let rho_inf = torus.rho_inf();
    let active: Vec<usize> = (0..k.d()).filter(|&i| k.components()[i] != 0).collect();
    let p = active.len();

    let mut p2 = Vec::new();
    let mut p3 = Vec::new();
    for bits in 0..(1usize << p) {
        let mut j = vec![0; k.d()];
        let mut l = k.components().to_vec();
        let mut kept = 0;
        for (b, &i) in active.iter().enumerate() {
            if bits >> b & 1 == 1 {
                j[i] = 2 * k.components()[i];
                l[i] = 3 * k.components()[i];
            } else {
                kept += 1;
            }
        }
        let j = Mode::new(j);
        if !j.is_zero() {
            let c = rho_inf / torus.norm_const(&j);
            p2.push((j, c));
        }
        let l = Mode::new(l);
        if l != *k {
            let c = rho_inf * 0.5f64.powi(p as i32) * 3f64.powi(kept as i32);
            p3.push((l, c));
        }
    }
    p2.sort_by(|a, b| a.0.cmp(&b.0));
    p3.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(TrigExpansion {
        k: k.clone(),
        p2,
        c0: rho_inf / torus.norm_const(&Mode::zero(k.d())),
        p3,
        ck: rho_inf * 1.5f64.powi(p as i32),
    })
}

/// `⟨Π_f e_f, e_target⟩`, evaluated by the rectangle rule on a grid fine
/// enough to integrate the trigonometric product exactly.
pub fn product_coefficient(factors: &[Mode], target: &Mode, torus: &Torus) -> Result<f64, PotentialError> {
    let degree: i64 = factors.iter().map(Mode::max_abs).sum::<i64>() + target.max_abs();
    let n = ((2 * degree + 2) as usize).next_power_of_two().max(8);
    let grid = Grid::on(*torus, n)?;
    let mut prod = grid.sample_mode(target)?;
    for f in factors {
        let e = grid.sample_mode(f)?;
        prod.iter_mut().zip(&e).for_each(|(p, v)| *p *= v);
    }
    Ok(grid.cell_volume() * prod.iter().sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeMargin {
    pub mode: Mode,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct M4Report {
    pub k_sharp: Mode,
    pub a2: Vec<ModeMargin>,
    pub a3: Vec<ModeMargin>,
    pub a2_holds: bool,
    pub a3_holds: bool,
}

impl M4Report {
    pub fn holds(&self) -> bool {
        self.a2_holds && self.a3_holds
    }
}

/// Checks the quartic-order conditions under which `m = 4` has a continuous
/// transition: a unique dominant mode `k♯`, no other negative coefficient,
/// and `Ŵ(j)`, `Ŵ(ℓ)` large enough on `P₂(k♯)` and `P₃(k♯)`.
pub fn check_m4_conditions(w: &Potential, k_max: i64) -> Result<M4Report, PotentialError> {
    let report = dominant_mode(w, k_max)?;
    if !report.unique {
        return Err(PotentialError::NonUniqueDominantMode(report.minimisers));
    }
    let ks = report.k_sharp;
    if let Some((k, _)) = w.modes().find(|(k, c)| *c < 0.0 && **k != ks) {
        return Err(PotentialError::NegativeSecondaryMode(k.clone()));
    }
    let torus = *w.torus();
    let rho_inf = torus.rho_inf();
    let expansion = p2_p3(&ks, &torus)?;
    let card = (expansion.p2.len() + expansion.p3.len()) as f64;
    let w_sharp = w.coeff(&ks).abs();
    let theta_sharp = ks.theta();
    let orbit = ks.sign_orbit();
    let d = ks.d();

    // Signed images of the target under the product of sign flips.
    let flip_product = |sigmas: &[&Vec<i64>]| -> Vec<i64> {
        (0..d).map(|i| sigmas.iter().map(|s| s[i]).product()).collect()
    };
    let sigmas: Vec<Vec<i64>> = sign_vectors(d)
        .into_iter()
        .filter(|s| orbit.contains(&ks.flipped(s)))
        .fold(Vec::new(), |mut acc, s| {
            if !acc.iter().any(|t: &Vec<i64>| ks.flipped(t) == ks.flipped(&s)) {
                acc.push(s);
            }
            acc
        });

    let mut a2 = Vec::new();
    for (j, _) in &expansion.p2 {
        let mut c_max: f64 = 0.0;
        for s1 in &sigmas {
            for s2 in &sigmas {
                let target = j.flipped(&flip_product(&[s1, s2]));
                let c = product_coefficient(&[ks.flipped(s1), ks.flipped(s2)], &target, &torus)?;
                c_max = c_max.max(c * c);
            }
        }
        let rhs = 6.0 * j.theta().powi(5) * c_max * card / (rho_inf * theta_sharp) * w_sharp;
        let lhs = w.coeff(j);
        a2.push(ModeMargin { mode: j.clone(), lhs, rhs, margin: lhs - rhs, holds: lhs > rhs });
    }
    let mut a3 = Vec::new();
    for (l, _) in &expansion.p3 {
        let mut c_max: f64 = 0.0;
        for s1 in &sigmas {
            for s2 in &sigmas {
                for s3 in &sigmas {
                    let target = l.flipped(&flip_product(&[s1, s2, s3]));
                    let c = product_coefficient(
                        &[ks.flipped(s1), ks.flipped(s2), ks.flipped(s3)],
                        &target,
                        &torus,
                    )?;
                    c_max = c_max.max(c * c);
                }
            }
        }
        let rhs = 2.0 * l.theta().powi(9) * theta_sharp * c_max * card / (3.0 * rho_inf * rho_inf) * w_sharp;
        let lhs = w.coeff(l);
        a3.push(ModeMargin { mode: l.clone(), lhs, rhs, margin: lhs - rhs, holds: lhs > rhs });
    }
    let a2_holds = a2.iter().all(|m| m.holds);
    let a3_holds = a3.iter().all(|m| m.holds);
    Ok(M4Report { k_sharp: ks, a2, a3, a2_holds, a3_holds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::SQRT_2;

    fn t1(l: f64) -> Torus {
        Torus::new(1, l).unwrap()
    }

    fn w1(modes: &[(i64, f64)]) -> Potential {
        Potential::from_modes(t1(1.0), modes.iter().map(|&(k, c)| (Mode::one(k), c))).unwrap()
    }

    #[test]
    fn neg_cos_coefficient_matches_quadrature() {
        for l in [1.0, 2.0, 10.0] {
            let w = Potential::neg_cos(l).unwrap();
            let g = Grid::new(1, l, 64).unwrap();
            let samples: Vec<f64> = g.axis().iter().map(|&x| -(2.0 * std::f64::consts::PI * x / l).cos()).collect();
            let e1 = g.sample_mode(&Mode::one(1)).unwrap();
            let coef: f64 = g.h() * samples.iter().zip(&e1).map(|(a, b)| a * b).sum::<f64>();
            assert!((coef - w.coeff(&Mode::one(1))).abs() < 1e-13);
            assert!((w.eval(&[0.0]) + 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn stability_examples() {
        assert!(h_stability(&Potential::zero(t1(1.0))).is_stable());
        assert_eq!(
            h_stability(&Potential::neg_cos(1.0).unwrap()),
            HStability::Unstable { witness: Mode::one(1), coeff: -(0.5f64).sqrt() }
        );
        assert!(h_stability(&Potential::pos_cos(3.0).unwrap()).is_stable());
    }

    #[test]
    fn dominant_mode_examples() {
        let r = dominant_mode(&Potential::neg_cos(1.0).unwrap(), DEFAULT_K_MAX).unwrap();
        assert_eq!(r.k_sharp, Mode::one(1));
        assert!((r.ratio + 0.5).abs() < 1e-15);
        assert!(r.unique);

        let r = dominant_mode(&w1(&[(1, -1.0), (2, -1.0)]), DEFAULT_K_MAX).unwrap();
        assert_eq!(r.k_sharp, Mode::one(1));
        assert!(!r.unique);

        let r = dominant_mode(&w1(&[(3, -2.0), (1, -1.0)]), DEFAULT_K_MAX).unwrap();
        assert_eq!(r.k_sharp, Mode::one(3));

        assert_eq!(
            dominant_mode(&Potential::pos_cos(1.0).unwrap(), DEFAULT_K_MAX),
            Err(PotentialError::NoNegativeMode(DEFAULT_K_MAX))
        );
    }

    #[test]
    fn k_delta_examples() {
        let set = k_delta_set(&Potential::neg_cos(1.0).unwrap(), 0.0, 8).unwrap();
        assert_eq!(set.into_iter().collect::<Vec<_>>(), vec![Mode::one(1)]);
        let set = k_delta_set(&w1(&[(1, -1.0), (2, -1.0)]), 0.0, 8).unwrap();
        assert_eq!(set.len(), 2);
        let set = k_delta_set(&w1(&[(1, -1.0), (2, -0.9)]), 0.08, 8).unwrap();
        assert_eq!(set.into_iter().collect::<Vec<_>>(), vec![Mode::one(1), Mode::one(2)]);
    }

    #[test]
    fn delta_star_examples() {
        let ds = find_delta_star(&w1(&[(1, -1.0), (2, -1.0)]), DEFAULT_K_MAX).unwrap().unwrap();
        assert_eq!(ds.delta, 0.0);
        assert_eq!(ds.triple, (Mode::one(2), Mode::one(1), Mode::one(1)));
        assert_eq!(find_delta_star(&Potential::neg_cos(1.0).unwrap(), DEFAULT_K_MAX).unwrap(), None);
        assert_eq!(find_delta_star(&w1(&[(1, -1.0), (5, -1.0)]), 4).unwrap(), None);
        let ds = find_delta_star(&w1(&[(1, -1.0), (3, -0.5), (4, 2.0)]), 8).unwrap().unwrap();
        assert_eq!(ds.triple, (Mode::one(4), Mode::one(3), Mode::one(1)));
        assert!((ds.delta - (2.0 + 1.0) / SQRT_2).abs() < 1e-14);
    }

    #[test]
    fn trig_expansion_examples() {
        let e = p2_p3(&Mode::one(1), &t1(1.0)).unwrap();
        assert_eq!(e.p2.len(), 1);
        assert_eq!(e.p2[0].0, Mode::one(2));
        assert!((e.p2[0].1 - 1.0 / SQRT_2).abs() < 1e-15);
        assert_eq!(e.p3[0].0, Mode::one(3));
        let e = p2_p3(&Mode::one(2), &t1(1.0)).unwrap();
        assert_eq!(e.p2[0].0, Mode::one(4));
        assert_eq!(e.p3[0].0, Mode::one(6));
        assert!(p2_p3(&Mode::one(0), &t1(1.0)).is_err());
    }

    #[test]
    fn m4_conditions_examples() {
        let strong = w1(&[(1, -0.1), (2, 10.0), (3, 10.0)]);
        let r = check_m4_conditions(&strong, DEFAULT_K_MAX).unwrap();
        assert!(r.a2_holds && r.a3_holds);
        // closed forms at L = 1: thresholds 24·|Ŵ(1)| and (32/3)·|Ŵ(1)|
        assert!((r.a2[0].rhs - 2.4).abs() < 1e-12);
        assert!((r.a3[0].rhs - 3.2 / 3.0).abs() < 1e-12);

        let weak = w1(&[(1, -0.1)]);
        let r = check_m4_conditions(&weak, DEFAULT_K_MAX).unwrap();
        assert!(!r.a2_holds && !r.a3_holds);

        assert!(matches!(
            check_m4_conditions(&w1(&[(1, 0.1), (2, 10.0)]), DEFAULT_K_MAX),
            Err(PotentialError::NoNegativeMode(_))
        ));
        assert!(matches!(
            check_m4_conditions(&w1(&[(1, -1.0), (2, -0.1)]), DEFAULT_K_MAX),
            Err(PotentialError::NegativeSecondaryMode(_))
        ));
    }

    #[test]
    fn json_round_trip_and_errors() {
        let v: Value = serde_json::from_str(r#"{"L": 1.0, "d": 1, "modes": [[1, -0.1], [2, 10], [3, 10]]}"#).unwrap();
        let w = Potential::from_json(&v).unwrap();
        assert_eq!(w.coeff(&Mode::one(2)), 10.0);
        assert_eq!(Potential::from_json(&w.to_json()).unwrap(), w);

        let v: Value = serde_json::from_str(r#"{"named": "neg_cos", "L": 10}"#).unwrap();
        let w = Potential::from_json(&v).unwrap();
        assert_eq!(w, Potential::neg_cos(10.0).unwrap());

        for bad in [
            r#"{"named": "neg_cos", "L": 1, "extra": 1}"#,
            r#"{"named": "bogus", "L": 1}"#,
            r#"{"L": 1, "d": 1, "modes": [[0, 1.0]]}"#,
            r#"{"L": 1, "d": 1, "modes": [[-1, 1.0]]}"#,
            r#"{"L": 1, "d": 1, "modes": [[1.5, 1.0]]}"#,
            r#"{"L": 1, "d": 1, "modes": [[1, 1.0], [1, 2.0]]}"#,
            r#"{"L": 1, "modes": [[1, 1.0]]}"#,
        ] {
            let v: Value = serde_json::from_str(bad).unwrap();
            assert!(Potential::from_json(&v).is_err(), "{bad}");
        }
    }
}
