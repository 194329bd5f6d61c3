//! Command-line front end. A JSON run file plus flag overrides select the
//! potential, exponents, β values and solver settings; each subcommand writes
//! its files atomically under the output directory and prints one JSON
//! summary on standard output.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bifurcation::{beta_sharp, enumerate_bifurcations, BifurcationError};
use crate::dynamics::{evolve, EvolutionConfig};
use crate::mesa::mesa_sweep;
use crate::potential::{check_m4_conditions, dominant_mode, find_delta_star, h_stability, HStability, Potential, DEFAULT_K_MAX};
use crate::spectral::{Field, Grid, Mode};
use crate::stationary::{kick_mode, kicked, FixedPointConfig, FixedPointSolver, StationaryError};
use crate::transition::{analyze, predict, records_csv};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

const MODULES: [&str; 9] = ["spectral", "potential", "energy", "dynamics", "stationary", "bifurcation", "transition", "mesa", "cli"];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => EXIT_CONFIG,
            CliError::Solver(_) => EXIT_SOLVER,
            CliError::Io { .. } => EXIT_IO,
        }
    }

    fn config(path: &str, message: impl ToString) -> Self {
        CliError::Config { path: path.into(), message: message.to_string() }
    }

    fn solver(e: impl ToString) -> Self {
        CliError::Solver(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "aggdiff", version, about = "Aggregation-diffusion lab on the torus")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Diffusion exponents, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub m: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true)]
    pub beta_min: Option<f64>,
    #[arg(long, global = true)]
    pub beta_max: Option<f64>,
    #[arg(long, global = true)]
    pub beta_steps: Option<usize>,
    /// Cells per axis.
    #[arg(long, global = true)]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Stability, dominant mode and thresholds of the potential.
    ClassifyPotential,
    /// Bifurcation points and branch curvature at the flat state.
    Bifurcations,
    /// Stationary states by fixed-point iteration.
    Steady,
    /// Time evolution of the PDE.
    Evolve,
    /// Two-way β sweep with transition classification.
    Sweep,
    /// Rule-based transition prediction.
    Predict,
    /// Sweep in m towards the mesa limit.
    Mesa,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::ClassifyPotential => "classify-potential",
            Command::Bifurcations => "bifurcations",
            Command::Steady => "steady",
            Command::Evolve => "evolve",
            Command::Sweep => "sweep",
            Command::Predict => "predict",
            Command::Mesa => "mesa",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Exponents {
    One(f64),
    Many(Vec<f64>),
}

impl Exponents {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            Exponents::One(m) => vec![*m],
            Exponents::Many(ms) => ms.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaRange {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
    /// Read `min` and `max` as multiples of `β_♯`.
    #[serde(default)]
    pub relative: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaSpec {
    Value(f64),
    Range(BetaRange),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub potential: Value,
    pub m: Exponents,
    pub beta: BetaSpec,
    pub n: usize,
    /// Relative amplitude of the initial `e_{k♯}` perturbation.
    pub perturbation: f64,
    pub solver: FixedPointConfig,
    pub evolution: EvolutionConfig,
    pub out: Option<PathBuf>,
    pub mode: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            potential: json!({"named": "neg_cos", "L": 1.0}),
            m: Exponents::Many(vec![1.5, 2.0, 2.5, 3.0, 4.0]),
            beta: BetaSpec::Range(BetaRange { min: 0.8, max: 1.2, steps: 41, relative: true }),
            n: 128,
            perturbation: 1e-2,
            solver: FixedPointConfig::default(),
            evolution: EvolutionConfig::default(),
            out: None,
            mode: None,
        }
    }
}

/// Parses a run file, naming the offending key on failure.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::config(&path, e.into_inner())
    })
}

impl RunConfig {
    fn apply_flags(&mut self, cli: &Cli) {
        if let Some(ms) = &cli.m {
            self.m = Exponents::Many(ms.clone());
        }
        if let Some(n) = cli.n {
            self.n = n;
        }
        if let Some(out) = &cli.out {
            self.out = Some(out.clone());
        }
        if let Some(b) = cli.beta {
            self.beta = BetaSpec::Value(b);
        }
        if cli.beta_min.is_some() || cli.beta_max.is_some() || cli.beta_steps.is_some() {
            let mut range = match self.beta {
                BetaSpec::Range(r) => r,
                BetaSpec::Value(b) => BetaRange { min: b, max: b, steps: 1, relative: false },
            };
            if let Some(v) = cli.beta_min {
                range.min = v;
                range.relative = false;
            }
            if let Some(v) = cli.beta_max {
                range.max = v;
                range.relative = false;
            }
            if let Some(v) = cli.beta_steps {
                range.steps = v;
            }
            self.beta = BetaSpec::Range(range);
        }
        self.evolution.n = self.n;
    }

    fn validate(&self, command: Command) -> Result<(), CliError> {
        if let Some(mode) = &self.mode {
            if mode != command.name() {
                return Err(CliError::config("mode", format!("run file is for `{mode}`, not `{}`", command.name())));
            }
        }
        let ms = self.m.to_vec();
        if ms.is_empty() {
            return Err(CliError::config("m", "at least one exponent is required"));
        }
        if let Some(bad) = ms.iter().find(|m| !(**m > 1.0 && m.is_finite())) {
            return Err(CliError::config("m", format!("exponents must exceed 1, got {bad}")));
        }
        if !(4..=1 << 16).contains(&self.n) {
            return Err(CliError::config("n", format!("cell count {} outside [4, 65536]", self.n)));
        }
        if !(self.perturbation >= 0.0 && self.perturbation.is_finite()) {
            return Err(CliError::config("perturbation", "must be a non-negative number"));
        }
        match self.beta {
            BetaSpec::Value(b) if !(b > 0.0 && b.is_finite()) => {
                return Err(CliError::config("beta", format!("must be positive, got {b}")));
            }
            BetaSpec::Range(r) => {
                if !(r.min > 0.0 && r.max.is_finite() && r.min <= r.max) {
                    return Err(CliError::config("beta", "range needs 0 < min <= max"));
                }
                if r.steps == 0 || (r.steps == 1 && r.min != r.max) {
                    return Err(CliError::config("beta.steps", "needs at least two steps for a proper range"));
                }
            }
            _ => {}
        }
        self.solver.validate().map_err(|e| CliError::config("solver", e))?;
        self.evolution.validate().map_err(|e| CliError::config("evolution", e))?;
        Ok(())
    }

    fn potential(&self) -> Result<Potential, CliError> {
        Potential::from_json(&self.potential).map_err(|e| CliError::config("potential", e))
    }

    /// β values for exponent `m`.
    fn betas(&self, w: &Potential, m: f64) -> Result<Vec<f64>, CliError> {
        match self.beta {
            BetaSpec::Value(b) => Ok(vec![b]),
            BetaSpec::Range(r) => {
                let scale = if r.relative {
                    match beta_sharp(w, m, DEFAULT_K_MAX) {
                        Ok(b) => b,
                        Err(BifurcationError::NoTransition) => 1.0,
                        Err(e) => return Err(CliError::config("potential", e)),
                    }
                } else {
                    1.0
                };
                if r.steps == 1 {
                    return Ok(vec![r.min * scale]);
                }
                let h = (r.max - r.min) / (r.steps - 1) as f64;
                Ok((0..r.steps).map(|i| (r.min + h * i as f64) * scale).collect())
            }
        }
    }

    /// SHA-256 of the effective settings. The output directory is left out
    /// so that the same run written to two places hashes the same.
    fn hash(&self) -> String {
        let settings = RunConfig { out: None, ..self.clone() };
        let bytes = serde_json::to_vec(&settings).expect("config serialises");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// JSON formatter writing every float with 17 significant digits.
struct Sci;

impl serde_json::ser::Formatter for Sci {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Serialises with 17-digit floats; non-finite values become `null`.
pub fn to_json_string(value: &impl Serialize) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sci);
    value.serialize(&mut ser).expect("in-memory serialisation");
    String::from_utf8(buf).expect("json is utf-8")
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let io_err = |source| CliError::Io { path: path.to_path_buf(), source };
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, contents).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

struct Context {
    command: Command,
    config: RunConfig,
    potential: Potential,
    grid: Grid,
    hash: String,
    out: Option<PathBuf>,
    files: Vec<String>,
}

impl Context {
    fn stamp(&self, body: Value) -> Value {
        let versions: BTreeMap<&str, &str> = MODULES.iter().map(|m| (*m, env!("CARGO_PKG_VERSION"))).collect();
        json!({
            "command": self.command.name(),
            "config_hash": self.hash,
            "versions": versions,
            "result": body,
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        if let Some(dir) = &self.out {
            let path = dir.join(name);
            write_atomic(&path, contents)?;
            self.files.push(name.into());
        }
        Ok(())
    }

    fn write_json(&mut self, name: &str, body: Value) -> Result<(), CliError> {
        let doc = self.stamp(body);
        self.write(name, &(to_json_string(&doc) + "\n"))
    }

    fn exponents(&self) -> Vec<f64> {
        self.config.m.to_vec()
    }

    fn initial(&self) -> Result<Field, CliError> {
        let k = kick_mode(&self.potential);
        kicked(&Field::flat(self.grid), &k, self.config.perturbation).map_err(CliError::solver)
    }
}

fn mode_json(k: &Mode) -> Value {
    match k.components() {
        [single] => json!(single),
        many => json!(many),
    }
}

fn m_key(m: f64) -> String {
    format!("{m}")
}

fn classify_potential(ctx: &mut Context) -> Result<Value, CliError> {
    let w = &ctx.potential;
    let stability = match h_stability(w) {
        HStability::Stable => json!({"h_stable": true}),
        HStability::Unstable { witness, coeff } => {
            json!({"h_stable": false, "witness": mode_json(&witness), "witness_coeff": coeff})
        }
    };
    let mut body = stability;
    if let Ok(report) = dominant_mode(w, DEFAULT_K_MAX) {
        body["k_sharp"] = mode_json(&report.k_sharp);
        body["ratio"] = json!(report.ratio);
        body["k_sharp_unique"] = json!(report.unique);
        let mut sharp = serde_json::Map::new();
        for m in ctx.exponents() {
            let b = beta_sharp(w, m, DEFAULT_K_MAX).map_err(CliError::solver)?;
            sharp.insert(m_key(m), json!(b));
        }
        body["beta_sharp_for_m"] = Value::Object(sharp);
        let delta = find_delta_star(w, DEFAULT_K_MAX).map_err(CliError::solver)?;
        body["delta_star"] = json!(delta.map(|d| d.delta));
        if let Ok(m4) = check_m4_conditions(w, DEFAULT_K_MAX) {
            body["m4_conditions"] = json!({"a2": m4.a2_holds, "a3": m4.a3_holds});
        }
    } else {
        body["k_sharp"] = Value::Null;
        body["beta_sharp_for_m"] = json!({});
    }
    ctx.write_json("classify_potential.json", body.clone())?;
    Ok(body)
}

fn bifurcations(ctx: &mut Context) -> Result<Value, CliError> {
    let mut rows = Vec::new();
    for m in ctx.exponents() {
        let points = enumerate_bifurcations(&ctx.potential, m, DEFAULT_K_MAX).map_err(CliError::solver)?;
        rows.push(json!({"m": m, "points": points}));
    }
    let body = json!(rows);
    ctx.write_json("bifurcations.json", body.clone())?;
    Ok(body)
}

fn steady(ctx: &mut Context) -> Result<Value, CliError> {
    let init = ctx.initial()?;
    let mut rows = Vec::new();
    let mut states = Vec::new();
    for m in ctx.exponents() {
        for beta in ctx.config.betas(&ctx.potential, m)? {
            let solver = FixedPointSolver::new(&ctx.potential, &ctx.grid, beta, m, ctx.config.solver)
                .map_err(|e| CliError::config("solver", e))?;
            let sol = solver.solve(&init).map_err(|e| match e {
                StationaryError::NoConvergence { iterations, residual, .. } => {
                    CliError::Solver(format!("no convergence at m = {m}, β = {beta} after {iterations} iterations (residual {residual:e})"))
                }
                e => CliError::solver(e),
            })?;
            let f = solver.functional();
            let energy = f.energy(sol.state.values());
            rows.push(json!({
                "m": m,
                "beta": beta,
                "residual": sol.residual,
                "iterations": sol.iterations,
                "constant": sol.constant,
                "sup_norm": sol.state.sup_norm(),
                "min_rho": sol.state.min(),
                "F": energy.total,
                "F_flat": f.flat_energy().total,
            }));
            states.push(json!({"m": m, "beta": beta, "rho": sol.state.values()}));
        }
    }
    ctx.write_json("steady_states.json", json!(states))?;
    let body = json!(rows);
    ctx.write_json("steady.json", body.clone())?;
    Ok(body)
}

fn evolve_cmd(ctx: &mut Context) -> Result<Value, CliError> {
    let init = ctx.initial()?;
    let mut rows = Vec::new();
    let mut run = 0;
    for m in ctx.exponents() {
        for beta in ctx.config.betas(&ctx.potential, m)? {
            let traj = evolve(&ctx.potential, beta, m, &init, &ctx.config.evolution).map_err(CliError::solver)?;
            ctx.write(&format!("trajectory_{run}.csv"), &traj.to_csv())?;
            let fin = traj.final_state.values().to_vec();
            ctx.write_json(&format!("final_state_{run}.json"), json!(fin))?;
            rows.push(json!({
                "run": run,
                "m": m,
                "beta": beta,
                "steady": traj.steady,
                "steps": traj.steps,
                "t_final": traj.t_final,
                "max_energy_increase": traj.max_energy_increase,
                "min_rho_seen": traj.min_rho_seen,
                "max_mass_drift": traj.max_mass_drift,
                "sup_norm": traj.final_state.sup_norm(),
            }));
            run += 1;
        }
    }
    let body = json!(rows);
    ctx.write_json("evolve.json", body.clone())?;
    Ok(body)
}

fn sweep_cmd(ctx: &mut Context) -> Result<Value, CliError> {
    let ms = ctx.exponents();
    let grids: Vec<Vec<f64>> = ms.iter().map(|m| ctx.config.betas(&ctx.potential, *m)).collect::<Result<_, _>>()?;
    let (w, grid, solver) = (&ctx.potential, &ctx.grid, ctx.config.solver);
    let results: Vec<_> = ms
        .par_iter()
        .zip(&grids)
        .map(|(m, betas)| analyze(w, grid, *m, betas, &solver))
        .collect();
    let mut rows = Vec::new();
    for (i, (m, res)) in ms.iter().zip(results).enumerate() {
        let (sweep, report) = res.map_err(|e| CliError::Solver(format!("m = {m}: {e}")))?;
        ctx.write(&format!("sweep_{i}.csv"), &records_csv(&sweep.records))?;
        let body = json!({"m": m, "report": report, "hysteresis": sweep.hysteresis, "envelope_monotone": sweep.envelope_monotone});
        ctx.write_json(&format!("transition_{i}.json"), body.clone())?;
        rows.push(body);
    }
    Ok(json!(rows))
}

fn predict_cmd(ctx: &mut Context) -> Result<Value, CliError> {
    let mut rows = Vec::new();
    for m in ctx.exponents() {
        let p = predict(&ctx.potential, m).map_err(CliError::solver)?;
        rows.push(json!({"m": m, "prediction": p}));
    }
    let body = if rows.len() == 1 { rows.pop().unwrap()["prediction"].take() } else { json!(rows) };
    ctx.write_json("predict.json", body.clone())?;
    Ok(body)
}

fn mesa_cmd(ctx: &mut Context) -> Result<Value, CliError> {
    let ms = ctx.exponents();
    let beta = match ctx.config.beta {
        BetaSpec::Value(b) => b,
        BetaSpec::Range(_) => return Err(CliError::config("beta", "mesa needs a single β value")),
    };
    let result = mesa_sweep(&ctx.potential, &ctx.grid, beta, &ms, &ctx.config.solver).map_err(|e| match e {
        crate::mesa::MesaError::InvalidExponents => CliError::config("m", e),
        crate::mesa::MesaError::Infeasible(_) => CliError::config("potential", e),
        e => CliError::solver(e),
    })?;
    if let Some(csv) = result.profile_csv() {
        ctx.write("mesa_profile.csv", &csv)?;
    }
    let body = json!(result);
    ctx.write_json("mesa.json", body.clone())?;
    if !result.complete {
        return Err(CliError::Solver("mesa sweep stopped at an unconverged exponent".into()));
    }
    Ok(body)
}

fn execute(cli: &Cli) -> Result<Value, CliError> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::config("--config", format!("{}: {e}", path.display())))?;
            parse_config(&text)?
        }
        None => RunConfig::default(),
    };
    config.apply_flags(cli);
    config.validate(cli.command)?;
    let potential = config.potential()?;
    let grid = Grid::on(*potential.torus(), config.n).map_err(|e| CliError::config("n", e))?;
    if let Some(dir) = &config.out {
        fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
    }
    let mut ctx = Context {
        command: cli.command,
        hash: config.hash(),
        out: config.out.clone(),
        config,
        potential,
        grid,
        files: Vec::new(),
    };
    let body = match cli.command {
        Command::ClassifyPotential => classify_potential(&mut ctx)?,
        Command::Bifurcations => bifurcations(&mut ctx)?,
        Command::Steady => steady(&mut ctx)?,
        Command::Evolve => evolve_cmd(&mut ctx)?,
        Command::Sweep => sweep_cmd(&mut ctx)?,
        Command::Predict => predict_cmd(&mut ctx)?,
        Command::Mesa => mesa_cmd(&mut ctx)?,
    };
    let mut summary = ctx.stamp(body);
    summary["files"] = json!(ctx.files);
    Ok(summary)
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    if cli.jobs == Some(0) {
        eprintln!("{}", CliError::config("--jobs", "must be at least 1"));
        return EXIT_CONFIG;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{}", CliError::solver(e));
            return EXIT_SOLVER;
        }
    };
    match pool.install(|| execute(&cli)) {
        Ok(summary) => {
            println!("{}", to_json_string(&summary));
            EXIT_OK
        }
        Err(e) => {
            let code = e.exit_code();
            println!("{}", to_json_string(&json!({"error": e.to_string(), "exit_code": code})));
            eprintln!("error: {e}");
            code
        }
    }
}
