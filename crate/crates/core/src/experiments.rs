//! End-to-end experiments: convergence on a smooth exponential-like window,
//! convergence on a window no exponential fits, and the sweep over the
//! sub-band bandwidth cap.
//!
//! Every experiment writes CSVs, a `summary.json` and a `manifest.json`
//! listing each written file with its SHA-256. Nothing time-dependent goes
//! into any output, so reruns with the same configuration are byte-identical.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::absorption::{fit_exponential, synthesize_nacsr, AbsorptionModel, ExponentialFit, Interpolation, NacsrProfile};
use crate::baseline::{solve_esb, solve_special_case, SolveOptions, TransformParams};
use crate::error::{Error, Result};
use crate::neural::{paper_architecture, InitScheme, InputNorm, Network};
use crate::quadrature::{Quadrature, QuadratureSpec};
use crate::rate::evaluate;
use crate::scenario::{dbm_to_watt, db_to_linear, sample_batch, LinkBudget, RoomGeometry, Scenario};
use crate::spectrum::SpectrumConfig;
use crate::trainer::{infer_batch, train, write_training_log, Hyperparams, TrainerCheckpoint, TrainerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Experiment {
    /// Smooth absorption; learned vs the convex special case.
    #[serde(rename = "fig4")]
    ConvergenceExponential,
    /// Absorption with resonance lines; the convex baseline uses a poor fit.
    #[serde(rename = "fig5")]
    ConvergenceNonExponential,
    /// Learned, convex and equal-bandwidth allocation across `b_max`.
    #[serde(rename = "fig6")]
    BmaxSweep,
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig4" => Ok(Experiment::ConvergenceExponential),
            "fig5" => Ok(Experiment::ConvergenceNonExponential),
            "fig6" => Ok(Experiment::BmaxSweep),
            _ => Err(Error::InvalidConfig(format!("unknown experiment '{s}' (expected fig4, fig5 or fig6)"))),
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Experiment::ConvergenceExponential => "fig4",
            Experiment::ConvergenceNonExponential => "fig5",
            Experiment::BmaxSweep => "fig6",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Batch of 100, finishes in minutes.
    Desk,
    /// Batch of 300.
    Paper,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            _ => Err(Error::InvalidConfig(format!("unknown scale '{s}' (expected desk or paper)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputNormChoice {
    /// Per-coordinate mean and spread of the training batch.
    Standardize,
    /// Every distance divided by the floor diagonal.
    Diagonal,
}

/// Every knob an experiment reads. Starts from the reference values and is
/// adjusted through `key=value` overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub room_width_m: f64,
    pub room_depth_m: f64,
    pub height_delta_m: f64,
    pub g_a_dbi: f64,
    pub g_u_dbi: f64,
    pub n0_dbm_per_hz: f64,
    pub p_tot_dbm: f64,
    /// Per-user power cap as a multiple of `p_tot / n_users`.
    pub p_max_factor: f64,
    pub n_users: usize,
    pub epsilon_f_hz: f64,
    pub b_tot_hz: f64,
    pub b_max_hz: f64,
    pub hyper: Hyperparams,
    pub init: InitScheme,
    pub input_norm: InputNormChoice,
    pub quadrature_nodes: usize,
    pub sweep_b_max_hz: Vec<f64>,
    pub sweep_profile: NacsrProfile,
    /// Held-out instances scored against per-instance convex solutions.
    pub n_holdout: usize,
    pub solver_tol: f64,
}

impl Settings {
    pub fn for_scale(scale: Scale) -> Self {
        let n_t = match scale {
            Scale::Desk => 100,
            Scale::Paper => 300,
        };
        Self {
            room_width_m: 25.0,
            room_depth_m: 25.0,
            height_delta_m: 1.7,
            g_a_dbi: 30.0,
            g_u_dbi: 20.0,
            n0_dbm_per_hz: -174.0,
            p_tot_dbm: -5.0,
            p_max_factor: 1.25,
            n_users: 15,
            epsilon_f_hz: 752e9,
            b_tot_hz: 50e9,
            b_max_hz: 5e9,
            hyper: Hyperparams { n_t, ..Hyperparams::default() },
            init: InitScheme::PaperGaussian,
            input_norm: InputNormChoice::Standardize,
            quadrature_nodes: 33,
            sweep_b_max_hz: vec![3.5e9, 4e9, 4.5e9, 5e9],
            sweep_profile: NacsrProfile::SmoothExponential,
            n_holdout: 20,
            solver_tol: 1e-9,
        }
    }

    /// Keys accepted by [`Settings::set`].
    pub const KEYS: &'static [&'static str] = &[
        "room_width_m",
        "room_depth_m",
        "height_delta_m",
        "g_a_dbi",
        "g_u_dbi",
        "n0_dbm_per_hz",
        "p_tot_dbm",
        "p_max_factor",
        "n_users",
        "epsilon_f_hz",
        "b_tot_hz",
        "b_max_hz",
        "delta_theta",
        "delta_lambda",
        "n_iterations",
        "n_t",
        "epsilon_fd",
        "lambda_init",
        "resample",
        "init",
        "input_norm",
        "quadrature_nodes",
        "sweep_b_max_hz",
        "sweep_profile",
        "n_holdout",
        "solver_tol",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::InvalidConfig(format!("cannot parse '{value}' for '{key}'"));
        let num = || value.parse::<f64>().map_err(|_| bad());
        let count = || value.parse::<usize>().map_err(|_| bad());
        match key {
            "room_width_m" => self.room_width_m = num()?,
            "room_depth_m" => self.room_depth_m = num()?,
            "height_delta_m" => self.height_delta_m = num()?,
            "g_a_dbi" => self.g_a_dbi = num()?,
            "g_u_dbi" => self.g_u_dbi = num()?,
            "n0_dbm_per_hz" => self.n0_dbm_per_hz = num()?,
            "p_tot_dbm" => self.p_tot_dbm = num()?,
            "p_max_factor" => self.p_max_factor = num()?,
            "n_users" => self.n_users = count()?,
            "epsilon_f_hz" => self.epsilon_f_hz = num()?,
            "b_tot_hz" => self.b_tot_hz = num()?,
            "b_max_hz" => self.b_max_hz = num()?,
            "delta_theta" => self.hyper.delta_theta = num()?,
            "delta_lambda" => self.hyper.delta_lambda = num()?,
            "n_iterations" => self.hyper.n_iterations = count()?,
            "n_t" => self.hyper.n_t = count()?,
            "epsilon_fd" => self.hyper.epsilon_fd = num()?,
            "lambda_init" => {
                let v = num()?;
                self.hyper.lambda_init = [v, v];
            }
            "resample" => self.hyper.resample = value.parse::<bool>().map_err(|_| bad())?,
            "init" => {
                self.init = match value {
                    "paper" | "paper_gaussian" => InitScheme::PaperGaussian,
                    "scaled" => InitScheme::Scaled,
                    _ => return Err(bad()),
                }
            }
            "input_norm" => {
                self.input_norm = match value {
                    "standardize" => InputNormChoice::Standardize,
                    "diagonal" => InputNormChoice::Diagonal,
                    _ => return Err(bad()),
                }
            }
            "quadrature_nodes" => self.quadrature_nodes = count()?,
            "sweep_b_max_hz" => {
                self.sweep_b_max_hz =
                    value.split(';').map(|v| v.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_>>()?
            }
            "sweep_profile" => {
                self.sweep_profile = match value {
                    "smooth" => NacsrProfile::SmoothExponential,
                    "wiggly" => NacsrProfile::Wiggly,
                    _ => return Err(bad()),
                }
            }
            "n_holdout" => self.n_holdout = count()?,
            "solver_tol" => self.solver_tol = num()?,
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "unknown setting '{key}'; known: {}",
                    Self::KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self, scale: Scale) -> Result<()> {
        self.hyper.validate()?;
        if scale == Scale::Desk && (self.hyper.n_t > 100 || self.hyper.n_iterations > 500) {
            return Err(Error::InvalidConfig(format!(
                "desk scale allows n_t <= 100 and n_iterations <= 500, got {} and {}",
                self.hyper.n_t, self.hyper.n_iterations
            )));
        }
        if self.n_users == 0 || self.quadrature_nodes < 3 {
            return Err(Error::InvalidConfig("need at least one user and three quadrature nodes".into()));
        }
        if self.sweep_b_max_hz.is_empty() {
            return Err(Error::InvalidConfig("bandwidth-cap sweep is empty".into()));
        }
        if !(self.p_max_factor > 0.0) {
            return Err(Error::InvalidConfig("p_max_factor must be positive".into()));
        }
        for &b_max in self.sweep_b_max_hz.iter().chain([&self.b_max_hz]) {
            self.spectrum(b_max)?;
        }
        self.budget()?.validate(self.n_users)?;
        self.geometry()?;
        Ok(())
    }

    pub fn geometry(&self) -> Result<RoomGeometry> {
        RoomGeometry::new(self.room_width_m, self.room_depth_m, self.height_delta_m)
    }

    pub fn budget(&self) -> Result<LinkBudget> {
        let p_tot = dbm_to_watt(self.p_tot_dbm);
        LinkBudget::new(
            db_to_linear(self.g_a_dbi),
            db_to_linear(self.g_u_dbi),
            dbm_to_watt(self.n0_dbm_per_hz),
            p_tot,
            self.p_max_factor * p_tot / self.n_users as f64,
        )
    }

    pub fn spectrum(&self, b_max: f64) -> Result<SpectrumConfig> {
        SpectrumConfig::new(self.epsilon_f_hz, self.b_tot_hz, b_max, self.n_users)
    }

    pub fn quadrature(&self) -> Result<Quadrature> {
        QuadratureSpec::gauss_legendre(self.quadrature_nodes).build()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub scale: Scale,
    /// `(key, value)` pairs applied in order on top of the scale defaults.
    pub overrides: Vec<(String, String)>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment, seed: u64, scale: Scale, output_dir: impl Into<PathBuf>) -> Self {
        Self { experiment, seed, scale, overrides: Vec::new(), output_dir: output_dir.into() }
    }

    pub fn with_override(mut self, key: &str, value: &str) -> Self {
        self.overrides.push((key.to_string(), value.to_string()));
        self
    }

    /// Parses `key=value`.
    pub fn parse_override(text: &str) -> Result<(String, String)> {
        let (k, v) = text
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("override '{text}' is not key=value")))?;
        Ok((k.trim().to_string(), v.trim().to_string()))
    }

    pub fn settings(&self) -> Result<Settings> {
        let mut s = Settings::for_scale(self.scale);
        for (k, v) in &self.overrides {
            s.set(k, v)?;
        }
        s.validate(self.scale)?;
        Ok(s)
    }
}

/// One point of the bandwidth-cap sweep; mean aggregate rates over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub b_max: f64,
    pub r_ag_esb: f64,
    pub r_ag_convex: f64,
    pub r_ag_learned: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: Experiment,
    pub seed: u64,
    pub scale: Scale,
    pub files: Vec<ManifestEntry>,
    /// Set when the run stopped early; `error` says why.
    pub partial: bool,
    pub error: Option<String>,
}

impl Manifest {
    pub fn file(&self, name: &str) -> Option<&ManifestEntry> {
        self.files.iter().find(|f| f.path == name)
    }
}

/// Writes files into the output directory and remembers their hashes.
struct OutputDir {
    root: PathBuf,
    files: Vec<ManifestEntry>,
}

impl OutputDir {
    fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.root.join(name), bytes)?;
        self.files.push(ManifestEntry { path: name.to_string(), sha256: hex::encode(Sha256::digest(bytes)), bytes: bytes.len() as u64 });
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}

/// How the network that was finally trained got its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitOutcome {
    pub requested: InitScheme,
    pub used: InitScheme,
    /// Why the requested scheme was abandoned, if it was.
    pub fallback_reason: Option<String>,
    /// Fraction of output pre-activations beyond +-30 at initialization.
    pub initial_saturation: f64,
}

/// Output logits beyond this count as saturated at initialization.
pub const SATURATION_LOGIT: f64 = 30.0;

/// Trains with the requested initialization; a net whose outputs start
/// mostly saturated, or whose loss goes non-finite, is retrained from the
/// scaled initialization and the switch is recorded.
pub fn train_with_fallback(
    batch: &[Vec<f64>],
    template: &Scenario,
    quad: &Quadrature,
    settings: &Settings,
    seed: u64,
) -> Result<(TrainerState, InitOutcome)> {
    let n = template.n_s();
    let arch = paper_architecture(n, template.budget.p_max, template.spectrum.b_max);
    let norm = match settings.input_norm {
        InputNormChoice::Standardize => InputNorm::standardize(batch, 1e-3)?,
        InputNormChoice::Diagonal => InputNorm::uniform_scale(n, template.geometry.floor_diagonal()),
    };
    let build = |scheme| -> Result<Network> { Ok(Network::init(&arch, n, seed, scheme)?.with_input_norm(norm.clone())) };

    let requested = settings.init;
    let net = build(requested)?;
    let initial_saturation = net.output_saturation(batch, SATURATION_LOGIT)?;
    let reason = if requested == InitScheme::Scaled {
        None
    } else if initial_saturation > 0.5 {
        Some(format!("{:.1}% of output units saturated at initialization", 100.0 * initial_saturation))
    } else {
        match train(batch, template, quad, net, &settings.hyper) {
            Ok(state) => {
                let outcome = InitOutcome { requested, used: requested, fallback_reason: None, initial_saturation };
                return Ok((state, outcome));
            }
            Err(e @ Error::NonFiniteLoss { .. }) => Some(e.to_string()),
            Err(e) => return Err(e),
        }
    };
    if let Some(r) = &reason {
        log::warn!("{requested:?} initialization abandoned ({r}); retraining with scaled initialization");
    }
    let state = train(batch, template, quad, build(InitScheme::Scaled)?, &settings.hyper)?;
    Ok((state, InitOutcome { requested, used: InitScheme::Scaled, fallback_reason: reason, initial_saturation }))
}

/// Per-instance baseline results over a batch, in batch order.
#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub r_ag: Vec<f64>,
    pub objective_e: Vec<f64>,
    pub unconverged: usize,
}

impl BaselineRun {
    pub fn mean_r_ag(&self) -> f64 {
        mean(&self.r_ag)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Convex special case per instance, optimized under `fit` and scored under
/// the template's true absorption.
pub fn convex_on_batch(
    batch: &[Vec<f64>],
    template: &Scenario,
    fit: &ExponentialFit,
    quad: &Quadrature,
    tol: f64,
) -> Result<BaselineRun> {
    let opts = SolveOptions { tol, ..SolveOptions::default() };
    let xi = TransformParams::default();
    let per: Vec<(f64, f64, bool)> = batch
        .par_iter()
        .map(|d| {
            let truth = template.with_distances(d.clone())?;
            let mut approx = truth.clone();
            approx.absorption = AbsorptionModel::Exponential(fit.model);
            let sol = solve_special_case(&approx, quad, &xi, opts)?;
            let r = evaluate(&truth, quad, &sol.p, &sol.b)?;
            Ok((r.r_ag, r.objective_e, sol.converged))
        })
        .collect::<Result<_>>()?;
    Ok(BaselineRun {
        r_ag: per.iter().map(|x| x.0).collect(),
        objective_e: per.iter().map(|x| x.1).collect(),
        unconverged: per.iter().filter(|x| !x.2).count(),
    })
}

pub fn esb_on_batch(batch: &[Vec<f64>], template: &Scenario, quad: &Quadrature, tol: f64) -> Result<BaselineRun> {
    let opts = SolveOptions { tol, ..SolveOptions::default() };
    let per: Vec<(f64, f64, bool)> = batch
        .par_iter()
        .map(|d| {
            let s = template.with_distances(d.clone())?;
            let sol = solve_esb(&s, quad, opts)?;
            Ok((sol.rate.r_ag, sol.rate.objective_e, sol.converged))
        })
        .collect::<Result<_>>()?;
    Ok(BaselineRun {
        r_ag: per.iter().map(|x| x.0).collect(),
        objective_e: per.iter().map(|x| x.1).collect(),
        unconverged: per.iter().filter(|x| !x.2).count(),
    })
}

/// Absorption shared by every strategy in one experiment: a synthesized
/// window covering every band edge a box-feasible output can reach, plus
/// its exponential fit over the allocated span.
pub struct Window {
    pub truth: AbsorptionModel,
    pub table: crate::absorption::AbsorptionTable,
    pub fit: ExponentialFit,
}

/// Extra room past `epsilon_f + n_s b_max` so forward-difference steps on a
/// saturated output stay inside the table.
const DOMAIN_MARGIN: f64 = 1.02;

pub fn build_window(settings: &Settings, profile: NacsrProfile, widest_b_max: f64, seed: u64) -> Result<Window> {
    let lo = settings.epsilon_f_hz;
    let hi = lo + DOMAIN_MARGIN * settings.n_users as f64 * widest_b_max;
    let table = synthesize_nacsr((lo, hi), profile, seed)?;
    let fit = fit_exponential(&table, lo, lo + settings.b_tot_hz)?;
    let truth = AbsorptionModel::table(table.clone(), Interpolation::CubicMonotone);
    Ok(Window { truth, table, fit })
}

/// Result of training plus baselines on one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub experiment: Experiment,
    pub seed: u64,
    pub scale: Scale,
    pub profile: NacsrProfile,
    pub settings: Settings,
    pub init: InitOutcome,
    pub fit_eta: [f64; 3],
    pub fit_max_rel_error: f64,
    /// Mean aggregate rate of the trained network over the batch [bit/s].
    pub learned_r_ag_bps: f64,
    /// Mean aggregate rate recorded at the last training iteration [bit/s].
    pub last_iteration_r_ag_bps: f64,
    pub convex_r_ag_bps: f64,
    pub esb_r_ag_bps: f64,
    pub learned_over_convex: f64,
    pub learned_objective_e: f64,
    pub convex_objective_e: f64,
    pub esb_objective_e: f64,
    /// Mean `|1'p - p_tot|` over the last 50 iterations [W].
    pub tail_abs_power_residual_w: f64,
    /// Mean `|1'b - b_tot|` over the last 50 iterations [Hz].
    pub tail_abs_bandwidth_residual_hz: f64,
    pub final_lambda: [f64; 2],
    pub dual_scale: [f64; 2],
    pub degenerate_fd_steps: usize,
    pub convex_unconverged: usize,
    pub esb_unconverged: usize,
    /// Mean learned / convex aggregate rate on instances outside the batch.
    pub holdout_learned_over_convex: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub row: ComparisonRow,
    pub init: InitOutcome,
    pub tail_abs_power_residual_w: f64,
    pub tail_abs_bandwidth_residual_hz: f64,
    pub convex_unconverged: usize,
    pub esb_unconverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub experiment: Experiment,
    pub seed: u64,
    pub scale: Scale,
    pub profile: NacsrProfile,
    pub settings: Settings,
    pub fit_eta: [f64; 3],
    pub fit_max_rel_error: f64,
    pub points: Vec<SweepPoint>,
}

/// Mean absolute residuals over the last (up to) 50 iterations.
pub fn tail_abs_residuals(state: &TrainerState) -> (f64, f64) {
    let h = &state.history;
    let tail = &h[h.len().saturating_sub(50)..];
    if tail.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = tail.len() as f64;
    (
        tail.iter().map(|r| r.power_residual.abs()).sum::<f64>() / n,
        tail.iter().map(|r| r.bandwidth_residual.abs()).sum::<f64>() / n,
    )
}

/// Runs one experiment and writes its outputs. On failure the manifest is
/// still written, flagged partial, before the error is returned.
pub fn run(config: &ExperimentConfig) -> Result<Manifest> {
    let settings = config.settings()?;
    let mut out = OutputDir::create(&config.output_dir)?;
    let result = match config.experiment {
        Experiment::ConvergenceExponential => {
            run_convergence(config, &settings, NacsrProfile::SmoothExponential, &mut out).map(|_| ())
        }
        Experiment::ConvergenceNonExponential => {
            run_convergence(config, &settings, NacsrProfile::Wiggly, &mut out).map(|_| ())
        }
        Experiment::BmaxSweep => run_sweep(config, &settings, &mut out).map(|_| ()),
    };
    let manifest = Manifest {
        experiment: config.experiment,
        seed: config.seed,
        scale: config.scale,
        files: out.files.clone(),
        partial: result.is_err(),
        error: result.as_ref().err().map(|e| e.to_string()),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(config.output_dir.join("manifest.json"), text)?;
    result.map(|_| manifest)
}

/// Seed offsets keep the batch, absorption, network and held-out streams
/// independent.
const HOLDOUT_SEED_OFFSET: u64 = 0x9e37_79b9;

fn run_convergence(
    config: &ExperimentConfig,
    settings: &Settings,
    profile: NacsrProfile,
    out: &mut OutputDir,
) -> Result<ConvergenceSummary> {
    let quad = settings.quadrature()?;
    let geometry = settings.geometry()?;
    let window = build_window(settings, profile, settings.b_max_hz, config.seed)?;
    let mut table_csv = Vec::new();
    window.table.write_csv(&mut table_csv)?;
    out.write("absorption.csv", &table_csv)?;

    let batch = sample_batch(&geometry, settings.n_users, settings.hyper.n_t, config.seed);
    let template = Scenario::new(
        batch[0].clone(),
        geometry,
        settings.budget()?,
        settings.spectrum(settings.b_max_hz)?,
        window.truth.clone(),
    )?;

    let (state, init) = train_with_fallback(&batch, &template, &quad, settings, config.seed)?;
    let mut log = Vec::new();
    write_training_log(&state.history, &mut log)?;
    out.write("training_log.csv", &log)?;
    out.write_json("checkpoint.json", &TrainerCheckpoint::new(&state, settings.hyper))?;

    let learned = infer_batch(&state.net, &template, &quad, &batch)?;
    let convex = convex_on_batch(&batch, &template, &window.fit, &quad, settings.solver_tol)?;
    let esb = esb_on_batch(&batch, &template, &quad, settings.solver_tol)?;

    let mut samples = String::from(
        "sample,r_ag_learned_bps,r_ag_convex_bps,r_ag_esb_bps,objective_learned,objective_convex,objective_esb,power_residual_w,bandwidth_residual_hz\n",
    );
    for (i, l) in learned.iter().enumerate() {
        samples.push_str(&format!(
            "{i},{},{},{},{},{},{},{},{}\n",
            l.rate.r_ag,
            convex.r_ag[i],
            esb.r_ag[i],
            l.rate.objective_e,
            convex.objective_e[i],
            esb.objective_e[i],
            l.power_residual,
            l.bandwidth_residual
        ));
    }
    out.write("samples.csv", samples.as_bytes())?;

    let holdout_ratio = if settings.n_holdout > 0 {
        let holdout = sample_batch(&geometry, settings.n_users, settings.n_holdout, config.seed ^ HOLDOUT_SEED_OFFSET);
        let l = infer_batch(&state.net, &template, &quad, &holdout)?;
        let c = convex_on_batch(&holdout, &template, &window.fit, &quad, settings.solver_tol)?;
        mean(&l.iter().map(|x| x.rate.r_ag).collect::<Vec<_>>()) / c.mean_r_ag()
    } else {
        f64::NAN
    };

    let learned_r_ag = mean(&learned.iter().map(|x| x.rate.r_ag).collect::<Vec<_>>());
    let (tail_p, tail_b) = tail_abs_residuals(&state);
    let summary = ConvergenceSummary {
        experiment: config.experiment,
        seed: config.seed,
        scale: config.scale,
        profile,
        settings: settings.clone(),
        init,
        fit_eta: window.fit.model.eta(),
        fit_max_rel_error: window.fit.max_rel_error,
        learned_r_ag_bps: learned_r_ag,
        last_iteration_r_ag_bps: state.history.last().map_or(f64::NAN, |r| r.mean_r_ag),
        convex_r_ag_bps: convex.mean_r_ag(),
        esb_r_ag_bps: esb.mean_r_ag(),
        learned_over_convex: learned_r_ag / convex.mean_r_ag(),
        learned_objective_e: mean(&learned.iter().map(|x| x.rate.objective_e).collect::<Vec<_>>()),
        convex_objective_e: mean(&convex.objective_e),
        esb_objective_e: mean(&esb.objective_e),
        tail_abs_power_residual_w: tail_p,
        tail_abs_bandwidth_residual_hz: tail_b,
        final_lambda: state.lambda,
        dual_scale: state.dual_scale,
        degenerate_fd_steps: state.degenerate_fd_steps,
        convex_unconverged: convex.unconverged,
        esb_unconverged: esb.unconverged,
        holdout_learned_over_convex: holdout_ratio,
    };
    out.write_json("summary.json", &summary)?;
    Ok(summary)
}

fn run_sweep(config: &ExperimentConfig, settings: &Settings, out: &mut OutputDir) -> Result<SweepSummary> {
    let quad = settings.quadrature()?;
    let geometry = settings.geometry()?;
    let widest = settings.sweep_b_max_hz.iter().fold(0.0, |a: f64, b| a.max(*b));
    let window = build_window(settings, settings.sweep_profile, widest, config.seed)?;
    let mut table_csv = Vec::new();
    window.table.write_csv(&mut table_csv)?;
    out.write("absorption.csv", &table_csv)?;

    let batch = sample_batch(&geometry, settings.n_users, settings.hyper.n_t, config.seed);
    let budget = settings.budget()?;
    let results: Vec<(SweepPoint, TrainerState)> = settings
        .sweep_b_max_hz
        .par_iter()
        .map(|&b_max| {
            let template =
                Scenario::new(batch[0].clone(), geometry, budget, settings.spectrum(b_max)?, window.truth.clone())?;
            let (state, init) = train_with_fallback(&batch, &template, &quad, settings, config.seed)?;
            let learned = infer_batch(&state.net, &template, &quad, &batch)?;
            let convex = convex_on_batch(&batch, &template, &window.fit, &quad, settings.solver_tol)?;
            let esb = esb_on_batch(&batch, &template, &quad, settings.solver_tol)?;
            let (tail_p, tail_b) = tail_abs_residuals(&state);
            let row = ComparisonRow {
                b_max,
                r_ag_esb: esb.mean_r_ag(),
                r_ag_convex: convex.mean_r_ag(),
                r_ag_learned: mean(&learned.iter().map(|x| x.rate.r_ag).collect::<Vec<_>>()),
            };
            let point = SweepPoint {
                row,
                init,
                tail_abs_power_residual_w: tail_p,
                tail_abs_bandwidth_residual_hz: tail_b,
                convex_unconverged: convex.unconverged,
                esb_unconverged: esb.unconverged,
            };
            Ok((point, state))
        })
        .collect::<Result<_>>()?;

    let mut table = String::from("b_max_hz,r_ag_esb_bps,r_ag_convex_bps,r_ag_learned_bps\n");
    for (p, _) in &results {
        let r = p.row;
        table.push_str(&format!("{},{},{},{}\n", r.b_max, r.r_ag_esb, r.r_ag_convex, r.r_ag_learned));
    }
    out.write("comparison.csv", table.as_bytes())?;
    for (p, state) in &results {
        let mut log = Vec::new();
        write_training_log(&state.history, &mut log)?;
        out.write(&format!("training_log_bmax_{}.csv", p.row.b_max), &log)?;
    }

    let summary = SweepSummary {
        experiment: config.experiment,
        seed: config.seed,
        scale: config.scale,
        profile: settings.sweep_profile,
        settings: settings.clone(),
        fit_eta: window.fit.model.eta(),
        fit_max_rel_error: window.fit.max_rel_error,
        points: results.into_iter().map(|(p, _)| p).collect(),
    };
    out.write_json("summary.json", &summary)?;
    Ok(summary)
}

/// Reads a comparison table written by the sweep.
pub fn read_comparison(path: impl AsRef<Path>) -> Result<Vec<ComparisonRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::InvalidConfig(format!("bad comparison row {rec:?}")))
        };
        rows.push(ComparisonRow { b_max: field(0)?, r_ag_esb: field(1)?, r_ag_convex: field(2)?, r_ag_learned: field(3)? });
    }
    Ok(rows)
}

/// Summary fields keyed by name, for quick inspection.
pub fn summary_fields(path: impl AsRef<Path>) -> Result<BTreeMap<String, serde_json::Value>> {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    match v {
        serde_json::Value::Object(m) => Ok(m.into_iter().collect()),
        _ => Err(Error::InvalidConfig("summary is not a JSON object".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_names() {
        assert_eq!("fig5".parse::<Experiment>().unwrap(), Experiment::ConvergenceNonExponential);
        assert_eq!(Experiment::BmaxSweep.to_string(), "fig6");
        assert!("fig7".parse::<Experiment>().is_err());
        assert_eq!("paper".parse::<Scale>().unwrap(), Scale::Paper);
    }

    #[test]
    fn overrides_apply_and_validate() {
        let cfg = ExperimentConfig::new(Experiment::ConvergenceExponential, 1, Scale::Desk, "/tmp/x")
            .with_override("n_iterations", "20")
            .with_override("sweep_b_max_hz", "4e9;5e9");
        let s = cfg.settings().unwrap();
        assert_eq!(s.hyper.n_iterations, 20);
        assert_eq!(s.sweep_b_max_hz, vec![4e9, 5e9]);

        let too_big = ExperimentConfig::new(Experiment::ConvergenceExponential, 1, Scale::Desk, "/tmp/x")
            .with_override("n_t", "300");
        assert!(matches!(too_big.settings(), Err(Error::InvalidConfig(_))));
        let paper = ExperimentConfig::new(Experiment::ConvergenceExponential, 1, Scale::Paper, "/tmp/x");
        assert_eq!(paper.settings().unwrap().hyper.n_t, 300);

        let unknown = ExperimentConfig::new(Experiment::BmaxSweep, 1, Scale::Desk, "/tmp/x").with_override("colour", "1");
        assert!(unknown.settings().is_err());
        let infeasible =
            ExperimentConfig::new(Experiment::BmaxSweep, 1, Scale::Desk, "/tmp/x").with_override("sweep_b_max_hz", "3e9");
        assert!(matches!(infeasible.settings(), Err(Error::Infeasible(_))));
        assert!(ExperimentConfig::parse_override("n_t").is_err());
        assert_eq!(ExperimentConfig::parse_override("n_t = 5").unwrap(), ("n_t".into(), "5".into()));
    }

    #[test]
    fn reference_budget_matches_settings() {
        let s = Settings::for_scale(Scale::Desk);
        let t = crate::scenario::reference_defaults();
        let b = s.budget().unwrap();
        assert!((b.rho / t.budget.rho - 1.0).abs() < 1e-12);
        assert!((b.p_max / t.budget.p_max - 1.0).abs() < 1e-12);
    }
}
