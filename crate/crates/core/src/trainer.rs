//! Primal-dual unsupervised training.
//!
//! The network maps a distance vector to `(p~, b~)`. Its loss is the batch
//! mean of the Lagrangian `-E + l1 (1'p~ - p_tot) + l2 (1'b~ - b_tot)`;
//! the weights descend on it while the two multipliers ascend, projected onto
//! the nonnegative orthant. Objective gradients with respect to the outputs
//! come from one forward difference per coordinate and are pushed through
//! the network by reverse mode.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{Gradients, Network};
use crate::quadrature::Quadrature;
use crate::rate::{rate_subband, subband_rates, RateResult, R_FLOOR};
use crate::scenario::{sample_batch, Scenario};
use crate::spectrum::centers;

/// Units the multipliers live in during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualScaling {
    /// Multipliers in 1/W and 1/Hz, residuals in W and Hz.
    Raw,
    /// Residuals measured in per-user shares `p_tot / n_s` and `b_tot / n_s`;
    /// multipliers are dimensionless.
    PerUserShare,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub delta_theta: f64,
    pub delta_lambda: f64,
    pub n_iterations: usize,
    pub n_t: usize,
    /// Relative forward-difference step.
    pub epsilon_fd: f64,
    /// Initial multipliers, in the units chosen by `dual_scaling`.
    pub lambda_init: [f64; 2],
    pub dual_scaling: DualScaling,
    /// Draw a fresh batch every iteration instead of reusing one.
    pub resample: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            delta_theta: 0.05,
            delta_lambda: 0.025,
            n_iterations: 500,
            n_t: 300,
            epsilon_fd: 1e-4,
            lambda_init: [0.1, 0.1],
            dual_scaling: DualScaling::PerUserShare,
            resample: false,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        // Zero step sizes are allowed: they freeze the primal or dual side.
        let steps = [self.delta_theta, self.delta_lambda];
        if steps.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidConfig(format!("step sizes must be nonnegative: {self:?}")));
        }
        if !(self.epsilon_fd > 0.0) || self.n_iterations == 0 || self.n_t == 0 {
            return Err(Error::InvalidConfig(format!("hyperparameters must be positive: {self:?}")));
        }
        if self.epsilon_fd > 1e-2 {
            return Err(Error::InvalidConfig(format!("finite-difference step {} above 1e-2", self.epsilon_fd)));
        }
        if self.lambda_init.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidConfig("initial multipliers must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Factors turning working-unit multipliers into SI (1/W, 1/Hz).
pub fn dual_scale(scaling: DualScaling, scenario: &Scenario) -> [f64; 2] {
    match scaling {
        DualScaling::Raw => [1.0, 1.0],
        DualScaling::PerUserShare => {
            let n = scenario.n_s() as f64;
            [n / scenario.budget.p_tot, n / scenario.spectrum.b_tot]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss_j: f64,
    pub mean_r_ag: f64,
    /// Batch mean of `1'p~ - p_tot` [W].
    pub power_residual: f64,
    /// Batch mean of `1'b~ - b_tot` [Hz].
    pub bandwidth_residual: f64,
    /// Multipliers in working units.
    pub lambda: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerState {
    pub net: Network,
    /// Working-unit multipliers, always nonnegative.
    pub lambda: [f64; 2],
    pub dual_scale: [f64; 2],
    pub iteration: usize,
    pub history: Vec<IterationRecord>,
    /// Set when any forward difference had to fall back to an absolute step.
    pub degenerate_fd_steps: usize,
}

impl TrainerState {
    pub fn new(net: Network, hyper: &Hyperparams, scenario: &Scenario) -> Self {
        Self {
            net,
            lambda: hyper.lambda_init,
            dual_scale: dual_scale(hyper.dual_scaling, scenario),
            iteration: 0,
            history: Vec::new(),
            degenerate_fd_steps: 0,
        }
    }

    pub fn lambda_si(&self) -> [f64; 2] {
        [self.lambda[0] * self.dual_scale[0], self.lambda[1] * self.dual_scale[1]]
    }
}

/// `-E + l1 (1'p - p_tot) + l2 (1'b - b_tot)` with SI multipliers.
pub fn lagrangian_hat(
    scenario: &Scenario,
    quad: &Quadrature,
    d: &[f64],
    p: &[f64],
    b: &[f64],
    lambda_si: [f64; 2],
) -> Result<f64> {
    let rates = RateResult::from_rates(subband_rates(scenario, quad, d, p, b)?);
    Ok(lagrangian_from_objective(scenario, rates.objective_e, p, b, lambda_si))
}

fn lagrangian_from_objective(scenario: &Scenario, e: f64, p: &[f64], b: &[f64], lambda_si: [f64; 2]) -> f64 {
    let (rp, rb) = residuals(scenario, p, b);
    -e + lambda_si[0] * rp + lambda_si[1] * rb
}

/// `(1'p - p_tot, 1'b - b_tot)`.
pub fn residuals(scenario: &Scenario, p: &[f64], b: &[f64]) -> (f64, f64) {
    (p.iter().sum::<f64>() - scenario.budget.p_tot, b.iter().sum::<f64>() - scenario.spectrum.b_tot)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdGradients {
    pub gp: Vec<f64>,
    pub gb: Vec<f64>,
    /// Coordinates that fell back to an absolute step.
    pub degenerate: usize,
}

/// Forward-difference gradients of `E` with respect to `p~` and `b~`.
///
/// Coordinate `i` is stepped by `epsilon_fd * x_i`; when `x_i` is below
/// `1e-12` of its cap the step becomes `1e-6` of the cap. Only the rates a
/// step actually changes are recomputed: `p_i` touches sub-band `i`, `b_i`
/// touches sub-band `i` and shifts every later center.
pub fn fd_objective_gradients(
    scenario: &Scenario,
    quad: &Quadrature,
    d: &[f64],
    p: &[f64],
    b: &[f64],
    epsilon_fd: f64,
) -> Result<FdGradients> {
    let rates = subband_rates(scenario, quad, d, p, b)?;
    fd_with_base(scenario, quad, d, p, b, &rates, epsilon_fd)
}

fn fd_step(x: f64, cap: f64, epsilon_fd: f64) -> (f64, bool) {
    if x < 1e-12 * cap {
        (1e-6 * cap, true)
    } else {
        (epsilon_fd * x, false)
    }
}

fn fd_with_base(
    scenario: &Scenario,
    quad: &Quadrature,
    d: &[f64],
    p: &[f64],
    b: &[f64],
    base_rates: &[f64],
    epsilon_fd: f64,
) -> Result<FdGradients> {
    let n = scenario.n_s();
    let f = centers(&scenario.spectrum, b)?;
    let log_base: Vec<f64> = base_rates.iter().map(|r| r.max(R_FLOOR).ln()).collect();
    let mut degenerate = 0;

    let mut gp = Vec::with_capacity(n);
    for i in 0..n {
        let (h, flag) = fd_step(p[i], scenario.budget.p_max, epsilon_fd);
        degenerate += flag as usize;
        let r = rate_subband(scenario, quad, d[i], p[i] + h, b[i], f[i])?;
        gp.push((r.max(R_FLOOR).ln() - log_base[i]) / h);
    }

    let mut gb = Vec::with_capacity(n);
    for i in 0..n {
        let (h, flag) = fd_step(b[i], scenario.spectrum.b_max, epsilon_fd);
        degenerate += flag as usize;
        let r = rate_subband(scenario, quad, d[i], p[i], b[i] + h, f[i] + 0.5 * h)?;
        let mut delta = r.max(R_FLOOR).ln() - log_base[i];
        for s in i + 1..n {
            let r = rate_subband(scenario, quad, d[s], p[s], b[s], f[s] + h)?;
            delta += r.max(R_FLOOR).ln() - log_base[s];
        }
        gb.push(delta / h);
    }
    Ok(FdGradients { gp, gb, degenerate })
}

/// Everything one batch member contributes to an iteration.
#[derive(Debug, Clone)]
pub struct SampleStep {
    pub lagrangian: f64,
    pub rates: RateResult,
    pub power_residual: f64,
    pub bandwidth_residual: f64,
    pub grads: Gradients,
    pub degenerate: usize,
}

/// Forward pass, Lagrangian, finite-difference output gradients and their
/// back-propagation for one distance vector.
pub fn sample_step(
    net: &Network,
    scenario: &Scenario,
    quad: &Quadrature,
    d: &[f64],
    lambda_si: [f64; 2],
    epsilon_fd: f64,
) -> Result<SampleStep> {
    let n = scenario.n_s();
    let (y, tape) = net.forward(d)?;
    if y.len() != 2 * n {
        return Err(Error::DimensionMismatch { what: "network output", expected: 2 * n, got: y.len() });
    }
    let (p, b) = y.split_at(n);
    let r = subband_rates(scenario, quad, d, p, b)?;
    let fd = fd_with_base(scenario, quad, d, p, b, &r, epsilon_fd)?;
    let rates = RateResult::from_rates(r);
    let (power_residual, bandwidth_residual) = residuals(scenario, p, b);
    let lagrangian = lagrangian_from_objective(scenario, rates.objective_e, p, b, lambda_si);

    let seed: Vec<f64> = fd
        .gp
        .iter()
        .map(|g| -g + lambda_si[0])
        .chain(fd.gb.iter().map(|g| -g + lambda_si[1]))
        .collect();
    let grads = net.backward(&tape, &seed)?;
    Ok(SampleStep { lagrangian, rates, power_residual, bandwidth_residual, grads, degenerate: fd.degenerate })
}

/// Runs `hyper.n_iterations` primal-dual iterations on a fixed batch (or a
/// fresh batch per iteration when `hyper.resample` is set).
pub fn train(
    batch: &[Vec<f64>],
    template: &Scenario,
    quad: &Quadrature,
    net: Network,
    hyper: &Hyperparams,
) -> Result<TrainerState> {
    let mut state = TrainerState::new(net, hyper, template);
    train_from(&mut state, batch, template, quad, hyper, 0)?;
    Ok(state)
}

/// Continues training `state`; `resample_seed` seeds per-iteration batches
/// when resampling is enabled.
pub fn train_from(
    state: &mut TrainerState,
    batch: &[Vec<f64>],
    template: &Scenario,
    quad: &Quadrature,
    hyper: &Hyperparams,
    resample_seed: u64,
) -> Result<()> {
    hyper.validate()?;
    if batch.len() != hyper.n_t {
        return Err(Error::DimensionMismatch { what: "training batch", expected: hyper.n_t, got: batch.len() });
    }
    for d in batch {
        if d.len() != template.n_s() {
            return Err(Error::DimensionMismatch { what: "distance vector", expected: template.n_s(), got: d.len() });
        }
        if !d.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig("training distances must be strictly ascending".into()));
        }
    }

    let mut owned;
    let mut current: &[Vec<f64>] = batch;
    for _ in 0..hyper.n_iterations {
        if hyper.resample && state.iteration > 0 {
            owned = sample_batch(&template.geometry, template.n_s(), hyper.n_t, resample_seed.wrapping_add(state.iteration as u64));
            current = &owned;
        }
        let lambda_si = state.lambda_si();
        let steps: Vec<SampleStep> = current
            .par_iter()
            .map(|d| sample_step(&state.net, template, quad, d, lambda_si, hyper.epsilon_fd))
            .collect::<Result<_>>()?;

        let inv = 1.0 / steps.len() as f64;
        let mut grads = Gradients::zeros_like(&state.net);
        let (mut loss, mut r_ag, mut rp, mut rb) = (0.0, 0.0, 0.0, 0.0);
        for s in &steps {
            grads.add_assign(&s.grads);
            loss += s.lagrangian;
            r_ag += s.rates.r_ag;
            rp += s.power_residual;
            rb += s.bandwidth_residual;
            state.degenerate_fd_steps += s.degenerate;
        }
        grads.scale(inv);
        let record = IterationRecord {
            iteration: state.iteration,
            loss_j: loss * inv,
            mean_r_ag: r_ag * inv,
            power_residual: rp * inv,
            bandwidth_residual: rb * inv,
            lambda: state.lambda,
        };
        let finite = [record.loss_j, record.mean_r_ag, record.power_residual, record.bandwidth_residual]
            .iter()
            .all(|v| v.is_finite());
        state.history.push(record);
        if !finite || !grads.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: state.iteration });
        }

        state.net.apply_step(&grads, hyper.delta_theta);
        let resid = [record.power_residual * state.dual_scale[0], record.bandwidth_residual * state.dual_scale[1]];
        for (l, r) in state.lambda.iter_mut().zip(resid) {
            *l = (*l + hyper.delta_lambda * r).max(0.0);
        }
        if state.iteration % 50 == 0 {
            log::debug!(
                "iter {:4}  J = {:.4}  R_AG = {:.4e}  res_p = {:+.3e}  res_b = {:+.3e}  lambda = {:?}",
                record.iteration,
                record.loss_j,
                record.mean_r_ag,
                record.power_residual,
                record.bandwidth_residual,
                record.lambda
            );
        }
        state.iteration += 1;
    }
    Ok(())
}

/// One network output with its rates and constraint residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub p: Vec<f64>,
    pub b: Vec<f64>,
    pub rate: RateResult,
    pub power_residual: f64,
    pub bandwidth_residual: f64,
}

pub fn infer(net: &Network, scenario: &Scenario, quad: &Quadrature, d: &[f64]) -> Result<Inference> {
    let n = scenario.n_s();
    if d.len() != n {
        return Err(Error::DimensionMismatch { what: "distance vector", expected: n, got: d.len() });
    }
    let (y, _) = net.forward(d)?;
    if y.len() != 2 * n {
        return Err(Error::DimensionMismatch { what: "network output", expected: 2 * n, got: y.len() });
    }
    let (p, b) = y.split_at(n);
    let rate = RateResult::from_rates(subband_rates(scenario, quad, d, p, b)?);
    let (power_residual, bandwidth_residual) = residuals(scenario, p, b);
    Ok(Inference { p: p.to_vec(), b: b.to_vec(), rate, power_residual, bandwidth_residual })
}

/// Inference over a whole batch, in batch order.
pub fn infer_batch(net: &Network, scenario: &Scenario, quad: &Quadrature, batch: &[Vec<f64>]) -> Result<Vec<Inference>> {
    batch.par_iter().map(|d| infer(net, scenario, quad, d)).collect()
}

pub const TRAINING_LOG_HEADER: &str =
    "iteration,loss_j,mean_r_ag_bps,power_residual_w,bandwidth_residual_hz,lambda1,lambda2";

pub fn write_training_log<W: Write>(history: &[IterationRecord], mut w: W) -> Result<()> {
    writeln!(w, "{TRAINING_LOG_HEADER}")?;
    for r in history {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.iteration, r.loss_j, r.mean_r_ag, r.power_residual, r.bandwidth_residual, r.lambda[0], r.lambda[1]
        )?;
    }
    Ok(())
}

/// Network plus dual state, enough to resume or to run inference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerCheckpoint {
    pub network: Network,
    pub lambda: [f64; 2],
    pub dual_scale: [f64; 2],
    pub iteration: usize,
    pub hyperparams: Hyperparams,
}

impl TrainerCheckpoint {
    pub fn new(state: &TrainerState, hyperparams: Hyperparams) -> Self {
        Self {
            network: state.net.clone(),
            lambda: state.lambda,
            dual_scale: state.dual_scale,
            iteration: state.iteration,
            hyperparams,
        }
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let ck: TrainerCheckpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        ck.network.validate()?;
        Ok(ck)
    }
}
