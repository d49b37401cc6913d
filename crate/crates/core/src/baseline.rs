//! Reference solvers: the convex special case for exponential absorption,
//! equal sub-band bandwidths with power-only optimization, an exhaustive grid
//! for tiny instances, and KKT residual reporting.

use serde::{Deserialize, Serialize};

use crate::absorption::ExponentialAbsorption;
use crate::error::{Error, Result};
use crate::quadrature::Quadrature;
use crate::rate::{evaluate, evaluate_closed_form, rate_subband, rate_subband_dp, RateResult, EXPONENT_FLOOR, R_FLOOR};
use crate::scenario::Scenario;
use crate::spectrum::centers;

/// `b = xi1 + xi2 ln(xi3 z)` and its inverse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub xi: [f64; 3],
}

impl Default for TransformParams {
    fn default() -> Self {
        Self { xi: [10f64.powf(9.7), 10f64.powf(10.7), 1e-3] }
    }
}

impl TransformParams {
    pub fn new(xi: [f64; 3]) -> Result<Self> {
        if xi.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidConfig(format!("substitution parameters must be positive: {xi:?}")));
        }
        Ok(Self { xi })
    }

    pub fn b_from_z(&self, z: f64) -> f64 {
        self.xi[0] + self.xi[1] * (self.xi[2] * z).ln()
    }

    pub fn z_from_b(&self, b: f64) -> f64 {
        ((b - self.xi[0]) / self.xi[1]).exp() / self.xi[2]
    }

    /// `ln(xi3 z)` straight from `b`, without forming `z`.
    pub fn log_z_from_b(&self, b: f64) -> f64 {
        (b - self.xi[0]) / self.xi[1]
    }

    pub fn z_min(&self) -> f64 {
        (-self.xi[0] / self.xi[1]).exp() / self.xi[2]
    }

    pub fn z_max(&self, b_max: f64) -> f64 {
        self.z_from_b(b_max)
    }

    /// Right-hand side of `xi2 sum ln(xi3 z_s) = b_tot - n_s xi1`.
    pub fn log_sum_target(&self, b_tot: f64, n_s: usize) -> f64 {
        b_tot - n_s as f64 * self.xi[0]
    }

    /// Left-hand side of the same constraint.
    pub fn log_sum(&self, z: &[f64]) -> f64 {
        self.xi[1] * z.iter().map(|v| (self.xi[2] * v).ln()).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverTag {
    ConvexSpecialCase,
    Esb,
    GridOracle,
}

/// Primal violations in the units of each constraint.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PrimalResiduals {
    /// Largest `max(0, -p_s)` [W].
    pub power_lower: f64,
    /// Largest `max(0, p_s - p_max)` [W].
    pub power_upper: f64,
    /// `max(0, sum p - p_tot)` [W].
    pub power_budget: f64,
    pub bandwidth_lower: f64,
    pub bandwidth_upper: f64,
    /// `|sum b - b_tot|` [Hz].
    pub bandwidth_total: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Multipliers {
    /// Power budget [1/W].
    pub lambda1: f64,
    /// Bandwidth total [1/Hz].
    pub lambda2: f64,
    /// `p >= 0`, `p <= p_max`, `b >= 0`, `b <= b_max`.
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
    pub gamma3: Vec<f64>,
    pub gamma4: Vec<f64>,
}

/// First-order optimality certificate. Stationarity and complementarity are
/// measured on variables normalized by their caps and divided by
/// `max(1, largest normalized gradient entry)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub stationarity_residual: f64,
    pub primal_residuals: PrimalResiduals,
    pub dual_multipliers: Multipliers,
    pub complementarity_residual: f64,
    /// False when bandwidths were held fixed and left out of stationarity.
    pub bandwidth_checked: bool,
}

impl KktReport {
    /// Largest residual with primal terms taken relative to their budgets.
    pub fn max_scaled_residual(&self, scenario: &Scenario) -> f64 {
        let pr = &self.primal_residuals;
        let (pm, bm) = (scenario.budget.p_max, scenario.spectrum.b_max);
        [
            self.stationarity_residual,
            self.complementarity_residual,
            pr.power_lower / pm,
            pr.power_upper / pm,
            pr.power_budget / scenario.budget.p_tot,
            pr.bandwidth_lower / bm,
            pr.bandwidth_upper / bm,
            pr.bandwidth_total / scenario.spectrum.b_tot,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Which objective a KKT check differentiates.
#[derive(Debug, Clone, Copy)]
pub enum ObjectiveModel<'a> {
    /// Rate integrals over the scenario's absorption.
    Quadrature(&'a Quadrature),
    /// Midpoint closed form under an exponential model.
    ClosedForm(&'a ExponentialAbsorption),
}

impl ObjectiveModel<'_> {
    fn objective(&self, scenario: &Scenario, p: &[f64], b: &[f64]) -> Result<f64> {
        Ok(match self {
            ObjectiveModel::Quadrature(q) => evaluate(scenario, q, p, b)?.objective_e,
            ObjectiveModel::ClosedForm(eta) => evaluate_closed_form(scenario, eta, p, b).objective_e,
        })
    }
}

/// Central-difference gradient of `E`; one-sided where a bound is active.
pub fn fd_gradient_e(
    scenario: &Scenario,
    model: ObjectiveModel<'_>,
    p: &[f64],
    b: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let grad = |x: &[f64], cap: f64, is_p: bool| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(x.len());
        let h = 1e-6 * cap;
        for i in 0..x.len() {
            let lo_ok = x[i] - h >= 0.0;
            let hi_ok = x[i] + h <= cap;
            let (a, c) = match (lo_ok, hi_ok) {
                (true, true) => (-h, h),
                (false, _) => (0.0, h),
                (true, false) => (-h, 0.0),
            };
            let eval = |delta: f64| -> Result<f64> {
                let mut y = x.to_vec();
                y[i] += delta;
                if is_p {
                    model.objective(scenario, &y, b)
                } else {
                    model.objective(scenario, p, &y)
                }
            };
            out.push((eval(c)? - eval(a)?) / (c - a));
        }
        Ok(out)
    };
    Ok((grad(p, scenario.budget.p_max, true)?, grad(b, scenario.spectrum.b_max, false)?))
}

/// Multipliers consistent with `(p, b)` and the gradient of `E` there:
/// budget multipliers from the free coordinates, bound multipliers from what
/// is left at each active bound.
pub fn estimate_multipliers(scenario: &Scenario, p: &[f64], b: &[f64], gp: &[f64], gb: Option<&[f64]>) -> Multipliers {
    let (pm, bm) = (scenario.budget.p_max, scenario.spectrum.b_max);
    let budget_active = p.iter().sum::<f64>() >= scenario.budget.p_tot * (1.0 - 1e-9);
    let lambda1 = if budget_active { free_mean(p, gp, pm) } else { 0.0 };
    let (gamma1, gamma2) = bound_multipliers(p, gp, pm, lambda1);
    let (lambda2, gamma3, gamma4) = match gb {
        Some(gb) => {
            let l = free_mean(b, gb, bm);
            let (g3, g4) = bound_multipliers(b, gb, bm, l);
            (l, g3, g4)
        }
        None => (0.0, vec![0.0; b.len()], vec![0.0; b.len()]),
    };
    Multipliers { lambda1, lambda2, gamma1, gamma2, gamma3, gamma4 }
}

fn at_lower(x: f64, cap: f64) -> bool {
    x <= 1e-9 * cap
}

fn at_upper(x: f64, cap: f64) -> bool {
    x >= cap * (1.0 - 1e-9)
}

fn free_mean(x: &[f64], g: &[f64], cap: f64) -> f64 {
    let free: Vec<f64> = x.iter().zip(g).filter(|(v, _)| !at_lower(**v, cap) && !at_upper(**v, cap)).map(|(_, g)| *g).collect();
    if free.is_empty() {
        g.iter().sum::<f64>() / g.len() as f64
    } else {
        free.iter().sum::<f64>() / free.len() as f64
    }
}

fn bound_multipliers(x: &[f64], g: &[f64], cap: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let lower = x.iter().zip(g).map(|(v, g)| if at_lower(*v, cap) { (lambda - g).max(0.0) } else { 0.0 }).collect();
    let upper = x.iter().zip(g).map(|(v, g)| if at_upper(*v, cap) { (g - lambda).max(0.0) } else { 0.0 }).collect();
    (lower, upper)
}

/// KKT residuals of `max E` at `(p, b)` given the gradient of `E`. With
/// `gb = None` the bandwidths count as fixed.
pub fn kkt_report_with_gradient(
    scenario: &Scenario,
    p: &[f64],
    b: &[f64],
    gp: &[f64],
    gb: Option<&[f64]>,
    multipliers: &Multipliers,
) -> KktReport {
    let (pm, bm) = (scenario.budget.p_max, scenario.spectrum.b_max);
    let (p_tot, b_tot) = (scenario.budget.p_tot, scenario.spectrum.b_tot);
    let m = multipliers;

    let mut scale: f64 = 1.0;
    for g in gp {
        scale = scale.max((g * pm).abs());
    }
    if let Some(gb) = gb {
        for g in gb {
            scale = scale.max((g * bm).abs());
        }
    }

    let mut stat: f64 = 0.0;
    for i in 0..p.len() {
        let r = gp[i] - m.lambda1 + m.gamma1[i] - m.gamma2[i];
        stat = stat.max((r * pm).abs() / scale);
    }
    if let Some(gb) = gb {
        for i in 0..b.len() {
            let r = gb[i] - m.lambda2 + m.gamma3[i] - m.gamma4[i];
            stat = stat.max((r * bm).abs() / scale);
        }
    }

    let sum_p: f64 = p.iter().sum();
    let sum_b: f64 = b.iter().sum();
    let primal = PrimalResiduals {
        power_lower: p.iter().fold(0.0, |a, v| a.max(-v)),
        power_upper: p.iter().fold(0.0, |a, v| a.max(v - pm)),
        power_budget: (sum_p - p_tot).max(0.0),
        bandwidth_lower: b.iter().fold(0.0, |a, v| a.max(-v)),
        bandwidth_upper: b.iter().fold(0.0, |a, v| a.max(v - bm)),
        bandwidth_total: (sum_b - b_tot).abs(),
    };

    // Products of multipliers with slacks, both in normalized units.
    let mut comp: f64 = (m.lambda1 * pm * (p_tot - sum_p) / pm).abs();
    for i in 0..p.len() {
        comp = comp.max((m.gamma1[i] * pm * p[i] / pm).abs());
        comp = comp.max((m.gamma2[i] * pm * (pm - p[i]) / pm).abs());
    }
    for i in 0..b.len() {
        comp = comp.max((m.gamma3[i] * bm * b[i] / bm).abs());
        comp = comp.max((m.gamma4[i] * bm * (bm - b[i]) / bm).abs());
    }

    KktReport {
        stationarity_residual: stat,
        primal_residuals: primal,
        dual_multipliers: multipliers.clone(),
        complementarity_residual: comp / scale,
        bandwidth_checked: gb.is_some(),
    }
}

/// KKT report with a finite-difference gradient of `E`. Multipliers are
/// estimated from that gradient when not supplied.
pub fn kkt_report(
    scenario: &Scenario,
    model: ObjectiveModel<'_>,
    p: &[f64],
    b: &[f64],
    multipliers: Option<&Multipliers>,
    bandwidth_free: bool,
) -> Result<KktReport> {
    let (gp, gb) = fd_gradient_e(scenario, model, p, b)?;
    let gb = bandwidth_free.then_some(gb.as_slice());
    let est;
    let m = match multipliers {
        Some(m) => m,
        None => {
            est = estimate_multipliers(scenario, p, b, &gp, gb);
            &est
        }
    };
    Ok(kkt_report_with_gradient(scenario, p, b, &gp, gb, m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub solver: SolverTag,
    pub p: Vec<f64>,
    pub b: Vec<f64>,
    /// Substituted bandwidths, for the convex special case only.
    pub z: Option<Vec<f64>>,
    /// Rates by quadrature over the scenario's absorption.
    pub rate: RateResult,
    pub kkt: KktReport,
    pub iterations: usize,
    pub converged: bool,
    /// Final projected-gradient step length in normalized units.
    pub residual: f64,
}

#[derive(Serialize)]
struct SolveResultJson<'a> {
    solver: SolverTag,
    p_w: &'a [f64],
    b_hz: &'a [f64],
    r_bps: &'a [f64],
    r_ag_bps: f64,
    objective_e: f64,
    kkt: &'a KktReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    z: Option<&'a [f64]>,
    converged: bool,
    iterations: usize,
}

impl SolveResult {
    pub fn to_json(&self) -> Result<String> {
        let j = SolveResultJson {
            solver: self.solver,
            p_w: &self.p,
            b_hz: &self.b,
            r_bps: &self.rate.r,
            r_ag_bps: self.rate.r_ag,
            objective_e: self.rate.objective_e,
            kkt: &self.kkt,
            z: self.z.as_deref(),
            converged: self.converged,
            iterations: self.iterations,
        };
        Ok(serde_json::to_string_pretty(&j)?)
    }

    /// Turns an unconverged result into `MaxIterations`.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::MaxIterations { iterations: self.iterations, residual: self.residual })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Stop once the projected-gradient step in normalized variables is
    /// below this.
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iterations: 20_000 }
    }
}

/// Euclidean projection onto `{0 <= x <= 1, sum x <= cap}` (`equality =
/// false`) or `{0 <= x <= 1, sum x = cap}` (`equality = true`), by bisection
/// on the common shift.
pub fn project_capped_box(x: &[f64], cap: f64, equality: bool) -> Vec<f64> {
    let shifted = |tau: f64| -> f64 { x.iter().map(|v| (v - tau).clamp(0.0, 1.0)).sum() };
    let clipped = shifted(0.0);
    if !equality && clipped <= cap {
        return x.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    }
    let (mut lo, mut hi) = (
        x.iter().fold(f64::INFINITY, |a, v| a.min(*v)) - 1.0,
        x.iter().fold(f64::NEG_INFINITY, |a, v| a.max(*v)),
    );
    // shifted(lo) = n >= cap, shifted(hi) = 0 <= cap
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if shifted(mid) > cap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    let mut y: Vec<f64> = x.iter().map(|v| (v - tau).clamp(0.0, 1.0)).collect();
    // Spread the last rounding error over the free coordinates.
    let free: Vec<usize> = (0..y.len()).filter(|&i| y[i] > 0.0 && y[i] < 1.0).collect();
    if !free.is_empty() {
        let err = (y.iter().sum::<f64>() - cap) / free.len() as f64;
        for i in free {
            y[i] = (y[i] - err).clamp(0.0, 1.0);
        }
    }
    y
}

/// Projected gradient with Barzilai-Borwein trial steps and an Armijo test,
/// minimizing `f` over a set given by `project`.
fn projected_gradient<F, G, P>(
    x0: Vec<f64>,
    mut f: F,
    mut grad: G,
    project: P,
    opts: SolveOptions,
) -> Result<(Vec<f64>, usize, bool, f64)>
where
    F: FnMut(&[f64]) -> Result<f64>,
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
    P: Fn(&[f64]) -> Vec<f64>,
{
    let mut x = project(&x0);
    let mut fx = f(&x)?;
    let mut g = grad(&x)?;
    let mut alpha = 1e-2;
    let mut residual = f64::INFINITY;
    for it in 0..opts.max_iterations {
        let full: Vec<f64> = x.iter().zip(&g).map(|(x, g)| x - g).collect();
        residual = project(&full).iter().zip(&x).fold(0.0, |a, (y, x)| a.max((y - x).abs()));
        if residual < opts.tol {
            return Ok((x, it, true, residual));
        }
        let mut step = alpha;
        let (x_new, f_new) = loop {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(x, g)| x - step * g).collect();
            let y = project(&trial);
            let fy = f(&y)?;
            let dec: f64 = y.iter().zip(&x).map(|(y, x)| (y - x) * (y - x)).sum::<f64>();
            if fy <= fx - 1e-4 / step * dec || step < 1e-14 {
                break (y, fy);
            }
            step *= 0.5;
        };
        let g_new = grad(&x_new)?;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        alpha = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e6) } else { (2.0 * step).min(1e6) };
        if ss == 0.0 && f_new >= fx {
            // no movement possible at machine precision
            return Ok((x_new, it + 1, residual < 1e3 * opts.tol, residual));
        }
        x = x_new;
        fx = f_new;
        g = g_new;
    }
    Ok((x, opts.max_iterations, false, residual))
}

/// Gradient of the closed-form objective `E` with respect to `p` and `b`.
pub fn closed_form_gradient(
    scenario: &Scenario,
    eta: &ExponentialAbsorption,
    p: &[f64],
    b: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let n = scenario.n_s();
    let ln2 = std::f64::consts::LN_2;
    let mut gp = vec![0.0; n];
    let mut direct = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut prefix = 0.0;
    for s in 0..n {
        let d = scenario.d[s];
        let f = scenario.spectrum.epsilon_f + prefix + 0.5 * b[s];
        prefix += b[s];
        if p[s] <= 0.0 || b[s] <= 0.0 {
            // r_s = 0 sits on the floor of the objective; its slope there
            // is taken as the one-sided limit of the unfloored rate.
            continue;
        }
        let x = p[s] * scenario.budget.rho * (-d * eta.value_unchecked(f)).max(EXPONENT_FLOOR).exp()
            / (b[s] * d * d * f * f);
        let r = b[s] * x.ln_1p() / ln2;
        if r <= R_FLOOR {
            continue;
        }
        gp[s] = b[s] * x / (p[s] * (1.0 + x) * ln2) / r;
        direct[s] = (x.ln_1p() / ln2 - x / ((1.0 + x) * ln2)) / r;
        q[s] = b[s] * x / ((1.0 + x) * ln2) * (-d * eta.derivative(f) - 2.0 / f) / r;
    }
    let mut gb = vec![0.0; n];
    let mut tail = 0.0;
    for j in (0..n).rev() {
        gb[j] = direct[j] + 0.5 * q[j] + tail;
        tail += q[j];
    }
    (gp, gb)
}

/// Convex special case: exponential absorption, midpoint rates, bandwidths
/// through the logarithmic substitution.
///
/// The iterate lives in `(p / p_max, b / b_max)`; `b` is affine in
/// `ln(xi3 z)`, so the bandwidth-total constraint is exactly the log-domain
/// form `xi2 sum ln(xi3 z) = b_tot - n_s xi1` and both feasible sets are
/// projected onto exactly.
pub fn solve_special_case(
    scenario: &Scenario,
    quad: &Quadrature,
    xi: &TransformParams,
    opts: SolveOptions,
) -> Result<SolveResult> {
    let eta = *scenario
        .absorption
        .as_exponential()
        .ok_or_else(|| Error::InvalidModel("convex special case needs exponential absorption".into()))?;
    let n = scenario.n_s();
    let (pm, bm) = (scenario.budget.p_max, scenario.spectrum.b_max);
    let p_cap = scenario.budget.p_tot.min(n as f64 * pm) / pm;
    let b_cap = scenario.spectrum.b_tot / bm;
    if b_cap > n as f64 {
        return Err(Error::Infeasible("b_tot exceeds n_s * b_max".into()));
    }

    let split = |x: &[f64]| -> (Vec<f64>, Vec<f64>) {
        (x[..n].iter().map(|u| u * pm).collect(), x[n..].iter().map(|v| v * bm).collect())
    };
    let project = |x: &[f64]| -> Vec<f64> {
        let mut y = project_capped_box(&x[..n], p_cap, false);
        y.extend(project_capped_box(&x[n..], b_cap, true));
        y
    };
    let objective = |x: &[f64]| -> Result<f64> {
        let (p, b) = split(x);
        let e = evaluate_closed_form(scenario, &eta, &p, &b).objective_e;
        if e.is_finite() {
            Ok(-e)
        } else {
            Err(Error::NonFiniteLoss { iteration: 0 })
        }
    };
    let gradient = |x: &[f64]| -> Result<Vec<f64>> {
        let (p, b) = split(x);
        let (gp, gb) = closed_form_gradient(scenario, &eta, &p, &b);
        Ok(gp.iter().map(|g| -g * pm).chain(gb.iter().map(|g| -g * bm)).collect())
    };

    let mut x0 = vec![p_cap / n as f64; n];
    x0.extend(vec![b_cap / n as f64; n]);
    let (x, iterations, converged, residual) = projected_gradient(x0, objective, gradient, project, opts)?;
    if !converged {
        log::warn!("convex special case stopped after {iterations} iterations, residual {residual:e}");
    }
    let (p, b) = split(&x);
    let z: Vec<f64> = b.iter().map(|v| xi.z_from_b(*v)).collect();
    let b: Vec<f64> = z.iter().map(|v| xi.b_from_z(*v).clamp(0.0, bm)).collect();

    let (gp, gb) = closed_form_gradient(scenario, &eta, &p, &b);
    let m = estimate_multipliers(scenario, &p, &b, &gp, Some(&gb));
    let kkt = kkt_report_with_gradient(scenario, &p, &b, &gp, Some(&gb), &m);
    let rate = evaluate(scenario, quad, &p, &b)?;
    Ok(SolveResult { solver: SolverTag::ConvexSpecialCase, p, b, z: Some(z), rate, kkt, iterations, converged, residual })
}

/// Equal sub-band bandwidths; powers maximize `E` by projected gradient on
/// the (concave) power-only problem.
pub fn solve_esb(scenario: &Scenario, quad: &Quadrature, opts: SolveOptions) -> Result<SolveResult> {
    let n = scenario.n_s();
    let pm = scenario.budget.p_max;
    let p_cap = scenario.budget.p_tot.min(n as f64 * pm) / pm;
    let b = scenario.spectrum.equal_split();
    let f = centers(&scenario.spectrum, &b)?;

    let objective = |u: &[f64]| -> Result<f64> {
        let p: Vec<f64> = u.iter().map(|v| v * pm).collect();
        Ok(-evaluate(scenario, quad, &p, &b)?.objective_e)
    };
    let gradient = |u: &[f64]| -> Result<Vec<f64>> {
        (0..n)
            .map(|s| {
                let p = u[s] * pm;
                let r = rate_subband(scenario, quad, scenario.d[s], p, b[s], f[s])?;
                if r <= R_FLOOR {
                    return Ok(0.0);
                }
                Ok(-rate_subband_dp(scenario, quad, scenario.d[s], p, b[s], f[s])? * pm / r)
            })
            .collect()
    };
    let project = |u: &[f64]| project_capped_box(u, p_cap, false);
    let (u, iterations, converged, residual) =
        projected_gradient(vec![p_cap / n as f64; n], objective, gradient, project, opts)?;
    if !converged {
        log::warn!("ESB solver stopped after {iterations} iterations, residual {residual:e}");
    }
    let p: Vec<f64> = u.iter().map(|v| v * pm).collect();
    let gp: Vec<f64> = gradient(&u)?.iter().map(|g| -g / pm).collect();
    let m = estimate_multipliers(scenario, &p, &b, &gp, None);
    let kkt = kkt_report_with_gradient(scenario, &p, &b, &gp, None, &m);
    let rate = evaluate(scenario, quad, &p, &b)?;
    Ok(SolveResult { solver: SolverTag::Esb, p, b, z: None, rate, kkt, iterations, converged, residual })
}

/// `density` evenly spaced values over `[lo, hi]`.
fn grid_axis(lo: f64, hi: f64, density: usize) -> Vec<f64> {
    if density <= 1 || hi <= lo {
        return vec![0.5 * (lo + hi)];
    }
    (0..density).map(|i| lo + (hi - lo) * i as f64 / (density - 1) as f64).collect()
}

/// All `(x_1..x_{n-1})` on a grid with the last coordinate closing the sum
/// and every coordinate inside `[0, cap]`.
fn simplex_slices(n: usize, total: f64, cap: f64, density: usize) -> Vec<Vec<f64>> {
    match n {
        1 => vec![vec![total]],
        2 => grid_axis((total - cap).max(0.0), cap.min(total), density)
            .into_iter()
            .map(|x| vec![x, total - x])
            .collect(),
        _ => {
            let axis = grid_axis(0.0, cap.min(total), density);
            let mut out = Vec::new();
            for &x1 in &axis {
                for &x2 in &axis {
                    let x3 = total - x1 - x2;
                    if (0.0..=cap).contains(&x3) {
                        out.push(vec![x1, x2, x3]);
                    }
                }
            }
            out
        }
    }
}

/// Exhaustive search for `n_s <= 3`: the power budget and the bandwidth
/// total are both spent (rates increase in power), the free coordinates run
/// over a `density`-point grid each.
pub fn grid_oracle(scenario: &Scenario, quad: &Quadrature, density: usize) -> Result<SolveResult> {
    let n = scenario.n_s();
    if n > 3 {
        return Err(Error::TooLarge(n));
    }
    let (pm, bm) = (scenario.budget.p_max, scenario.spectrum.b_max);
    let p_total = scenario.budget.p_tot.min(n as f64 * pm);
    let p_grid = simplex_slices(n, p_total, pm, density);
    let b_grid = simplex_slices(n, scenario.spectrum.b_tot, bm, density);
    if p_grid.is_empty() || b_grid.is_empty() {
        return Err(Error::Infeasible("grid has no feasible point".into()));
    }
    let mut best: Option<(f64, usize, usize)> = None;
    for (j, b) in b_grid.iter().enumerate() {
        for (i, p) in p_grid.iter().enumerate() {
            let e = evaluate(scenario, quad, p, b)?.objective_e;
            if best.map_or(true, |(be, _, _)| e > be) {
                best = Some((e, i, j));
            }
        }
    }
    let (_, i, j) = best.expect("grid is non-empty");
    let (p, b) = (p_grid[i].clone(), b_grid[j].clone());
    let kkt = kkt_report(scenario, ObjectiveModel::Quadrature(quad), &p, &b, None, true)?;
    let rate = evaluate(scenario, quad, &p, &b)?;
    Ok(SolveResult {
        solver: SolverTag::GridOracle,
        p,
        b,
        z: None,
        rate,
        kkt,
        iterations: p_grid.len() * b_grid.len(),
        converged: true,
        residual: 0.0,
    })
}

/// Exhaustive search over powers alone with the bandwidths held at `b`.
pub fn grid_oracle_fixed_b(scenario: &Scenario, quad: &Quadrature, b: &[f64], density: usize) -> Result<SolveResult> {
    let n = scenario.n_s();
    if n > 3 {
        return Err(Error::TooLarge(n));
    }
    let pm = scenario.budget.p_max;
    let p_grid = simplex_slices(n, scenario.budget.p_tot.min(n as f64 * pm), pm, density);
    let mut best: Option<(f64, usize)> = None;
    for (i, p) in p_grid.iter().enumerate() {
        let e = evaluate(scenario, quad, p, b)?.objective_e;
        if best.map_or(true, |(be, _)| e > be) {
            best = Some((e, i));
        }
    }
    let (_, i) = best.ok_or_else(|| Error::Infeasible("grid has no feasible point".into()))?;
    let p = p_grid[i].clone();
    let kkt = kkt_report(scenario, ObjectiveModel::Quadrature(quad), &p, b, None, false)?;
    let rate = evaluate(scenario, quad, &p, b)?;
    Ok(SolveResult {
        solver: SolverTag::GridOracle,
        p,
        b: b.to_vec(),
        z: None,
        rate,
        kkt,
        iterations: p_grid.len(),
        converged: true,
        residual: 0.0,
    })
}

/// Number of objective evaluations `grid_oracle` performs.
pub fn grid_point_count(scenario: &Scenario, density: usize) -> usize {
    let n = scenario.n_s();
    let p_total = scenario.budget.p_tot.min(n as f64 * scenario.budget.p_max);
    simplex_slices(n, p_total, scenario.budget.p_max, density).len()
        * simplex_slices(n, scenario.spectrum.b_tot, scenario.spectrum.b_max, density).len()
}
