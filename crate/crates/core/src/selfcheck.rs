//! Fast numerical self-checks: rate model consistency, network gradients,
//! the bandwidth substitution, and both baseline solvers against the grid
//! oracle on a two-user instance.

use serde::Serialize;

use crate::absorption::{AbsorptionModel, ExponentialAbsorption};
use crate::baseline::{grid_oracle, grid_oracle_fixed_b, solve_esb, solve_special_case, SolveOptions, TransformParams};
use crate::error::Result;
use crate::neural::{InitScheme, LayerSpec, Network};
use crate::quadrature::QuadratureSpec;
use crate::rate::{rate_closed_form, rate_subband};
use crate::scenario::{reference_defaults, Scenario};
use crate::spectrum::SpectrumConfig;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Measured value against its limit.
    pub detail: String,
}

impl CheckResult {
    fn limit(name: &'static str, measured: f64, limit: f64) -> Self {
        Self { name, passed: measured <= limit, detail: format!("{measured:.3e} <= {limit:.1e}") }
    }
}

/// Two users at 3 m and 9 m sharing 8 GHz from 752 GHz, 5 GHz cap, reference
/// link budget with `p_max = 1.25 p_tot / 2`, exponential absorption falling
/// from about 0.55 to 0.1 per meter over the first 10 GHz.
pub fn two_user_toy() -> Result<Scenario> {
    let t = reference_defaults();
    let spectrum = SpectrumConfig::new(752e9, 8e9, 5e9, 2)?;
    let budget = t.budget.with_p_tot(t.budget.p_tot, 2)?;
    let eta = ExponentialAbsorption::new([0.5f64.ln() + 188.0, -2.5e-10, 0.05], 750e9, 765e9)?;
    Scenario::new(vec![3.0, 9.0], t.geometry, budget, spectrum, AbsorptionModel::Exponential(eta))
}

/// Single-band scenario over nearly flat exponential absorption.
fn flat_exponential(n: usize) -> Result<Scenario> {
    let t = reference_defaults();
    let eta = ExponentialAbsorption::new([1.5, -2e-11, 0.1], 740e9, 830e9)?;
    let spectrum = SpectrumConfig::new(752e9, 0.4e9 * n as f64, 5e9, n)?;
    let budget = t.budget.with_p_tot(t.budget.p_tot, n)?;
    let d = (0..n).map(|i| 2.0 + 3.0 * i as f64).collect();
    Scenario::new(d, t.geometry, budget, spectrum, AbsorptionModel::Exponential(eta))
}

pub fn run_all() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let quad = QuadratureSpec::default().build()?;
    let fine = QuadratureSpec::default().refined().build()?;

    // Rate model: closed form vs quadrature, quadrature refinement.
    let s = flat_exponential(3)?;
    let eta = *s.absorption.as_exponential().expect("exponential");
    let (mut closed_err, mut refine_err) = (0.0f64, 0.0f64);
    for (i, &b) in [0.05e9, 0.2e9, 0.5e9].iter().enumerate() {
        let prefix = 1e9 * i as f64;
        let f = s.spectrum.epsilon_f + prefix + 0.5 * b;
        let p = 0.6 * s.budget.p_max;
        let q = rate_subband(&s, &quad, s.d[i], p, b, f)?;
        let q2 = rate_subband(&s, &fine, s.d[i], p, b, f)?;
        let c = rate_closed_form(&s, s.d[i], p, b, prefix, &eta);
        closed_err = closed_err.max((q - c).abs() / q);
        refine_err = refine_err.max((q - q2).abs() / q2);
    }
    out.push(CheckResult::limit("rate closed form vs quadrature (<= 0.5 GHz bands)", closed_err, 1e-6));
    out.push(CheckResult::limit("quadrature 33 -> 65 nodes", refine_err, 1e-8));

    // Network gradients against central differences.
    let arch = [LayerSpec::relu(4), LayerSpec::scaled_sigmoid(vec![2.0, 3.0])];
    let net = Network::init(&arch, 3, 11, InitScheme::Scaled)?;
    let x = [0.3, -0.7, 1.1];
    let seed = [0.4, -1.3];
    let (_, tape) = net.forward(&x)?;
    let g = net.backward(&tape, &seed)?;
    let mut worst = 0.0f64;
    for i in 0..net.param_count() {
        let h = 1e-6;
        let mut a = net.clone();
        let mut c = net.clone();
        a.set_param(i, net.param(i) + h);
        c.set_param(i, net.param(i) - h);
        let fa: f64 = a.forward(&x)?.0.iter().zip(&seed).map(|(y, s)| y * s).sum();
        let fc: f64 = c.forward(&x)?.0.iter().zip(&seed).map(|(y, s)| y * s).sum();
        let fd = (fa - fc) / (2.0 * h);
        let an = g.get(i);
        if an.abs().max(fd.abs()) > 1e-8 {
            worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()));
        }
    }
    out.push(CheckResult::limit("backprop vs central differences", worst, 1e-5));

    // Substitution round trip over [0, b_max].
    let xi = TransformParams::default();
    let mut rt = 0.0f64;
    for i in 1..=100 {
        let b = 5e9 * i as f64 / 100.0;
        rt = rt.max((xi.b_from_z(xi.z_from_b(b)) - b).abs() / b);
    }
    out.push(CheckResult::limit("bandwidth substitution round trip", rt, 1e-12));

    // Solvers against the grid on the two-user toy.
    let toy = two_user_toy()?;
    let grid = grid_oracle(&toy, &quad, 200)?;
    let convex = solve_special_case(&toy, &quad, &xi, SolveOptions::default())?;
    let gap = (convex.rate.objective_e - grid.rate.objective_e).abs() / grid.rate.objective_e.abs();
    out.push(CheckResult::limit("convex special case vs grid oracle", gap, 5e-3));
    out.push(CheckResult::limit("convex special case KKT residual", convex.kkt.max_scaled_residual(&toy), 1e-4));

    let esb = solve_esb(&toy, &quad, SolveOptions::default())?;
    let esb_grid = grid_oracle_fixed_b(&toy, &quad, &esb.b, 2000)?;
    let gap = (esb.rate.objective_e - esb_grid.rate.objective_e).abs() / esb_grid.rate.objective_e.abs();
    out.push(CheckResult::limit("equal-bandwidth solver vs grid oracle", gap, 1e-3));
    out.push(CheckResult::limit("equal-bandwidth KKT residual", esb.kkt.max_scaled_residual(&toy), 1e-4));
    Ok(out)
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run_all().unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
