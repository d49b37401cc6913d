//! Achievable sub-band rates, the proportional-fair objective and the
//! aggregate rate.

use serde::{Deserialize, Serialize};

use crate::absorption::ExponentialAbsorption;
use crate::error::{Error, Result};
use crate::quadrature::Quadrature;
use crate::scenario::Scenario;
use crate::spectrum::centers;

/// Rates below this [bit/s] are floored before taking logs.
pub const R_FLOOR: f64 = 1.0;

/// `-k d` is clamped here before exponentiation.
pub const EXPONENT_FLOOR: f64 = -700.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    /// Per-sub-band rate [bit/s].
    pub r: Vec<f64>,
    /// `sum ln(max(r_s, R_FLOOR))`.
    pub objective_e: f64,
    /// `sum r_s` [bit/s].
    pub r_ag: f64,
}

impl RateResult {
    pub fn from_rates(r: Vec<f64>) -> Self {
        let objective_e = objective(&r);
        let r_ag = r.iter().sum();
        Self { r, objective_e, r_ag }
    }
}

pub fn objective(r: &[f64]) -> f64 {
    r.iter().map(|&rs| rs.max(R_FLOOR).ln()).sum()
}

/// Sub-band edges, snapped onto the model domain when rounding in the
/// center arithmetic pushed them out by a few ulps.
fn band_edges(scenario: &Scenario, f_s: f64, b_s: f64) -> Result<(f64, f64)> {
    let (d_lo, d_hi) = scenario.absorption.domain();
    let slack = 1e-12 * d_hi;
    let mut lo = f_s - 0.5 * b_s;
    let mut hi = f_s + 0.5 * b_s;
    if lo < d_lo && lo >= d_lo - slack {
        lo = d_lo;
    }
    if hi > d_hi && hi <= d_hi + slack {
        hi = d_hi;
    }
    scenario.absorption.check_domain(lo)?;
    scenario.absorption.check_domain(hi)?;
    Ok((lo, hi))
}

/// Rate of one sub-band: the integral over `[f_s - b_s/2, f_s + b_s/2]` of
/// `log2(1 + p rho exp(-k(f) d) / (f^2 d^2 b))`.
pub fn rate_subband(scenario: &Scenario, quad: &Quadrature, d_s: f64, p_s: f64, b_s: f64, f_s: f64) -> Result<f64> {
    if !(p_s >= 0.0 && b_s >= 0.0) {
        return Err(Error::InvalidConfig(format!("negative power {p_s} or bandwidth {b_s}")));
    }
    if p_s == 0.0 || b_s == 0.0 {
        return Ok(0.0);
    }
    let (lo, hi) = band_edges(scenario, f_s, b_s)?;
    let model = &scenario.absorption;
    let snr_scale = p_s * scenario.budget.rho / (d_s * d_s * b_s);
    let mut acc = 0.0;
    for (f, w) in quad.points(lo, hi) {
        let atten = (-model.value_unchecked(f) * d_s).max(EXPONENT_FLOOR).exp();
        let v = (snr_scale * atten / (f * f)).ln_1p();
        if !v.is_finite() {
            return Err(Error::NonFiniteIntegrand { f_hz: f });
        }
        acc += w * v;
    }
    Ok(acc / std::f64::consts::LN_2)
}

/// `d r_s / d p_s` by the same quadrature as [`rate_subband`].
pub fn rate_subband_dp(scenario: &Scenario, quad: &Quadrature, d_s: f64, p_s: f64, b_s: f64, f_s: f64) -> Result<f64> {
    if b_s == 0.0 {
        return Ok(0.0);
    }
    let (lo, hi) = band_edges(scenario, f_s, b_s)?;
    let model = &scenario.absorption;
    let g_scale = scenario.budget.rho / (d_s * d_s * b_s);
    let mut acc = 0.0;
    for (f, w) in quad.points(lo, hi) {
        let atten = (-model.value_unchecked(f) * d_s).max(EXPONENT_FLOOR).exp();
        let g = g_scale * atten / (f * f);
        acc += w * g / (1.0 + p_s * g);
    }
    Ok(acc / std::f64::consts::LN_2)
}

/// Midpoint form of the sub-band rate for exponential absorption, with the
/// center frequency `f_s = eps + b_prefix + b_s / 2`.
pub fn rate_closed_form(
    scenario: &Scenario,
    d_s: f64,
    p_s: f64,
    b_s: f64,
    b_prefix: f64,
    eta: &ExponentialAbsorption,
) -> f64 {
    if p_s == 0.0 || b_s == 0.0 {
        return 0.0;
    }
    let f = scenario.spectrum.epsilon_f + b_prefix + 0.5 * b_s;
    let k = eta.value_unchecked(f);
    let snr = p_s * scenario.budget.rho * (-d_s * k).max(EXPONENT_FLOOR).exp() / (b_s * d_s * d_s * f * f);
    b_s * snr.ln_1p() / std::f64::consts::LN_2
}

/// Per-sub-band rates for the scenario's distances under `(p, b)`.
pub fn subband_rates(scenario: &Scenario, quad: &Quadrature, d: &[f64], p: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = scenario.n_s();
    for (what, len) in [("distance vector", d.len()), ("power vector", p.len())] {
        if len != n {
            return Err(Error::DimensionMismatch { what, expected: n, got: len });
        }
    }
    let f = centers(&scenario.spectrum, b)?;
    (0..n).map(|s| rate_subband(scenario, quad, d[s], p[s], b[s], f[s])).collect()
}

/// Rates, objective and aggregate rate at `(p, b)` for the scenario's own
/// distance vector.
pub fn evaluate(scenario: &Scenario, quad: &Quadrature, p: &[f64], b: &[f64]) -> Result<RateResult> {
    evaluate_at(scenario, quad, &scenario.d, p, b)
}

pub fn evaluate_at(scenario: &Scenario, quad: &Quadrature, d: &[f64], p: &[f64], b: &[f64]) -> Result<RateResult> {
    Ok(RateResult::from_rates(subband_rates(scenario, quad, d, p, b)?))
}

/// Closed-form counterpart of [`evaluate`].
pub fn evaluate_closed_form(scenario: &Scenario, eta: &ExponentialAbsorption, p: &[f64], b: &[f64]) -> RateResult {
    let mut prefix = 0.0;
    let r = (0..scenario.n_s())
        .map(|s| {
            let r = rate_closed_form(scenario, scenario.d[s], p[s], b[s], prefix, eta);
            prefix += b[s];
            r
        })
        .collect();
    RateResult::from_rates(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::absorption::{AbsorptionModel, AbsorptionTable, Interpolation, RegionTag};
    use crate::quadrature::QuadratureSpec;
    use crate::scenario::{reference_defaults, LinkBudget};
    use crate::spectrum::SpectrumConfig;

    fn flat_scenario(k: f64, n: usize) -> Scenario {
        let t = reference_defaults();
        let table = AbsorptionTable::new(vec![(7.0e11, k), (9.0e11, k)], RegionTag::Untagged).unwrap();
        let spectrum = SpectrumConfig::new(7.52e11, 3e9 * n as f64, 5e9, n).unwrap();
        let budget = t.budget.with_p_tot(t.budget.p_tot, n).unwrap();
        let d = (1..=n).map(|i| 1.0 + i as f64).collect();
        Scenario::new(d, t.geometry, budget, spectrum, AbsorptionModel::table(table, Interpolation::Linear)).unwrap()
    }

    #[test]
    fn zero_power_or_bandwidth_gives_zero() {
        let s = flat_scenario(0.1, 3);
        let q = QuadratureSpec::default().build().unwrap();
        assert_eq!(rate_subband(&s, &q, 2.0, 0.0, 1e9, 7.6e11).unwrap(), 0.0);
        assert_eq!(rate_subband(&s, &q, 2.0, 1e-5, 0.0, 7.6e11).unwrap(), 0.0);
    }

    #[test]
    fn constant_snr_limit() {
        // k = 0, d = 1 m, p rho / (f^2 b) = 3 at the band center
        let s = flat_scenario(0.0, 3);
        let q = QuadratureSpec::default().build().unwrap();
        let f0 = 7.6e11;
        let b = 1e8;
        let p = 3.0 * f0 * f0 * b / s.budget.rho;
        let r = rate_subband(&s, &q, 1.0, p, b, f0).unwrap();
        assert!((r / (2.0 * b) - 1.0).abs() < 1e-3, "{r}");
    }

    #[test]
    fn out_of_domain_band() {
        let s = flat_scenario(0.1, 3);
        let q = QuadratureSpec::default().build().unwrap();
        assert!(matches!(
            rate_subband(&s, &q, 2.0, 1e-5, 4e9, 8.99e11),
            Err(Error::FrequencyOutOfDomain { .. })
        ));
    }

    #[test]
    fn all_zero_power_objective_floor() {
        let s = flat_scenario(0.1, 4);
        let q = QuadratureSpec::default().build().unwrap();
        let res = evaluate(&s, &q, &[0.0; 4], &s.spectrum.equal_split()).unwrap();
        assert_eq!(res.r_ag, 0.0);
        assert_eq!(res.objective_e, 4.0 * R_FLOOR.ln());
    }

    #[test]
    fn doubling_power_never_lowers_rates() {
        let s = flat_scenario(0.2, 5);
        let q = QuadratureSpec::default().build().unwrap();
        let b = s.spectrum.equal_split();
        let p = vec![s.budget.p_max / 2.0; 5];
        let p2: Vec<f64> = p.iter().map(|v| v * 2.0).collect();
        let r1 = evaluate(&s, &q, &p, &b).unwrap();
        let r2 = evaluate(&s, &q, &p2, &b).unwrap();
        assert!(r1.r.iter().zip(&r2.r).all(|(a, b)| b > a));
        assert!((r1.r_ag - r1.r.iter().sum::<f64>()).abs() <= 1e-12 * r1.r_ag);
    }

    #[test]
    fn power_derivative_matches_difference() {
        let s = flat_scenario(0.2, 2);
        let q = QuadratureSpec::default().build().unwrap();
        let (d, p, b, f) = (6.0, 1e-5, 3e9, 7.7e11);
        let h = 1e-10;
        let fd = (rate_subband(&s, &q, d, p + h, b, f).unwrap() - rate_subband(&s, &q, d, p - h, b, f).unwrap()) / (2.0 * h);
        let an = rate_subband_dp(&s, &q, d, p, b, f).unwrap();
        assert!((fd / an - 1.0).abs() < 1e-6, "{fd} vs {an}");
    }

    #[test]
    fn budget_helper_keeps_ratio() {
        let b = reference_defaults().budget;
        let b2: LinkBudget = b.with_p_tot(b.p_tot, 2).unwrap();
        assert!((b2.p_max - 1.25 * b.p_tot / 2.0).abs() < 1e-18);
    }
}
