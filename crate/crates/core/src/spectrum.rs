//! Sub-band partition arithmetic and distance-aware sub-band pairing.

use serde::{Deserialize, Serialize};

use crate::absorption::AbsorptionModel;
use crate::error::{Error, Result};
use crate::quadrature::{QuadratureSpec, Quadrature};

/// Spectrum of interest: where it starts and how it may be cut.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumConfig {
    /// Start frequency of the spectrum [Hz].
    pub epsilon_f: f64,
    /// Total bandwidth to distribute [Hz].
    pub b_tot: f64,
    /// Per-sub-band bandwidth cap [Hz].
    pub b_max: f64,
    pub n_s: usize,
}

impl SpectrumConfig {
    pub fn new(epsilon_f: f64, b_tot: f64, b_max: f64, n_s: usize) -> Result<Self> {
        let c = Self { epsilon_f, b_tot, b_max, n_s };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_s == 0 {
            return Err(Error::InvalidConfig("need at least one sub-band".into()));
        }
        if !(self.epsilon_f > 0.0 && self.epsilon_f.is_finite()) {
            return Err(Error::InvalidConfig(format!("start frequency {} must be positive", self.epsilon_f)));
        }
        if !(self.b_tot > 0.0 && self.b_max > 0.0) {
            return Err(Error::InvalidConfig("bandwidths must be positive".into()));
        }
        if self.b_tot > self.n_s as f64 * self.b_max {
            return Err(Error::Infeasible(format!(
                "b_tot = {:e} Hz exceeds n_s * b_max = {:e} Hz",
                self.b_tot,
                self.n_s as f64 * self.b_max
            )));
        }
        Ok(())
    }

    /// Highest frequency any box-feasible partition can reach.
    pub fn reachable_upper(&self) -> f64 {
        self.epsilon_f + self.n_s as f64 * self.b_max
    }

    pub fn equal_split(&self) -> Vec<f64> {
        vec![self.b_tot / self.n_s as f64; self.n_s]
    }
}

/// `A = L - I/2` with `L` the all-ones lower triangle, row-major.
pub fn mapping_matrix(n_s: usize) -> Vec<Vec<f64>> {
    (0..n_s)
        .map(|r| {
            (0..n_s)
                .map(|c| match c.cmp(&r) {
                    std::cmp::Ordering::Less => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Greater => 0.0,
                })
                .collect()
        })
        .collect()
}

/// Center frequencies `f_s = eps + sum_{k<s} b_k + b_s / 2`.
pub fn centers(config: &SpectrumConfig, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != config.n_s {
        return Err(Error::DimensionMismatch { what: "bandwidth vector", expected: config.n_s, got: b.len() });
    }
    if let Some(bad) = b.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidConfig(format!("negative bandwidth {bad}")));
    }
    Ok(centers_unchecked(config.epsilon_f, b))
}

pub(crate) fn centers_unchecked(epsilon_f: f64, b: &[f64]) -> Vec<f64> {
    let mut prefix = 0.0;
    b.iter()
        .map(|&bs| {
            let f = epsilon_f + prefix + 0.5 * bs;
            prefix += bs;
            f
        })
        .collect()
}

/// A concrete cut of the spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPartition {
    b: Vec<f64>,
    f: Vec<f64>,
}

impl SpectrumPartition {
    pub fn new(config: &SpectrumConfig, b: Vec<f64>) -> Result<Self> {
        if let Some(bad) = b.iter().find(|v| **v > config.b_max) {
            return Err(Error::InvalidConfig(format!("bandwidth {bad:e} Hz above b_max {:e} Hz", config.b_max)));
        }
        let f = centers(config, &b)?;
        Ok(Self { b, f })
    }

    pub fn equal(config: &SpectrumConfig) -> Self {
        let b = config.equal_split();
        let f = centers_unchecked(config.epsilon_f, &b);
        Self { b, f }
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.b
    }

    pub fn centers(&self) -> &[f64] {
        &self.f
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    /// `[f_s - b_s/2, f_s + b_s/2]` per sub-band.
    pub fn intervals(&self) -> Vec<(f64, f64)> {
        self.f.iter().zip(&self.b).map(|(&f, &b)| (f - 0.5 * b, f + 0.5 * b)).collect()
    }
}

/// Pairs users with sub-bands: the `i`-th nearest user gets the sub-band with
/// the `i`-th largest mean absorption. Returns `assignment[user] = sub-band`.
///
/// Mean absorption is the quadrature average of `k` over each sub-band; a
/// zero-width sub-band uses `k` at its center. Ties keep frequency order.
pub fn damc_pairing(d_sorted: &[f64], model: &AbsorptionModel, partition: &SpectrumPartition) -> Result<Vec<usize>> {
    if d_sorted.len() != partition.len() {
        return Err(Error::DimensionMismatch { what: "distance vector", expected: partition.len(), got: d_sorted.len() });
    }
    let quad = Quadrature::new(QuadratureSpec::gauss_legendre(16))?;
    let mut mean_k = Vec::with_capacity(partition.len());
    for (lo, hi) in partition.intervals() {
        model.check_domain(lo)?;
        model.check_domain(hi)?;
        let m = if hi > lo {
            quad.integrate(lo, hi, |f| model.value_unchecked(f)) / (hi - lo)
        } else {
            model.value_unchecked(lo)
        };
        mean_k.push(m);
    }
    Ok(pair_by_mean_absorption(&mean_k))
}

/// Index-wise pairing of users (nearest first) with sub-bands ranked by
/// descending mean absorption.
pub fn pair_by_mean_absorption(mean_k: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..mean_k.len()).collect();
    order.sort_by(|&a, &b| mean_k[b].total_cmp(&mean_k[a]).then(a.cmp(&b)));
    order
}
