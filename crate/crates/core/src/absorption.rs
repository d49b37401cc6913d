//! Molecular absorption coefficient models `k(f)`.
//!
//! Three flavours share one evaluation interface: tabulated data with
//! linear or monotone-cubic interpolation, the three-parameter exponential
//! `k(f) = exp(eta1 + eta2 f) + eta3`, and a rippled exponential used to
//! produce deliberately non-exponential spectra. All models reject
//! frequencies outside their declared domain instead of extrapolating.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which side of a transmission window a table describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionTag {
    /// Absorption trends downward with frequency.
    Nacsr,
    /// Absorption trends upward with frequency.
    Pacsr,
    Untagged,
}

/// Tabulated `(frequency [Hz], k [1/m])` samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionTable {
    freqs: Vec<f64>,
    k: Vec<f64>,
    region: RegionTag,
}

impl AbsorptionTable {
    pub fn new(entries: Vec<(f64, f64)>, region: RegionTag) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::InvalidTable(format!(
                "need at least 2 entries, got {}",
                entries.len()
            )));
        }
        let (freqs, k): (Vec<f64>, Vec<f64>) = entries.into_iter().unzip();
        for (i, w) in freqs.windows(2).enumerate() {
            if w[1] == w[0] {
                return Err(Error::InvalidTable(format!(
                    "duplicate frequency {} Hz at row {}",
                    w[1],
                    i + 1
                )));
            }
            if !(w[1] > w[0]) {
                return Err(Error::InvalidTable(format!(
                    "frequencies not strictly increasing at row {}",
                    i + 1
                )));
            }
        }
        if let Some(bad) = k.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidTable(format!(
                "absorption coefficient {bad} is negative or non-finite"
            )));
        }
        if freqs.iter().any(|f| !f.is_finite()) {
            return Err(Error::InvalidTable("non-finite frequency".into()));
        }
        let table = Self { freqs, k, region };
        let slope = table.trend_slope();
        match region {
            RegionTag::Nacsr if slope >= 0.0 => Err(Error::InvalidTable(format!(
                "tagged NACSR but linear trend slope is {slope:e}"
            ))),
            RegionTag::Pacsr if slope <= 0.0 => Err(Error::InvalidTable(format!(
                "tagged PACSR but linear trend slope is {slope:e}"
            ))),
            _ => Ok(table),
        }
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.freqs
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.k
    }

    pub fn region(&self) -> RegionTag {
        self.region
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.freqs[0], self.freqs[self.freqs.len() - 1])
    }

    pub fn entries(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.freqs.iter().copied().zip(self.k.iter().copied())
    }

    /// Least-squares slope of `k` against frequency, in (1/m)/Hz.
    pub fn trend_slope(&self) -> f64 {
        let n = self.freqs.len() as f64;
        let f_mean = self.freqs.iter().sum::<f64>() / n;
        let k_mean = self.k.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (f, k) in self.entries() {
            sxy += (f - f_mean) * (k - k_mean);
            sxx += (f - f_mean) * (f - f_mean);
        }
        sxy / sxx
    }

    /// Reads the `frequency_hz,k_per_m` CSV format.
    pub fn from_csv_reader<R: Read>(reader: R, region: RegionTag) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "frequency_hz" || &headers[1] != "k_per_m" {
            return Err(Error::InvalidTable(format!(
                "expected header `frequency_hz,k_per_m`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut entries = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != 2 {
                return Err(Error::InvalidTable(format!("row {} has {} fields", row + 1, record.len())));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::InvalidTable(format!("row {}: `{s}`: {e}", row + 1)))
            };
            entries.push((parse(&record[0])?, parse(&record[1])?));
        }
        Self::new(entries, region)
    }

    pub fn load_csv(path: impl AsRef<Path>, region: RegionTag) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(std::io::BufReader::new(file), region)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "frequency_hz,k_per_m")?;
        for (f, k) in self.entries() {
            writeln!(w, "{f},{k}")?;
        }
        Ok(())
    }
}

/// `k(f) = exp(eta1 + eta2 f) + eta3` on a declared frequency domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialAbsorption {
    eta: [f64; 3],
    domain: (f64, f64),
}

impl ExponentialAbsorption {
    /// Fails when the model would go negative (or non-finite) anywhere on
    /// `[f_lo, f_hi]`. The model is monotone in `f`, so the endpoints decide.
    pub fn new(eta: [f64; 3], f_lo: f64, f_hi: f64) -> Result<Self> {
        if !(f_lo < f_hi) || !f_lo.is_finite() || !f_hi.is_finite() {
            return Err(Error::InvalidModel(format!("bad domain [{f_lo}, {f_hi}]")));
        }
        if eta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel(format!("non-finite parameters {eta:?}")));
        }
        let m = Self { eta, domain: (f_lo, f_hi) };
        for f in [f_lo, f_hi] {
            let k = m.raw(f);
            if !(k.is_finite() && k >= 0.0) {
                return Err(Error::InvalidModel(format!(
                    "k({f:e} Hz) = {k:e} is negative or non-finite for eta = {eta:?}"
                )));
            }
        }
        Ok(m)
    }

    pub fn eta(&self) -> [f64; 3] {
        self.eta
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    #[inline]
    fn raw(&self, f: f64) -> f64 {
        (self.eta[0] + self.eta[1] * f).exp() + self.eta[2]
    }

    /// Evaluates without a domain check; callers guarantee `f` is inside.
    #[inline]
    pub fn value_unchecked(&self, f: f64) -> f64 {
        self.raw(f)
    }

    /// `dk/df`.
    #[inline]
    pub fn derivative(&self, f: f64) -> f64 {
        self.eta[1] * (self.eta[0] + self.eta[1] * f).exp()
    }

    /// Tabulates the model at `n` evenly spaced frequencies over its domain.
    pub fn tabulate(&self, n: usize, region: RegionTag) -> Result<AbsorptionTable> {
        let (lo, hi) = self.domain;
        let entries = linspace(lo, hi, n).map(|f| (f, self.raw(f).max(0.0))).collect();
        AbsorptionTable::new(entries, region)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Linear,
    CubicMonotone,
}

/// Tabulated data plus the interpolant built on it.
#[derive(Debug, Clone)]
pub struct TabulatedModel {
    table: AbsorptionTable,
    interpolation: Interpolation,
    // Hermite tangents; empty for linear interpolation.
    tangents: Vec<f64>,
}

impl TabulatedModel {
    pub fn table(&self) -> &AbsorptionTable {
        &self.table
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    fn eval(&self, f: f64) -> f64 {
        let xs = &self.table.freqs;
        let ys = &self.table.k;
        // First index with xs[i] > f; f is inside the domain here.
        let upper = xs.partition_point(|&x| x <= f);
        if upper == 0 {
            return ys[0];
        }
        let i = upper - 1;
        if xs[i] == f || i == xs.len() - 1 {
            return ys[i];
        }
        let h = xs[i + 1] - xs[i];
        let t = (f - xs[i]) / h;
        let v = match self.interpolation {
            Interpolation::Linear => ys[i] + (ys[i + 1] - ys[i]) * t,
            Interpolation::CubicMonotone => {
                let t2 = t * t;
                let t3 = t2 * t;
                let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
                let h10 = t3 - 2.0 * t2 + t;
                let h01 = -2.0 * t3 + 3.0 * t2;
                let h11 = t3 - t2;
                let v = h00 * ys[i] + h10 * h * self.tangents[i] + h01 * ys[i + 1] + h11 * h * self.tangents[i + 1];
                // rounding can leave the segment's range by an ulp
                v.clamp(ys[i].min(ys[i + 1]), ys[i].max(ys[i + 1]))
            }
        };
        v.max(0.0)
    }
}

/// Fritsch-Carlson tangents: monotone data stays monotone between knots.
fn monotone_tangents(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let secants: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])).collect();
    let mut m = vec![0.0; n];
    m[0] = secants[0];
    m[n - 1] = secants[n - 2];
    for i in 1..n - 1 {
        m[i] = if secants[i - 1] * secants[i] <= 0.0 {
            0.0
        } else {
            (secants[i - 1] + secants[i]) / 2.0
        };
    }
    for i in 0..n - 1 {
        if secants[i] == 0.0 {
            m[i] = 0.0;
            m[i + 1] = 0.0;
            continue;
        }
        let a = m[i] / secants[i];
        let b = m[i + 1] / secants[i];
        let s = a * a + b * b;
        if s > 9.0 {
            let tau = 3.0 / s.sqrt();
            m[i] = tau * a * secants[i];
            m[i + 1] = tau * b * secants[i];
        }
    }
    m
}

/// Any absorption model the rate integrals can consume.
#[derive(Debug, Clone)]
pub enum AbsorptionModel {
    Table(TabulatedModel),
    Exponential(ExponentialAbsorption),
    /// Exponential base plus a sinusoidal ripple, clamped at zero.
    Synthetic {
        base: ExponentialAbsorption,
        ripple_amplitude: f64,
        ripple_period: f64,
    },
}

impl AbsorptionModel {
    pub fn table(table: AbsorptionTable, interpolation: Interpolation) -> Self {
        let tangents = match interpolation {
            Interpolation::Linear => Vec::new(),
            Interpolation::CubicMonotone => monotone_tangents(&table.freqs, &table.k),
        };
        AbsorptionModel::Table(TabulatedModel { table, interpolation, tangents })
    }

    pub fn synthetic(base: ExponentialAbsorption, ripple_amplitude: f64, ripple_period: f64) -> Result<Self> {
        if !(ripple_period > 0.0) || !ripple_amplitude.is_finite() {
            return Err(Error::InvalidModel("ripple period must be positive".into()));
        }
        Ok(AbsorptionModel::Synthetic { base, ripple_amplitude, ripple_period })
    }

    pub fn domain(&self) -> (f64, f64) {
        match self {
            AbsorptionModel::Table(t) => t.table.domain(),
            AbsorptionModel::Exponential(e) => e.domain,
            AbsorptionModel::Synthetic { base, .. } => base.domain,
        }
    }

    pub fn as_exponential(&self) -> Option<&ExponentialAbsorption> {
        match self {
            AbsorptionModel::Exponential(e) => Some(e),
            _ => None,
        }
    }

    pub fn check_domain(&self, f: f64) -> Result<()> {
        let (lo, hi) = self.domain();
        // NaN fails both comparisons and lands here too.
        if f >= lo && f <= hi {
            Ok(())
        } else {
            Err(Error::FrequencyOutOfDomain { f_hz: f, lo_hz: lo, hi_hz: hi })
        }
    }

    pub fn evaluate(&self, f: f64) -> Result<f64> {
        self.check_domain(f)?;
        Ok(self.value_unchecked(f))
    }

    /// Evaluation for hot loops that already validated the interval.
    #[inline]
    pub fn value_unchecked(&self, f: f64) -> f64 {
        match self {
            AbsorptionModel::Table(t) => t.eval(f),
            AbsorptionModel::Exponential(e) => e.raw(f).max(0.0),
            AbsorptionModel::Synthetic { base, ripple_amplitude, ripple_period } => {
                let ripple = ripple_amplitude * (std::f64::consts::TAU * f / ripple_period).sin();
                (base.raw(f) + ripple).max(0.0)
            }
        }
    }

    /// Samples the model on `n` evenly spaced points of `[f_lo, f_hi]`.
    pub fn tabulate(&self, f_lo: f64, f_hi: f64, n: usize, region: RegionTag) -> Result<AbsorptionTable> {
        self.check_domain(f_lo)?;
        self.check_domain(f_hi)?;
        let entries = linspace(f_lo, f_hi, n).map(|f| (f, self.value_unchecked(f))).collect();
        AbsorptionTable::new(entries, region)
    }
}

/// Published parameter sets kept for reference. Their frequency unit is not
/// pinned down, so they may not yield a physical model; see `warning`.
#[derive(Debug, Clone, Serialize)]
pub struct ExponentialPreset {
    pub name: &'static str,
    pub eta: [f64; 3],
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
    pub warning: Option<String>,
}

impl ExponentialPreset {
    pub fn into_model(&self) -> Result<ExponentialAbsorption> {
        ExponentialAbsorption::new(self.eta, self.f_lo_hz, self.f_hi_hz)
    }
}

pub fn exponential_presets() -> Vec<ExponentialPreset> {
    let raw = [
        ("sr_n1", [10f64.powf(1.83), -(10f64.powf(-10.04)), 10f64.powf(-1.23)], 0.557e12, 0.671e12),
        ("sr_n2", [10f64.powf(0.89), -(10f64.powf(-10.8)), -(10f64.powf(-1.53))], 0.752e12, 0.868e12),
    ];
    raw.into_iter()
        .map(|(name, eta, lo, hi)| {
            let warning = match ExponentialAbsorption::new(eta, lo, hi) {
                Ok(_) => Some("frequency unit of the published parameters is ambiguous".to_string()),
                Err(e) => Some(format!("unphysical with f in Hz: {e}")),
            };
            ExponentialPreset { name, eta, f_lo_hz: lo, f_hi_hz: hi, warning }
        })
        .collect()
}

/// Result of [`fit_exponential`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ExponentialFit {
    pub model: ExponentialAbsorption,
    /// `max |k_i - model(f_i)| / k_i` over the fitted entries.
    pub max_rel_error: f64,
}

// Starting exponents in normalized frequency t = (f - f_lo)/(f_hi - f_lo).
const FIT_STARTS: [f64; 8] = [-12.0, -4.0, -1.5, -0.5, 0.5, 1.5, 4.0, 12.0];

struct FitData {
    t: Vec<f64>,
    k: Vec<f64>,
}

impl FitData {
    /// Best `(A, C)` for fixed exponent `beta`, and the residual sum of squares.
    fn linear_part(&self, beta: f64) -> Option<(f64, f64, f64)> {
        let n = self.t.len() as f64;
        let (mut suu, mut su, mut suk, mut sk) = (0.0, 0.0, 0.0, 0.0);
        for (&t, &k) in self.t.iter().zip(&self.k) {
            let u = (beta * t).exp();
            suu += u * u;
            su += u;
            suk += u * k;
            sk += k;
        }
        let det = suu * n - su * su;
        if !(det.abs() > 1e-12 * suu * n) {
            return None;
        }
        let a = (suk * n - su * sk) / det;
        let c = (suu * sk - su * suk) / det;
        let ssr = self.ssr(a, beta, c);
        ssr.is_finite().then_some((a, c, ssr))
    }

    fn ssr(&self, a: f64, beta: f64, c: f64) -> f64 {
        self.t
            .iter()
            .zip(&self.k)
            .map(|(&t, &k)| {
                let r = k - a * (beta * t).exp() - c;
                r * r
            })
            .sum()
    }

    fn profile(&self, beta: f64) -> f64 {
        self.linear_part(beta).map_or(f64::INFINITY, |(_, _, s)| s)
    }

    /// Golden-section search of the profiled residual on `[lo, hi]`.
    fn golden(&self, mut lo: f64, mut hi: f64) -> f64 {
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut x1 = hi - inv_phi * (hi - lo);
        let mut x2 = lo + inv_phi * (hi - lo);
        let (mut f1, mut f2) = (self.profile(x1), self.profile(x2));
        for _ in 0..200 {
            if (hi - lo).abs() <= 1e-14 * (1.0 + lo.abs().max(hi.abs())) {
                break;
            }
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - inv_phi * (hi - lo);
                f1 = self.profile(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + inv_phi * (hi - lo);
                f2 = self.profile(x2);
            }
        }
        if f1 <= f2 {
            x1
        } else {
            x2
        }
    }

    /// Levenberg-Marquardt polish of all three parameters.
    fn polish(&self, mut p: [f64; 3]) -> [f64; 3] {
        let mut mu = 1e-3;
        let mut cost = self.ssr(p[0], p[1], p[2]);
        for _ in 0..100 {
            let mut jtj = [[0.0; 3]; 3];
            let mut jtr = [0.0; 3];
            for (&t, &k) in self.t.iter().zip(&self.k) {
                let u = (p[1] * t).exp();
                let r = k - p[0] * u - p[2];
                let j = [u, p[0] * t * u, 1.0];
                for a in 0..3 {
                    jtr[a] += j[a] * r;
                    for b in 0..3 {
                        jtj[a][b] += j[a] * j[b];
                    }
                }
            }
            let mut improved = false;
            for _ in 0..30 {
                let mut m = jtj;
                for (a, row) in m.iter_mut().enumerate() {
                    row[a] += mu * jtj[a][a].max(1e-300);
                }
                let Some(step) = solve3(m, jtr) else {
                    mu *= 10.0;
                    continue;
                };
                let cand = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
                let c = self.ssr(cand[0], cand[1], cand[2]);
                if c.is_finite() && c <= cost {
                    let rel = (cost - c) / cost.max(1e-300);
                    p = cand;
                    cost = c;
                    mu = (mu / 10.0).max(1e-15);
                    improved = rel > 1e-15;
                    break;
                }
                mu *= 10.0;
            }
            if !improved || cost == 0.0 {
                break;
            }
        }
        p
    }
}

fn solve3(m: [[f64; 3]; 3], r: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    if !(d.abs() > 0.0) || !d.is_finite() {
        return None;
    }
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut mc = m;
        for row in 0..3 {
            mc[row][c] = r[row];
        }
        *o = det(&mc) / d;
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// Least-squares fit of `exp(eta1 + eta2 f) + eta3` to the table entries in
/// `[f_lo, f_hi]`, from eight starting exponents.
///
/// The exponent is searched with the linear coefficients profiled out, then
/// all three parameters are polished jointly. Candidates whose exponential
/// term vanishes are rejected; if every start degenerates the table is
/// treated as flat and `eta2 = 0` is returned with the constant in `eta3`.
pub fn fit_exponential(table: &AbsorptionTable, f_lo: f64, f_hi: f64) -> Result<ExponentialFit> {
    if !(f_lo < f_hi) {
        return Err(Error::InsufficientData(format!("empty range [{f_lo}, {f_hi}]")));
    }
    let (t_lo, t_hi) = table.domain();
    if f_lo < t_lo || f_hi > t_hi {
        return Err(Error::InsufficientData(format!(
            "range [{f_lo:e}, {f_hi:e}] not covered by table domain [{t_lo:e}, {t_hi:e}]"
        )));
    }
    let width = f_hi - f_lo;
    let (t, k): (Vec<f64>, Vec<f64>) = table
        .entries()
        .filter(|(f, _)| *f >= f_lo && *f <= f_hi)
        .map(|(f, k)| ((f - f_lo) / width, k))
        .unzip();
    if t.len() < 4 {
        return Err(Error::InsufficientData(format!("{} entries in range, need 4", t.len())));
    }
    let data = FitData { t, k };
    let k_scale = data.k.iter().map(|v| v.abs()).sum::<f64>() / data.k.len() as f64;

    let to_model = |a: f64, beta: f64, c: f64| -> Option<ExponentialAbsorption> {
        if !(a > 1e-9 * k_scale) {
            return None;
        }
        let eta = [a.ln() - beta * f_lo / width, beta / width, c];
        ExponentialAbsorption::new(eta, f_lo, f_hi).ok()
    };

    let mut best: Option<(f64, ExponentialAbsorption)> = None;
    for &start in &FIT_STARTS {
        let (lo, hi) = if start > 0.0 { (start / 3.0, start * 3.0) } else { (start * 3.0, start / 3.0) };
        let beta = data.golden(lo, hi);
        let Some((a, c, _)) = data.linear_part(beta) else { continue };
        if !(a > 1e-9 * k_scale) {
            continue;
        }
        let [a, beta, c] = data.polish([a, beta, c]);
        let ssr = data.ssr(a, beta, c);
        let Some(model) = to_model(a, beta, c) else { continue };
        if best.as_ref().map_or(true, |(s, _)| ssr < *s) {
            best = Some((ssr, model));
        }
    }

    let model = match best {
        Some((_, m)) => m,
        None => {
            let mean = data.k.iter().sum::<f64>() / data.k.len() as f64;
            if !mean.is_finite() {
                return Err(Error::FitDiverged);
            }
            // Flat table: keep a vanishing exponential term so eta1 stays finite.
            let tiny = 1e-12 * mean.max(f64::MIN_POSITIVE);
            ExponentialAbsorption::new([tiny.ln(), 0.0, mean - tiny], f_lo, f_hi).map_err(|_| Error::FitDiverged)?
        }
    };

    let max_rel_error = table
        .entries()
        .filter(|(f, _)| *f >= f_lo && *f <= f_hi)
        .map(|(f, k)| (k - model.raw(f)).abs() / k.max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    Ok(ExponentialFit { model, max_rel_error })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NacsrProfile {
    /// Close to exponential; fits within a few percent.
    SmoothExponential,
    /// Exponential trend overlaid with narrow absorption lines.
    Wiggly,
}

pub const SYNTH_POINTS: usize = 512;

/// Generates a dense, strictly positive, downward-trending absorption table.
///
/// Shapes are defined over normalized frequency `t` in `[0, 1]`, so the same
/// seed yields the same profile stretched over any span.
pub fn synthesize_nacsr(span: (f64, f64), profile: NacsrProfile, seed: u64) -> Result<AbsorptionTable> {
    let (f_lo, f_hi) = span;
    if !(f_lo < f_hi) || !f_lo.is_finite() || !f_hi.is_finite() {
        return Err(Error::InvalidConfig(format!("bad span [{f_lo}, {f_hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp = 0.55 * rng.gen_range(0.9..1.1);
    let decay = 3.0 * rng.gen_range(0.9..1.1);
    let floor = 0.03 * rng.gen_range(0.9..1.1);
    let base = move |t: f64| amp * (-decay * t).exp() + floor;

    let shape: Box<dyn Fn(f64) -> f64> = match profile {
        NacsrProfile::SmoothExponential => {
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            Box::new(move |t| base(t) * (1.0 + 0.015 * (std::f64::consts::TAU * 1.3 * t + phase).sin()))
        }
        NacsrProfile::Wiggly => {
            let n_lines = rng.gen_range(5..=7);
            // (center, half-width, relative height)
            let lines: Vec<(f64, f64, f64)> = (0..n_lines)
                .map(|i| {
                    let slot = (i as f64 + rng.gen_range(0.2..0.8)) / n_lines as f64;
                    (0.05 + 0.9 * slot, rng.gen_range(0.01..0.03), rng.gen_range(1.0..2.0))
                })
                .collect();
            Box::new(move |t| {
                let b = base(t);
                let extra: f64 = lines
                    .iter()
                    .map(|&(c, w, h)| h * base(c) * w * w / ((t - c) * (t - c) + w * w))
                    .sum();
                b + extra
            })
        }
    };

    let entries = linspace(0.0, 1.0, SYNTH_POINTS)
        .map(|t| (f_lo + t * (f_hi - f_lo), shape(t).max(1e-6)))
        .collect();
    AbsorptionTable::new(entries, RegionTag::Nacsr)
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
    (0..n).map(move |i| if i + 1 == n { hi } else { lo + step * i as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GHZ: f64 = 1e9;

    #[test]
    fn exponential_with_zero_exponent() {
        let m = AbsorptionModel::Exponential(ExponentialAbsorption::new([0.0, 0.0, 0.5], 1e11, 2e11).unwrap());
        assert_eq!(m.evaluate(1.5e11).unwrap(), 1.5);
    }

    #[test]
    fn linear_midpoint() {
        let t = AbsorptionTable::new(vec![(600.0 * GHZ, 1.0), (610.0 * GHZ, 3.0)], RegionTag::Untagged).unwrap();
        let m = AbsorptionModel::table(t, Interpolation::Linear);
        assert!((m.evaluate(605.0 * GHZ).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn out_of_domain_is_an_error() {
        let t = AbsorptionTable::new(vec![(1.0, 1.0), (2.0, 3.0)], RegionTag::Untagged).unwrap();
        let m = AbsorptionModel::table(t, Interpolation::CubicMonotone);
        assert!(matches!(m.evaluate(2.5), Err(Error::FrequencyOutOfDomain { .. })));
        assert!(matches!(m.evaluate(f64::NAN), Err(Error::FrequencyOutOfDomain { .. })));
    }

    #[test]
    fn table_rejects_bad_input() {
        assert!(AbsorptionTable::new(vec![(1.0, 1.0)], RegionTag::Untagged).is_err());
        assert!(AbsorptionTable::new(vec![(1.0, 1.0), (1.0, 2.0)], RegionTag::Untagged).is_err());
        assert!(AbsorptionTable::new(vec![(2.0, 1.0), (1.0, 2.0)], RegionTag::Untagged).is_err());
        assert!(AbsorptionTable::new(vec![(1.0, -1.0), (2.0, 2.0)], RegionTag::Untagged).is_err());
        // increasing data cannot carry the NACSR tag
        assert!(AbsorptionTable::new(vec![(1.0, 1.0), (2.0, 2.0)], RegionTag::Nacsr).is_err());
        assert!(AbsorptionTable::new(vec![(1.0, 2.0), (2.0, 1.0)], RegionTag::Nacsr).is_ok());
    }

    #[test]
    fn exponential_rejects_negative_domain() {
        assert!(ExponentialAbsorption::new([0.0, 0.0, -2.0], 1.0, 2.0).is_err());
        assert!(ExponentialAbsorption::new([0.0, 0.0, 1.0], 2.0, 1.0).is_err());
    }

    #[test]
    fn csv_duplicate_rejected_and_header_checked() {
        let dup = "frequency_hz,k_per_m\n1e12,0.5\n1e12,0.4\n";
        let err = AbsorptionTable::from_csv_reader(dup.as_bytes(), RegionTag::Untagged).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
        let bad_header = "f,k\n1,2\n3,4\n";
        assert!(AbsorptionTable::from_csv_reader(bad_header.as_bytes(), RegionTag::Untagged).is_err());
        let ok = "frequency_hz,k_per_m\n7.52e11,0.5\n7.53e11,0.4\n";
        let t = AbsorptionTable::from_csv_reader(ok.as_bytes(), RegionTag::Nacsr).unwrap();
        assert_eq!(t.len(), 2);
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        let back = AbsorptionTable::from_csv_reader(out.as_slice(), RegionTag::Nacsr).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn monotone_cubic_does_not_overshoot() {
        let entries = vec![(0.0, 5.0), (1.0, 5.0), (2.0, 0.1), (3.0, 0.0), (4.0, 0.0)];
        let t = AbsorptionTable::new(entries, RegionTag::Untagged).unwrap();
        let m = AbsorptionModel::table(t, Interpolation::CubicMonotone);
        for i in 0..=400 {
            let f = i as f64 * 0.01;
            let k = m.evaluate(f).unwrap();
            assert!((0.0..=5.0).contains(&k), "k({f}) = {k}");
        }
    }

    #[test]
    fn synthetic_clamps_at_zero() {
        let base = ExponentialAbsorption::new([0.0, 0.0, 0.0], 0.0, 10.0).unwrap();
        let m = AbsorptionModel::synthetic(base, 5.0, 4.0).unwrap();
        // 1 + 5 sin(2 pi 3/4) = -4 -> clamped
        assert_eq!(m.evaluate(3.0).unwrap(), 0.0);
        assert!((m.evaluate(1.0).unwrap() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn constant_table_fits_flat() {
        let entries = (0..50).map(|i| (7.5e11 + i as f64 * 1e9, 0.3)).collect();
        let t = AbsorptionTable::new(entries, RegionTag::Untagged).unwrap();
        let fit = fit_exponential(&t, 7.5e11, 7.5e11 + 49e9).unwrap();
        let eta = fit.model.eta();
        assert!(eta[1].abs() < 1e-20, "eta2 = {}", eta[1]);
        assert!((eta[2] - 0.3).abs() < 1e-9);
        assert!(fit.max_rel_error < 1e-6);
    }

    #[test]
    fn fit_needs_four_points() {
        let t = AbsorptionTable::new(vec![(1.0, 3.0), (2.0, 2.0), (3.0, 1.5), (4.0, 1.2)], RegionTag::Untagged).unwrap();
        assert!(matches!(fit_exponential(&t, 1.5, 4.0), Err(Error::InsufficientData(_))));
        assert!(fit_exponential(&t, 1.0, 4.0).is_ok());
        assert!(matches!(fit_exponential(&t, 0.5, 4.0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn presets_carry_warnings() {
        let presets = exponential_presets();
        assert_eq!(presets.len(), 2);
        let n2 = presets.iter().find(|p| p.name == "sr_n2").unwrap();
        assert!(n2.into_model().is_err());
        assert!(n2.warning.as_deref().unwrap().contains("unphysical"));
        assert!(presets.iter().all(|p| p.warning.is_some()));
    }
}
