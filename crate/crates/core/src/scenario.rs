//! Indoor deployment instances and link-budget constants.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::absorption::{
    synthesize_nacsr, AbsorptionModel, AbsorptionTable, ExponentialAbsorption, Interpolation, NacsrProfile,
    RegionTag,
};
use crate::error::{Error, Result};
use crate::spectrum::SpectrumConfig;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Gap enforced between tied distances.
pub const TIE_EPSILON_M: f64 = 1e-9;

pub fn dbm_to_watt(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomGeometry {
    pub width: f64,
    pub depth: f64,
    /// Height of the ceiling AP above the users' terminals.
    pub ap_user_height_delta: f64,
}

impl RoomGeometry {
    pub fn new(width: f64, depth: f64, ap_user_height_delta: f64) -> Result<Self> {
        let g = Self { width, depth, ap_user_height_delta };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.width, self.depth, self.ap_user_height_delta].iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("room dimensions must be positive: {self:?}")))
        }
    }

    /// AP-user distance for a user at floor position `(x, y)` relative to the
    /// point under the AP.
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        (x * x + y * y + self.ap_user_height_delta * self.ap_user_height_delta).sqrt()
    }

    /// Distance to a floor corner, the largest possible.
    pub fn max_distance(&self) -> f64 {
        self.distance(self.width / 2.0, self.depth / 2.0)
    }

    pub fn floor_diagonal(&self) -> f64 {
        self.width.hypot(self.depth)
    }
}

/// Antenna gains and noise density are linear SI; `rho` is derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub g_a: f64,
    pub g_u: f64,
    /// Noise power spectral density [W/Hz].
    pub n0: f64,
    /// `g_a g_u (c / 4 pi)^2 / n0`.
    pub rho: f64,
    pub p_tot: f64,
    pub p_max: f64,
}

impl LinkBudget {
    pub fn new(g_a: f64, g_u: f64, n0: f64, p_tot: f64, p_max: f64) -> Result<Self> {
        if ![g_a, g_u, n0, p_tot, p_max].iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidConfig("link budget entries must be positive".into()));
        }
        let rho = rho(g_a, g_u, n0);
        Ok(Self { g_a, g_u, n0, rho, p_tot, p_max })
    }

    /// Rebuilds a budget known only through `rho` (unit gains).
    pub fn from_rho(rho_value: f64, p_tot: f64, p_max: f64) -> Result<Self> {
        if !(rho_value > 0.0) {
            return Err(Error::InvalidConfig("rho must be positive".into()));
        }
        let n0 = (SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI)).powi(2) / rho_value;
        let mut b = Self::new(1.0, 1.0, n0, p_tot, p_max)?;
        b.rho = rho_value;
        Ok(b)
    }

    pub fn with_p_tot(&self, p_tot: f64, n_users: usize) -> Result<Self> {
        Self::new(self.g_a, self.g_u, self.n0, p_tot, 1.25 * p_tot / n_users as f64)
    }

    pub fn validate(&self, n_s: usize) -> Result<()> {
        let recomputed = rho(self.g_a, self.g_u, self.n0);
        if (recomputed - self.rho).abs() > 1e-12 * self.rho.abs() {
            return Err(Error::InvalidConfig(format!("rho {:e} disagrees with gains ({recomputed:e})", self.rho)));
        }
        if self.p_tot > n_s as f64 * self.p_max {
            return Err(Error::Infeasible(format!(
                "p_tot = {:e} W exceeds n_s * p_max = {:e} W",
                self.p_tot,
                n_s as f64 * self.p_max
            )));
        }
        Ok(())
    }
}

fn rho(g_a: f64, g_u: f64, n0: f64) -> f64 {
    g_a * g_u * (SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI)).powi(2) / n0
}

/// Reference system parameters for the 25 m x 25 m, 15-user room.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceDefaults {
    pub geometry: RoomGeometry,
    pub budget: LinkBudget,
    pub spectrum: SpectrumConfig,
}

pub const TABLE1_USERS: usize = 15;

pub fn reference_defaults() -> ReferenceDefaults {
    let n_i = TABLE1_USERS;
    let p_tot = dbm_to_watt(-5.0);
    let geometry = RoomGeometry { width: 25.0, depth: 25.0, ap_user_height_delta: 1.7 };
    let budget = LinkBudget::new(db_to_linear(30.0), db_to_linear(20.0), dbm_to_watt(-174.0), p_tot, 1.25 * p_tot / n_i as f64)
        .expect("reference budget is valid");
    let spectrum = SpectrumConfig { epsilon_f: 752e9, b_tot: 50e9, b_max: 5e9, n_s: n_i };
    ReferenceDefaults { geometry, budget, spectrum }
}

/// Draws `n_users` floor positions uniformly and returns their AP distances
/// in ascending order.
pub fn sample_scenario(geometry: &RoomGeometry, n_users: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(&mut rng, geometry, n_users)
}

/// `n_t` independent distance vectors from one seeded stream.
pub fn sample_batch(geometry: &RoomGeometry, n_users: usize, n_t: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_t).map(|_| sample_with(&mut rng, geometry, n_users)).collect()
}

fn sample_with(rng: &mut ChaCha8Rng, g: &RoomGeometry, n_users: usize) -> Vec<f64> {
    let mut d: Vec<f64> = (0..n_users)
        .map(|_| {
            let x = rng.gen_range(-g.width / 2.0..=g.width / 2.0);
            let y = rng.gen_range(-g.depth / 2.0..=g.depth / 2.0);
            g.distance(x, y)
        })
        .collect();
    sort_strict(&mut d);
    d
}

/// Sorts ascending and nudges ties apart so the order is strict.
pub fn sort_strict(d: &mut [f64]) {
    d.sort_by(f64::total_cmp);
    for i in 1..d.len() {
        if d[i] <= d[i - 1] {
            d[i] = d[i - 1] + TIE_EPSILON_M;
        }
    }
}

/// One problem instance: distances plus everything the rate model needs.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub d: Vec<f64>,
    pub geometry: RoomGeometry,
    pub budget: LinkBudget,
    pub spectrum: SpectrumConfig,
    pub absorption: AbsorptionModel,
}

impl Scenario {
    pub fn new(
        mut d: Vec<f64>,
        geometry: RoomGeometry,
        budget: LinkBudget,
        spectrum: SpectrumConfig,
        absorption: AbsorptionModel,
    ) -> Result<Self> {
        if d.len() != spectrum.n_s {
            return Err(Error::DimensionMismatch { what: "distance vector", expected: spectrum.n_s, got: d.len() });
        }
        if d.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidConfig("distances must be positive".into()));
        }
        geometry.validate()?;
        spectrum.validate()?;
        budget.validate(spectrum.n_s)?;
        sort_strict(&mut d);
        Ok(Self { d, geometry, budget, spectrum, absorption })
    }

    pub fn n_s(&self) -> usize {
        self.spectrum.n_s
    }

    /// Same link and spectrum with a different distance vector.
    pub fn with_distances(&self, d: Vec<f64>) -> Result<Self> {
        Self::new(d, self.geometry, self.budget, self.spectrum, self.absorption.clone())
    }
}

/// JSON description of an absorption model inside a scenario fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AbsorptionSpec {
    Exponential {
        params: ExponentialParams,
    },
    Table {
        csv_path: PathBuf,
        #[serde(default = "default_interpolation")]
        interpolation: Interpolation,
        #[serde(default = "default_region")]
        region: RegionTag,
    },
    Synthetic {
        params: SyntheticParams,
    },
    /// A generated NACSR table, reproducible from its seed.
    Nacsr {
        params: NacsrParams,
    },
}

fn default_interpolation() -> Interpolation {
    Interpolation::CubicMonotone
}

fn default_region() -> RegionTag {
    RegionTag::Untagged
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialParams {
    pub eta: [f64; 3],
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub eta: [f64; 3],
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
    pub ripple_amplitude: f64,
    pub ripple_period_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NacsrParams {
    pub profile: NacsrProfile,
    pub seed: u64,
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
}

impl AbsorptionSpec {
    /// Builds the model; relative CSV paths resolve against `base_dir`.
    pub fn build(&self, base_dir: Option<&Path>) -> Result<AbsorptionModel> {
        match self {
            AbsorptionSpec::Exponential { params } => Ok(AbsorptionModel::Exponential(ExponentialAbsorption::new(
                params.eta,
                params.f_lo_hz,
                params.f_hi_hz,
            )?)),
            AbsorptionSpec::Table { csv_path, interpolation, region } => {
                let path = match base_dir {
                    Some(dir) if csv_path.is_relative() => dir.join(csv_path),
                    _ => csv_path.clone(),
                };
                Ok(AbsorptionModel::table(AbsorptionTable::load_csv(path, *region)?, *interpolation))
            }
            AbsorptionSpec::Synthetic { params } => AbsorptionModel::synthetic(
                ExponentialAbsorption::new(params.eta, params.f_lo_hz, params.f_hi_hz)?,
                params.ripple_amplitude,
                params.ripple_period_hz,
            ),
            AbsorptionSpec::Nacsr { params } => Ok(AbsorptionModel::table(
                synthesize_nacsr((params.f_lo_hz, params.f_hi_hz), params.profile, params.seed)?,
                Interpolation::CubicMonotone,
            )),
        }
    }
}

/// On-disk scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFixture {
    pub distances_m: Vec<f64>,
    pub epsilon_f_hz: f64,
    pub b_tot_hz: f64,
    pub b_max_hz: f64,
    pub p_tot_w: f64,
    pub p_max_w: f64,
    pub rho: f64,
    pub absorption: AbsorptionSpec,
    /// Room used when a solver needs to sample more instances; defaults to
    /// the reference room.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room: Option<RoomGeometry>,
}

impl ScenarioFixture {
    pub fn from_scenario(s: &Scenario, absorption: AbsorptionSpec) -> Self {
        Self {
            distances_m: s.d.clone(),
            epsilon_f_hz: s.spectrum.epsilon_f,
            b_tot_hz: s.spectrum.b_tot,
            b_max_hz: s.spectrum.b_max,
            p_tot_w: s.budget.p_tot,
            p_max_w: s.budget.p_max,
            rho: s.budget.rho,
            absorption,
            room: Some(s.geometry),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_scenario(&self, base_dir: Option<&Path>) -> Result<Scenario> {
        let n_s = self.distances_m.len();
        let spectrum = SpectrumConfig::new(self.epsilon_f_hz, self.b_tot_hz, self.b_max_hz, n_s)?;
        let budget = LinkBudget::from_rho(self.rho, self.p_tot_w, self.p_max_w)?;
        let geometry = self.room.unwrap_or(reference_defaults().geometry);
        let absorption = self.absorption.build(base_dir)?;
        Scenario::new(self.distances_m.clone(), geometry, budget, spectrum, absorption)
    }
}
