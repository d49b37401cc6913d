//! Fixed-node quadrature rules for the per-sub-band rate integrals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureRule {
    GaussLegendre,
    CompositeSimpson,
}

/// Quadrature settings as they appear in configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub rule: QuadratureRule,
    pub nodes_per_subband: usize,
    /// Relative change tolerated between a rule and its refinement.
    pub refinement_tol: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { rule: QuadratureRule::GaussLegendre, nodes_per_subband: 33, refinement_tol: 1e-8 }
    }
}

impl QuadratureSpec {
    pub fn gauss_legendre(nodes: usize) -> Self {
        Self { nodes_per_subband: nodes, ..Self::default() }
    }

    /// Same rule with roughly twice the nodes (33 -> 65, 65 -> 129).
    pub fn refined(&self) -> Self {
        Self { nodes_per_subband: 2 * self.nodes_per_subband - 1, ..*self }
    }

    pub fn build(&self) -> Result<Quadrature> {
        Quadrature::new(*self)
    }
}

/// A rule with its nodes and weights on `[-1, 1]` precomputed.
#[derive(Debug, Clone)]
pub struct Quadrature {
    spec: QuadratureSpec,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Quadrature {
    pub fn new(spec: QuadratureSpec) -> Result<Self> {
        if spec.nodes_per_subband < 3 {
            return Err(Error::InvalidConfig(format!(
                "quadrature needs at least 3 nodes, got {}",
                spec.nodes_per_subband
            )));
        }
        let (nodes, weights) = match spec.rule {
            QuadratureRule::GaussLegendre => gauss_legendre(spec.nodes_per_subband),
            QuadratureRule::CompositeSimpson => simpson(spec.nodes_per_subband),
        };
        Ok(Self { spec, nodes, weights })
    }

    pub fn spec(&self) -> QuadratureSpec {
        self.spec
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Physical nodes and weights for `[a, b]`.
    pub fn points(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes.iter().zip(&self.weights).map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.points(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

/// Legendre nodes by Newton iteration from Chebyshev guesses.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// `P_n(x)` and `P_n'(x)`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite Simpson on an odd number of equally spaced nodes.
fn simpson(n: usize) -> (Vec<f64>, Vec<f64>) {
    let n = if n % 2 == 0 { n + 1 } else { n };
    let h = 2.0 / (n - 1) as f64;
    let nodes = (0..n).map(|i| -1.0 + h * i as f64).collect();
    let weights = (0..n)
        .map(|i| {
            let c = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect();
    (nodes, weights)
}
