//! Short-range potentials with a unique non-degenerate global maximum.
//!
//! All bundled families are analytic, so values, gradients and Hessians are
//! exact. The barrier is placed at the origin with height `e0` and principal
//! curvatures `lambda` (frequencies of the inverted harmonic approximation):
//! `V(x) = e0 - sum_j lambda_j^2 x_j^2 / 2 + O(|x|^3)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Analytic potential family.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PotentialKind {
    /// `V(x) = e0 * exp(-sum lambda_j^2 x_j^2 / (2 e0))`. Gaussian decay.
    Gaussian { e0: f64, lambda: Vec<f64> },
    /// `V(x) = e0 * (1 + sum lambda_j^2 x_j^2 / (2 e0 p))^{-p}`.
    /// Polynomial decay with exponent `rho = 2p`.
    Rational { e0: f64, lambda: Vec<f64>, p: f64 },
    /// 1D Eckart barrier `V(x) = e0 * sech^2(lambda x / sqrt(2 e0))`.
    Eckart { e0: f64, lambda: f64 },
    /// Exactly quadratic barrier `e0 - sum lambda_j^2 x_j^2 / 2`.
    /// Linear dynamics fixture; not short-range.
    Quadratic { e0: f64, lambda: Vec<f64> },
    /// Attractive Gaussian well `-depth * exp(-|x|^2 / (2 width^2))`.
    /// Focusing fixture for caustic tests; no barrier.
    GaussianWell { n: usize, depth: f64, width: f64 },
    /// Gaussian barrier plus a second bump of height `bump` centered at
    /// `center`. Counterexample to the unique-maximum assumption.
    DoubleBump {
        e0: f64,
        lambda: Vec<f64>,
        bump: f64,
        center: Vec<f64>,
        width: f64,
    },
    /// Free motion.
    Zero { n: usize },
}

/// A potential model: the analytic family, an optional rigid rotation of the
/// coordinates, and derived barrier data.
#[derive(Clone, Debug)]
pub struct PotentialModel {
    kind: PotentialKind,
    /// Orthogonal matrix Q; the model evaluates `V_base(Q^T x)`.
    rotation: Option<DMatrix<f64>>,
    n: usize,
    /// Decay exponent used by the sampled decay check. Gaussian and Eckart
    /// decay is reported with a nominal finite exponent.
    rho: f64,
    decay_constants: [f64; 3],
}

impl PotentialKind {
    pub fn dimension(&self) -> usize {
        match self {
            PotentialKind::Gaussian { lambda, .. }
            | PotentialKind::Rational { lambda, .. }
            | PotentialKind::Quadratic { lambda, .. }
            | PotentialKind::DoubleBump { lambda, .. } => lambda.len(),
            PotentialKind::Eckart { .. } => 1,
            PotentialKind::GaussianWell { n, .. } | PotentialKind::Zero { n } => *n,
        }
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            PotentialKind::Gaussian { e0, lambda } => {
                let s: f64 = lambda
                    .iter()
                    .zip(x.iter())
                    .map(|(l, xi)| l * l * xi * xi)
                    .sum();
                e0 * (-s / (2.0 * e0)).exp()
            }
            PotentialKind::Rational { e0, lambda, p } => {
                let s: f64 = lambda
                    .iter()
                    .zip(x.iter())
                    .map(|(l, xi)| l * l * xi * xi)
                    .sum();
                e0 * (1.0 + s / (2.0 * e0 * p)).powf(-p)
            }
            PotentialKind::Eckart { e0, lambda } => {
                let u = lambda * x[0] / (2.0 * e0).sqrt();
                let c = u.cosh();
                e0 / (c * c)
            }
            PotentialKind::Quadratic { e0, lambda } => {
                let s: f64 = lambda
                    .iter()
                    .zip(x.iter())
                    .map(|(l, xi)| l * l * xi * xi)
                    .sum();
                e0 - 0.5 * s
            }
            PotentialKind::GaussianWell { depth, width, .. } => {
                let s = x.norm_squared();
                -depth * (-s / (2.0 * width * width)).exp()
            }
            PotentialKind::DoubleBump {
                e0,
                lambda,
                bump,
                center,
                width,
            } => {
                let main = PotentialKind::Gaussian {
                    e0: *e0,
                    lambda: lambda.clone(),
                }
                .value(x);
                let d2: f64 = center
                    .iter()
                    .zip(x.iter())
                    .map(|(c, xi)| (xi - c) * (xi - c))
                    .sum();
                main + bump * (-d2 / (2.0 * width * width)).exp()
            }
            PotentialKind::Zero { .. } => 0.0,
        }
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.dimension();
        match self {
            PotentialKind::Gaussian { e0, lambda } => {
                let v = self.value(x);
                DVector::from_fn(n, |j, _| -v * lambda[j] * lambda[j] * x[j] / e0)
            }
            PotentialKind::Rational { e0, lambda, p } => {
                let s: f64 = lambda
                    .iter()
                    .zip(x.iter())
                    .map(|(l, xi)| l * l * xi * xi)
                    .sum();
                let u = 1.0 + s / (2.0 * e0 * p);
                let f = -u.powf(-p - 1.0);
                DVector::from_fn(n, |j, _| f * lambda[j] * lambda[j] * x[j])
            }
            PotentialKind::Eckart { e0, lambda } => {
                let a = lambda / (2.0 * e0).sqrt();
                let u = a * x[0];
                let t = u.tanh();
                let s2 = 1.0 / (u.cosh() * u.cosh());
                DVector::from_element(1, -2.0 * e0 * a * t * s2)
            }
            PotentialKind::Quadratic { lambda, .. } => {
                DVector::from_fn(n, |j, _| -lambda[j] * lambda[j] * x[j])
            }
            PotentialKind::GaussianWell { width, .. } => {
                let v = self.value(x);
                let w2 = width * width;
                DVector::from_fn(n, |j, _| -v * x[j] / w2)
            }
            PotentialKind::DoubleBump {
                e0,
                lambda,
                bump,
                center,
                width,
            } => {
                let main = PotentialKind::Gaussian {
                    e0: *e0,
                    lambda: lambda.clone(),
                }
                .gradient(x);
                let d2: f64 = center
                    .iter()
                    .zip(x.iter())
                    .map(|(c, xi)| (xi - c) * (xi - c))
                    .sum();
                let b = bump * (-d2 / (2.0 * width * width)).exp();
                let w2 = width * width;
                main + DVector::from_fn(n, |j, _| -b * (x[j] - center[j]) / w2)
            }
            PotentialKind::Zero { .. } => DVector::zeros(n),
        }
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dimension();
        match self {
            PotentialKind::Gaussian { e0, lambda } => {
                let v = self.value(x);
                DMatrix::from_fn(n, n, |j, k| {
                    let lj2 = lambda[j] * lambda[j];
                    let lk2 = lambda[k] * lambda[k];
                    let mut h = v * lj2 * lk2 * x[j] * x[k] / (e0 * e0);
                    if j == k {
                        h -= v * lj2 / e0;
                    }
                    h
                })
            }
            PotentialKind::Rational { e0, lambda, p } => {
                let s: f64 = lambda
                    .iter()
                    .zip(x.iter())
                    .map(|(l, xi)| l * l * xi * xi)
                    .sum();
                let u = 1.0 + s / (2.0 * e0 * p);
                let f1 = -u.powf(-p - 1.0);
                let f2 = (p + 1.0) * u.powf(-p - 2.0) / (e0 * p);
                DMatrix::from_fn(n, n, |j, k| {
                    let lj2 = lambda[j] * lambda[j];
                    let lk2 = lambda[k] * lambda[k];
                    let mut h = f2 * lj2 * lk2 * x[j] * x[k];
                    if j == k {
                        h += f1 * lj2;
                    }
                    h
                })
            }
            PotentialKind::Eckart { e0, lambda } => {
                let a = lambda / (2.0 * e0).sqrt();
                let u = a * x[0];
                let t = u.tanh();
                let s2 = 1.0 / (u.cosh() * u.cosh());
                DMatrix::from_element(1, 1, -2.0 * e0 * a * a * s2 * (s2 - 2.0 * t * t))
            }
            PotentialKind::Quadratic { lambda, .. } => {
                DMatrix::from_fn(n, n, |j, k| {
                    if j == k {
                        -lambda[j] * lambda[j]
                    } else {
                        0.0
                    }
                })
            }
            PotentialKind::GaussianWell { width, .. } => {
                let v = self.value(x);
                let w2 = width * width;
                DMatrix::from_fn(n, n, |j, k| {
                    let mut h = v * x[j] * x[k] / (w2 * w2);
                    if j == k {
                        h -= v / w2;
                    }
                    h
                })
            }
            PotentialKind::DoubleBump {
                e0,
                lambda,
                bump,
                center,
                width,
            } => {
                let main = PotentialKind::Gaussian {
                    e0: *e0,
                    lambda: lambda.clone(),
                }
                .hessian(x);
                let d2: f64 = center
                    .iter()
                    .zip(x.iter())
                    .map(|(c, xi)| (xi - c) * (xi - c))
                    .sum();
                let b = bump * (-d2 / (2.0 * width * width)).exp();
                let w2 = width * width;
                main + DMatrix::from_fn(n, n, |j, k| {
                    let mut h = b * (x[j] - center[j]) * (x[k] - center[k]) / (w2 * w2);
                    if j == k {
                        h -= b / w2;
                    }
                    h
                })
            }
            PotentialKind::Zero { .. } => DMatrix::zeros(n, n),
        }
    }

    /// `e0 - V(x)` evaluated without cancellation; near the barrier top the
    /// naive difference loses most of its relative precision.
    fn barrier_deficit(&self, x: &DVector<f64>) -> f64 {
        match self {
            PotentialKind::Gaussian { e0, lambda } => {
                let s: f64 = lambda
                    .iter()
                    .zip(x.iter())
                    .map(|(l, xi)| l * l * xi * xi)
                    .sum();
                -e0 * (-s / (2.0 * e0)).exp_m1()
            }
            PotentialKind::Rational { e0, lambda, p } => {
                let s: f64 = lambda
                    .iter()
                    .zip(x.iter())
                    .map(|(l, xi)| l * l * xi * xi)
                    .sum();
                let y = p * (s / (2.0 * e0 * p)).ln_1p();
                -e0 * (-y).exp_m1()
            }
            PotentialKind::Eckart { e0, lambda } => {
                let u = lambda * x[0] / (2.0 * e0).sqrt();
                let t = u.tanh();
                e0 * t * t
            }
            PotentialKind::Quadratic { lambda, .. } => {
                0.5 * lambda
                    .iter()
                    .zip(x.iter())
                    .map(|(l, xi)| l * l * xi * xi)
                    .sum::<f64>()
            }
            PotentialKind::DoubleBump {
                e0,
                lambda,
                bump,
                center,
                width,
            } => {
                let main = PotentialKind::Gaussian {
                    e0: *e0,
                    lambda: lambda.clone(),
                }
                .barrier_deficit(x);
                let d2: f64 = center
                    .iter()
                    .zip(x.iter())
                    .map(|(c, xi)| (xi - c) * (xi - c))
                    .sum();
                main - bump * (-d2 / (2.0 * width * width)).exp()
            }
            // Barrier-free fixtures: the barrier energy is zero.
            PotentialKind::GaussianWell { .. } | PotentialKind::Zero { .. } => -self.value(x),
        }
    }

    /// Nominal decay exponent rho for the sampled short-range check.
    fn decay_exponent(&self) -> f64 {
        match self {
            // Gaussian/Eckart decay beats any polynomial; report a nominal rho.
            PotentialKind::Gaussian { .. } | PotentialKind::Eckart { .. } => 4.0,
            PotentialKind::Rational { p, .. } => 2.0 * p,
            PotentialKind::DoubleBump { .. } => 4.0,
            PotentialKind::GaussianWell { .. } => 4.0,
            PotentialKind::Zero { .. } => 4.0,
            // Not short-range at all; a decay check must fail.
            PotentialKind::Quadratic { .. } => 2.0,
        }
    }
}

impl PotentialModel {
    pub fn new(kind: PotentialKind) -> Result<Self> {
        let n = kind.dimension();
        if n == 0 {
            return Err(Error::Config("dimension must be >= 1".into()));
        }
        match &kind {
            PotentialKind::Gaussian { e0, lambda }
            | PotentialKind::Quadratic { e0, lambda }
            | PotentialKind::DoubleBump { e0, lambda, .. } => {
                check_barrier(*e0, lambda)?;
            }
            PotentialKind::Rational { e0, lambda, p } => {
                check_barrier(*e0, lambda)?;
                if *p <= 0.5 {
                    return Err(Error::Config("rational exponent p must be > 1/2".into()));
                }
            }
            PotentialKind::Eckart { e0, lambda } => {
                check_barrier(*e0, &[*lambda])?;
            }
            PotentialKind::GaussianWell { depth, width, .. } => {
                if *depth <= 0.0 || *width <= 0.0 {
                    return Err(Error::Config("well depth and width must be positive".into()));
                }
            }
            PotentialKind::Zero { .. } => {}
        }
        let rho = kind.decay_exponent();
        let mut model = PotentialModel {
            kind,
            rotation: None,
            n,
            rho,
            decay_constants: [0.0; 3],
        };
        model.decay_constants = model.calibrate_decay_constants();
        Ok(model)
    }

    /// Rotate the model by an orthogonal matrix: the returned model evaluates
    /// `V(Q^T x)`.
    pub fn rotated(mut self, q: DMatrix<f64>) -> Result<Self> {
        if q.nrows() != self.n || q.ncols() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: q.nrows(),
            });
        }
        let qtq = q.transpose() * &q;
        if (&qtq - DMatrix::identity(self.n, self.n)).norm() > 1e-10 {
            return Err(Error::Config("rotation matrix is not orthogonal".into()));
        }
        self.rotation = Some(match self.rotation.take() {
            Some(prev) => q * prev,
            None => q,
        });
        Ok(self)
    }

    /// Planar rotation by `angle` in the (i, j) coordinate plane.
    pub fn rotated_in_plane(self, i: usize, j: usize, angle: f64) -> Result<Self> {
        let n = self.n;
        let mut q = DMatrix::identity(n, n);
        let (c, s) = (angle.cos(), angle.sin());
        q[(i, i)] = c;
        q[(j, j)] = c;
        q[(i, j)] = -s;
        q[(j, i)] = s;
        self.rotated(q)
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn decay_exponent(&self) -> f64 {
        self.rho
    }

    /// Barrier height; zero for the barrier-free fixtures.
    pub fn barrier_energy(&self) -> f64 {
        match &self.kind {
            PotentialKind::Gaussian { e0, .. }
            | PotentialKind::Rational { e0, .. }
            | PotentialKind::Eckart { e0, .. }
            | PotentialKind::Quadratic { e0, .. }
            | PotentialKind::DoubleBump { e0, .. } => *e0,
            PotentialKind::GaussianWell { .. } | PotentialKind::Zero { .. } => 0.0,
        }
    }

    /// Barrier curvature frequencies, ascending. Empty for barrier-free
    /// fixtures.
    pub fn lambdas(&self) -> Vec<f64> {
        let mut l = match &self.kind {
            PotentialKind::Gaussian { lambda, .. }
            | PotentialKind::Rational { lambda, .. }
            | PotentialKind::Quadratic { lambda, .. }
            | PotentialKind::DoubleBump { lambda, .. } => lambda.clone(),
            PotentialKind::Eckart { lambda, .. } => vec![*lambda],
            PotentialKind::GaussianWell { .. } | PotentialKind::Zero { .. } => vec![],
        };
        l.sort_by(|a, b| a.partial_cmp(b).unwrap());
        l
    }

    /// Spatial scale of the barrier region, `sqrt(2 e0) / lambda_1`.
    pub fn length_scale(&self) -> f64 {
        let e0 = self.barrier_energy();
        let l = self.lambdas();
        if e0 > 0.0 && !l.is_empty() {
            (2.0 * e0).sqrt() / l[0]
        } else {
            match &self.kind {
                PotentialKind::GaussianWell { width, .. } => *width,
                _ => 1.0,
            }
        }
    }

    /// True for the families satisfying the short-range hypothesis.
    pub fn is_short_range(&self) -> bool {
        !matches!(self.kind, PotentialKind::Quadratic { .. })
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match &self.rotation {
            None => self.kind.value(x),
            Some(q) => self.kind.value(&(q.transpose() * x)),
        }
    }

    /// Stable evaluation of `e0 - V(x)` (the kinetic energy on the barrier
    /// shell); free of the cancellation the naive difference incurs near
    /// the top.
    pub fn barrier_deficit(&self, x: &DVector<f64>) -> f64 {
        match &self.rotation {
            None => self.kind.barrier_deficit(x),
            Some(q) => self.kind.barrier_deficit(&(q.transpose() * x)),
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.rotation {
            None => self.kind.gradient(x),
            Some(q) => q * self.kind.gradient(&(q.transpose() * x)),
        }
    }

    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.rotation {
            None => self.kind.hessian(x),
            Some(q) => {
                let y = q.transpose() * x;
                q * self.kind.hessian(&y) * q.transpose()
            }
        }
    }

    /// Value, gradient and Hessian at once, with a finiteness check.
    pub fn evaluate(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::ModelEvaluation);
        }
        let v = self.value(x);
        let g = self.gradient(x);
        let h = self.hessian(x);
        if !v.is_finite() || !g.iter().all(|v| v.is_finite()) || !h.iter().all(|v| v.is_finite()) {
            return Err(Error::ModelEvaluation);
        }
        Ok((v, g, h))
    }

    /// Decay constants `C_alpha` such that the bundled model satisfies
    /// `|d^alpha V| <= C_alpha <x>^{-rho-|alpha|}` (|alpha| <= 2), calibrated
    /// on a radial reference scan with a 2x margin.
    fn calibrate_decay_constants(&self) -> [f64; 3] {
        let mut c = [0.0f64; 3];
        let rho = self.rho;
        let dirs = reference_directions(self.n);
        for k in 0..240 {
            let r = 0.05 * (k as f64 + 1.0) * self.length_scale();
            for d in &dirs {
                let x = d * r;
                let w = (1.0 + x.norm_squared()).sqrt();
                let v = self.value(&x).abs();
                let g = self.gradient(&x).amax();
                let h = self.hessian(&x).amax();
                c[0] = c[0].max(v * w.powf(rho));
                c[1] = c[1].max(g * w.powf(rho + 1.0));
                c[2] = c[2].max(h * w.powf(rho + 2.0));
            }
        }
        [2.0 * c[0], 2.0 * c[1], 2.0 * c[2]]
    }

    pub fn decay_constants(&self) -> [f64; 3] {
        self.decay_constants
    }
}

fn check_barrier(e0: f64, lambda: &[f64]) -> Result<()> {
    if e0 <= 0.0 {
        return Err(Error::Config("barrier energy e0 must be positive".into()));
    }
    if lambda.is_empty() || lambda.iter().any(|l| *l <= 0.0) {
        return Err(Error::Config(
            "curvature list lambda must be non-empty and positive".into(),
        ));
    }
    Ok(())
}

/// Axis, diagonal and a few skew directions used by radial scans.
fn reference_directions(n: usize) -> Vec<DVector<f64>> {
    let mut dirs = Vec::new();
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        dirs.push(e);
    }
    let diag = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    dirs.push(diag);
    if n >= 2 {
        let mut d = DVector::zeros(n);
        d[0] = 0.8;
        d[1] = -0.6;
        dirs.push(d);
    }
    dirs
}

/// Energy window `E = e0 + h * e1` around the barrier top.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EnergySpec {
    pub e0: f64,
    pub e1: f64,
    pub h: f64,
}

impl EnergySpec {
    pub fn new(e0: f64, e1: f64, h: f64, c0: f64) -> Result<Self> {
        let s = EnergySpec { e0, e1, h };
        if s.energy() <= 0.0 {
            return Err(Error::Config("total energy must be positive".into()));
        }
        if e1.abs() >= c0 {
            return Err(Error::Config(format!("|e1| = {} must be < {}", e1.abs(), c0)));
        }
        Ok(s)
    }

    pub fn energy(&self) -> f64 {
        self.e0 + self.h * self.e1
    }
}

/// Versioned config-file schema for model definitions.
///
/// ```json
/// { "schema_version": 1, "family": "gaussian", "n": 2, "e0": 1.0,
///   "lambda": [1.0, 2.0], "rho": null, "params": {} }
/// ```
///
/// `rho` is only meaningful for the rational family (`rho = 2p`). Extra
/// family parameters (well depth, bump location, rotation angle) go in
/// `params`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    pub schema_version: u32,
    pub family: String,
    pub n: usize,
    #[serde(default)]
    pub e0: f64,
    #[serde(default)]
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != 1 {
            return Err(Error::Config(format!(
                "unsupported schema_version {}",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    fn param_f64(&self, key: &str) -> Option<f64> {
        self.params.get(key).and_then(|v| v.as_f64())
    }

    pub fn build(&self) -> Result<PotentialModel> {
        if self.family != "zero" && self.family != "gaussian_well" && self.lambda.len() != self.n {
            return Err(Error::Config(format!(
                "lambda has {} entries but n = {}",
                self.lambda.len(),
                self.n
            )));
        }
        let kind = match self.family.as_str() {
            "gaussian" => PotentialKind::Gaussian {
                e0: self.e0,
                lambda: self.lambda.clone(),
            },
            "rational" => {
                let rho = self
                    .rho
                    .ok_or_else(|| Error::Config("rational family requires rho".into()))?;
                PotentialKind::Rational {
                    e0: self.e0,
                    lambda: self.lambda.clone(),
                    p: rho / 2.0,
                }
            }
            "eckart" => {
                if self.n != 1 {
                    return Err(Error::Config("eckart is 1D only".into()));
                }
                PotentialKind::Eckart {
                    e0: self.e0,
                    lambda: self.lambda[0],
                }
            }
            "quadratic" => PotentialKind::Quadratic {
                e0: self.e0,
                lambda: self.lambda.clone(),
            },
            "gaussian_well" => PotentialKind::GaussianWell {
                n: self.n,
                depth: self
                    .param_f64("depth")
                    .ok_or_else(|| Error::Config("gaussian_well requires params.depth".into()))?,
                width: self
                    .param_f64("width")
                    .ok_or_else(|| Error::Config("gaussian_well requires params.width".into()))?,
            },
            "double_bump" => {
                let center = self
                    .params
                    .get("center")
                    .and_then(|v| v.as_array())
                    .map(|a| a.iter().filter_map(|x| x.as_f64()).collect::<Vec<_>>())
                    .ok_or_else(|| Error::Config("double_bump requires params.center".into()))?;
                PotentialKind::DoubleBump {
                    e0: self.e0,
                    lambda: self.lambda.clone(),
                    bump: self
                        .param_f64("bump")
                        .ok_or_else(|| Error::Config("double_bump requires params.bump".into()))?,
                    center,
                    width: self.param_f64("width").unwrap_or(1.0),
                }
            }
            "zero" => PotentialKind::Zero { n: self.n },
            other => return Err(Error::Config(format!("unknown family '{}'", other))),
        };
        let model = PotentialModel::new(kind)?;
        match self.param_f64("rotation_angle") {
            Some(angle) if self.n >= 2 => model.rotated_in_plane(0, 1, angle),
            _ => Ok(model),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_12() -> PotentialModel {
        PotentialModel::new(PotentialKind::Gaussian {
            e0: 1.0,
            lambda: vec![1.0, 2.0],
        })
        .unwrap()
    }

    #[test]
    fn gaussian_barrier_top() {
        let m = gaussian_12();
        let x0 = DVector::zeros(2);
        let (v, g, h) = m.evaluate(&x0).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(g.norm(), 0.0);
        assert!((h[(0, 0)] + 1.0).abs() < 1e-14);
        assert!((h[(1, 1)] + 4.0).abs() < 1e-14);
        assert!(h[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn gaussian_closed_form_far_point() {
        let m = gaussian_12();
        let x = DVector::from_vec(vec![3.0, 0.0]);
        // Independent scalar evaluation of the closed form.
        let expected = (-(1.0f64 * 9.0) / 2.0).exp();
        assert!((m.value(&x) - expected).abs() < 1e-12);
    }

    fn finite_diff_grad(m: &PotentialModel, x: &DVector<f64>, eps: f64) -> DVector<f64> {
        DVector::from_fn(x.len(), |j, _| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += eps;
            xm[j] -= eps;
            (m.value(&xp) - m.value(&xm)) / (2.0 * eps)
        })
    }

    fn finite_diff_hess(m: &PotentialModel, x: &DVector<f64>, eps: f64) -> DMatrix<f64> {
        let n = x.len();
        DMatrix::from_fn(n, n, |j, k| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += eps;
            xm[k] -= eps;
            (m.gradient(&xp)[j] - m.gradient(&xm)[j]) / (2.0 * eps)
        })
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let models = vec![
            gaussian_12(),
            PotentialModel::new(PotentialKind::Rational {
                e0: 1.0,
                lambda: vec![1.0, 2.0],
                p: 2.0,
            })
            .unwrap(),
            PotentialModel::new(PotentialKind::Eckart { e0: 1.0, lambda: 1.0 }).unwrap(),
            PotentialModel::new(PotentialKind::GaussianWell {
                n: 2,
                depth: 0.7,
                width: 1.3,
            })
            .unwrap(),
            PotentialModel::new(PotentialKind::DoubleBump {
                e0: 1.0,
                lambda: vec![1.0, 2.0],
                bump: 1.2,
                center: vec![3.0, 0.0],
                width: 0.5,
            })
            .unwrap(),
            gaussian_12().rotated_in_plane(0, 1, 0.6).unwrap(),
        ];
        // Pseudo-random point cloud at moderate |x|.
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let a = 0.37 * i as f64 + 0.1;
                vec![1.8 * a.sin(), 1.4 * (1.7 * a).cos()]
            })
            .collect();
        for m in &models {
            for p in &pts {
                let x = DVector::from_vec(p[..m.dimension()].to_vec());
                let g = m.gradient(&x);
                let gf = finite_diff_grad(m, &x, 1e-6);
                let scale = g.norm().max(1e-3);
                assert!((g - &gf).norm() / scale < 1e-6, "gradient mismatch");
                let h = m.hessian(&x);
                let hf = finite_diff_hess(m, &x, 1e-6);
                let hscale = h.norm().max(1e-3);
                assert!((h - &hf).norm() / hscale < 1e-6, "hessian mismatch");
            }
        }
    }

    #[test]
    fn rotation_is_a_change_of_coordinates() {
        let base = gaussian_12();
        let rot = gaussian_12().rotated_in_plane(0, 1, 0.5).unwrap();
        let x = DVector::from_vec(vec![0.7, -0.3]);
        let q = {
            let (c, s) = (0.5f64.cos(), 0.5f64.sin());
            DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
        };
        let y = q.transpose() * &x;
        assert!((rot.value(&x) - base.value(&y)).abs() < 1e-14);
    }

    #[test]
    fn config_roundtrip_and_validation() {
        let text = r#"{ "schema_version": 1, "family": "gaussian", "n": 2,
                        "e0": 1.0, "lambda": [1.0, 2.0], "params": {} }"#;
        let cfg = ModelConfig::from_json(text).unwrap();
        let m = cfg.build().unwrap();
        assert_eq!(m.dimension(), 2);
        assert_eq!(m.barrier_energy(), 1.0);

        let bad = r#"{ "schema_version": 1, "family": "gaussian", "n": 2,
                       "e0": 1.0, "lambda": [1.0], "params": {} }"#;
        assert!(ModelConfig::from_json(bad).unwrap().build().is_err());
    }

    #[test]
    fn barrier_deficit_is_cancellation_free() {
        let models = [
            PotentialModel::new(PotentialKind::Gaussian {
                e0: 1.0,
                lambda: vec![1.0, 2.0],
            })
            .unwrap(),
            PotentialModel::new(PotentialKind::Rational {
                e0: 0.7,
                lambda: vec![1.1, 1.9],
                p: 2.0,
            })
            .unwrap(),
            PotentialModel::new(PotentialKind::Quadratic {
                e0: 1.0,
                lambda: vec![1.0, 2.0],
            })
            .unwrap(),
        ];
        for m in &models {
            // Tiny amplitude: compare against the quadratic leading term,
            // which the naive difference e0 - V(x) cannot resolve.
            let x = DVector::from_vec(vec![3e-7, 4e-7]);
            let lam = m.lambdas();
            let expect: f64 = 0.5 * (lam[0] * lam[0] * 9e-14 + lam[1] * lam[1] * 16e-14);
            let got = m.barrier_deficit(&x);
            assert!(
                (got - expect).abs() / expect < 1e-6,
                "deficit {} vs {}",
                got,
                expect
            );
            // Moderate amplitude: agrees with the naive difference.
            let x = DVector::from_vec(vec![0.4, -0.3]);
            let naive = m.barrier_energy() - m.value(&x);
            assert!((m.barrier_deficit(&x) - naive).abs() < 1e-12);
        }
        // Eckart, 1D.
        let e = PotentialModel::new(PotentialKind::Eckart {
            e0: 1.0,
            lambda: 1.3,
        })
        .unwrap();
        let x = DVector::from_element(1, 5e-7);
        let expect = 0.5 * 1.3 * 1.3 * 25e-14;
        assert!((e.barrier_deficit(&x) - expect).abs() / expect < 1e-6);
    }

    #[test]
    fn energy_spec_window() {
        let s = EnergySpec::new(1.0, 0.5, 0.01, 2.0).unwrap();
        assert!((s.energy() - 1.005).abs() < 1e-15);
        assert!(EnergySpec::new(1.0, 3.0, 0.01, 2.0).is_err());
    }
}
