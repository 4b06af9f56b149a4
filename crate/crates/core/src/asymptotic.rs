//! Asymptotic (incoming/outgoing) data of scattering trajectories.
//!
//! In the far field a scattering trajectory is asymptotically free,
//! `x(t) = xi_inf t + x_inf + o(1)`, and the pair `(xi_inf, x_inf)` carries
//! the direction `theta = xi_inf/|xi_inf|` and the impact point
//! `z = x_inf - <x_inf, theta> theta` perpendicular to it. The fit is a
//! linear least-squares problem over a far-field radial window, with
//! power-law correction terms to absorb the tail force of slowly decaying
//! potentials; the window is pushed outward until the fit residual passes
//! the tolerance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::flow::{
    escape_time, flow_trajectory, vector_field, EscapeOutcome, FlowOpts, PhasePoint,
    TrajectorySegment,
};
use crate::potential::PotentialModel;

/// Relative residual required of the far-field fit.
pub const ASYMPTOTE_TOL: f64 = 1e-8;

/// Time direction of the asymptote.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeDirection {
    /// t -> +infinity (outgoing data).
    Forward,
    /// t -> -infinity (incoming data).
    Backward,
}

impl TimeDirection {
    fn sign(self) -> f64 {
        match self {
            TimeDirection::Forward => 1.0,
            TimeDirection::Backward => -1.0,
        }
    }
}

/// Free asymptote of a trajectory, in the parametrization of the phase
/// point the extraction started from (that point is `t = 0`).
#[derive(Clone, Debug)]
pub struct AsymptoticData {
    pub direction: TimeDirection,
    pub xi_inf: DVector<f64>,
    pub x_inf: DVector<f64>,
    pub energy: f64,
    /// Relative rms residual of the far-field fit.
    pub fit_residual: f64,
}

impl AsymptoticData {
    pub fn speed(&self) -> f64 {
        self.xi_inf.norm()
    }

    /// Unit direction of the asymptotic momentum.
    pub fn theta(&self) -> DVector<f64> {
        &self.xi_inf / self.speed()
    }

    /// Impact point: the component of `x_inf` orthogonal to the direction.
    pub fn impact(&self) -> DVector<f64> {
        let th = self.theta();
        &self.x_inf - th.dot(&self.x_inf) * th
    }
}

/// Both asymptotes of one scattering trajectory.
#[derive(Clone, Debug)]
pub struct ScatteringData {
    pub incoming: AsymptoticData,
    pub outgoing: AsymptoticData,
}

impl ScatteringData {
    /// `(omega, z_minus)`: incoming direction and impact point.
    pub fn incoming_pair(&self) -> (DVector<f64>, DVector<f64>) {
        (self.incoming.theta(), self.incoming.impact())
    }

    /// `(theta, z_plus)`: outgoing direction and impact point.
    pub fn outgoing_pair(&self) -> (DVector<f64>, DVector<f64>) {
        (self.outgoing.theta(), self.outgoing.impact())
    }
}

fn length_scale_floor(model: &PotentialModel) -> f64 {
    model.length_scale().max(1e-3)
}

fn lambda1_or_one(model: &PotentialModel) -> f64 {
    model.lambdas().first().copied().unwrap_or(1.0)
}

/// Cubic Hermite evaluation of the recorded trajectory at time `t`.
fn hermite_eval(
    model: &PotentialModel,
    traj: &TrajectorySegment,
    t: f64,
) -> Option<DVector<f64>> {
    let ts = &traj.ts;
    let increasing = ts.last()? >= ts.first()?;
    let idx = if increasing {
        ts.partition_point(|&s| s < t)
    } else {
        ts.partition_point(|&s| s > t)
    };
    if idx == 0 || idx >= ts.len() {
        return None;
    }
    let (t0, t1) = (ts[idx - 1], ts[idx]);
    let h = t1 - t0;
    let s = (t - t0) / h;
    let p0 = &traj.points[idx - 1];
    let p1 = &traj.points[idx];
    let n = p0.dim();
    let f0 = vector_field(model, p0);
    let f1 = vector_field(model, p1);
    let (h00, h10, h01, h11) = (
        2.0 * s * s * s - 3.0 * s * s + 1.0,
        s * s * s - 2.0 * s * s + s,
        -2.0 * s * s * s + 3.0 * s * s,
        s * s * s - s * s,
    );
    let mut x = DVector::zeros(n);
    for i in 0..n {
        x[i] = h00 * p0.x[i] + h10 * h * f0[i] + h01 * p1.x[i] + h11 * h * f1[i];
    }
    Some(x)
}

/// First recorded time at which `|x(t)| = r` (linear interpolation).
fn radius_crossing(traj: &TrajectorySegment, r: f64) -> Option<f64> {
    for k in 1..traj.ts.len() {
        let r0 = traj.points[k - 1].x.norm();
        let r1 = traj.points[k].x.norm();
        if (r0 - r) * (r1 - r) <= 0.0 && r1 != r0 {
            let s = (r - r0) / (r1 - r0);
            return Some(traj.ts[k - 1] + s * (traj.ts[k] - traj.ts[k - 1]));
        }
    }
    None
}

/// Extract the free asymptote of the trajectory through `p` in the given
/// time direction.
pub fn extract_asymptotics(
    model: &PotentialModel,
    p: &PhasePoint,
    direction: TimeDirection,
    opts: &FlowOpts,
) -> Result<AsymptoticData> {
    let scale = length_scale_floor(model);
    let lambda1 = lambda1_or_one(model);
    let r_escape = 20.0 * scale.max(p.x.norm() / 15.0);
    let sgn = direction.sign();
    let horizon = sgn * 200.0 / lambda1;

    // Locate the escape from the interaction region first.
    let t_escape = match escape_time(model, p, r_escape, horizon, opts)? {
        EscapeOutcome::Escaped(t) => t,
        EscapeOutcome::ConvergedToOrigin(_) => return Err(Error::Captured),
        EscapeOutcome::Undecided => return Err(Error::NoAsymptote),
    };
    let energy = p.energy(model);
    if energy <= 0.0 {
        return Err(Error::NoAsymptote);
    }
    let speed = (2.0 * energy).sqrt();

    let mut r_lo = 30.0 * scale;
    let mut best: Option<AsymptoticData> = None;
    for _escalation in 0..4 {
        let r_hi = 3.0 * r_lo;
        // Time to traverse the window, with margin for tail curvature.
        let t_end = t_escape + sgn * 1.6 * (r_hi - r_escape.min(r_lo)) / speed;
        let traj = flow_trajectory(model, p, t_end, false, opts)?;
        let (Some(t_lo), Some(t_hi)) = (radius_crossing(&traj, r_lo), radius_crossing(&traj, r_hi))
        else {
            return Err(Error::NoAsymptote);
        };
        let k = 33usize;
        let mut times = Vec::with_capacity(k);
        let mut xs = Vec::with_capacity(k);
        for j in 0..k {
            let t = t_lo + (t_hi - t_lo) * j as f64 / (k - 1) as f64;
            let Some(x) = hermite_eval(model, &traj, t) else {
                continue;
            };
            times.push(t);
            xs.push(x);
        }
        let data = fit_asymptote(model, &times, &xs, direction, energy)?;
        let good = data.fit_residual < ASYMPTOTE_TOL;
        let replace = best
            .as_ref()
            .map(|b| data.fit_residual < b.fit_residual)
            .unwrap_or(true);
        if replace {
            best = Some(data);
        }
        if good {
            break;
        }
        r_lo *= 2.0;
    }
    let data = best.expect("at least one fit attempted");
    if data.fit_residual >= ASYMPTOTE_TOL {
        return Err(Error::Precision {
            estimate: data.fit_residual,
            tol: ASYMPTOTE_TOL,
        });
    }
    Ok(data)
}

/// Least-squares fit `x(t) = xi t + x0 + c1 b1(t) + c2 b2(t) + c3 b3(t)`
/// with tail-force correction basis `b_k(t) = |t|^{1-rho-k+1}`.
pub(crate) fn fit_asymptote(
    model: &PotentialModel,
    times: &[f64],
    xs: &[DVector<f64>],
    direction: TimeDirection,
    energy: f64,
) -> Result<AsymptoticData> {
    let m = times.len();
    if m < 8 {
        return Err(Error::NoAsymptote);
    }
    let n = xs[0].len();
    let rho = model.decay_exponent();
    let powers = [1.0 - rho, -rho, -1.0 - rho];
    let cols = 2 + powers.len();
    let mut a = DMatrix::zeros(m, cols);
    for (i, &t) in times.iter().enumerate() {
        a[(i, 0)] = t;
        a[(i, 1)] = 1.0;
        for (j, &q) in powers.iter().enumerate() {
            a[(i, 2 + j)] = t.abs().powf(q);
        }
    }
    let svd = a.clone().svd(true, true);
    let mut xi_inf = DVector::zeros(n);
    let mut x_inf = DVector::zeros(n);
    let mut res2 = 0.0;
    let mut norm2 = 0.0;
    for c in 0..n {
        let rhs = DVector::from_iterator(m, xs.iter().map(|x| x[c]));
        let beta = svd
            .solve(&rhs, 1e-14)
            .map_err(|e| Error::Config(e.to_string()))?;
        xi_inf[c] = beta[0];
        x_inf[c] = beta[1];
        let resid = &a * &beta - &rhs;
        res2 += resid.norm_squared();
        norm2 += rhs.norm_squared();
    }
    let fit_residual = (res2 / norm2.max(1e-300)).sqrt();
    Ok(AsymptoticData {
        direction,
        xi_inf,
        x_inf,
        energy,
        fit_residual,
    })
}

/// Both asymptotes of the trajectory through `p`.
pub fn scattering_data(
    model: &PotentialModel,
    p: &PhasePoint,
    opts: &FlowOpts,
) -> Result<ScatteringData> {
    let incoming = extract_asymptotics(model, p, TimeDirection::Backward, opts)?;
    let outgoing = extract_asymptotics(model, p, TimeDirection::Forward, opts)?;
    Ok(ScatteringData { incoming, outgoing })
}

/// Construct the phase point (at the edge of the interaction region) of the
/// unique trajectory with prescribed incoming (or outgoing) asymptote
/// `x(t) ~ sqrt(2E) alpha t + z`, with `z` orthogonal to the unit vector
/// `alpha`.
///
/// The point is found by a fixed-point correction: start from the straight
/// line, extract the actual asymptote, and correct position and momentum by
/// the mismatch.
pub fn init_from_asymptote(
    model: &PotentialModel,
    energy: f64,
    alpha: &DVector<f64>,
    z: &DVector<f64>,
    side: TimeDirection,
    opts: &FlowOpts,
) -> Result<PhasePoint> {
    let n = model.dimension();
    if alpha.len() != n || z.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: alpha.len(),
        });
    }
    if (alpha.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::Config("direction alpha must be a unit vector".into()));
    }
    if alpha.dot(z).abs() > 1e-10 * (1.0 + z.norm()) {
        return Err(Error::Config("impact z must be orthogonal to alpha".into()));
    }
    if energy <= 0.0 {
        return Err(Error::SeedProjection);
    }
    let scale = length_scale_floor(model);
    let speed = (2.0 * energy).sqrt();
    // Start on the straight asymptote at the edge of the interaction region;
    // backward side sits upstream (x ~ -L alpha), forward side downstream.
    let l0 = (12.0 * scale).max(1.5 * z.norm());
    let sgn = side.sign();
    let mut x = z + sgn * l0 * alpha;
    let mut xi = speed * alpha.clone();
    let extract_side = side;

    let mut residual = f64::INFINITY;
    for _ in 0..30 {
        // Re-project the momentum magnitude onto the energy shell.
        let v = model.value(&x);
        if energy - v <= 0.0 {
            return Err(Error::SeedProjection);
        }
        let dir = xi.normalize();
        xi = (2.0 * (energy - v)).sqrt() * dir;
        let p = PhasePoint::new(x.clone(), xi.clone());
        let data = extract_asymptotics(model, &p, extract_side, opts)?;
        let theta = data.theta();
        let impact = data.impact();
        let dz = z - &impact;
        let dtheta = alpha - &theta;
        residual = (dz.norm() + dtheta.norm() * l0) / (1.0 + z.norm());
        if residual < 1e-10 {
            return Ok(p);
        }
        // Correct the impact offset directly and rotate the momentum by the
        // direction mismatch.
        x += &dz;
        let rot = rotation_between(&theta, alpha);
        xi = &rot * xi;
        let along = project(&x, alpha);
        x = &rot * (&x - along * alpha) + along * alpha;
        // Keep the start point on the reference sphere side.
        let along = alpha.dot(&x);
        if (along * sgn) < 0.6 * l0 {
            x += (sgn * l0 - along) * alpha * 0.5;
        }
    }
    if residual < 1e-8 {
        let v = model.value(&x);
        let dir = xi.normalize();
        Ok(PhasePoint::new(x, (2.0 * (energy - v)).sqrt() * dir))
    } else {
        Err(Error::Initialization { residual })
    }
}

fn project(x: &DVector<f64>, unit: &DVector<f64>) -> f64 {
    unit.dot(x)
}

/// Minimal rotation taking unit vector `a` to unit vector `b`.
fn rotation_between(a: &DVector<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let n = a.len();
    let c = a.dot(b).clamp(-1.0, 1.0);
    let id = DMatrix::identity(n, n);
    let w = b - c * a;
    let wn = w.norm();
    if wn < 1e-15 {
        return id;
    }
    let u = a.clone();
    let v = w / wn;
    let s = wn; // b = c u + s v with s = |b - <a,b> a| >= 0
    // Rotation in span{u, v}: [c -s; s c], identity on the complement.
    id.clone() - &u * u.transpose() - &v * v.transpose()
        + c * (&u * u.transpose() + &v * v.transpose())
        + s * (&v * u.transpose() - &u * v.transpose())
}
