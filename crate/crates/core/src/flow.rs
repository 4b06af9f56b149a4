//! Hamiltonian flow of `p(x, xi) = |xi|^2/2 + V(x)` and its variational
//! (linearized) flow, with energy-conservation guards.
//!
//! The workhorse is an embedded Dormand-Prince 5(4) stepper over the
//! augmented state `(x, xi, vec(M), quadratures)`. Steps are rejected both on
//! the embedded error estimate and on relative energy drift. A fixed-step
//! 4th-order symplectic scheme is available for long manifold runs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::potential::PotentialModel;

/// A point (x, xi) in phase space.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint {
    pub x: DVector<f64>,
    pub xi: DVector<f64>,
}

impl PhasePoint {
    pub fn new(x: DVector<f64>, xi: DVector<f64>) -> Self {
        assert_eq!(x.len(), xi.len());
        PhasePoint { x, xi }
    }

    pub fn from_slices(x: &[f64], xi: &[f64]) -> Self {
        Self::new(DVector::from_row_slice(x), DVector::from_row_slice(xi))
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn energy(&self, model: &PotentialModel) -> f64 {
        0.5 * self.xi.norm_squared() + model.value(&self.x)
    }

    pub fn norm(&self) -> f64 {
        (self.x.norm_squared() + self.xi.norm_squared()).sqrt()
    }

    fn from_vec(y: &DVector<f64>, n: usize) -> Self {
        PhasePoint {
            x: y.rows(0, n).into_owned(),
            xi: y.rows(n, n).into_owned(),
        }
    }
}

/// The Hamiltonian vector field `(xi, -grad V)`.
pub fn vector_field(model: &PotentialModel, p: &PhasePoint) -> DVector<f64> {
    let n = p.dim();
    let g = model.gradient(&p.x);
    let mut out = DVector::zeros(2 * n);
    out.rows_mut(0, n).copy_from(&p.xi);
    out.rows_mut(n, n).copy_from(&(-g));
    out
}

/// Integrator options.
#[derive(Clone, Copy, Debug)]
pub struct FlowOpts {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub energy_drift_tol: f64,
    pub symplectic_tol: f64,
    pub max_steps: usize,
    pub min_step: f64,
    /// Hard horizon on |t| accepted by `flow`.
    pub horizon: f64,
}

impl Default for FlowOpts {
    fn default() -> Self {
        FlowOpts {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            energy_drift_tol: 1e-9,
            symplectic_tol: 1e-7,
            max_steps: 50_000_000,
            min_step: 1e-13,
            horizon: 1e6,
        }
    }
}

impl FlowOpts {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.abs_tol = tol;
        self.rel_tol = tol;
        self
    }
}

/// Integrand accumulated along the trajectory as an extra ODE channel.
#[derive(Clone, Copy, Debug)]
pub enum Quadrature {
    /// -2 V(x); the on-shell form of |xi|^2 - 2E.
    MinusTwoV,
    /// |xi|^2 - c.
    SpeedSqMinus(f64),
    /// |xi|^2.
    SpeedSq,
    /// |xi|^2/2 + e0 - V(x), the half-trajectory action integrand.
    ActionIntegrand(f64),
}

impl Quadrature {
    fn eval(&self, model: &PotentialModel, x: &DVector<f64>, xi: &DVector<f64>) -> f64 {
        match self {
            Quadrature::MinusTwoV => -2.0 * model.value(x),
            Quadrature::SpeedSqMinus(c) => xi.norm_squared() - c,
            Quadrature::SpeedSq => xi.norm_squared(),
            Quadrature::ActionIntegrand(e0) => 0.5 * xi.norm_squared() + e0 - model.value(x),
        }
    }
}

/// Sampled flow with optional variational matrices.
#[derive(Clone, Debug)]
pub struct TrajectorySegment {
    pub ts: Vec<f64>,
    pub points: Vec<PhasePoint>,
    pub variational: Option<Vec<DMatrix<f64>>>,
    pub energy: f64,
    pub meta: IntegratorMeta,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct IntegratorMeta {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub steps: usize,
    pub rejected: usize,
}

impl TrajectorySegment {
    pub fn end(&self) -> &PhasePoint {
        self.points.last().expect("non-empty trajectory")
    }

    pub fn start(&self) -> &PhasePoint {
        &self.points[0]
    }

    pub fn max_energy_drift(&self, model: &PotentialModel) -> f64 {
        let e = self.energy;
        let scale = e.abs().max(1e-12);
        self.points
            .iter()
            .map(|p| (p.energy(model) - e).abs() / scale)
            .fold(0.0, f64::max)
    }

    pub fn max_symplectic_defect(&self) -> f64 {
        match &self.variational {
            None => 0.0,
            Some(ms) => ms.iter().map(|m| symplectic_defect(m)).fold(0.0, f64::max),
        }
    }

    /// CSV dump: `t, x1..xn, xi1..xin, energy`.
    pub fn write_csv<W: std::io::Write>(&self, model: &PotentialModel, w: &mut W) -> Result<()> {
        let n = self.points[0].dim();
        let mut header = String::from("t");
        for j in 1..=n {
            header.push_str(&format!(",x{}", j));
        }
        for j in 1..=n {
            header.push_str(&format!(",xi{}", j));
        }
        header.push_str(",energy");
        writeln!(w, "{}", header)?;
        for (t, p) in self.ts.iter().zip(&self.points) {
            let mut row = format!("{:.17e}", t);
            for v in p.x.iter().chain(p.xi.iter()) {
                row.push_str(&format!(",{:.17e}", v));
            }
            row.push_str(&format!(",{:.17e}", p.energy(model)));
            writeln!(w, "{}", row)?;
        }
        Ok(())
    }
}

/// Frobenius norm of `M^T J M - J`.
pub fn symplectic_defect(m: &DMatrix<f64>) -> f64 {
    let j = standard_symplectic_matrix(m.nrows() / 2);
    (m.transpose() * &j * m - j).norm()
}

pub fn standard_symplectic_matrix(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = 1.0;
        j[(n + i, i)] = -1.0;
    }
    j
}

// Dormand-Prince 5(4) tableau (autonomous field, so the c nodes are unused).
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One accepted step handed to the observer.
pub struct Step<'a> {
    pub t0: f64,
    pub t1: f64,
    pub y0: &'a DVector<f64>,
    pub y1: &'a DVector<f64>,
    pub f0: &'a DVector<f64>,
    pub f1: &'a DVector<f64>,
}

pub enum StepControl {
    Continue,
    Stop,
}

/// Adaptive DP5(4) integration of `y' = rhs(y)` from `t0` to `t1`.
///
/// `guard` maps the state to a relative drift of a conserved quantity; steps
/// with drift above `opts.energy_drift_tol` are rejected.
fn integrate<R, G, O>(
    rhs: R,
    guard: Option<G>,
    y0: DVector<f64>,
    t0: f64,
    t1: f64,
    opts: &FlowOpts,
    mut observer: O,
) -> Result<(f64, DVector<f64>, IntegratorMeta)>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
    G: Fn(&DVector<f64>) -> f64,
    O: FnMut(Step<'_>) -> StepControl,
{
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let span = (t1 - t0).abs();
    let mut meta = IntegratorMeta {
        abs_tol: opts.abs_tol,
        rel_tol: opts.rel_tol,
        ..Default::default()
    };
    if span == 0.0 {
        return Ok((t0, y0, meta));
    }
    let mut t = t0;
    let mut y = y0;
    let mut f = rhs(&y);
    let fn0 = f.norm().max(1e-8);
    let mut hstep = (0.01 * (1.0 + y.norm()) / fn0).min(span) * dir;
    let mut ks: Vec<DVector<f64>> = vec![DVector::zeros(y.len()); 7];

    while (t - t1).abs() > 1e-14 * span.max(1.0) {
        if meta.steps + meta.rejected > opts.max_steps {
            return Err(Error::IntegrationFailure {
                reason: "step budget exhausted".into(),
                t,
                last_state: y.iter().cloned().collect(),
            });
        }
        if hstep.abs() < opts.min_step {
            return Err(Error::IntegrationFailure {
                reason: "step-size underflow (stiff region)".into(),
                t,
                last_state: y.iter().cloned().collect(),
            });
        }
        if (t + hstep - t1) * dir > 0.0 {
            hstep = t1 - t;
        }
        ks[0] = f.clone();
        for i in 1..7 {
            let mut yi = y.clone();
            for (j, kj) in ks.iter().enumerate().take(i) {
                let a = A[i][j];
                if a != 0.0 {
                    yi.axpy(hstep * a, kj, 1.0);
                }
            }
            ks[i] = rhs(&yi);
        }
        let mut y5 = y.clone();
        let mut err = DVector::zeros(y.len());
        for i in 0..7 {
            if B5[i] != 0.0 {
                y5.axpy(hstep * B5[i], &ks[i], 1.0);
            }
            let db = B5[i] - B4[i];
            if db != 0.0 {
                err.axpy(hstep * db, &ks[i], 1.0);
            }
        }
        let mut scale2 = 0.0;
        for i in 0..y.len() {
            let s = opts.abs_tol + opts.rel_tol * y[i].abs().max(y5[i].abs());
            let r = err[i] / s;
            scale2 += r * r;
        }
        let errnorm = (scale2 / y.len() as f64).sqrt();

        let drift_ok = match &guard {
            Some(g) => g(&y5) <= opts.energy_drift_tol,
            None => true,
        };
        if errnorm <= 1.0 && drift_ok {
            let f1 = ks[6].clone(); // FSAL
            let t_new = t + hstep;
            let ctrl = observer(Step {
                t0: t,
                t1: t_new,
                y0: &y,
                y1: &y5,
                f0: &f,
                f1: &f1,
            });
            t = t_new;
            y = y5;
            f = f1;
            meta.steps += 1;
            if matches!(ctrl, StepControl::Stop) {
                return Ok((t, y, meta));
            }
            let fac = if errnorm == 0.0 {
                5.0
            } else {
                (0.9 * errnorm.powf(-0.2)).clamp(0.2, 5.0)
            };
            hstep *= fac;
        } else {
            meta.rejected += 1;
            let fac = if errnorm > 1.0 {
                (0.9 * errnorm.powf(-0.2)).clamp(0.1, 0.9)
            } else {
                0.5 // energy-drift rejection
            };
            hstep *= fac;
        }
    }
    Ok((t, y, meta))
}

/// Layout of the augmented state vector.
struct Layout {
    n: usize,
    with_var: bool,
    n_quad: usize,
}

impl Layout {
    fn len(&self) -> usize {
        let n = self.n;
        2 * n + if self.with_var { 4 * n * n } else { 0 } + self.n_quad
    }

    fn pack(&self, p: &PhasePoint) -> DVector<f64> {
        let mut y = DVector::zeros(self.len());
        y.rows_mut(0, self.n).copy_from(&p.x);
        y.rows_mut(self.n, self.n).copy_from(&p.xi);
        if self.with_var {
            let m = DMatrix::<f64>::identity(2 * self.n, 2 * self.n);
            y.rows_mut(2 * self.n, 4 * self.n * self.n)
                .copy_from_slice(m.as_slice());
        }
        y
    }

    fn point(&self, y: &DVector<f64>) -> PhasePoint {
        PhasePoint::from_vec(y, self.n)
    }

    fn matrix(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let n2 = 2 * self.n;
        DMatrix::from_column_slice(n2, n2, y.rows(n2, n2 * n2).as_slice())
    }

    fn quads(&self, y: &DVector<f64>) -> Vec<f64> {
        let off = self.len() - self.n_quad;
        (0..self.n_quad).map(|i| y[off + i]).collect()
    }
}

fn augmented_rhs<'m>(
    model: &'m PotentialModel,
    layout: &'m Layout,
    quads: &'m [Quadrature],
) -> impl Fn(&DVector<f64>) -> DVector<f64> + 'm {
    move |y: &DVector<f64>| {
        let n = layout.n;
        let x = y.rows(0, n).into_owned();
        let xi = y.rows(n, n).into_owned();
        let mut dy = DVector::zeros(layout.len());
        dy.rows_mut(0, n).copy_from(&xi);
        dy.rows_mut(n, n).copy_from(&(-model.gradient(&x)));
        if layout.with_var {
            // dM = A M with A = [[0, I], [-Hess V, 0]], M column-major.
            let hess = model.hessian(&x);
            let n2 = 2 * n;
            let m_slice = y.rows(n2, n2 * n2);
            let m = DMatrix::from_column_slice(n2, n2, m_slice.as_slice());
            let mut dm = DMatrix::zeros(n2, n2);
            // top block rows: dM[0..n] = M[n..2n]; bottom: -H * M[0..n]
            dm.rows_mut(0, n).copy_from(&m.rows(n, n));
            let top = m.rows(0, n).into_owned();
            dm.rows_mut(n, n).copy_from(&(-&hess * top));
            dy.rows_mut(n2, n2 * n2).copy_from_slice(dm.as_slice());
        }
        let off = layout.len() - layout.n_quad;
        for (i, q) in quads.iter().enumerate() {
            dy[off + i] = q.eval(model, &x, &xi);
        }
        dy
    }
}

fn energy_guard<'m>(
    model: &'m PotentialModel,
    n: usize,
    e_ref: f64,
) -> impl Fn(&DVector<f64>) -> f64 + 'm {
    let scale = e_ref.abs().max(1e-12);
    move |y: &DVector<f64>| {
        let x = y.rows(0, n).into_owned();
        let xi = y.rows(n, n);
        let e = 0.5 * xi.norm_squared() + model.value(&x);
        (e - e_ref).abs() / scale
    }
}

fn check_horizon(t: f64, opts: &FlowOpts) -> Result<()> {
    if t.abs() > opts.horizon {
        return Err(Error::Config(format!(
            "|t| = {} exceeds configured horizon {}",
            t.abs(),
            opts.horizon
        )));
    }
    Ok(())
}

/// Flow a phase point by time `t`.
pub fn flow(
    model: &PotentialModel,
    p: &PhasePoint,
    t: f64,
    opts: &FlowOpts,
) -> Result<PhasePoint> {
    check_horizon(t, opts)?;
    let layout = Layout {
        n: p.dim(),
        with_var: false,
        n_quad: 0,
    };
    let rhs = augmented_rhs(model, &layout, &[]);
    let guard = energy_guard(model, p.dim(), p.energy(model));
    let (_, y, _) = integrate(rhs, Some(guard), layout.pack(p), 0.0, t, opts, |_| {
        StepControl::Continue
    })?;
    Ok(layout.point(&y))
}

/// Flow with the variational matrix `M = d exp(t H_p)`.
pub fn flow_with_variational(
    model: &PotentialModel,
    p: &PhasePoint,
    t: f64,
    opts: &FlowOpts,
) -> Result<(PhasePoint, DMatrix<f64>)> {
    check_horizon(t, opts)?;
    let layout = Layout {
        n: p.dim(),
        with_var: true,
        n_quad: 0,
    };
    let rhs = augmented_rhs(model, &layout, &[]);
    let guard = energy_guard(model, p.dim(), p.energy(model));
    let (_, y, _) = integrate(rhs, Some(guard), layout.pack(p), 0.0, t, opts, |_| {
        StepControl::Continue
    })?;
    Ok((layout.point(&y), layout.matrix(&y)))
}

/// Flow while accumulating quadrature channels.
pub fn flow_quad(
    model: &PotentialModel,
    p: &PhasePoint,
    t: f64,
    quads: &[Quadrature],
    opts: &FlowOpts,
) -> Result<(PhasePoint, Vec<f64>)> {
    check_horizon(t, opts)?;
    let layout = Layout {
        n: p.dim(),
        with_var: false,
        n_quad: quads.len(),
    };
    let rhs = augmented_rhs(model, &layout, quads);
    let guard = energy_guard(model, p.dim(), p.energy(model));
    let (_, y, _) = integrate(rhs, Some(guard), layout.pack(p), 0.0, t, opts, |_| {
        StepControl::Continue
    })?;
    Ok((layout.point(&y), layout.quads(&y)))
}

/// Flow recording every accepted step, optionally with variational matrices.
pub fn flow_trajectory(
    model: &PotentialModel,
    p: &PhasePoint,
    t: f64,
    with_variational: bool,
    opts: &FlowOpts,
) -> Result<TrajectorySegment> {
    check_horizon(t, opts)?;
    let layout = Layout {
        n: p.dim(),
        with_var: with_variational,
        n_quad: 0,
    };
    let rhs = augmented_rhs(model, &layout, &[]);
    let energy = p.energy(model);
    let guard = energy_guard(model, p.dim(), energy);
    let mut ts = vec![0.0];
    let mut points = vec![p.clone()];
    let mut vars = if with_variational {
        Some(vec![DMatrix::identity(2 * p.dim(), 2 * p.dim())])
    } else {
        None
    };
    let (_, _, meta) = integrate(
        rhs,
        Some(guard),
        layout.pack(p),
        0.0,
        t,
        opts,
        |step: Step<'_>| {
            ts.push(step.t1);
            points.push(layout.point(step.y1));
            if let Some(v) = &mut vars {
                v.push(layout.matrix(step.y1));
            }
            StepControl::Continue
        },
    )?;
    Ok(TrajectorySegment {
        ts,
        points,
        variational: vars,
        energy,
        meta,
    })
}

/// Like [`flow_trajectory`], but stops early (after recording the step) once
/// `stop` returns true, and optionally accumulates quadrature channels.
/// Returns the recorded trajectory and the quadrature values at its end.
pub fn flow_trajectory_until<S>(
    model: &PotentialModel,
    p: &PhasePoint,
    t_max: f64,
    quads: &[Quadrature],
    opts: &FlowOpts,
    mut stop: S,
) -> Result<(TrajectorySegment, Vec<f64>)>
where
    S: FnMut(f64, &PhasePoint) -> bool,
{
    check_horizon(t_max, opts)?;
    let layout = Layout {
        n: p.dim(),
        with_var: false,
        n_quad: quads.len(),
    };
    let rhs = augmented_rhs(model, &layout, quads);
    let energy = p.energy(model);
    let guard = energy_guard(model, p.dim(), energy);
    let mut ts = vec![0.0];
    let mut points = vec![p.clone()];
    let mut qvals = vec![0.0; quads.len()];
    let (_, _, meta) = integrate(
        rhs,
        Some(guard),
        layout.pack(p),
        0.0,
        t_max,
        opts,
        |step: Step<'_>| {
            let pt = layout.point(step.y1);
            ts.push(step.t1);
            qvals = layout.quads(step.y1);
            let done = stop(step.t1, &pt);
            points.push(pt);
            if done {
                StepControl::Stop
            } else {
                StepControl::Continue
            }
        },
    )?;
    Ok((
        TrajectorySegment {
            ts,
            points,
            variational: None,
            energy,
            meta,
        },
        qvals,
    ))
}

/// Outcome of the trapped-set probe.
#[derive(Clone, Debug, PartialEq)]
pub enum EscapeOutcome {
    /// First time |x(t)| > R.
    Escaped(f64),
    /// Phase-space norm fell below the convergence threshold and kept
    /// decreasing (stable-manifold approach).
    ConvergedToOrigin(f64),
    Undecided,
}

pub const CONVERGENCE_NORM: f64 = 1e-6;

/// Integrate forward (or backward, `t_max < 0`) until the trajectory either
/// escapes the ball of radius `r` or converges to the fixed point.
pub fn escape_time(
    model: &PotentialModel,
    p: &PhasePoint,
    r: f64,
    t_max: f64,
    opts: &FlowOpts,
) -> Result<EscapeOutcome> {
    assert!(r > 0.0);
    let layout = Layout {
        n: p.dim(),
        with_var: false,
        n_quad: 0,
    };
    let rhs = augmented_rhs(model, &layout, &[]);
    let guard = energy_guard(model, p.dim(), p.energy(model));
    let n = p.dim();
    let mut outcome = EscapeOutcome::Undecided;
    let res = integrate(
        rhs,
        Some(guard),
        layout.pack(p),
        0.0,
        t_max,
        opts,
        |step: Step<'_>| {
            let xn1 = step.y1.rows(0, n).norm();
            if xn1 > r {
                // Refine the crossing time by linear interpolation on |x|.
                let xn0 = step.y0.rows(0, n).norm();
                let frac = if xn1 > xn0 {
                    ((r - xn0) / (xn1 - xn0)).clamp(0.0, 1.0)
                } else {
                    1.0
                };
                outcome = EscapeOutcome::Escaped(step.t0 + frac * (step.t1 - step.t0));
                return StepControl::Stop;
            }
            let pn = step.y1.rows(0, 2 * n).norm();
            if pn < CONVERGENCE_NORM {
                // Local contraction check: d|z|^2/dt < 0.
                let contracting = step.y1.rows(0, 2 * n).dot(&step.f1.rows(0, 2 * n)) < 0.0;
                if contracting {
                    outcome = EscapeOutcome::ConvergedToOrigin(step.t1);
                    return StepControl::Stop;
                }
            }
            StepControl::Continue
        },
    );
    match res {
        Ok(_) => Ok(outcome),
        Err(e) => Err(e),
    }
}

/// Fixed-step 4th-order symplectic integrator (Yoshida composition of
/// leapfrog), with exact per-substep variational transport. Used for long
/// manifold runs where energy behavior matters more than local error.
pub fn yoshida4(
    model: &PotentialModel,
    p: &PhasePoint,
    t: f64,
    dt: f64,
    with_variational: bool,
) -> Result<(PhasePoint, Option<DMatrix<f64>>)> {
    let n = p.dim();
    let cbrt2 = 2.0_f64.powf(1.0 / 3.0);
    let w1 = 1.0 / (2.0 - cbrt2);
    let w0 = -cbrt2 * w1;
    let steps = (t.abs() / dt).ceil().max(1.0) as usize;
    let hstep = t / steps as f64;
    let mut x = p.x.clone();
    let mut xi = p.xi.clone();
    let mut m = if with_variational {
        Some(DMatrix::<f64>::identity(2 * n, 2 * n))
    } else {
        None
    };
    let drift = |x: &mut DVector<f64>, xi: &DVector<f64>, dt: f64, m: &mut Option<DMatrix<f64>>| {
        x.axpy(dt, xi, 1.0);
        if let Some(m) = m {
            // M <- [[I, dt I], [0, I]] M
            for col in 0..2 * n {
                for i in 0..n {
                    let add = dt * m[(n + i, col)];
                    m[(i, col)] += add;
                }
            }
        }
    };
    let kick = |x: &DVector<f64>, xi: &mut DVector<f64>, dt: f64, m: &mut Option<DMatrix<f64>>| {
        let g = model.gradient(x);
        xi.axpy(-dt, &g, 1.0);
        if let Some(m) = m {
            // M <- [[I, 0], [-dt H, I]] M
            let h = model.hessian(x);
            let top = m.rows(0, n).into_owned();
            let update = &h * top;
            for col in 0..2 * n {
                for i in 0..n {
                    m[(n + i, col)] -= dt * update[(i, col)];
                }
            }
        }
    };
    for _ in 0..steps {
        for w in [w1, w0, w1] {
            let dtw = w * hstep;
            drift(&mut x, &xi, 0.5 * dtw, &mut m);
            kick(&x, &mut xi, dtw, &mut m);
            drift(&mut x, &xi, 0.5 * dtw, &mut m);
        }
    }
    if !x.iter().all(|v| v.is_finite()) || !xi.iter().all(|v| v.is_finite()) {
        return Err(Error::IntegrationFailure {
            reason: "non-finite state in fixed-step run".into(),
            t,
            last_state: vec![],
        });
    }
    Ok((PhasePoint::new(x, xi), m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::PotentialKind;

    fn gaussian_12() -> PotentialModel {
        PotentialModel::new(PotentialKind::Gaussian {
            e0: 1.0,
            lambda: vec![1.0, 2.0],
        })
        .unwrap()
    }

    fn zero2() -> PotentialModel {
        PotentialModel::new(PotentialKind::Zero { n: 2 }).unwrap()
    }

    #[test]
    fn vector_field_free_motion() {
        let m = zero2();
        let p = PhasePoint::from_slices(&[1.0, 0.0], &[2.0, 0.0]);
        let f = vector_field(&m, &p);
        assert_eq!(f.as_slice(), &[2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn vector_field_fixed_point() {
        let m = gaussian_12();
        let p = PhasePoint::from_slices(&[0.0, 0.0], &[0.0, 0.0]);
        assert_eq!(vector_field(&m, &p).norm(), 0.0);
    }

    #[test]
    fn vector_field_matches_gradient() {
        let m = gaussian_12();
        let p = PhasePoint::from_slices(&[1.0, 0.0], &[0.0, 0.0]);
        let f = vector_field(&m, &p);
        let eps = 1e-6;
        let vp = m.value(&DVector::from_vec(vec![1.0 + eps, 0.0]));
        let vm = m.value(&DVector::from_vec(vec![1.0 - eps, 0.0]));
        let fd = -(vp - vm) / (2.0 * eps);
        assert!((f[2] - fd).abs() < 1e-6);
        assert!(f[3].abs() < 1e-12);
    }

    #[test]
    fn free_flight() {
        let m = zero2();
        let p = PhasePoint::from_slices(&[0.0, 0.0], &[1.0, 0.0]);
        let q = flow(&m, &p, 2.0, &FlowOpts::default()).unwrap();
        assert!((q.x[0] - 2.0).abs() < 1e-12);
        assert!(q.x[1].abs() < 1e-12);
        assert!((q.xi[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_time_is_identity() {
        let m = gaussian_12();
        let p = PhasePoint::from_slices(&[0.3, -0.2], &[0.9, 0.4]);
        let q = flow(&m, &p, 0.0, &FlowOpts::default()).unwrap();
        assert_eq!(q, p);
    }

    #[test]
    fn free_variational_flow() {
        let m = zero2();
        let p = PhasePoint::from_slices(&[0.1, 0.2], &[0.5, -0.4]);
        let (_, mat) = flow_with_variational(&m, &p, 3.0, &FlowOpts::default()).unwrap();
        let mut expected = DMatrix::identity(4, 4);
        expected[(0, 2)] = 3.0;
        expected[(1, 3)] = 3.0;
        assert!((mat - expected).norm() < 1e-10);
    }

    #[test]
    fn quadratic_barrier_variational_closed_form() {
        let m = PotentialModel::new(PotentialKind::Quadratic {
            e0: 1.0,
            lambda: vec![1.0, 2.0],
        })
        .unwrap();
        let p = PhasePoint::from_slices(&[0.0, 0.0], &[0.0, 0.0]);
        let (_, mat) = flow_with_variational(&m, &p, 1.0, &FlowOpts::default()).unwrap();
        // Per mode: [[cosh(l t), sinh(l t)/l], [l sinh(l t), cosh(l t)]].
        for (j, l) in [1.0f64, 2.0].into_iter().enumerate() {
            assert!((mat[(j, j)] - l.cosh()).abs() < 1e-8, "cosh block");
            assert!((mat[(j, j + 2)] - l.sinh() / l).abs() < 1e-8, "sinh/l block");
            assert!((mat[(j + 2, j)] - l * l.sinh()).abs() < 1e-8, "l sinh block");
            assert!((mat[(j + 2, j + 2)] - l.cosh()).abs() < 1e-8);
        }
    }

    #[test]
    fn variational_matches_finite_differences() {
        let m = gaussian_12();
        let p = PhasePoint::from_slices(&[1.2, 0.4], &[-0.3, 0.8]);
        let t = 2.5;
        let opts = FlowOpts::default();
        let (_, mat) = flow_with_variational(&m, &p, t, &opts).unwrap();
        let eps = 1e-6;
        for col in 0..4 {
            let mut pp = p.clone();
            let mut pm = p.clone();
            if col < 2 {
                pp.x[col] += eps;
                pm.x[col] -= eps;
            } else {
                pp.xi[col - 2] += eps;
                pm.xi[col - 2] -= eps;
            }
            let qp = flow(&m, &pp, t, &opts).unwrap();
            let qm = flow(&m, &pm, t, &opts).unwrap();
            for row in 0..4 {
                let fd = if row < 2 {
                    (qp.x[row] - qm.x[row]) / (2.0 * eps)
                } else {
                    (qp.xi[row - 2] - qm.xi[row - 2]) / (2.0 * eps)
                };
                let scale = mat[(row, col)].abs().max(1.0);
                assert!(
                    (mat[(row, col)] - fd).abs() / scale < 1e-4,
                    "M[{},{}] = {} vs fd {}",
                    row,
                    col,
                    mat[(row, col)],
                    fd
                );
            }
        }
    }

    #[test]
    fn stable_manifold_approach_decays_exponentially() {
        let m = gaussian_12();
        // Near the stable axis xi = -lambda_1 x along e1 at energy ~E0.
        let eps = 1e-3;
        let p = PhasePoint::from_slices(&[eps, 0.0], &[-eps, 0.0]);
        let opts = FlowOpts::default();
        let tight = FlowOpts::default().with_tol(1e-11);
        for t in [2.0, 5.0, 8.0] {
            let a = flow(&m, &p, t, &opts).unwrap();
            let b = flow(&m, &p, t, &tight).unwrap();
            assert!((a.norm() - b.norm()).abs() < 1e-9);
            assert!(a.norm() <= 2.0 * eps * (-1.0 * t).exp() * 2.0 + 1e-12);
        }
    }

    #[test]
    fn escape_time_free_motion() {
        let m = zero2();
        let p = PhasePoint::from_slices(&[0.0, 0.0], &[1.0, 0.0]);
        match escape_time(&m, &p, 10.0, 100.0, &FlowOpts::default()).unwrap() {
            EscapeOutcome::Escaped(t) => assert!((t - 10.0).abs() < 1e-3),
            other => panic!("expected escape, got {:?}", other),
        }
    }

    #[test]
    fn escape_time_converges_on_stable_axis() {
        let m = gaussian_12();
        let p = PhasePoint::from_slices(&[1e-3, 0.0], &[-1e-3, 0.0]);
        match escape_time(&m, &p, 20.0, 100.0, &FlowOpts::default()).unwrap() {
            EscapeOutcome::ConvergedToOrigin(_) => {}
            other => panic!("expected convergence, got {:?}", other),
        }
    }

    #[test]
    fn escape_time_generic_energy_point() {
        let m = gaussian_12();
        let p = PhasePoint::from_slices(&[2.0, 1.0], &[0.0, 1.2]);
        match escape_time(&m, &p, 20.0, 200.0, &FlowOpts::default()).unwrap() {
            EscapeOutcome::Escaped(_) => {}
            other => panic!("expected escape, got {:?}", other),
        }
    }

    #[test]
    fn group_law_and_time_reversal() {
        let m = gaussian_12();
        let opts = FlowOpts::default();
        let p = PhasePoint::from_slices(&[1.1, -0.6], &[0.4, 0.9]);
        let (s, t) = (1.3, 2.1);
        let a = flow(&m, &flow(&m, &p, s, &opts).unwrap(), t, &opts).unwrap();
        let b = flow(&m, &p, s + t, &opts).unwrap();
        assert!((a.x - &b.x).norm() < 1e-8);
        assert!((a.xi - &b.xi).norm() < 1e-8);

        let fwd = flow(&m, &p, 3.0, &opts).unwrap();
        let back = flow(&m, &fwd, -3.0, &opts).unwrap();
        assert!((back.x - &p.x).norm() < 1e-8);
        assert!((back.xi - &p.xi).norm() < 1e-8);

        // (x, xi) -> (x, -xi) conjugates forward and backward flow.
        let rev = PhasePoint::new(p.x.clone(), -p.xi.clone());
        let fwd_rev = flow(&m, &rev, 3.0, &opts).unwrap();
        let back_orig = flow(&m, &p, -3.0, &opts).unwrap();
        assert!((fwd_rev.x - &back_orig.x).norm() < 1e-8);
        assert!((fwd_rev.xi + &back_orig.xi).norm() < 1e-8);
    }

    #[test]
    fn trajectory_invariants() {
        let m = gaussian_12();
        let p = PhasePoint::from_slices(&[1.5, 0.3], &[-0.8, 0.2]);
        let traj = flow_trajectory(&m, &p, 12.0, true, &FlowOpts::default()).unwrap();
        assert!(traj.max_energy_drift(&m) <= 1e-9);
        assert!(traj.max_symplectic_defect() <= 1e-7);
    }

    #[test]
    fn yoshida_matches_adaptive() {
        let m = gaussian_12();
        let p = PhasePoint::from_slices(&[1.5, 0.3], &[-0.8, 0.2]);
        let (a, msym) = yoshida4(&m, &p, 4.0, 1e-3, true).unwrap();
        let b = flow(&m, &p, 4.0, &FlowOpts::default()).unwrap();
        assert!((a.x - &b.x).norm() < 1e-7);
        assert!((a.xi - &b.xi).norm() < 1e-7);
        assert!(symplectic_defect(&msym.unwrap()) < 1e-9);
    }
}
