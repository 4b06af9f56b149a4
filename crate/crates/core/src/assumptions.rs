//! Barrier-top linearization and validation of the standing assumptions:
//! a unique non-degenerate global maximum, short-range decay, and a trivial
//! trapped set at the barrier energy.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::flow::{escape_time, EscapeOutcome, FlowOpts};
use crate::potential::PotentialModel;
use crate::util::{halton_point, unit_sphere};

/// Spectral data of the linearized flow at the barrier top.
#[derive(Clone, Debug)]
pub struct Linearization {
    /// Curvature frequencies `lambda_j`, ascending.
    pub lambdas: Vec<f64>,
    /// Orthonormal principal axes as columns, ordered like `lambdas`.
    pub axes: DMatrix<f64>,
    /// The linearized field matrix `[[0, I], [-Hess V(0), 0]]`.
    pub field_matrix: DMatrix<f64>,
}

impl Linearization {
    /// True when the softest direction is spectrally isolated:
    /// `lambda_2 > lambda_1` by the given relative gap.
    pub fn lambda1_simple(&self, rel_gap: f64) -> bool {
        match self.lambdas.as_slice() {
            [] | [_] => true,
            [l1, l2, ..] => (l2 - l1) / l1 > rel_gap,
        }
    }
}

/// Eigen-decompose the barrier-top Hessian. Fails unless the origin is a
/// non-degenerate critical point with negative-definite Hessian.
pub fn linearization(model: &PotentialModel) -> Result<Linearization> {
    let n = model.dimension();
    let origin = DVector::zeros(n);
    let (_, g, h) = model.evaluate(&origin)?;
    if g.norm() > 1e-10 {
        return Err(Error::AssumptionViolation(format!(
            "the origin is not a critical point (|grad V(0)| = {:.3e})",
            g.norm()
        )));
    }
    let sym = nalgebra::SymmetricEigen::new(-h);
    let mut pairs: Vec<(f64, DVector<f64>)> = sym
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(j, &mu)| (mu, sym.eigenvectors.column(j).into_owned()))
        .collect();
    if pairs.iter().any(|(mu, _)| *mu <= 0.0) {
        return Err(Error::AssumptionViolation(
            "barrier-top Hessian is not negative definite".into(),
        ));
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let lambdas: Vec<f64> = pairs.iter().map(|(mu, _)| mu.sqrt()).collect();
    let mut axes = DMatrix::zeros(n, n);
    for (j, (_, v)) in pairs.iter().enumerate() {
        axes.set_column(j, v);
    }
    let mut field = DMatrix::zeros(2 * n, 2 * n);
    let origin = DVector::zeros(n);
    let hess = model.hessian(&origin);
    for i in 0..n {
        field[(i, n + i)] = 1.0;
        for j in 0..n {
            field[(n + i, j)] = -hess[(i, j)];
        }
    }
    Ok(Linearization {
        lambdas,
        axes,
        field_matrix: field,
    })
}

/// Outcome of the assumption battery.
#[derive(Clone, Debug)]
pub struct AssumptionReport {
    pub lambdas: Vec<f64>,
    pub unique_maximum: bool,
    pub short_range: bool,
    pub trapped_set_trivial: bool,
    /// Forward probes launched on the barrier energy shell.
    pub probes: usize,
    /// Probes that neither escaped nor converged to the fixed point.
    pub undecided: usize,
    /// Off-origin critical value closest to the barrier height, if any
    /// competing maximum was found.
    pub competing_maximum: Option<(Vec<f64>, f64)>,
}

impl AssumptionReport {
    pub fn all_ok(&self) -> bool {
        self.unique_maximum && self.short_range && self.trapped_set_trivial
    }

    pub fn into_result(self) -> Result<AssumptionReport> {
        if self.all_ok() {
            Ok(self)
        } else {
            let mut why = Vec::new();
            if !self.unique_maximum {
                why.push("global maximum is not unique".to_string());
            }
            if !self.short_range {
                why.push("potential is not short-range".to_string());
            }
            if !self.trapped_set_trivial {
                why.push(format!(
                    "{}/{} energy-shell probes stayed bounded without converging",
                    self.undecided, self.probes
                ));
            }
            Err(Error::AssumptionViolation(why.join("; ")))
        }
    }
}

/// Run the assumption battery: Hessian spectrum, global-maximum scan with
/// Newton refinement of competing critical points, sampled decay check, and
/// a forward trapped-set probe on the barrier energy shell.
pub fn validate_assumptions(
    model: &PotentialModel,
    probes: usize,
    opts: &FlowOpts,
) -> Result<AssumptionReport> {
    let lin = linearization(model)?;
    let lambdas = lin.lambdas.clone();
    let n = model.dimension();
    let e0 = model.barrier_energy();
    let scale = model.length_scale();

    // --- Unique global maximum -------------------------------------------
    // Halton scan of a box, Newton refinement of the best off-origin
    // candidates, then compare critical values against the barrier height.
    let mut unique_maximum = true;
    let mut competing: Option<(Vec<f64>, f64)> = None;
    let box_r = 12.0 * scale;
    let mut candidates: Vec<(f64, DVector<f64>)> = Vec::new();
    for i in 1..=4096usize {
        let u = halton_point(i, n);
        let x = DVector::from_iterator(n, u.iter().map(|&c| (2.0 * c - 1.0) * box_r));
        if x.norm() < 0.3 * scale {
            continue;
        }
        let v = model.value(&x);
        if v > e0 * (1.0 - 1e-9) {
            unique_maximum = false;
            competing = Some((x.iter().cloned().collect(), v));
        }
        candidates.push((v, x));
    }
    candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    for (_, x0) in candidates.into_iter().take(24) {
        if let Some(xc) = newton_critical_point(model, &x0) {
            if xc.norm() > 0.05 * scale {
                let vc = model.value(&xc);
                if vc >= e0 * (1.0 - 1e-9) {
                    unique_maximum = false;
                }
                let better = competing
                    .as_ref()
                    .map(|(_, v)| vc > *v)
                    .unwrap_or(true);
                if better && vc > 0.1 * e0 {
                    competing = Some((xc.iter().cloned().collect(), vc));
                }
            }
        }
    }

    // --- Short-range decay -------------------------------------------------
    // The tail must keep shrinking: compare |V| on nested shells.
    let mut short_range = model.is_short_range();
    if short_range {
        let dirs: Vec<DVector<f64>> = (1..=16).map(|i| unit_sphere(i, n)).collect();
        let shell_max = |r: f64| -> f64 {
            dirs.iter()
                .map(|d| model.value(&(d * r)).abs())
                .fold(0.0, f64::max)
        };
        let v15 = shell_max(15.0 * scale);
        let v30 = shell_max(30.0 * scale);
        let v60 = shell_max(60.0 * scale);
        let vref = e0.abs().max(model.value(&DVector::zeros(n)).abs()).max(1e-12);
        if !(v30 <= 0.5 * v15 + 1e-300 && v60 <= 0.5 * v30 + 1e-300 && v60 < 1e-2 * vref) {
            short_range = false;
        }
    }

    // --- Trapped set at the barrier energy ---------------------------------
    let lambda1 = lambdas[0];
    let horizon = 50.0 / lambda1;
    let r_escape = 20.0 * scale;
    let mut undecided = 0usize;
    let mut launched = 0usize;
    let mut i = 0usize;
    while launched < probes && i < 20 * probes + 100 {
        i += 1;
        let u = halton_point(i, n);
        let x = DVector::from_iterator(n, u.iter().map(|&c| (2.0 * c - 1.0) * 2.0 * scale));
        let v = model.value(&x);
        if e0 - v < 1e-12 {
            continue; // above the local barrier, no real momentum
        }
        let speed = (2.0 * (e0 - v)).sqrt();
        let dir = unit_sphere(i, n);
        let p = crate::flow::PhasePoint::new(x, dir * speed);
        launched += 1;
        match escape_time(model, &p, r_escape, horizon, opts) {
            Ok(EscapeOutcome::Escaped(_)) | Ok(EscapeOutcome::ConvergedToOrigin(_)) => {}
            Ok(EscapeOutcome::Undecided) => undecided += 1,
            Err(Error::IntegrationFailure { .. }) => undecided += 1,
            Err(e) => return Err(e),
        }
    }
    let trapped_set_trivial = undecided == 0;

    Ok(AssumptionReport {
        lambdas,
        unique_maximum,
        short_range,
        trapped_set_trivial,
        probes: launched,
        undecided,
        competing_maximum: competing,
    })
}

/// Damped Newton iteration for `grad V = 0`; returns the critical point if
/// the residual drops below 1e-10 within the iteration budget.
fn newton_critical_point(model: &PotentialModel, x0: &DVector<f64>) -> Option<DVector<f64>> {
    let mut x = x0.clone();
    for _ in 0..80 {
        let g = model.gradient(&x);
        if g.norm() < 1e-10 {
            return Some(x);
        }
        let h = model.hessian(&x);
        let step = h.lu().solve(&g)?;
        let mut damp = 1.0;
        let g0 = g.norm();
        loop {
            let trial = &x - damp * &step;
            if model.gradient(&trial).norm() < g0 || damp < 1.0 / 64.0 {
                x = trial;
                break;
            }
            damp *= 0.5;
        }
        if x.norm() > 1e6 || !x.iter().all(|v| v.is_finite()) {
            return None;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::PotentialKind;

    #[test]
    fn linearization_recovers_rotated_spectrum() {
        let angle = 0.7;
        let model = PotentialModel::new(PotentialKind::Gaussian {
            e0: 1.0,
            lambda: vec![1.0, 2.0],
        })
        .unwrap()
        .rotated_in_plane(0, 1, angle)
        .unwrap();
        let lin = linearization(&model).unwrap();
        assert!((lin.lambdas[0] - 1.0).abs() < 1e-10);
        assert!((lin.lambdas[1] - 2.0).abs() < 1e-10);
        // Soft axis is the rotated e1.
        let a = lin.axes.column(0);
        let expect = DVector::from_vec(vec![angle.cos(), angle.sin()]);
        assert!((a.clone_owned() - &expect).norm().min((a.clone_owned() + expect).norm()) < 1e-10);
        assert!(lin.lambda1_simple(0.05));
        // Field matrix eigen-structure: A (v, +-l v) = +-l (v, +-l v).
        let v = lin.axes.column(0).into_owned();
        let mut w = DVector::zeros(4);
        w.rows_mut(0, 2).copy_from(&v);
        w.rows_mut(2, 2).copy_from(&(1.0 * &v));
        assert!((&lin.field_matrix * &w - &w).norm() < 1e-10);
    }

    #[test]
    fn linearization_rejects_degenerate_top() {
        let model = PotentialModel::new(PotentialKind::GaussianWell {
            n: 2,
            depth: 1.0,
            width: 1.0,
        })
        .unwrap();
        assert!(matches!(
            linearization(&model),
            Err(Error::AssumptionViolation(_))
        ));
    }

    #[test]
    fn gaussian_barrier_passes_battery() {
        let model = PotentialModel::new(PotentialKind::Gaussian {
            e0: 1.0,
            lambda: vec![1.0, 2.0],
        })
        .unwrap();
        let report = validate_assumptions(&model, 24, &FlowOpts::default()).unwrap();
        assert!(report.all_ok(), "{:?}", report);
    }

    #[test]
    fn double_bump_fails_uniqueness() {
        let model = PotentialModel::new(PotentialKind::DoubleBump {
            e0: 1.0,
            lambda: vec![1.0, 1.0],
            bump: 1.0,
            center: vec![6.0, 0.0],
            width: 0.8,
        })
        .unwrap();
        let report = validate_assumptions(&model, 8, &FlowOpts::default()).unwrap();
        assert!(!report.unique_maximum);
        assert!(report.into_result().is_err());
    }

    #[test]
    fn quadratic_fails_short_range() {
        let model = PotentialModel::new(PotentialKind::Quadratic {
            e0: 1.0,
            lambda: vec![1.0],
        })
        .unwrap();
        let report = validate_assumptions(&model, 4, &FlowOpts::default()).unwrap();
        assert!(!report.short_range);
    }
}
