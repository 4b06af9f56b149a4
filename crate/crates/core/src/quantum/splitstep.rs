//! Split-step (Strang) spectral propagation of `i h psi_t = P psi`,
//! `P = -h^2/2 Delta + V`, on uniform 1D/2D grids.
//!
//! The kinetic term uses the mass convention `h^2 |k|^2 / 2`, i.e. the
//! symbol `|xi|^2 / 2` with `xi = h k_fft`. Each Strang step is
//! `e^{-i dt V/2h} F^{-1} e^{-i dt |xi|^2/2h} F e^{-i dt V/2h}` and is
//! exactly unitary up to roundoff; an optional smooth absorbing mask eats
//! outgoing flux near the boundary and its mass is accounted separately.

use std::io::{Read as IoRead, Write as IoWrite};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::potential::PotentialModel;

/// Uniform spatial grid: per-axis extent `[lo, hi)` with `points` samples
/// (the hi endpoint is the periodic wrap).
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points: Vec<usize>,
}

impl GridSpec {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, points: Vec<usize>) -> Result<Self> {
        let n = lo.len();
        if n == 0 || n > 2 || hi.len() != n || points.len() != n {
            return Err(Error::Grid(format!(
                "grid must be 1D or 2D with matching extents, got {n} axes"
            )));
        }
        for a in 0..n {
            if !(hi[a] > lo[a]) || points[a] < 8 || !points[a].is_power_of_two() {
                return Err(Error::Grid(format!(
                    "axis {a}: need hi > lo and a power-of-two point count >= 8"
                )));
            }
        }
        Ok(GridSpec { lo, hi, points })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn dx(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.points[axis] as f64
    }

    pub fn coord(&self, axis: usize, index: usize) -> f64 {
        self.lo[axis] + index as f64 * self.dx(axis)
    }

    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell volume `prod dx`.
    pub fn cell(&self) -> f64 {
        (0..self.dim()).map(|a| self.dx(a)).product()
    }

    /// FFT momentum `xi = h * 2 pi j / L` (signed frequency) for `index`
    /// along `axis`.
    pub fn xi(&self, axis: usize, index: usize, h: f64) -> f64 {
        let n = self.points[axis];
        let j = if index < n / 2 {
            index as isize
        } else {
            index as isize - n as isize
        };
        h * 2.0 * std::f64::consts::PI * j as f64 / (self.hi[axis] - self.lo[axis])
    }

    /// Largest representable momentum (Nyquist) along `axis`.
    pub fn xi_max(&self, axis: usize, h: f64) -> f64 {
        h * std::f64::consts::PI / self.dx(axis)
    }

    /// Row-major iteration over grid points as coordinate vectors.
    pub fn coords(&self) -> Vec<Vec<f64>> {
        match self.dim() {
            1 => (0..self.points[0]).map(|i| vec![self.coord(0, i)]).collect(),
            2 => {
                let mut out = Vec::with_capacity(self.len());
                for i0 in 0..self.points[0] {
                    let x0 = self.coord(0, i0);
                    for i1 in 0..self.points[1] {
                        out.push(vec![x0, self.coord(1, i1)]);
                    }
                }
                out
            }
            _ => unreachable!(),
        }
    }
}

/// A wavefunction sampled on a [`GridSpec`], with its Planck scale.
#[derive(Clone, Debug)]
pub struct GridState {
    pub spec: GridSpec,
    pub h: f64,
    /// Row-major amplitudes (axis 0 slowest).
    pub psi: Vec<Complex64>,
}

impl GridState {
    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    /// `int |psi|^2 dx`.
    pub fn norm_sq(&self) -> f64 {
        self.psi.iter().map(|c| c.norm_sqr()).sum::<f64>() * self.spec.cell()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `<x>` per axis.
    pub fn position_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim()];
        let mut mass = 0.0;
        for (x, c) in self.spec.coords().into_iter().zip(&self.psi) {
            let w = c.norm_sqr();
            mass += w;
            for a in 0..x.len() {
                mean[a] += w * x[a];
            }
        }
        mean.iter_mut().for_each(|m| *m /= mass);
        mean
    }

    /// Overlap `<self, other>` (conjugate-linear in self).
    pub fn overlap(&self, other: &GridState) -> Result<Complex64> {
        if self.spec != other.spec {
            return Err(Error::Grid("overlap of states on different grids".into()));
        }
        Ok(self
            .psi
            .iter()
            .zip(&other.psi)
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
            * Complex64::from(self.spec.cell()))
    }
}

/// Gaussian coherent state of width `sqrt(h)`:
/// `psi = (pi h)^{-n/4} exp(-|x - x0|^2/(2h) + i xi0 . (x - x0) / h)`,
/// numerically normalized to unit L^2 norm.
pub fn coherent_state(x0: &[f64], xi0: &[f64], h: f64, spec: &GridSpec) -> Result<GridState> {
    let n = spec.dim();
    if x0.len() != n || xi0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x0.len().max(xi0.len()),
        });
    }
    let width = h.sqrt();
    for a in 0..n {
        if x0[a] - 4.0 * width < spec.lo[a] || x0[a] + 4.0 * width > spec.hi[a] {
            return Err(Error::Grid(format!(
                "coherent state center {} too close to the axis-{a} boundary",
                x0[a]
            )));
        }
        // Grid invariant: dx <= h / (4 max |xi| of interest); the state's
        // momentum content reaches |xi0| + a few widths h/sqrt(h).
        let xi_interest = xi0[a].abs() + 3.0 * width;
        if spec.dx(a) > h / (4.0 * xi_interest) {
            return Err(Error::Grid(format!(
                "axis {a}: dx = {:.3e} exceeds h/(4 |xi|) = {:.3e}; momentum aliasing",
                spec.dx(a),
                h / (4.0 * xi_interest)
            )));
        }
    }
    let mut psi = Vec::with_capacity(spec.len());
    for x in spec.coords() {
        let mut arg = 0.0;
        let mut phase = 0.0;
        for a in 0..n {
            let dxa = x[a] - x0[a];
            arg -= dxa * dxa / (2.0 * h);
            phase += xi0[a] * dxa / h;
        }
        psi.push(Complex64::from_polar(arg.exp(), phase));
    }
    let mut state = GridState {
        spec: spec.clone(),
        h,
        psi,
    };
    let norm = state.norm();
    if !(norm > 0.0) {
        return Err(Error::Grid("coherent state vanished on the grid".into()));
    }
    state.psi.iter_mut().for_each(|c| *c /= norm);
    Ok(state)
}

/// Propagation options.
#[derive(Clone, Debug)]
pub struct PropagateOpts {
    /// Strang step.
    pub dt: f64,
    /// Optional absorbing layer width (in length units) at every boundary.
    pub absorber_width: Option<f64>,
}

/// Outcome of a propagation run.
#[derive(Debug)]
pub struct Propagation {
    pub state: GridState,
    /// `| (final norm^2 + absorbed) / initial norm^2 - 1 |`.
    pub norm_drift: f64,
    /// Probability mass eaten by the absorbing mask.
    pub absorbed_mass: f64,
    pub steps: usize,
}

/// Propagate for time `t` under the model's potential.
pub fn propagate(
    state: &GridState,
    model: &PotentialModel,
    t: f64,
    opts: &PropagateOpts,
) -> Result<Propagation> {
    if model.dimension() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            got: model.dimension(),
        });
    }
    let v: Vec<f64> = state
        .spec
        .coords()
        .into_iter()
        .map(|x| model.value(&nalgebra::DVector::from_vec(x)))
        .collect();
    propagate_sampled(state, &v, t, opts)
}

/// Propagate with an explicitly sampled potential (row-major, same layout
/// as `psi`). Used for closed-form fixtures (e.g. an exact harmonic well)
/// that are not in the model catalogue.
pub fn propagate_sampled(
    state: &GridState,
    v: &[f64],
    t: f64,
    opts: &PropagateOpts,
) -> Result<Propagation> {
    let spec = &state.spec;
    let h = state.h;
    if v.len() != spec.len() {
        return Err(Error::Grid(format!(
            "potential samples {} do not match the grid ({})",
            v.len(),
            spec.len()
        )));
    }
    if !(opts.dt > 0.0) || !(t >= 0.0) {
        return Err(Error::Config("propagation needs dt > 0 and t >= 0".into()));
    }
    let steps = (t / opts.dt).ceil().max(1.0) as usize;
    let dt = t / steps as f64;

    let half_kick: Vec<Complex64> = v
        .iter()
        .map(|&vx| Complex64::from_polar(1.0, -dt * vx / (2.0 * h)))
        .collect();
    let mask = opts.absorber_width.map(|w| absorber_mask(spec, w));

    let mut planner = FftPlanner::new();
    let dims = spec.points.clone();
    let drift = drift_phases(spec, h, dt);
    let fwd: Vec<Arc<dyn Fft<f64>>> = dims.iter().map(|&n| planner.plan_fft_forward(n)).collect();
    let inv: Vec<Arc<dyn Fft<f64>>> = dims.iter().map(|&n| planner.plan_fft_inverse(n)).collect();

    let mut psi = state.psi.clone();
    let mut scratch = vec![Complex64::new(0.0, 0.0); psi.len()];
    let norm0 = state.norm_sq();
    let cell = spec.cell();
    let mut absorbed = 0.0;

    for _ in 0..steps {
        kick(&mut psi, &half_kick);
        apply_drift(&mut psi, &mut scratch, spec, &drift, &fwd, &inv);
        kick(&mut psi, &half_kick);
        if let Some(mask) = &mask {
            let before: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
            for (c, &m) in psi.iter_mut().zip(mask) {
                *c *= m;
            }
            let after: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
            absorbed += (before - after) * cell;
        }
    }

    let out = GridState {
        spec: spec.clone(),
        h,
        psi,
    };
    let drift_err = ((out.norm_sq() + absorbed) / norm0 - 1.0).abs();
    if drift_err > 1e-8 {
        return Err(Error::StepSize { drift: drift_err });
    }
    Ok(Propagation {
        state: out,
        norm_drift: drift_err,
        absorbed_mass: absorbed,
        steps,
    })
}

fn kick(psi: &mut [Complex64], phase: &[Complex64]) {
    for (c, &p) in psi.iter_mut().zip(phase) {
        *c *= p;
    }
}

/// Per-axis drift phases `exp(-i dt xi^2 / 2h)`; the inverse-FFT
/// normalization `1/N` is folded into axis 0.
fn drift_phases(spec: &GridSpec, h: f64, dt: f64) -> Vec<Vec<Complex64>> {
    let total = spec.len() as f64;
    (0..spec.dim())
        .map(|a| {
            let norm = if a == 0 { 1.0 / total } else { 1.0 };
            (0..spec.points[a])
                .map(|j| {
                    let xi = spec.xi(a, j, h);
                    Complex64::from_polar(norm, -dt * xi * xi / (2.0 * h))
                })
                .collect()
        })
        .collect()
}

/// `F^{-1} e^{-i dt |xi|^2/2h} F` over all axes.
fn apply_drift(
    psi: &mut Vec<Complex64>,
    scratch: &mut Vec<Complex64>,
    spec: &GridSpec,
    drift: &[Vec<Complex64>],
    fwd: &[Arc<dyn Fft<f64>>],
    inv: &[Arc<dyn Fft<f64>>],
) {
    match spec.dim() {
        1 => {
            fwd[0].process(psi);
            kick(psi, &drift[0]);
            inv[0].process(psi);
        }
        2 => {
            let (n0, n1) = (spec.points[0], spec.points[1]);
            // Rows are axis 1 (contiguous).
            for row in psi.chunks_exact_mut(n1) {
                fwd[1].process(row);
            }
            transpose(psi, scratch, n0, n1);
            // scratch is now (n1, n0) row-major; rows are axis 0.
            for (j1, row) in scratch.chunks_exact_mut(n0).enumerate() {
                fwd[0].process(row);
                for (j0, c) in row.iter_mut().enumerate() {
                    *c *= drift[0][j0] * drift[1][j1];
                }
                inv[0].process(row);
            }
            transpose(scratch, psi, n1, n0);
            for row in psi.chunks_exact_mut(n1) {
                inv[1].process(row);
            }
        }
        _ => unreachable!(),
    }
}

/// Out-of-place transpose of an `r x c` row-major matrix into `c x r`.
fn transpose(src: &[Complex64], dst: &mut [Complex64], r: usize, c: usize) {
    const BLOCK: usize = 64;
    for ib in (0..r).step_by(BLOCK) {
        for jb in (0..c).step_by(BLOCK) {
            for i in ib..(ib + BLOCK).min(r) {
                for j in jb..(jb + BLOCK).min(c) {
                    dst[j * r + i] = src[i * c + j];
                }
            }
        }
    }
}

/// Smooth `sin^2` ramp to zero over `width` at every boundary.
fn absorber_mask(spec: &GridSpec, width: f64) -> Vec<f64> {
    let ramp = |x: f64, lo: f64, hi: f64| -> f64 {
        let d = (x - lo).min(hi - x);
        if d >= width {
            1.0
        } else if d <= 0.0 {
            0.0
        } else {
            let s = (std::f64::consts::FRAC_PI_2 * d / width).sin();
            s * s
        }
    };
    spec.coords()
        .into_iter()
        .map(|x| {
            (0..spec.dim())
                .map(|a| ramp(x[a], spec.lo[a], spec.hi[a]))
                .product()
        })
        .collect()
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"QGRID\x01\x00\x00";

/// Binary state snapshot. Layout (all little-endian):
/// magic `QGRID\x01\x00\x00` (8 bytes), `u32` ndim, per axis
/// (`u64` points, `f64` lo, `f64` hi), `f64` h, then interleaved
/// re/im `f64` amplitudes in row-major order.
pub fn write_snapshot<W: IoWrite>(state: &GridState, w: &mut W) -> Result<()> {
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&(state.dim() as u32).to_le_bytes())?;
    for a in 0..state.dim() {
        w.write_all(&(state.spec.points[a] as u64).to_le_bytes())?;
        w.write_all(&state.spec.lo[a].to_le_bytes())?;
        w.write_all(&state.spec.hi[a].to_le_bytes())?;
    }
    w.write_all(&state.h.to_le_bytes())?;
    let mut buf = Vec::with_capacity(state.psi.len() * 16);
    for c in &state.psi {
        buf.extend_from_slice(&c.re.to_le_bytes());
        buf.extend_from_slice(&c.im.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Read a snapshot written by [`write_snapshot`].
pub fn read_snapshot<R: IoRead>(r: &mut R) -> Result<GridState> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::Config("not a grid-state snapshot".into()));
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b)?;
    let ndim = u32::from_le_bytes(u32b) as usize;
    if ndim == 0 || ndim > 2 {
        return Err(Error::Config(format!("snapshot has {ndim} axes")));
    }
    let mut u64b = [0u8; 8];
    let mut f64b = [0u8; 8];
    let (mut points, mut lo, mut hi) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..ndim {
        r.read_exact(&mut u64b)?;
        points.push(u64::from_le_bytes(u64b) as usize);
        r.read_exact(&mut f64b)?;
        lo.push(f64::from_le_bytes(f64b));
        r.read_exact(&mut f64b)?;
        hi.push(f64::from_le_bytes(f64b));
    }
    r.read_exact(&mut f64b)?;
    let h = f64::from_le_bytes(f64b);
    let spec = GridSpec::new(lo, hi, points)?;
    let mut psi = Vec::with_capacity(spec.len());
    for _ in 0..spec.len() {
        r.read_exact(&mut f64b)?;
        let re = f64::from_le_bytes(f64b);
        r.read_exact(&mut f64b)?;
        let im = f64::from_le_bytes(f64b);
        psi.push(Complex64::new(re, im));
    }
    Ok(GridState { spec, h, psi })
}
