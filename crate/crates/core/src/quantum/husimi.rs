//! Husimi (FBI) phase-space probes.
//!
//! The Husimi field is the coherent-state overlap intensity
//! `H(x0, xi0) = (2 pi h)^{-n} |<phi_{x0,xi0}, psi>|^2` with the unit
//! Gaussian window of width `sqrt(h)` used by [`super::splitstep::coherent_state`];
//! with the `(2 pi h)^{-n}` density convention it integrates to `||psi||^2`
//! over phase space. Wavefront content is surrogated at fixed `h` by the
//! mass fraction of the field inside a `delta`-tube of a set of phase-space
//! points (for example a sampled Lagrangian manifold patch).

use std::collections::HashMap;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::manifold::ManifoldPatch;

use super::splitstep::GridState;

/// Rectangular phase-space sampling window.
#[derive(Clone, Debug)]
pub struct PhaseSpaceWindow {
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub x_points: Vec<usize>,
    pub xi_lo: Vec<f64>,
    pub xi_hi: Vec<f64>,
    pub xi_points: Vec<usize>,
}

/// Sampled Husimi density.
#[derive(Clone, Debug)]
pub struct HusimiField {
    pub h: f64,
    /// Position sample coordinates per axis.
    pub x_axes: Vec<Vec<f64>>,
    /// Momentum sample coordinates per axis.
    pub xi_axes: Vec<Vec<f64>>,
    /// Row-major over (x axes ..., xi axes ...); nonnegative.
    pub values: Vec<f64>,
    /// Phase-space sample cell `prod dx * prod dxi`.
    pub cell_volume: f64,
}

/// Gaussian window truncation radius in units of `sqrt(h)` (tail mass
/// `~e^{-R^2}` is far below the 1e-3 mass tolerance).
const WINDOW_RADIUS: f64 = 6.0;

/// Husimi transform of `state` on the given window.
pub fn husimi_wavefront(state: &GridState, window: &PhaseSpaceWindow) -> Result<HusimiField> {
    let n = state.dim();
    let spec = &state.spec;
    let h = state.h;
    if window.x_lo.len() != n
        || window.x_hi.len() != n
        || window.x_points.len() != n
        || window.xi_lo.len() != n
        || window.xi_hi.len() != n
        || window.xi_points.len() != n
    {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: window.x_lo.len(),
        });
    }
    for a in 0..n {
        if window.x_points[a] < 2 || window.xi_points[a] < 2 {
            return Err(Error::Config(
                "phase-space window needs at least 2 samples per axis".into(),
            ));
        }
        if !(window.x_hi[a] > window.x_lo[a]) || !(window.xi_hi[a] > window.xi_lo[a]) {
            return Err(Error::Config("empty phase-space window".into()));
        }
        if window.x_lo[a] < spec.lo[a] || window.x_hi[a] > spec.hi[a] {
            return Err(Error::Resolution(format!(
                "window positions [{}, {}] leave the grid on axis {a}",
                window.x_lo[a], window.x_hi[a]
            )));
        }
        let ximax = spec.xi_max(a, h);
        if window.xi_lo[a] < -ximax || window.xi_hi[a] > ximax {
            return Err(Error::Resolution(format!(
                "window momenta [{}, {}] beyond the grid Nyquist range +-{ximax:.3} on axis {a}",
                window.xi_lo[a], window.xi_hi[a]
            )));
        }
    }

    let axis = |lo: f64, hi: f64, p: usize| -> Vec<f64> {
        (0..p)
            .map(|i| lo + (hi - lo) * i as f64 / (p - 1) as f64)
            .collect()
    };
    let x_axes: Vec<Vec<f64>> = (0..n)
        .map(|a| axis(window.x_lo[a], window.x_hi[a], window.x_points[a]))
        .collect();
    let xi_axes: Vec<Vec<f64>> = (0..n)
        .map(|a| axis(window.xi_lo[a], window.xi_hi[a], window.xi_points[a]))
        .collect();
    let cell_volume: f64 = (0..n)
        .map(|a| {
            (x_axes[a][1] - x_axes[a][0]) * (xi_axes[a][1] - xi_axes[a][0])
        })
        .product();

    // Fourier phase tables e^{-i xi y / h} for the full grid, per axis.
    let phases: Vec<Vec<Complex64>> = (0..n)
        .map(|a| {
            let mut t = Vec::with_capacity(spec.points[a] * xi_axes[a].len());
            for i in 0..spec.points[a] {
                let y = spec.coord(a, i);
                for &xi in &xi_axes[a] {
                    t.push(Complex64::from_polar(1.0, -xi * y / h));
                }
            }
            t
        })
        .collect();

    let radius = WINDOW_RADIUS * h.sqrt();
    let weight = spec.cell() * (std::f64::consts::PI * h).powf(-(n as f64) / 4.0);
    let density = (2.0 * std::f64::consts::PI * h).powi(-(n as i32));

    let nxi: usize = xi_axes.iter().map(|v| v.len()).collect::<Vec<_>>().iter().product();
    let nx: usize = x_axes.iter().map(|v| v.len()).product();
    let mut values = vec![0.0f64; nx * nxi];

    // Index range of grid points within `radius` of coordinate `c`.
    let span = |a: usize, c: f64| -> (usize, usize) {
        let i0 = ((c - radius - spec.lo[a]) / spec.dx(a)).floor().max(0.0) as usize;
        let i1 = (((c + radius - spec.lo[a]) / spec.dx(a)).ceil() as usize).min(spec.points[a] - 1);
        (i0, i1)
    };

    match n {
        1 => {
            let nxi0 = xi_axes[0].len();
            for (ix, &x0) in x_axes[0].iter().enumerate() {
                let (i0, i1) = span(0, x0);
                let mut acc = vec![Complex64::new(0.0, 0.0); nxi0];
                for i in i0..=i1 {
                    let y = spec.coord(0, i);
                    let g = (-(y - x0) * (y - x0) / (2.0 * h)).exp();
                    let w = state.psi[i] * g;
                    let row = &phases[0][i * nxi0..(i + 1) * nxi0];
                    for (acc_j, &p) in acc.iter_mut().zip(row) {
                        *acc_j += w * p;
                    }
                }
                for (j, overlap) in acc.iter().enumerate() {
                    values[ix * nxi0 + j] = density * (overlap * weight).norm_sqr();
                }
            }
        }
        2 => {
            let (nxi0, nxi1) = (xi_axes[0].len(), xi_axes[1].len());
            let n1 = spec.points[1];
            for (ix0, &x0) in x_axes[0].iter().enumerate() {
                let (a0, a1) = span(0, x0);
                for (ix1, &x1) in x_axes[1].iter().enumerate() {
                    let (b0, b1) = span(1, x1);
                    // First contract axis 1: B[i0 - a0][j1].
                    let w0 = a1 - a0 + 1;
                    let mut partial = vec![Complex64::new(0.0, 0.0); w0 * nxi1];
                    for i0 in a0..=a1 {
                        let row = &mut partial[(i0 - a0) * nxi1..(i0 - a0 + 1) * nxi1];
                        for i1 in b0..=b1 {
                            let y1 = spec.coord(1, i1);
                            let g1 = (-(y1 - x1) * (y1 - x1) / (2.0 * h)).exp();
                            let w = state.psi[i0 * n1 + i1] * g1;
                            let ph = &phases[1][i1 * nxi1..(i1 + 1) * nxi1];
                            for (acc, &p) in row.iter_mut().zip(ph) {
                                *acc += w * p;
                            }
                        }
                    }
                    // Then contract axis 0 for every (j0, j1).
                    let base = (ix0 * x_axes[1].len() + ix1) * nxi0 * nxi1;
                    let mut acc = vec![Complex64::new(0.0, 0.0); nxi0 * nxi1];
                    for i0 in a0..=a1 {
                        let y0 = spec.coord(0, i0);
                        let g0 = (-(y0 - x0) * (y0 - x0) / (2.0 * h)).exp();
                        let ph = &phases[0][i0 * nxi0..(i0 + 1) * nxi0];
                        let row = &partial[(i0 - a0) * nxi1..(i0 - a0 + 1) * nxi1];
                        for (j0, &p0) in ph.iter().enumerate() {
                            let gp = g0 * p0;
                            let out = &mut acc[j0 * nxi1..(j0 + 1) * nxi1];
                            for (o, &b) in out.iter_mut().zip(row) {
                                *o += gp * b;
                            }
                        }
                    }
                    for (j, overlap) in acc.iter().enumerate() {
                        values[base + j] = density * (overlap * weight).norm_sqr();
                    }
                }
            }
        }
        _ => unreachable!(),
    }

    Ok(HusimiField {
        h,
        x_axes,
        xi_axes,
        values,
        cell_volume,
    })
}

impl HusimiField {
    fn dim(&self) -> usize {
        self.x_axes.len()
    }

    /// Phase-space integral of the field (should match `||psi||^2` when the
    /// window covers the state).
    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume
    }

    /// Phase-space coordinates `(x..., xi...)` of the sample at flat index.
    pub fn sample_coords(&self, mut index: usize) -> Vec<f64> {
        let n = self.dim();
        let mut sizes = Vec::with_capacity(2 * n);
        sizes.extend(self.x_axes.iter().map(|v| v.len()));
        sizes.extend(self.xi_axes.iter().map(|v| v.len()));
        let mut idx = vec![0usize; 2 * n];
        for a in (0..2 * n).rev() {
            idx[a] = index % sizes[a];
            index /= sizes[a];
        }
        (0..2 * n)
            .map(|a| {
                if a < n {
                    self.x_axes[a][idx[a]]
                } else {
                    self.xi_axes[a - n][idx[a]]
                }
            })
            .collect()
    }

    /// Fraction of the field mass within Euclidean phase-space distance
    /// `delta` of the given point set (each point is `(x..., xi...)`,
    /// length `2n`).
    pub fn mass_fraction_near(&self, points: &[Vec<f64>], delta: f64) -> Result<f64> {
        let n = self.dim();
        if !(delta > 0.0) {
            return Err(Error::Config("tube radius must be positive".into()));
        }
        for p in points {
            if p.len() != 2 * n {
                return Err(Error::DimensionMismatch {
                    expected: 2 * n,
                    got: p.len(),
                });
            }
        }
        // Hash grid with cell size delta: any point within delta of a
        // sample lies in one of the 3^{2n} neighboring cells.
        let key = |p: &[f64]| -> Vec<i64> {
            p.iter().map(|&c| (c / delta).floor() as i64).collect()
        };
        let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(key(p)).or_default().push(i);
        }
        let offsets = neighbor_offsets(2 * n);

        let mut near = 0.0;
        let mut total = 0.0;
        for (i, &v) in self.values.iter().enumerate() {
            total += v;
            let c = self.sample_coords(i);
            let base = key(&c);
            let mut hit = false;
            'cells: for off in &offsets {
                let cell: Vec<i64> = base.iter().zip(off).map(|(b, o)| b + o).collect();
                if let Some(ids) = buckets.get(&cell) {
                    for &id in ids {
                        let d2: f64 = points[id]
                            .iter()
                            .zip(&c)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        if d2 <= delta * delta {
                            hit = true;
                            break 'cells;
                        }
                    }
                }
            }
            if hit {
                near += v;
            }
        }
        if total <= 0.0 {
            return Err(Error::Config("Husimi field has no mass".into()));
        }
        Ok(near / total)
    }

    /// [`Self::mass_fraction_near`] against a sampled manifold patch.
    pub fn mass_fraction_near_patch(&self, patch: &ManifoldPatch, delta: f64) -> Result<f64> {
        let pts: Vec<Vec<f64>> = patch
            .points
            .iter()
            .map(|mp| {
                mp.point
                    .x
                    .iter()
                    .chain(mp.point.xi.iter())
                    .copied()
                    .collect()
            })
            .collect();
        self.mass_fraction_near(&pts, delta)
    }
}

fn neighbor_offsets(dim: usize) -> Vec<Vec<i64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..dim {
        let mut next = Vec::with_capacity(out.len() * 3);
        for v in out {
            for o in [-1i64, 0, 1] {
                let mut w = v.clone();
                w.push(o);
                next.push(w);
            }
        }
        out = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{PotentialKind, PotentialModel};
    use crate::quantum::splitstep::{coherent_state, propagate, GridSpec, PropagateOpts};

    fn window1d(
        x: (f64, f64, usize),
        xi: (f64, f64, usize),
    ) -> PhaseSpaceWindow {
        PhaseSpaceWindow {
            x_lo: vec![x.0],
            x_hi: vec![x.1],
            x_points: vec![x.2],
            xi_lo: vec![xi.0],
            xi_hi: vec![xi.1],
            xi_points: vec![xi.2],
        }
    }

    #[test]
    fn total_mass_matches_the_norm() {
        let spec = GridSpec::new(vec![-8.0], vec![8.0], vec![4096]).unwrap();
        let h = 0.05;
        let st = coherent_state(&[-0.4], &[0.9], h, &spec).unwrap();
        let field = husimi_wavefront(
            &st,
            &window1d((-2.4, 1.6, 81), (-1.1, 2.9, 81)),
        )
        .unwrap();
        assert!(field.values.iter().all(|&v| v >= 0.0));
        let mass = field.total_mass();
        assert!(
            (mass - st.norm_sq()).abs() < 1e-3,
            "Husimi mass {mass} vs norm^2 {}",
            st.norm_sq()
        );
    }

    #[test]
    fn coherent_state_mass_concentrates_at_its_center() {
        let spec = GridSpec::new(vec![-8.0], vec![8.0], vec![4096]).unwrap();
        let h = 0.05;
        let (x0, xi0) = (0.7, -0.8);
        let st = coherent_state(&[x0], &[xi0], h, &spec).unwrap();
        let field = husimi_wavefront(
            &st,
            &window1d((x0 - 2.0, x0 + 2.0, 101), (xi0 - 2.0, xi0 + 2.0, 101)),
        )
        .unwrap();
        let frac = field
            .mass_fraction_near(&[vec![x0, xi0]], 3.0 * h.sqrt())
            .unwrap();
        // Exact value: 1 - e^{-9/2} = 0.989 of the windowed mass.
        assert!(frac >= 0.95, "mass near center {frac}");
        // Negative control: far point sees almost nothing.
        let far = field
            .mass_fraction_near(&[vec![x0 + 1.8, xi0 + 1.8]], 0.3)
            .unwrap();
        assert!(far < 1e-6, "far mass {far}");
    }

    #[test]
    fn free_evolution_stays_on_the_trajectory_tube() {
        let spec = GridSpec::new(vec![-10.0], vec![10.0], vec![4096]).unwrap();
        let h = 0.05;
        let (x0, xi0) = (-2.0, 1.0);
        let st = coherent_state(&[x0], &[xi0], h, &spec).unwrap();
        let model = PotentialModel::new(PotentialKind::Zero { n: 1 }).unwrap();
        let t = 3.0;
        let run = propagate(&st, &model, t, &PropagateOpts { dt: 0.05, absorber_width: None })
            .unwrap();
        let field = husimi_wavefront(
            &run.state,
            &window1d((-4.5, 4.5, 121), (-0.5, 2.5, 61)),
        )
        .unwrap();
        let delta = 3.0 * h.sqrt();
        // The tube is the full straight-line trajectory (extending past t:
        // the spread packet is tilted along it, and truncating at the packet
        // center would cut the leading half off at a slant).
        let tube: Vec<Vec<f64>> = (0..=120)
            .map(|i| {
                let s = 2.0 * t * i as f64 / 120.0;
                vec![x0 + s * xi0, xi0]
            })
            .collect();
        let frac = field.mass_fraction_near(&tube, delta).unwrap();
        assert!(frac >= 0.9, "tube mass {frac}");
        // Negative control: a tube far away in momentum.
        let off: Vec<Vec<f64>> = tube.iter().map(|p| vec![p[0], -0.3]).collect();
        let frac_off = field.mass_fraction_near(&off, delta).unwrap();
        assert!(frac_off < 0.05, "off-tube mass {frac_off}");
    }

    #[test]
    fn window_mismatches_are_rejected() {
        let spec = GridSpec::new(vec![-4.0], vec![4.0], vec![512]).unwrap();
        let st = coherent_state(&[0.0], &[0.2], 0.2, &spec).unwrap();
        // Momentum window beyond Nyquist.
        let err = husimi_wavefront(&st, &window1d((-1.0, 1.0, 11), (-90.0, 90.0, 11)))
            .unwrap_err();
        assert!(matches!(err, Error::Resolution(_)));
        // Position window off the grid.
        let err = husimi_wavefront(&st, &window1d((-6.0, 1.0, 11), (-0.5, 0.5, 11)))
            .unwrap_err();
        assert!(matches!(err, Error::Resolution(_)));
    }

    #[test]
    fn two_dimensional_coherent_state_localizes() {
        let spec =
            GridSpec::new(vec![-5.0, -5.0], vec![5.0, 5.0], vec![512, 512]).unwrap();
        let h = 0.25;
        let (x0, xi0) = (vec![0.5, -0.3], vec![0.6, 0.2]);
        let st = coherent_state(&x0, &xi0, h, &spec).unwrap();
        let field = husimi_wavefront(
            &st,
            &PhaseSpaceWindow {
                x_lo: vec![x0[0] - 2.5, x0[1] - 2.5],
                x_hi: vec![x0[0] + 2.5, x0[1] + 2.5],
                x_points: vec![26, 26],
                xi_lo: vec![xi0[0] - 2.5, xi0[1] - 2.5],
                xi_hi: vec![xi0[0] + 2.5, xi0[1] + 2.5],
                xi_points: vec![26, 26],
            },
        )
        .unwrap();
        let mass = field.total_mass();
        assert!((mass - 1.0).abs() < 1e-3, "total mass {mass}");
        let frac = field
            .mass_fraction_near(
                &[vec![x0[0], x0[1], xi0[0], xi0[1]]],
                3.0 * h.sqrt(),
            )
            .unwrap();
        // Exact: the Husimi of a 2D coherent state is a 4D Gaussian of
        // width sqrt(h); mass within 3 sqrt(h) is 1 - e^{-9/2}(1 + 9/2).
        let exact = 1.0 - (-4.5f64).exp() * 5.5;
        assert!((frac - exact).abs() < 0.005, "central mass {frac} vs {exact}");
    }
}
