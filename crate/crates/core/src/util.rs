//! Deterministic low-discrepancy sampling helpers (Halton sequences).
//!
//! Used for multistart seeds and assumption probes so that every run of the
//! engine is reproducible without threading an RNG through the call tree.

use nalgebra::DVector;

const PRIMES: [usize; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Radical-inverse of `i` in the given base; `i >= 1`.
pub fn halton(mut i: usize, base: usize) -> f64 {
    let b = base as f64;
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= b;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// The `i`-th point of the Halton sequence in `(0, 1)^dim`, `i >= 1`.
pub fn halton_point(i: usize, dim: usize) -> Vec<f64> {
    assert!(dim <= PRIMES.len(), "halton sampling limited to 8 dims");
    (0..dim).map(|d| halton(i, PRIMES[d])).collect()
}

/// Acklam's rational approximation to the standard normal quantile.
pub fn inverse_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -inverse_normal_cdf(1.0 - p)
    }
}

/// The `i`-th quasi-uniform direction on the unit sphere `S^{dim-1}`,
/// obtained by mapping a Halton point through the normal quantile and
/// normalizing. `i >= 1`.
pub fn unit_sphere(i: usize, dim: usize) -> DVector<f64> {
    if dim == 1 {
        return DVector::from_element(1, if i % 2 == 0 { 1.0 } else { -1.0 });
    }
    loop {
        let u = halton_point(i, dim);
        let g = DVector::from_iterator(
            dim,
            u.iter().map(|&p| inverse_normal_cdf(p.clamp(1e-12, 1.0 - 1e-12))),
        );
        let nrm = g.norm();
        if nrm > 1e-8 {
            return g / nrm;
        }
    }
}
