//! Gauss–Legendre panel quadrature shared by the numerical modules.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;

const MAX_CACHED: usize = 64;

static RULES: [OnceLock<Vec<(f64, f64)>>; MAX_CACHED + 1] = [const { OnceLock::new() }; MAX_CACHED + 1];

/// Node/weight pairs of the n-point rule on [-1, 1].
pub fn rule(n: usize) -> &'static [(f64, f64)] {
    assert!(n >= 1 && n <= MAX_CACHED, "unsupported Gauss-Legendre order {n}");
    RULES[n].get_or_init(|| {
        let gl = GaussLegendre::new(NonZeroUsize::new(n).unwrap());
        gl.as_node_weight_pairs().to_vec()
    })
}

/// n-point Gauss–Legendre on [a, b].
#[inline]
pub fn panel<F: FnMut(f64) -> f64>(n: usize, a: f64, b: f64, mut f: F) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for &(x, w) in rule(n) {
        acc += w * f(mid + half * x);
    }
    acc * half
}

/// Sum of n-point panels over consecutive breakpoints.
pub fn panels<F: FnMut(f64) -> f64>(n: usize, breaks: &[f64], mut f: F) -> f64 {
    breaks
        .windows(2)
        .map(|w| panel(n, w[0], w[1], &mut f))
        .sum()
}

/// Adaptive bisection on [a, b] comparing 10- and 20-point rules.
///
/// Returns (value, error estimate). Stops splitting once a panel meets
/// `abs_tol + rel_tol·|panel|` or the depth limit is hit.
pub fn adaptive<F: FnMut(f64) -> f64>(a: f64, b: f64, abs_tol: f64, rel_tol: f64, mut f: F) -> (f64, f64) {
    fn rec<F: FnMut(f64) -> f64>(a: f64, b: f64, abs_tol: f64, rel_tol: f64, depth: u32, f: &mut F) -> (f64, f64) {
        let coarse = panel(10, a, b, &mut *f);
        let fine = panel(20, a, b, &mut *f);
        let err = (fine - coarse).abs();
        if err <= abs_tol.max(rel_tol * fine.abs()) || depth == 0 || !fine.is_finite() {
            return (fine, err);
        }
        let m = 0.5 * (a + b);
        let (l, el) = rec(a, m, 0.5 * abs_tol, rel_tol, depth - 1, f);
        let (r, er) = rec(m, b, 0.5 * abs_tol, rel_tol, depth - 1, f);
        (l + r, el + er)
    }
    if a == b {
        return (0.0, 0.0);
    }
    rec(a, b, abs_tol, rel_tol, 30, &mut f)
}

/// Geometric breakpoints lo = b_0 < … < b_k = hi with ratio at most `ratio`.
pub fn geometric_breaks(lo: f64, hi: f64, ratio: f64) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && ratio > 1.0);
    let k = ((hi / lo).ln() / ratio.ln()).ceil().max(1.0) as usize;
    let step = (hi / lo).ln() / k as f64;
    let mut out: Vec<f64> = (0..=k).map(|i| lo * (step * i as f64).exp()).collect();
    out[k] = hi;
    out
}

/// Uniform breakpoints with panel width at most `width`.
pub fn uniform_breaks(lo: f64, hi: f64, width: f64) -> Vec<f64> {
    let k = ((hi - lo) / width).ceil().max(1.0) as usize;
    let h = (hi - lo) / k as f64;
    let mut out: Vec<f64> = (0..=k).map(|i| lo + h * i as f64).collect();
    out[k] = hi;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let v = panel(5, -1.0, 2.0, |x| x.powi(9));
        assert!((v - (2f64.powi(10) - 1.0) / 10.0).abs() < 1e-10);
    }

    #[test]
    fn adaptive_handles_peaks() {
        let (v, _) = adaptive(-10.0, 10.0, 1e-13, 1e-13, |x| 1.0 / (1e-4 + x * x));
        let exact = 2.0 * (10.0f64 / 1e-2).atan() / 1e-2;
        assert!((v - exact).abs() / exact < 1e-10, "{v} vs {exact}");
    }

    #[test]
    fn breaks_cover_interval() {
        let b = geometric_breaks(1e-3, 7.0, 2.0);
        assert_eq!(b[0], 1e-3);
        assert_eq!(*b.last().unwrap(), 7.0);
        assert!(b.windows(2).all(|w| w[1] / w[0] <= 2.0 + 1e-12));
        let u = uniform_breaks(0.0, 1.0, 0.3);
        assert_eq!(u.len(), 5);
    }
}
