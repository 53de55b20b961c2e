//! Regularly varying scales: inverses of τ^a(log τ)^b(log log τ)^c, the log-integral
//! lower bound, and the h, H, ψ^±, Φ_α functions of the critical case.
//!
//! Everything is evaluated through u = ln τ so that arguments far beyond f64 range
//! (deep inside a singular profile) stay representable.

use crate::error::{Error, Result};
use crate::initial_data::PointMap;
use crate::quad;

/// ln(e + τ) from u = ln τ.
fn ln_e_plus(u: f64) -> f64 {
    if u > 40.0 {
        u + (1.0 - u).exp()
    } else {
        (std::f64::consts::E + u.exp()).ln()
    }
}

/// Last sign failure of `good` on a log-spaced scan of (lo, hi], refined by bisection.
/// Returns `lo` if `good` holds on the whole scan.
fn scan_threshold(lo: f64, hi: f64, good: impl Fn(f64) -> bool) -> f64 {
    let n = 4000;
    let (a, b) = (lo.max(1e-300).ln(), hi.ln());
    let pts: Vec<f64> = (1..=n).map(|k| (a + (b - a) * k as f64 / n as f64).exp()).collect();
    let Some(last_bad) = pts.iter().rposition(|&x| !good(x)) else {
        return lo;
    };
    if last_bad + 1 == pts.len() {
        return f64::INFINITY;
    }
    let (mut l, mut r) = (pts[last_bad], pts[last_bad + 1]);
    for _ in 0..200 {
        let m = 0.5 * (l + r);
        if m <= l || m >= r {
            break;
        }
        if good(m) {
            r = m;
        } else {
            l = m;
        }
    }
    r
}

/// φ(τ) = τ^a (log τ)^b (log log τ)^c, increasing beyond a computed threshold Lφ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegVarFunction {
    a: f64,
    b: f64,
    c: f64,
    /// Lφ in the variable u = ln τ.
    u_threshold: f64,
}

impl RegVarFunction {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) || !b.is_finite() || !c.is_finite() {
            return Err(Error::Parameter(format!("need a > 0 and finite b, c; got ({a}, {b}, {c})")));
        }
        // Domain: u > 0, and u > 1 when the log log factor is present.
        let u_min = if c != 0.0 { 1.0 } else { 0.0 };
        // d ln φ / du = a + b/u + c/(u ln u).
        let slope = |u: f64| {
            let mut s = a + b / u;
            if c != 0.0 {
                s += c / (u * u.ln());
            }
            s
        };
        let u_threshold = scan_threshold(u_min + 1e-9, 1e8, |u| slope(u) > 0.0 && u > u_min);
        if !u_threshold.is_finite() {
            return Err(Error::Parameter("no monotonicity threshold below u = 1e8".into()));
        }
        Ok(Self { a, b, c, u_threshold })
    }

    pub fn exponents(&self) -> (f64, f64, f64) {
        (self.a, self.b, self.c)
    }

    /// Lφ.
    pub fn threshold(&self) -> f64 {
        self.u_threshold.exp()
    }

    /// ln φ(e^u).
    pub fn ln_value_at_log(&self, u: f64) -> f64 {
        let mut v = self.a * u;
        if self.b != 0.0 {
            v += self.b * u.ln();
        }
        if self.c != 0.0 {
            v += self.c * u.ln().ln();
        }
        v
    }

    pub fn value(&self, tau: f64) -> f64 {
        self.ln_value_at_log(tau.ln()).exp()
    }

    /// The asymptotic form y^{1/a}(log y)^{−b/a}(log log y)^{−c/a} of φ^{−1}(y).
    pub fn inverse_asymptotic(&self, y: f64) -> f64 {
        let ly = y.ln();
        let mut v = ly / self.a;
        if self.b != 0.0 {
            v -= self.b / self.a * ly.ln();
        }
        if self.c != 0.0 {
            v -= self.c / self.a * ly.ln().ln();
        }
        v.exp()
    }
}

/// ln φ^{−1}(y) from ln y.
pub fn regvar_inverse_log(phi: &RegVarFunction, ln_y: f64) -> Result<f64> {
    let floor = phi.ln_value_at_log(phi.u_threshold);
    if !(ln_y > floor) {
        return Err(Error::Domain(format!(
            "ln y = {ln_y} is below the validity range (ln phi(L) = {floor})"
        )));
    }
    let g = |u: f64| phi.ln_value_at_log(u) - ln_y;
    let mut lo = phi.u_threshold;
    let mut hi = (lo * 2.0).max(lo + 1.0);
    while g(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..300 {
        let m = 0.5 * (lo + hi);
        if m <= lo || m >= hi {
            break;
        }
        if g(m) < 0.0 {
            lo = m;
        } else {
            hi = m;
        }
        if (hi - lo) * phi.a < 1e-15 * ln_y.abs().max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// φ^{−1}(y) by geometric bracketing and bisection.
pub fn regvar_inverse(phi: &RegVarFunction, y: f64) -> Result<f64> {
    if !(y > 0.0) {
        return Err(Error::Domain(format!("y = {y} must be positive")));
    }
    Ok(regvar_inverse_log(phi, y.ln())?.exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegralBound {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// ∫_A^B τ^{a−b−1}(log τ)^c dτ against A^a B^{−b}(log A)^c log(B/A).
pub fn integral_bound_check(a: f64, b: f64, c: f64, big_a: f64, big_b: f64) -> Result<IntegralBound> {
    if !(big_a >= 2.0) {
        return Err(Error::Domain(format!("A = {big_a} must be at least 2")));
    }
    if !(big_b >= big_a) {
        return Err(Error::Domain(format!("B = {big_b} must be at least A = {big_a}")));
    }
    if !(a > 0.0 && b >= 0.0) {
        return Err(Error::Parameter(format!("need a > 0 and b >= 0, got a={a}, b={b}")));
    }
    let (va, vb) = (big_a.ln(), big_b.ln());
    let lhs = quad::adaptive(va, vb, 0.0, 1e-13, |v| ((a - b) * v).exp() * v.powf(c)).0;
    let rhs = big_a.powf(a) * big_b.powf(-b) * va.powf(c) * (vb - va);
    let ratio = if rhs > 0.0 { lhs / rhs } else { f64::INFINITY };
    Ok(IntegralBound { lhs, rhs, ratio })
}

/// The critical-case scales for q ≥ −1 and α > 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalScale {
    q: f64,
    alpha: f64,
    /// ln τ* where Ψ_α(τ) = τH(τ)^{−α} becomes increasing and concave.
    u_star: f64,
    /// ln Ψ_α(τ*).
    ln_psi_star: f64,
}

impl CriticalScale {
    pub fn new(q: f64, alpha: f64) -> Result<Self> {
        if !(q >= -1.0 && q.is_finite()) {
            return Err(Error::Parameter(format!("critical scale needs q >= -1, got {q}")));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Parameter(format!("alpha = {alpha} must be positive")));
        }
        let borderline = q == -1.0;
        // k = d ln H / du and its derivative; Ψ' > 0 iff αk < 1, Ψ'' < 0 iff k(1 − αk) + k' > 0.
        let k = |u: f64| if borderline { 1.0 / (u * u.ln()) } else { (q + 1.0) / u };
        let dk = |u: f64| {
            if borderline {
                -(u.ln() + 1.0) / (u * u.ln()).powi(2)
            } else {
                -(q + 1.0) / (u * u)
            }
        };
        let u_min = if borderline { 1.0 } else { 0.0 };
        let good = |u: f64| u > u_min && alpha * k(u) < 1.0 && k(u) * (1.0 - alpha * k(u)) + dk(u) > 0.0;
        let mut u_star = scan_threshold(u_min + 1e-9, 1e6, good);
        if !u_star.is_finite() {
            return Err(Error::Construction("Psi_alpha never becomes increasing and concave".into()));
        }
        if borderline {
            // H = log log τ must be at least 1 so that H^{−α} ≤ 1.
            u_star = u_star.max(std::f64::consts::E);
        } else {
            u_star = u_star.max(1.0);
        }
        let mut s = Self {
            q,
            alpha,
            u_star,
            ln_psi_star: 0.0,
        };
        s.ln_psi_star = s.ln_psi_at_log(u_star);
        Ok(s)
    }

    pub fn q(&self) -> f64 {
        self.q
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// τ* above which Φ_α is the exact inverse of τH(τ)^{−α}.
    pub fn threshold(&self) -> f64 {
        self.u_star.exp()
    }

    fn borderline(&self) -> bool {
        self.q == -1.0
    }

    /// ln h from u = ln τ.
    pub fn ln_h_at_log(&self, u: f64) -> f64 {
        let l = ln_e_plus(u);
        if self.borderline() {
            ln_e_plus(l.ln()).ln()
        } else {
            (self.q + 1.0) * l.ln()
        }
    }

    /// h(τ) = (log(e+τ))^{q+1}, or log(e + log(e+τ)) when q = −1.
    pub fn h(&self, tau: f64) -> f64 {
        let l = (std::f64::consts::E + tau).ln();
        if self.borderline() {
            (std::f64::consts::E + l).ln()
        } else {
            l.powf(self.q + 1.0)
        }
    }

    pub fn psi_plus(&self, tau: f64) -> f64 {
        tau * self.h(tau).powf(self.alpha)
    }

    pub fn psi_minus(&self, tau: f64) -> f64 {
        tau * self.h(tau).powf(-self.alpha)
    }

    /// τ beyond which ψ^− is increasing (sampled, then bisected).
    pub fn psi_minus_threshold(&self) -> f64 {
        let step = 1e-4;
        let good = |u: f64| {
            let f = |v: f64| v - self.alpha * self.ln_h_at_log(v);
            f(u + step) > f(u)
        };
        scan_threshold(1e-6, 1e3, |u| good(u.ln())).max(0.0)
    }

    /// ln H(e^u), with H = (log τ)^{q+1} or log log τ; needs u > 0 (u > 1 when q = −1).
    pub fn ln_big_h_at_log(&self, u: f64) -> f64 {
        if self.borderline() {
            u.ln().ln()
        } else {
            (self.q + 1.0) * u.ln()
        }
    }

    pub fn big_h(&self, tau: f64) -> f64 {
        self.ln_big_h_at_log(tau.ln()).exp()
    }

    fn ln_psi_at_log(&self, u: f64) -> f64 {
        u - self.alpha * self.ln_big_h_at_log(u)
    }

    /// ln Φ_α^{−1}(e^u): τH(τ)^{−α} above τ*, the chord through the origin below.
    pub fn ln_phi_inverse_at_log(&self, u: f64) -> f64 {
        if u >= self.u_star {
            self.ln_psi_at_log(u)
        } else {
            u + self.ln_psi_star - self.u_star
        }
    }

    /// Φ_α^{−1}(τ).
    pub fn phi_inverse(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            return 0.0;
        }
        self.ln_phi_inverse_at_log(tau.ln()).exp()
    }

    /// ln Φ_α(e^w) by bisection on the increasing ln Ψ.
    pub fn ln_phi_at_log(&self, w: f64) -> f64 {
        if w <= self.ln_psi_star {
            return w + self.u_star - self.ln_psi_star;
        }
        let g = |u: f64| self.ln_psi_at_log(u) - w;
        let mut lo = self.u_star;
        let mut hi = w.max(lo) + 1.0;
        while g(hi) < 0.0 {
            lo = hi;
            hi = 2.0 * hi + 1.0;
        }
        for _ in 0..300 {
            let m = 0.5 * (lo + hi);
            if m <= lo || m >= hi {
                break;
            }
            if g(m) < 0.0 {
                lo = m;
            } else {
                hi = m;
            }
            if hi - lo < 4.0 * f64::EPSILON * hi.abs() {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Φ_α(τ), convex and increasing with Φ_α(0) = 0.
    pub fn phi(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            return 0.0;
        }
        self.ln_phi_at_log(tau.ln()).exp()
    }
}

/// μ ↦ ψ_α^+(μ) for ball averages.
pub struct PsiPlusMap(pub CriticalScale);

impl PointMap for PsiPlusMap {
    fn apply(&self, mu: f64) -> f64 {
        self.0.psi_plus(mu)
    }
    fn log_excess(&self, ln_mu: f64) -> f64 {
        self.0.alpha * self.0.ln_h_at_log(ln_mu)
    }
}

/// μ ↦ Φ_α(μ).
pub struct PhiMap(pub CriticalScale);

impl PointMap for PhiMap {
    fn apply(&self, mu: f64) -> f64 {
        self.0.phi(mu)
    }
    fn log_excess(&self, ln_mu: f64) -> f64 {
        self.0.ln_phi_at_log(ln_mu) - ln_mu
    }
}

/// Min and max of a ratio over a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioBand {
    pub min: f64,
    pub max: f64,
}

impl RatioBand {
    pub fn empty() -> Self {
        Self {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }
    pub fn push(&mut self, v: f64) {
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }
    /// max / min.
    pub fn width(&self) -> f64 {
        self.max / self.min
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HRelations {
    /// H(aτ^b)/H(τ).
    pub dilation: RatioBand,
    /// H(τ^b H(τ)^c)/H(τ).
    pub composition: RatioBand,
    /// Φ_α(τ)/(τH(τ)^α).
    pub phi_shape: RatioBand,
}

/// Bands of the three H-relations for τ in [lo, hi], 20 points per decade.
pub fn h_relations_check(scale: &CriticalScale, a: f64, b: f64, c: f64, tau_range: (f64, f64)) -> Result<HRelations> {
    let (lo, hi) = tau_range;
    let floor = if scale.borderline() { std::f64::consts::E } else { 1.0 };
    if !(lo > floor && hi >= lo) {
        return Err(Error::Domain(format!("tau range ({lo}, {hi}) must lie above {floor}")));
    }
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::Parameter("need a > 0 and b > 0".into()));
    }
    let mut out = HRelations {
        dilation: RatioBand::empty(),
        composition: RatioBand::empty(),
        phi_shape: RatioBand::empty(),
    };
    let (ul, uh) = (lo.ln(), hi.ln());
    let n = ((uh - ul) / std::f64::consts::LN_10 * 20.0).ceil().max(1.0) as usize;
    for k in 0..=n {
        let u = ul + (uh - ul) * k as f64 / n as f64;
        let ln_h = scale.ln_big_h_at_log(u);
        let u2 = b * u + c * ln_h;
        for (band, v) in [(&mut out.dilation, a.ln() + b * u), (&mut out.composition, u2)] {
            if v > floor.ln() {
                band.push((scale.ln_big_h_at_log(v) - ln_h).exp());
            }
        }
        if u >= scale.u_star {
            let ln_phi = scale.ln_phi_at_log(u);
            out.phi_shape.push((ln_phi - u - scale.alpha * ln_h).exp());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn band(phi: &RegVarFunction, lo: f64, hi: f64) -> RatioBand {
        let mut b = RatioBand::empty();
        for k in 0..=160 {
            let y = lo * (hi / lo).powf(k as f64 / 160.0);
            b.push(regvar_inverse(phi, y).unwrap() / phi.inverse_asymptotic(y));
        }
        b
    }

    #[test]
    fn regvar_examples() {
        let sq = RegVarFunction::new(2.0, 0.0, 0.0).unwrap();
        assert!((regvar_inverse(&sq, 9.0).unwrap() - 3.0).abs() < 1e-12);
        let tl = RegVarFunction::new(1.0, 1.0, 0.0).unwrap();
        let y = tl.value(1e6);
        assert!((regvar_inverse(&tl, y).unwrap() / 1e6 - 1.0).abs() < 1e-12);
        let f = RegVarFunction::new(1.5, 2.0, -1.0).unwrap();
        let b = band(&f, 1e4, 1e12);
        assert!(b.width() < 3.0, "{b:?}");
    }

    #[test]
    fn regvar_relative_residual() {
        let f = RegVarFunction::new(1.5, 2.0, -1.0).unwrap();
        for y in [1e4, 3e7, 1e12] {
            let t = regvar_inverse(&f, y).unwrap();
            assert!((f.value(t) / y - 1.0).abs() <= 1e-12);
        }
        assert!(regvar_inverse(&f, 1e-3).is_err());
    }

    #[test]
    fn threshold_matches_derivative_root() {
        // a + b/u = 0 at u = 2 for (1, −2, 0).
        let f = RegVarFunction::new(1.0, -2.0, 0.0).unwrap();
        assert!((f.threshold().ln() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn integral_bound_examples() {
        let r = integral_bound_check(1.0, 0.0, 0.0, 2.0, 4.0).unwrap();
        assert!((r.lhs - 2.0).abs() < 1e-12);
        assert!((r.rhs - 2.0 * 2f64.ln()).abs() < 1e-12);
        let r = integral_bound_check(2.0, 1.0, 0.0, 4.0, 16.0).unwrap();
        assert!((r.lhs - 12.0).abs() < 1e-10);
        assert!(integral_bound_check(1.0, 0.0, 0.0, 1.5, 4.0).is_err());
    }

    #[test]
    fn integral_bound_lattice() {
        let mut c1 = f64::INFINITY;
        for a in [0.5, 1.0, 1.5] {
            for b in [0.0, 0.5, 2.0] {
                for c in [-1.0, 0.0, 1.0] {
                    for (big_a, big_b) in [(2.0, 2.5), (10.0, 1e3), (100.0, 1e6), (1e3, 1e3 * 1.01)] {
                        c1 = c1.min(integral_bound_check(a, b, c, big_a, big_b).unwrap().ratio);
                    }
                }
            }
        }
        assert!(c1 > 0.0);
        let r = integral_bound_check(1.5, 0.5, -1.0, 10.0, 1e3).unwrap();
        assert!(r.ratio >= c1);
    }

    #[test]
    fn h_relation_examples() {
        let s = CriticalScale::new(0.0, 1.0).unwrap();
        for t in [1e3, 1e6, 1e12] {
            let r = s.h(t * t) / s.h(t);
            assert!((1.0..=3.0).contains(&r));
        }
        let b = CriticalScale::new(-1.0, 1.0).unwrap();
        for t in [1e6, 1e9, 1e15] {
            let r = b.big_h(10.0 * t) / b.big_h(t);
            assert!((1.0..=1.2).contains(&r), "{r}");
        }
        let rel = h_relations_check(&s, 3.0, 2.0, -1.0, (1e3, 1e12)).unwrap();
        assert!(rel.dilation.width() < 3.0 && rel.composition.width() < 3.0 && rel.phi_shape.width() < 3.0);
    }

    #[test]
    fn phi_round_trip() {
        for q in [-1.0, 0.0, 1.5] {
            for alpha in [0.5, 2.0] {
                let s = CriticalScale::new(q, alpha).unwrap();
                for t in [1e-3, 0.5, 3.0, 1e2, 1e8, 1e40] {
                    let back = s.phi_inverse(s.phi(t));
                    assert!((back / t - 1.0).abs() < 1e-10, "q={q} α={alpha} τ={t}: {back}");
                }
            }
        }
    }

    #[test]
    fn phi_is_convex_and_increasing() {
        let s = CriticalScale::new(0.0, 2.0).unwrap();
        let xs: Vec<f64> = (0..400).map(|k| 10f64.powf(-2.0 + k as f64 * 0.03)).collect();
        for w in xs.windows(3) {
            let (a, b, c) = (s.phi(w[0]), s.phi(w[1]), s.phi(w[2]));
            assert!(b > a);
            let chord = a + (c - a) * (w[1] - w[0]) / (w[2] - w[0]);
            assert!(b <= chord * (1.0 + 1e-9));
        }
    }

    #[test]
    fn psi_composition_band() {
        let s = CriticalScale::new(0.0, 2.0).unwrap();
        let mut b = RatioBand::empty();
        for k in 0..=60 {
            let t = 10f64.powf(3.0 + k as f64 * 0.15);
            b.push(s.psi_minus(s.psi_plus(t)) / t);
        }
        assert!(b.width() < 3.0, "{b:?}");
    }

    #[test]
    fn maps_agree_with_log_form() {
        let s = CriticalScale::new(0.5, 2.0).unwrap();
        let (pp, ph) = (PsiPlusMap(s), PhiMap(s));
        for mu in [0.3f64, 5.0, 1e6] {
            let l = mu.ln();
            assert!(((l + pp.log_excess(l)).exp() / pp.apply(mu) - 1.0).abs() < 1e-12);
            assert!(((l + ph.log_excess(l)).exp() / ph.apply(mu) - 1.0).abs() < 1e-12);
        }
    }
}
