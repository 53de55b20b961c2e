//! Nonlinearities F and the comparison functions built from the nested integral
//! τ^d ∫ s^{−d} ∫ ξ^{p−2}[log(e+ξ)]^q dξ ds.

use std::f64::consts::E;

use crate::error::{Error, Result};
use crate::frac_kernel::FracParams;
use crate::quad;

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Zero,
    Prototype { l: f64 },
    Tabulated { taus: Vec<f64>, values: Vec<f64> },
}

/// F with its asymptotic descriptor (p, q): F(τ) ≍ τ^p (log τ)^q.
#[derive(Debug, Clone, PartialEq)]
pub struct Nonlinearity {
    kind: Kind,
    p: f64,
    q: f64,
}

impl Nonlinearity {
    /// F(τ) = τ^p [log(L+τ)]^q.
    pub fn prototype(p: f64, q: f64, l: f64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::Parameter(format!("prototype needs p > 1, got {p}")));
        }
        if !q.is_finite() {
            return Err(Error::Parameter(format!("q = {q} must be finite")));
        }
        if !(l >= 1.0 && l.is_finite()) {
            return Err(Error::Parameter(format!("prototype needs L >= 1, got {l}")));
        }
        Ok(Self {
            kind: Kind::Prototype { l },
            p,
            q,
        })
    }

    /// F ≡ 0.
    pub fn zero() -> Self {
        Self {
            kind: Kind::Zero,
            p: f64::NAN,
            q: f64::NAN,
        }
    }

    /// Piecewise-linear table, extended past the last node by the (p, q) power law.
    pub fn tabulated(taus: Vec<f64>, values: Vec<f64>, p: f64, q: f64) -> Result<Self> {
        if taus.len() < 2 || taus.len() != values.len() {
            return Err(Error::Parameter("table needs at least two (tau, F) pairs".into()));
        }
        if taus[0] != 0.0 || !taus.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::Parameter("table abscissae must start at 0 and increase".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !values.windows(2).all(|w| w[1] >= w[0]) {
            return Err(Error::Parameter("tabulated F must be finite, nonnegative and nondecreasing".into()));
        }
        if !(p > 1.0) {
            return Err(Error::Parameter(format!("descriptor p = {p} must exceed 1")));
        }
        Ok(Self {
            kind: Kind::Tabulated { taus, values },
            p,
            q,
        })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, Kind::Zero)
    }

    /// (p, q), or None for F ≡ 0.
    pub fn descriptor(&self) -> Option<(f64, f64)> {
        if self.is_zero() {
            None
        } else {
            Some((self.p, self.q))
        }
    }

    pub fn eval(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            return match &self.kind {
                Kind::Tabulated { values, .. } => values[0],
                _ => 0.0,
            };
        }
        match &self.kind {
            Kind::Zero => 0.0,
            Kind::Prototype { l } => {
                if self.q == 0.0 {
                    tau.powf(self.p)
                } else {
                    tau.powf(self.p) * (l + tau).ln().powf(self.q)
                }
            }
            Kind::Tabulated { taus, values } => {
                let n = taus.len();
                if tau >= taus[n - 1] {
                    let (t1, v1) = (taus[n - 1], values[n - 1]);
                    return v1 * (tau / t1).powf(self.p) * ((E + tau).ln() / (E + t1).ln()).powf(self.q);
                }
                let i = taus.partition_point(|&t| t <= tau) - 1;
                let w = (tau - taus[i]) / (taus[i + 1] - taus[i]);
                values[i] * (1.0 - w) + values[i + 1] * w
            }
        }
    }

    /// min{F(τ), m}.
    pub fn eval_truncated(&self, tau: f64, m: f64) -> f64 {
        self.eval(tau).min(m)
    }
}

/// Geometric sample with `per_decade` points per decade over [lo, hi], plus τ = 0.
pub fn check_sample(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let decades = (hi / lo).log10();
    let n = (decades * per_decade as f64).ceil() as usize;
    let mut out = vec![0.0];
    out.extend((0..=n).map(|k| lo * 10f64.powf(decades * k as f64 / n as f64)));
    out
}

/// The default domination range: 10³ points per decade on [10⁻⁶, 10¹²] plus τ = 0.
pub fn default_sample() -> Vec<f64> {
    check_sample(1e-6, 1e12, 1000)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Role {
    Minorant,
    Majorant,
}

/// Cumulative tables of I(τ) = ∫_R^τ g and K(τ) = ∫_R^τ ξ^{1−d} g (or ∫ ln ξ·g when d = 1),
/// g(ξ) = ξ^{p−2}[log(e+ξ)]^q, so that ∫_R^τ s^{−d} I(s) ds = (K − τ^{1−d} I)/(d − 1).
#[derive(Debug, Clone, PartialEq)]
struct NestedTable {
    p: f64,
    d: f64,
    q: f64,
    start: f64,
    nodes: Vec<f64>,
    inner: Vec<f64>,
    weighted: Vec<f64>,
}

const TABLE_TOP: f64 = 1e150;
const NODES_PER_DECADE: f64 = 16.0;
const SMALL_START: f64 = 1e-12;

impl NestedTable {
    fn new(p: f64, d: f64, q: f64, start: f64) -> Self {
        let lo = if start > 0.0 { start } else { SMALL_START };
        let decades = (TABLE_TOP / lo).log10();
        let n = (decades * NODES_PER_DECADE).ceil() as usize;
        let nodes: Vec<f64> = (0..=n).map(|k| lo * 10f64.powf(decades * k as f64 / n as f64)).collect();
        let mut t = Self {
            p,
            d,
            q,
            start,
            nodes,
            inner: Vec::new(),
            weighted: Vec::new(),
        };
        let (mut i_acc, mut k_acc) = if start > 0.0 { (0.0, 0.0) } else { t.near_zero(lo) };
        let mut inner = vec![i_acc];
        let mut weighted = vec![k_acc];
        for w in t.nodes.windows(2) {
            let (di, dk) = t.piece(w[0], w[1]);
            i_acc += di;
            k_acc += dk;
            inner.push(i_acc);
            weighted.push(k_acc);
        }
        t.inner = inner;
        t.weighted = weighted;
        t
    }

    fn g(&self, x: f64) -> f64 {
        let base = x.powf(self.p - 2.0);
        if self.q == 0.0 {
            base
        } else {
            base * (E + x).ln().powf(self.q)
        }
    }

    fn weight(&self, x: f64) -> f64 {
        if self.d == 1.0 {
            x.ln()
        } else {
            x.powf(1.0 - self.d)
        }
    }

    /// (I, K) on [0, τ] for tiny τ where log(e+ξ)^q = 1 to within τ.
    fn near_zero(&self, tau: f64) -> (f64, f64) {
        let a = self.p - 1.0;
        let i = tau.powf(a) / a;
        let k = if self.d == 1.0 {
            tau.powf(a) * (tau.ln() / a - 1.0 / (a * a))
        } else {
            let b = self.p - self.d;
            tau.powf(b) / b
        };
        (i, k)
    }

    fn piece(&self, a: f64, b: f64) -> (f64, f64) {
        let mut di = 0.0;
        let mut dk = 0.0;
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for &(x, w) in quad::rule(20) {
            let xi = mid + half * x;
            let gv = self.g(xi) * w * half;
            di += gv;
            dk += gv * self.weight(xi);
        }
        (di, dk)
    }

    /// (I(τ), K(τ)); above the table the remainder is integrated on geometric panels.
    fn cumulative(&self, tau: f64) -> (f64, f64) {
        let lo = self.nodes[0];
        if tau <= lo {
            return if self.start > 0.0 { (0.0, 0.0) } else { self.near_zero(tau) };
        }
        let last = self.nodes.len() - 1;
        let k = if tau >= self.nodes[last] {
            last
        } else {
            self.nodes.partition_point(|&x| x <= tau) - 1
        };
        let (mut i, mut kk) = (self.inner[k], self.weighted[k]);
        let mut a = self.nodes[k];
        while a < tau {
            let b = (a * 10f64.powf(1.0 / NODES_PER_DECADE)).min(tau);
            let (di, dk) = self.piece(a, b);
            i += di;
            kk += dk;
            a = b;
        }
        (i, kk)
    }

    /// I(τ) = ∫_R^τ ξ^{p−2}[log(e+ξ)]^q dξ.
    fn inner_integral(&self, tau: f64) -> f64 {
        if tau <= self.start {
            return 0.0;
        }
        self.cumulative(tau).0
    }

    /// τ^d ∫_R^τ s^{−d} I(s) ds.
    fn nested(&self, tau: f64) -> f64 {
        if tau <= self.start || tau <= 0.0 {
            return 0.0;
        }
        let (i, k) = self.cumulative(tau);
        let outer = if self.d == 1.0 {
            tau.ln() * i - k
        } else {
            (k - tau.powf(1.0 - self.d) * i) / (self.d - 1.0)
        };
        tau.powf(self.d) * outer.max(0.0)
    }
}

/// Minorant κ·τ^d∫_R^τ s^{−d}(∫_R^s …) or majorant κ·τ^d∫_0^τ s^{−d}(∫_0^s …) + L.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonFunction {
    role: Role,
    p: f64,
    d: f64,
    q: f64,
    r: f64,
    kappa: f64,
    l: f64,
    table: NestedTable,
}

impl ComparisonFunction {
    pub fn role(&self) -> Role {
        self.role
    }
    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn d(&self) -> f64 {
        self.d
    }
    pub fn q(&self) -> f64 {
        self.q
    }
    pub fn cutoff(&self) -> f64 {
        self.r
    }
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    pub fn offset(&self) -> f64 {
        self.l
    }

    pub fn eval(&self, tau: f64) -> f64 {
        let core = self.kappa * self.table.nested(tau.max(0.0));
        match self.role {
            Role::Minorant => core,
            Role::Majorant => core + self.l,
        }
    }

    /// The inner cumulative ∫ ξ^{p−2}[log(e+ξ)]^q dξ from the lower limit to τ.
    pub fn inner_integral(&self, tau: f64) -> f64 {
        self.table.inner_integral(tau)
    }

    pub fn with_kappa(&self, kappa: f64) -> Self {
        Self { kappa, ..self.clone() }
    }

    /// Largest sampled τ at which f(τ)/τ^e fails to increase, or None if monotone
    /// throughout the sample.
    pub fn monotonicity_threshold(&self, exponent: f64, sample: &[f64]) -> Option<f64> {
        let mut last_bad = None;
        let mut prev: Option<(f64, f64)> = None;
        for &t in sample.iter().filter(|&&t| t > 0.0) {
            let v = self.eval(t) / t.powf(exponent);
            if let Some((pt, pv)) = prev {
                if v <= pv && self.eval(t) > 0.0 {
                    last_bad = Some(t.max(pt));
                }
            }
            prev = Some((t, v));
        }
        last_bad
    }

    /// Comma-separated `tau,value` rows with a header.
    pub fn to_csv(&self, sample: &[f64]) -> String {
        let mut out = String::from("tau,value\n");
        for &t in sample {
            out.push_str(&format!("{t:.12e},{:.12e}\n", self.eval(t)));
        }
        out
    }
}

/// Minorant vanishing on [0, R].
pub fn build_minorant(p: f64, d: f64, q: f64, r: f64, kappa: f64) -> Result<ComparisonFunction> {
    if !(p > 1.0) {
        return Err(Error::Parameter(format!("p = {p} must exceed 1")));
    }
    if !(d > 1.0 && d < p) {
        return Err(Error::Parameter(format!("d = {d} must lie in (1, p) = (1, {p})")));
    }
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::Parameter(format!("R = {r} must be nonnegative")));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::Parameter(format!("kappa = {kappa} must be positive")));
    }
    Ok(ComparisonFunction {
        role: Role::Minorant,
        p,
        d,
        q,
        r,
        kappa,
        l: 0.0,
        table: NestedTable::new(p, d, q, r),
    })
}

/// κ·τ^d∫_0^τ s^{−d}(∫_0^s ξ^{p−2}[log(e+ξ)]^q dξ) ds + L without a domination check.
pub fn majorant_unchecked(p: f64, q: f64, kappa: f64, l: f64, d: Option<f64>) -> Result<ComparisonFunction> {
    let d = d.unwrap_or(1.0);
    if !(p > 1.0) {
        return Err(Error::Parameter(format!("p = {p} must exceed 1")));
    }
    if !(d >= 1.0 && d < p) {
        return Err(Error::Parameter(format!("d = {d} must lie in [1, p)")));
    }
    if !(kappa > 0.0 && l >= 0.0) {
        return Err(Error::Parameter("kappa must be positive and L nonnegative".into()));
    }
    Ok(ComparisonFunction {
        role: Role::Majorant,
        p,
        d,
        q,
        r: 0.0,
        kappa,
        l,
        table: NestedTable::new(p, d, q, 0.0),
    })
}

/// Majorant for F, checked to dominate F on the default sample.
pub fn build_majorant(f: &Nonlinearity, kappa: f64, l: f64, d: Option<f64>) -> Result<ComparisonFunction> {
    let (p, q) = f
        .descriptor()
        .ok_or_else(|| Error::Parameter("F = 0 has no asymptotic descriptor".into()))?;
    let g = majorant_unchecked(p, q, kappa, l, d)?;
    if let Some(t) = first_violation(&default_sample(), |t| g.eval(t) >= f.eval(t)) {
        return Err(Error::Construction(format!(
            "majorant with kappa={kappa}, L={l} falls below F at tau={t:.6e} (f={:.6e}, F={:.6e})",
            g.eval(t),
            f.eval(t)
        )));
    }
    Ok(g)
}

fn first_violation(sample: &[f64], ok: impl Fn(f64) -> bool) -> Option<f64> {
    sample.iter().copied().find(|&t| !ok(t))
}

/// Smallest κ = 2^k, then smallest L = 2^j, for which the majorant passes the sampled check.
pub fn search_majorant(f: &Nonlinearity, d: Option<f64>) -> Result<ComparisonFunction> {
    let (p, q) = f
        .descriptor()
        .ok_or_else(|| Error::Parameter("F = 0 has no asymptotic descriptor".into()))?;
    let sample = default_sample();
    let base = majorant_unchecked(p, q, 1.0, 0.0, d)?;
    // κ: the top decade fixes the asymptotic constant.
    let top: Vec<f64> = sample.iter().copied().filter(|&t| t >= 1e11).collect();
    let mut kappa = 2f64.powi(-20);
    while top.iter().any(|&t| kappa * base.eval(t) < f.eval(t)) {
        kappa *= 2.0;
        if kappa > 1e12 {
            return Err(Error::Construction("no kappa <= 1e12 dominates F on the top decade".into()));
        }
    }
    let g = base.with_kappa(kappa);
    let gap = sample.iter().map(|&t| f.eval(t) - g.eval(t)).fold(0.0, f64::max);
    let mut l = 2f64.powi(-20);
    while l < gap {
        l *= 2.0;
    }
    if gap <= 0.0 {
        l = 2f64.powi(-20);
    }
    build_majorant(f, kappa, l, d)
}

/// Largest κ = 2^{−k} ≤ 1 with κ·(minorant) ≤ F on the sample.
pub fn search_minorant(f: &Nonlinearity, d: f64, r: f64) -> Result<ComparisonFunction> {
    let (p, q) = f
        .descriptor()
        .ok_or_else(|| Error::Parameter("F = 0 has no asymptotic descriptor".into()))?;
    let sample = default_sample();
    let base = build_minorant(p, d, q, r, 1.0)?;
    let mut kappa = 1.0;
    loop {
        let g = base.with_kappa(kappa);
        if first_violation(&sample, |t| g.eval(t) <= f.eval(t)).is_none() {
            return Ok(g);
        }
        kappa *= 0.5;
        if kappa < 1e-30 {
            return Err(Error::Construction(format!("no minorant below F with d={d}, R={r}")));
        }
    }
}

/// Sandwich check κ·minorant ≤ F on the sample; returns the first failing τ.
pub fn check_below(g: &ComparisonFunction, f: &Nonlinearity, sample: &[f64]) -> Option<f64> {
    first_violation(sample, |t| g.eval(t) <= f.eval(t) * (1.0 + 1e-12))
}

pub fn check_above(g: &ComparisonFunction, f: &Nonlinearity, sample: &[f64]) -> Option<f64> {
    first_violation(sample, |t| g.eval(t) >= f.eval(t) * (1.0 - 1e-12))
}

/// Verdict of ∫_1^∞ τ^{−p_θ−1} F(τ) dτ < ∞.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralVerdict {
    pub finite: bool,
    /// ∫_1^cutoff τ^{−p_θ−1}F(τ) dτ.
    pub partial: f64,
    pub cutoff: f64,
}

pub fn integral_criterion(f: &Nonlinearity, params: FracParams) -> Result<IntegralVerdict> {
    integral_criterion_to(f, params, 1e12)
}

pub fn integral_criterion_to(f: &Nonlinearity, params: FracParams, cutoff: f64) -> Result<IntegralVerdict> {
    let pt = params.p_theta();
    let finite = match f.descriptor() {
        None => true,
        Some((p, q)) => {
            if crate::classifier::is_critical(p, pt) {
                q < -1.0
            } else {
                p < pt
            }
        }
    };
    // In u = ln τ: ∫_0^{ln cutoff} e^{−p_θ u} F(e^u) du.
    let top = cutoff.ln();
    let breaks = quad::uniform_breaks(0.0, top, 0.5);
    let partial = quad::panels(10, &breaks, |u| (-pt * u).exp() * f.eval(u.exp()));
    Ok(IntegralVerdict { finite, partial, cutoff })
}

/// Sampled (D1)–(D2): τ^{−d}F increasing and F convex on (R, top].
pub fn check_d_conditions(f: &Nonlinearity, r: f64, d: f64) -> Result<()> {
    let sample: Vec<f64> = check_sample(r.max(1e-6), 1e12, 200).into_iter().filter(|&t| t > r).collect();
    let mut prev = f64::NEG_INFINITY;
    for &t in &sample {
        let v = f.eval(t) / t.powf(d);
        if v <= 0.0 || v < prev * (1.0 - 1e-12) {
            return Err(Error::Precondition(format!("tau^-d F(tau) not increasing at tau={t:.4e} (d={d})")));
        }
        prev = v;
    }
    for w in sample.windows(3) {
        let (a, b, c) = (w[0], w[1], w[2]);
        let lhs = f.eval(b);
        let chord = f.eval(a) + (f.eval(c) - f.eval(a)) * (b - a) / (c - a);
        if lhs > chord * (1.0 + 1e-9) + 1e-300 {
            return Err(Error::Precondition(format!("F not convex near tau={b:.4e}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prototype_examples() {
        let f = Nonlinearity::prototype(2.0, 0.0, 1.0).unwrap();
        assert_eq!(f.eval(3.0), 9.0);
        let g = Nonlinearity::prototype(2.0, 1.0, 1.0).unwrap();
        assert!((g.eval(E - 1.0) - (E - 1.0).powi(2)).abs() < 1e-14);
        let h = Nonlinearity::prototype(3.0, -1.0, E).unwrap();
        assert_eq!(h.eval(0.0), 0.0);
        assert!(Nonlinearity::prototype(1.0, 0.0, 1.0).is_err());
        assert_eq!(f.eval_truncated(10.0, 7.0), 7.0);
    }

    /// Oracle: direct nested quadrature in log variables.
    fn nested_oracle(p: f64, d: f64, q: f64, r: f64, tau: f64) -> f64 {
        let g = |x: f64| x.powf(p - 2.0) * (E + x).ln().powf(q);
        let inner = |s: f64| -> f64 {
            let lo = if r > 0.0 { r } else { 1e-300 };
            if s <= lo {
                return 0.0;
            }
            // ξ = e^v
            quad::adaptive(lo.ln().max(-60.0), s.ln(), 0.0, 1e-13, |v| g(v.exp()) * v.exp()).0
                + if r > 0.0 { 0.0 } else { (-60f64).exp().powf(p - 1.0) / (p - 1.0) }
        };
        let lo = if r > 0.0 { r } else { (-60f64).exp() };
        let outer = quad::adaptive(lo.ln(), tau.ln(), 0.0, 1e-12, |v| {
            let s = v.exp();
            s.powf(1.0 - d) * inner(s)
        })
        .0;
        tau.powf(d) * outer
    }

    #[test]
    fn nested_table_matches_oracle() {
        for (p, d, q, r) in [(2.0, 1.5, 0.0, 1.0), (3.0, 2.0, -1.0, 0.0), (2.0, 1.0, 1.0, 0.0), (5.0, 4.5, 0.5, 2.0)] {
            let t = NestedTable::new(p, d, q, r);
            for tau in [0.5, 3.0, 40.0, 1e4, 1e9] {
                if tau <= r {
                    assert_eq!(t.nested(tau), 0.0);
                    continue;
                }
                let a = t.nested(tau);
                let b = nested_oracle(p, d, q, r, tau);
                assert!((a - b).abs() <= 1e-8 * b.abs() + 1e-300, "p={p} d={d} q={q} R={r} τ={tau}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn minorant_band_and_shape() {
        let f = build_minorant(2.0, 1.5, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(f.eval(0.5), 0.0);
        assert_eq!(f.eval(1.0), 0.0);
        let ratios: Vec<f64> = check_sample(1e3, 1e9, 20).into_iter().skip(1).map(|t| f.eval(t) / (t * t)).collect();
        let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0f64), |(a, b), r| (a.min(*r), b.max(*r)));
        assert!(hi / lo < 1.5, "band {lo}..{hi}");
        assert!(f.monotonicity_threshold(1.5, &check_sample(1.01, 1e9, 50)).is_none());
    }

    #[test]
    fn majorant_basics() {
        let g = majorant_unchecked(2.0, 0.0, 1.0, 3.0, None).unwrap();
        assert_eq!(g.eval(0.0), 3.0);
        let s = check_sample(1e-3, 1e9, 50);
        assert!(s.windows(2).all(|w| g.eval(w[1]) > g.eval(w[0])));
        let ratios: Vec<f64> = check_sample(1e3, 1e9, 20).into_iter().skip(1).map(|t| g.eval(t) / (t * t)).collect();
        let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0f64), |(a, b), r| (a.min(*r), b.max(*r)));
        assert!(hi / lo < 1.5);
    }

    #[test]
    fn majorant_search_dominates() {
        let f = Nonlinearity::prototype(2.0, 1.0, 1.0).unwrap();
        let g = search_majorant(&f, None).unwrap();
        assert!(check_above(&g, &f, &default_sample()).is_none());
        assert!(build_majorant(&f, g.kappa() / 4.0, g.offset(), None).is_err());
    }

    #[test]
    fn integral_criterion_examples() {
        let params = FracParams::new(1, 2.0).unwrap();
        let v = |p, q| integral_criterion(&Nonlinearity::prototype(p, q, E).unwrap(), params).unwrap();
        assert!(v(2.0, 0.0).finite);
        assert!(!v(3.0, -1.0).finite);
        assert!(v(3.0, -2.0).finite);
        let fin = v(2.0, 0.0);
        assert!((fin.partial - (1.0 - 1e-12)).abs() < 1e-6, "{}", fin.partial);
    }

    #[test]
    fn inner_cumulative_band() {
        // C⁻¹τ^a log(e+τ)^c ≤ ∫_0^τ s^{a−1} log(e+s)^c ds ≤ Cτ^a log(e+τ)^c with a = p − 1.
        let g = majorant_unchecked(2.5, -1.5, 1.0, 0.0, None).unwrap();
        let mut lo = f64::MAX;
        let mut hi = 0.0f64;
        for t in check_sample(1e-4, 1e12, 10).into_iter().skip(1) {
            let r = g.inner_integral(t) / (t.powf(1.5) * (E + t).ln().powf(-1.5));
            lo = lo.min(r);
            hi = hi.max(r);
        }
        assert!(lo > 0.0 && hi / lo < 20.0, "{lo} {hi}");
    }
}
