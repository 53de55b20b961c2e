//! Nonnegative initial measures: grid densities, atoms, a constant background and the
//! optimal singular profiles, with ball-mass functionals.
//!
//! Profile integrals near the singular point are done in the depth variable u = −ln r
//! (and L = ln u further in), where the log-type singularities become algebraic or
//! exponential decay instead of mass hidden below double-precision radii.

use std::f64::consts::{E, PI};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{classify, CaseLabel};
use crate::error::{Error, Result};
use crate::frac_kernel::{ball_volume, norm, sphere_area, FracParams};
use crate::grid::{Grid, GridFunction};
use crate::quad;

/// Pointwise map G applied to μ inside ball and cell integrals.
pub trait PointMap: Sync {
    fn apply(&self, mu: f64) -> f64;
    /// ln G(μ) − ln μ from ln μ; must stay accurate when μ overflows.
    fn log_excess(&self, ln_mu: f64) -> f64;
    fn is_identity(&self) -> bool {
        false
    }
}

pub struct Identity;

impl PointMap for Identity {
    fn apply(&self, mu: f64) -> f64 {
        mu
    }
    fn log_excess(&self, _: f64) -> f64 {
        0.0
    }
    fn is_identity(&self) -> bool {
        true
    }
}

/// μ ↦ μ^α.
pub struct Power(pub f64);

impl PointMap for Power {
    fn apply(&self, mu: f64) -> f64 {
        mu.powf(self.0)
    }
    fn log_excess(&self, ln_mu: f64) -> f64 {
        (self.0 - 1.0) * ln_mu
    }
}

/// Profile exponents: s(r) = c·r^{−β}|ln r|^{−γ}(ln|ln r|)^{−δ} on 0 < r < R.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Shape {
    beta: f64,
    gamma: f64,
    delta: f64,
}

/// One of the three optimal singularities of the classification, plus K.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularProfile {
    case: CaseLabel,
    coefficient: f64,
    cutoff: f64,
    background: f64,
    params: FracParams,
    p: f64,
    q: f64,
}

impl SingularProfile {
    pub fn new(params: FracParams, p: f64, q: f64, coefficient: f64, cutoff: f64, background: f64) -> Result<Self> {
        let case = classify(params, p, q)?.label;
        if !case.is_singular() {
            return Err(Error::Parameter(format!(
                "{case:?} has no singular profile: solvability is decided by sup_z mu(B(z,1))"
            )));
        }
        if !(coefficient >= 0.0 && coefficient.is_finite()) {
            return Err(Error::Parameter(format!("coefficient {coefficient} must be nonnegative")));
        }
        if !(background >= 0.0 && background.is_finite()) {
            return Err(Error::Parameter(format!("background {background} must be nonnegative")));
        }
        let max_cut = match case {
            CaseLabel::CriticalBorderline => 1.0 / E,
            CaseLabel::Supercritical if q <= 0.0 => 1.0,
            _ => 1.0,
        };
        let closed = case == CaseLabel::Supercritical && q <= 0.0;
        let ok = cutoff > 0.0 && if closed { cutoff <= max_cut } else { cutoff < max_cut };
        if !ok {
            return Err(Error::Parameter(format!(
                "cutoff R={cutoff} outside the admissible range for {case:?} (needs 0 < R {} {max_cut:.6})",
                if closed { "<=" } else { "<" }
            )));
        }
        Ok(Self {
            case,
            coefficient,
            cutoff,
            background,
            params,
            p,
            q,
        })
    }

    pub fn case(&self) -> CaseLabel {
        self.case
    }
    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }
    pub fn background(&self) -> f64 {
        self.background
    }
    pub fn params(&self) -> FracParams {
        self.params
    }
    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn with_coefficient(&self, coefficient: f64) -> Self {
        Self {
            coefficient,
            ..self.clone()
        }
    }

    pub fn with_background(&self, background: f64) -> Self {
        Self {
            background,
            ..self.clone()
        }
    }

    fn shape(&self) -> Shape {
        let n = self.params.dim() as f64;
        let theta = self.params.theta();
        match self.case {
            CaseLabel::CriticalBorderline => Shape {
                beta: n,
                gamma: 1.0,
                delta: n / theta + 1.0,
            },
            CaseLabel::CriticalLog => Shape {
                beta: n,
                gamma: n * (self.q + 1.0) / theta + 1.0,
                delta: 0.0,
            },
            _ => Shape {
                beta: theta / (self.p - 1.0),
                gamma: self.q / (self.p - 1.0),
                delta: 0.0,
            },
        }
    }

    /// Exponents (of |x|, |log|x||, log|log|x||) in the profile formula.
    pub fn exponents(&self) -> (f64, f64, f64) {
        let s = self.shape();
        (-s.beta, -s.gamma, -s.delta)
    }

    /// coefficient·formula·χ_{B(0,R)} at radius r > 0, without K.
    pub fn singular_value(&self, r: f64) -> f64 {
        if r >= self.cutoff || self.coefficient == 0.0 {
            return 0.0;
        }
        if r <= 0.0 {
            return f64::INFINITY;
        }
        let u = -r.ln();
        let n = self.params.dim() as f64;
        (self.ln_scaled(u) + n * u).exp()
    }

    /// ln(s(r)·r^N) at depth u = −ln r, r < R.
    fn ln_scaled(&self, u: f64) -> f64 {
        let s = self.shape();
        let n = self.params.dim() as f64;
        let mut v = self.coefficient.ln() - (n - s.beta) * u;
        if s.gamma != 0.0 {
            v -= s.gamma * u.ln();
        }
        if s.delta != 0.0 {
            v -= s.delta * u.ln().ln();
        }
        v
    }

    /// Value at x ≠ 0 including K.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let r = norm(x, self.params.dim());
        if r == 0.0 {
            return Err(Error::Domain("profile is singular at x = 0; integrate across the cell instead".into()));
        }
        Ok(self.singular_value(r) + self.background)
    }

    /// ∫_{B(0,ρ)} of the singular part (closed forms where they exist).
    pub fn mass_below(&self, rho: f64) -> f64 {
        let rho = rho.min(self.cutoff);
        if rho <= 0.0 || self.coefficient == 0.0 {
            return 0.0;
        }
        let s = self.shape();
        let n = self.params.dim() as f64;
        let area = sphere_area(self.params.dim());
        let c = self.coefficient;
        let u0 = -rho.ln();
        match self.case {
            CaseLabel::CriticalBorderline => area * c * u0.ln().powf(1.0 - s.delta) / (s.delta - 1.0),
            CaseLabel::CriticalLog => area * c * u0.powf(1.0 - s.gamma) / (s.gamma - 1.0),
            _ => {
                let kappa = n - s.beta;
                if s.gamma == 0.0 {
                    return area * c * rho.powf(kappa) / kappa;
                }
                // u = u0 + v/κ: ∫_0^∞ e^{−v}(u0 + v/κ)^{−γ} dv / κ · e^{−κ u0}.
                let lo = (1e-3 * u0 * kappa).min(1e-3).max(1e-300);
                let mut breaks = vec![0.0];
                breaks.extend(quad::geometric_breaks(lo, 80.0, 1.5));
                let inner = quad::panels(12, &breaks, |v| (-v).exp() * (u0 + v / kappa).powf(-s.gamma));
                area * c * inner * rho.powf(kappa) / kappa
            }
        }
    }
}

/// Fraction of the sphere |y| = r inside the cube of half-side a centred at 0.
fn cube_fraction(dim: usize, a: f64, r: f64) -> f64 {
    fn square(a: f64, r: f64) -> f64 {
        if r <= a {
            1.0
        } else if r >= a * std::f64::consts::SQRT_2 {
            0.0
        } else {
            (1.0 - 4.0 / PI * (a / r).acos()).max(0.0)
        }
    }
    match dim {
        1 => {
            if r <= a {
                1.0
            } else {
                0.0
            }
        }
        2 => square(a, r),
        _ => {
            if r <= a {
                return 1.0;
            }
            let top = (a / r).min(1.0);
            let mut breaks = vec![0.0];
            for k in [1.0, 2.0] {
                let t2 = 1.0 - k * a * a / (r * r);
                if t2 > 0.0 && t2.sqrt() < top {
                    breaks.push(t2.sqrt());
                }
            }
            breaks.push(top);
            breaks.sort_by(|x, y| x.partial_cmp(y).unwrap());
            breaks
                .windows(2)
                .map(|w| quad::adaptive(w[0], w[1], 1e-14, 1e-12, |t| square(a, r * (1.0 - t * t).max(0.0).sqrt())).0)
                .sum()
        }
    }
}

/// Fraction of the sphere |y| = r inside B(z, σ) with |z| = rho.
fn ball_fraction(dim: usize, rho: f64, sigma: f64, r: f64) -> f64 {
    if rho == 0.0 {
        return if r < sigma { 1.0 } else { 0.0 };
    }
    if dim == 1 {
        let a = ((r - rho).abs() < sigma) as u8 as f64;
        let b = ((r + rho).abs() < sigma) as u8 as f64;
        return 0.5 * (a + b);
    }
    if r + rho <= sigma {
        return 1.0;
    }
    if r >= rho + sigma || r <= rho - sigma {
        return 0.0;
    }
    let c = ((r * r + rho * rho - sigma * sigma) / (2.0 * r * rho)).clamp(-1.0, 1.0);
    if dim == 2 {
        c.acos() / PI
    } else {
        0.5 * (1.0 - c)
    }
}

const DEPTH_CAP: f64 = 690.0;

/// A profile placed at `center` with an additive constant used inside nonlinear maps.
struct RadialPart<'a> {
    profile: &'a SingularProfile,
    background: f64,
}

impl<'a> RadialPart<'a> {
    fn dim(&self) -> usize {
        self.profile.params.dim()
    }

    /// S_N·G(μ(r))·r^N·φ(r) at depth u.
    fn depth_integrand(&self, u: f64, map: &dyn PointMap, frac: &dyn Fn(f64) -> f64) -> f64 {
        let n = self.dim() as f64;
        let ls = self.profile.ln_scaled(u);
        let lk = if self.background > 0.0 {
            self.background.ln() - n * u
        } else {
            f64::NEG_INFINITY
        };
        let hi = ls.max(lk);
        if hi == f64::NEG_INFINITY {
            return 0.0;
        }
        let ln_mu_rn = hi + ((ls - hi).exp() + (lk - hi).exp()).ln();
        let ln_mu = ln_mu_rn + n * u;
        let e = ln_mu_rn + map.log_excess(ln_mu);
        let r = (-u).exp();
        sphere_area(self.dim()) * e.exp() * frac(r)
    }

    /// S_N ∫_{u_a}^{u_b} G(μ) r^N φ du; u_b may be infinite.
    fn depth_integral(&self, u_a: f64, u_b: f64, map: &dyn PointMap, frac: &dyn Fn(f64) -> f64, kinks_r: &[f64]) -> f64 {
        if !(u_b > u_a) {
            return 0.0;
        }
        let f = |u: f64| self.depth_integrand(u, map, frac);
        let mut kinks: Vec<f64> = kinks_r
            .iter()
            .filter(|&&r| r > 0.0)
            .map(|r| -r.ln())
            .filter(|&u| u > u_a && u < u_b)
            .collect();
        kinks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let switch = (u_a + 1.0).min(u_b);
        let mut total = 0.0;
        let mut lo = u_a;
        for &k in kinks.iter().filter(|&&k| k < switch).chain(std::iter::once(&switch)) {
            total += quad::adaptive(lo, k, 0.0, 1e-13, f).0;
            lo = k;
        }
        if switch >= u_b {
            return total;
        }
        // L = ln u from here on.
        let l_end = if u_b.is_finite() { u_b.ln().min(DEPTH_CAP) } else { DEPTH_CAP };
        let g = |l: f64| {
            let u = l.exp();
            f(u) * u
        };
        let mut l_breaks: Vec<f64> = kinks.iter().filter(|&&k| k > switch).map(|k| k.ln()).filter(|&l| l < l_end).collect();
        l_breaks.push(l_end);
        let mut l = switch.ln();
        let mut quiet = 0;
        'outer: for &stop in &l_breaks {
            while l < stop {
                let next = (l + 0.1 * l.abs().max(1.0)).min(stop);
                let piece = quad::panel(16, l, next, g);
                total += piece;
                l = next;
                if piece.abs() <= 1e-18 * total.abs() && g(l) <= g((l - 0.05).max(switch.ln())) {
                    quiet += 1;
                    if quiet >= 5 {
                        break 'outer;
                    }
                } else {
                    quiet = 0;
                }
            }
        }
        let open_ended = !u_b.is_finite() || u_b.ln() > DEPTH_CAP;
        if open_ended && quiet < 5 {
            let (l1, l2) = (DEPTH_CAP - 60.0, DEPTH_CAP);
            let (j1, j2) = (g(l1), g(l2));
            if j2 > 1e-17 * total.abs() && j1 > 0.0 {
                let lambda = (j1 / j2).ln() / (l2 / l1).ln();
                total += if lambda > 1.0 + 1e-9 {
                    j2 * l2 / (lambda - 1.0)
                } else {
                    f64::INFINITY
                };
            }
        }
        total
    }

    /// ∫_{B(z,σ) ∩ B(0,R)} G(K + s(|y|)) dy with z measured from the profile centre.
    fn ball_part(&self, rho: f64, sigma: f64, map: &dyn PointMap) -> f64 {
        let big_r = self.profile.cutoff;
        let dim = self.dim();
        let r_lo = (rho - sigma).max(0.0);
        let r_hi = (rho + sigma).min(big_r);
        if r_hi <= r_lo {
            return 0.0;
        }
        let frac = |r: f64| ball_fraction(dim, rho, sigma, r);
        let kinks = [(rho - sigma).abs(), rho + sigma];
        let u_hi_depth = if r_lo > 0.0 { -r_lo.ln() } else { f64::INFINITY };
        let u_lo_depth = -r_hi.ln();
        if rho < sigma && map.is_identity() {
            // Fully covered inner ball in closed form.
            let inner = (sigma - rho).min(big_r);
            let inner_mass = self.profile.mass_below(inner);
            let outer = if inner < r_hi {
                self.depth_integral(u_lo_depth, -inner.ln(), map, &frac, &kinks)
            } else {
                0.0
            };
            return inner_mass + outer;
        }
        self.depth_integral(u_lo_depth, u_hi_depth, map, &frac, &kinks)
    }

    /// |B(z,σ) ∩ B(0,R)|.
    fn overlap_volume(&self, rho: f64, sigma: f64) -> f64 {
        let dim = self.dim();
        let big_r = self.profile.cutoff;
        let r_lo = (rho - sigma).max(0.0);
        let r_hi = (rho + sigma).min(big_r);
        if r_hi <= r_lo {
            return 0.0;
        }
        let mut breaks = vec![r_lo];
        for k in [(rho - sigma).abs(), rho + sigma] {
            if k > r_lo && k < r_hi {
                breaks.push(k);
            }
        }
        breaks.push(r_hi);
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let area = sphere_area(dim);
        quad::panels(20, &breaks, |r| area * r.powi(dim as i32 - 1) * ball_fraction(dim, rho, sigma, r))
    }

    /// ∫ over the cube of half-side a centred at the profile centre of G(K + s).
    fn centered_cube(&self, a: f64, map: &dyn PointMap) -> f64 {
        let dim = self.dim();
        let big_r = self.profile.cutoff;
        let inner = a.min(big_r);
        let one = |_: f64| 1.0;
        let mut total = if map.is_identity() {
            self.profile.mass_below(inner)
        } else {
            self.depth_integral(-inner.ln(), f64::INFINITY, map, &one, &[])
        };
        if a < big_r && dim > 1 {
            let top = (a * (dim as f64).sqrt()).min(big_r);
            let area = sphere_area(dim);
            let f = |r: f64| {
                area * r.powi(dim as i32 - 1)
                    * cube_fraction(dim, a, r)
                    * map.apply(self.background + self.profile.singular_value(r))
            };
            let mut breaks = vec![a, a * std::f64::consts::SQRT_2, top];
            breaks.retain(|&b| b <= top);
            breaks.dedup();
            for w in breaks.windows(2) {
                total += quad::adaptive(w[0], w[1], 0.0, 1e-12, f).0;
            }
        }
        // Parts of the cube beyond R see only K.
        if !map.is_identity() {
            let cube = (2.0 * a).powi(dim as i32);
            let covered = self.cube_ball_overlap(a);
            total += map.apply(self.background) * (cube - covered);
        }
        total
    }

    /// |cube(a) ∩ B(0,R)|.
    fn cube_ball_overlap(&self, a: f64) -> f64 {
        let dim = self.dim();
        let big_r = self.profile.cutoff;
        if big_r <= a {
            return ball_volume(dim, big_r);
        }
        let top = (a * (dim as f64).sqrt()).min(big_r);
        let area = sphere_area(dim);
        ball_volume(dim, a) + quad::adaptive(a, top, 0.0, 1e-12, |r| area * r.powi(dim as i32 - 1) * cube_fraction(dim, a, r)).0
    }

    /// ∫ over an axis-aligned cell of side h centred at c (relative to the profile centre).
    fn cell_integral(&self, c: &[f64], h: f64, map: &dyn PointMap) -> f64 {
        let dim = self.dim();
        let big_r = self.profile.cutoff;
        let tiny = 1e-9 * h;
        if dim == 1 && map.is_identity() {
            let m = |x: f64| 0.5 * self.profile.mass_below(x.abs());
            let (a, b) = (c[0] - 0.5 * h, c[0] + 0.5 * h);
            return if a >= 0.0 {
                m(b) - m(a)
            } else if b <= 0.0 {
                m(a) - m(b)
            } else {
                m(a) + m(b)
            };
        }
        if c.iter().all(|v| v.abs() < tiny) {
            return self.centered_cube(0.5 * h, map);
        }
        if c.iter().all(|v| (v.abs() - 0.5 * h).abs() < tiny) {
            return self.centered_cube(h, map) / 2f64.powi(dim as i32);
        }
        // Regular cell: tensor Gauss–Legendre, subdivided near the singular point.
        let dist = norm(c, dim);
        let reach = 0.5 * h * (dim as f64).sqrt();
        if dist - reach > big_r {
            return map.apply(self.background) * h.powi(dim as i32);
        }
        let local = (dist - reach).max(0.05 * h);
        let sub = ((4.0 * h / local).ceil() as usize).clamp(2, 24);
        let order = 6;
        let rule = quad::rule(order);
        let hs = h / sub as f64;
        let per = sub * order;
        let mut axes = vec![Vec::with_capacity(per); dim];
        for a in 0..dim {
            for k in 0..sub {
                let lo = c[a] - 0.5 * h + k as f64 * hs;
                for &(x, w) in rule {
                    axes[a].push((lo + 0.5 * hs * (x + 1.0), 0.5 * hs * w));
                }
            }
        }
        let mut total = 0.0;
        let count = per.pow(dim as u32);
        let mut idx = [0usize; 3];
        for flat in 0..count {
            let mut rem = flat;
            for a in (0..dim).rev() {
                idx[a] = rem % per;
                rem /= per;
            }
            let mut r2 = 0.0;
            let mut w = 1.0;
            for a in 0..dim {
                let (x, wa) = axes[a][idx[a]];
                r2 += x * x;
                w *= wa;
            }
            total += w * map.apply(self.background + self.profile.singular_value(r2.sqrt()));
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub location: [f64; 3],
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct PlacedProfile {
    profile: SingularProfile,
    center: [f64; 3],
}

/// μ = grid density + atoms + placed singular profiles + constant K.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialMeasure {
    dim: usize,
    density: Option<GridFunction>,
    atoms: Vec<Atom>,
    profiles: Vec<PlacedProfile>,
    background: f64,
}

fn point3(x: &[f64]) -> [f64; 3] {
    let mut p = [0.0; 3];
    for (a, v) in x.iter().take(3).enumerate() {
        p[a] = *v;
    }
    p
}

impl InitialMeasure {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            density: None,
            atoms: Vec::new(),
            profiles: Vec::new(),
            background: 0.0,
        }
    }

    pub fn constant(dim: usize, c: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::Domain(format!("constant density {c} must be nonnegative")));
        }
        Ok(Self {
            background: c,
            ..Self::zero(dim)
        })
    }

    pub fn dirac(dim: usize, location: &[f64], mass: f64) -> Result<Self> {
        Self::zero(dim).with_atom(location, mass)
    }

    pub fn from_density(density: GridFunction) -> Self {
        let dim = density.grid.dim();
        let background = density.background;
        let mut d = density;
        d.background = 0.0;
        Self {
            dim,
            density: Some(d),
            background,
            ..Self::zero(dim)
        }
    }

    pub fn from_profile(profile: SingularProfile) -> Self {
        let dim = profile.params.dim();
        let background = profile.background;
        Self {
            dim,
            background,
            profiles: vec![PlacedProfile {
                profile,
                center: [0.0; 3],
            }],
            ..Self::zero(dim)
        }
    }

    pub fn with_atom(mut self, location: &[f64], mass: f64) -> Result<Self> {
        if location.len() != self.dim {
            return Err(Error::Parameter(format!("atom location has {} coordinates, expected {}", location.len(), self.dim)));
        }
        if !(mass >= 0.0 && mass.is_finite()) {
            return Err(Error::Domain(format!("atom mass {mass} must be nonnegative")));
        }
        self.atoms.push(Atom {
            location: point3(location),
            mass,
        });
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }
    pub fn background(&self) -> f64 {
        self.background
    }
    pub fn density(&self) -> Option<&GridFunction> {
        self.density.as_ref()
    }
    pub fn profiles(&self) -> impl Iterator<Item = &SingularProfile> {
        self.profiles.iter().map(|p| &p.profile)
    }

    pub fn is_zero(&self) -> bool {
        self.background == 0.0
            && self.atoms.iter().all(|a| a.mass == 0.0)
            && self.profiles.iter().all(|p| p.profile.coefficient == 0.0)
            && self.density.as_ref().map_or(true, |d| d.values.iter().all(|v| *v == 0.0))
    }

    /// cμ.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::Domain(format!("scale {c} must be nonnegative")));
        }
        let mut out = self.clone();
        out.background *= c;
        for a in &mut out.atoms {
            a.mass *= c;
        }
        for p in &mut out.profiles {
            p.profile = p.profile.with_coefficient(p.profile.coefficient * c);
            p.profile.background *= c;
        }
        if let Some(d) = &mut out.density {
            for v in &mut d.values {
                *v *= c;
            }
        }
        Ok(out)
    }

    /// μ + ν; densities must live on the same grid.
    pub fn add(&self, other: &InitialMeasure) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::Parameter("cannot add measures of different dimensions".into()));
        }
        let density = match (&self.density, &other.density) {
            (Some(a), Some(b)) => {
                if a.grid != b.grid {
                    return Err(Error::Parameter("densities live on different grids".into()));
                }
                let mut d = a.clone();
                for (x, y) in d.values.iter_mut().zip(&b.values) {
                    *x += y;
                }
                Some(d)
            }
            (Some(a), None) => Some(a.clone()),
            (None, b) => b.clone(),
        };
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().cloned());
        let mut profiles = self.profiles.clone();
        profiles.extend(other.profiles.iter().cloned());
        Ok(Self {
            dim: self.dim,
            density,
            atoms,
            profiles,
            background: self.background + other.background,
        })
    }

    /// Shift by v. Densities move by whole cells only.
    pub fn translated(&self, v: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        for a in &mut out.atoms {
            for k in 0..self.dim {
                a.location[k] += v[k];
            }
        }
        for p in &mut out.profiles {
            for k in 0..self.dim {
                p.center[k] += v[k];
            }
        }
        if let Some(d) = &mut out.density {
            let h = d.grid.spacing();
            let mut shift = [0isize; 3];
            for k in 0..self.dim {
                let s = v[k] / h;
                if (s - s.round()).abs() > 1e-9 {
                    return Err(Error::Parameter(format!("density shift {} is not a whole number of cells", v[k])));
                }
                shift[k] = s.round() as isize;
            }
            let grid = d.grid.clone();
            let n = grid.points() as isize;
            let mut moved = vec![0.0; grid.len()];
            for (flat, val) in d.values.iter().enumerate() {
                let idx = grid.multi_index(flat);
                let mut target = [0usize; 3];
                let mut inside = true;
                for k in 0..self.dim {
                    let t = idx[k] as isize + shift[k];
                    inside &= (0..n).contains(&t);
                    target[k] = t.max(0) as usize;
                }
                if inside {
                    moved[grid.flat_index(&target[..self.dim])] = *val;
                }
            }
            d.values = moved;
        }
        Ok(out)
    }

    /// Cell averages of the non-atomic, non-constant part on `grid`, or None if absent.
    pub fn density_on(&self, grid: &Grid) -> Result<Option<Vec<f64>>> {
        if grid.dim() != self.dim {
            return Err(Error::Parameter("grid dimension differs from measure".into()));
        }
        if self.density.is_none() && self.profiles.is_empty() {
            return Ok(None);
        }
        let mut values = vec![0.0; grid.len()];
        if let Some(d) = &self.density {
            if &d.grid != grid {
                return Err(Error::Parameter("measure density lives on a different grid".into()));
            }
            values.copy_from_slice(&d.values);
        }
        let h = grid.spacing();
        let vol = grid.cell_volume();
        for placed in &self.profiles {
            let part = RadialPart {
                profile: &placed.profile,
                background: 0.0,
            };
            let add: Vec<f64> = (0..grid.len())
                .into_par_iter()
                .map(|i| {
                    let x = grid.center(i);
                    let rel: Vec<f64> = (0..self.dim).map(|k| x[k] - placed.center[k]).collect();
                    part.cell_integral(&rel, h, &Identity) / vol
                })
                .collect();
            for (v, a) in values.iter_mut().zip(add) {
                *v += a;
            }
        }
        Ok(Some(values))
    }

    /// Cell averages of G(μ) including the background; atoms are rejected.
    pub fn map_cell_averages(&self, grid: &Grid, map: &dyn PointMap) -> Result<GridFunction> {
        if !self.atoms.is_empty() {
            return Err(Error::Domain("a pointwise map of a measure with atoms is undefined".into()));
        }
        if self.profiles.len() + self.density.is_some() as usize > 1 {
            return Err(Error::Parameter("nonlinear cell averages need a single density or profile component".into()));
        }
        let mut out = GridFunction::zeros(grid);
        let k = self.background;
        let gk = map.apply(k);
        out.background = gk;
        if let Some(d) = &self.density {
            if &d.grid != grid {
                return Err(Error::Parameter("measure density lives on a different grid".into()));
            }
            out.values = d.values.iter().map(|v| (map.apply(v + k) - gk).max(0.0)).collect();
        }
        if let Some(placed) = self.profiles.first() {
            let part = RadialPart {
                profile: &placed.profile,
                background: k,
            };
            let h = grid.spacing();
            let vol = grid.cell_volume();
            out.values = (0..grid.len())
                .into_par_iter()
                .map(|i| {
                    let x = grid.center(i);
                    let rel: Vec<f64> = (0..self.dim).map(|a| x[a] - placed.center[a]).collect();
                    (part.cell_integral(&rel, h, map) / vol - gk).max(0.0)
                })
                .collect();
        }
        Ok(out)
    }

    fn density_ball_integral(&self, z: &[f64], sigma: f64, map: &dyn PointMap) -> f64 {
        let Some(d) = &self.density else { return 0.0 };
        let grid = &d.grid;
        let h = grid.spacing();
        let dim = self.dim;
        let n = grid.points();
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..dim {
            let l = ((z[a] - sigma + grid.half_width()) / h).floor().max(0.0);
            let u = ((z[a] + sigma + grid.half_width()) / h).floor();
            if u < 0.0 || l >= n as f64 {
                return 0.0;
            }
            lo[a] = l as usize;
            hi[a] = (u as usize).min(n - 1);
        }
        let mut total = 0.0;
        let mut idx = lo;
        loop {
            let flat = grid.flat_index(&idx[..dim]);
            let mut c = [0.0; 3];
            for a in 0..dim {
                c[a] = grid.coord(idx[a]);
            }
            let overlap = cell_ball_overlap(dim, &c, h, z, sigma);
            if overlap > 0.0 {
                let v = d.values[flat];
                total += overlap * if map.is_identity() { v } else { map.apply(v + self.background) - map.apply(self.background) };
            }
            let mut a = dim;
            loop {
                if a == 0 {
                    return total;
                }
                a -= 1;
                if idx[a] < hi[a] {
                    idx[a] += 1;
                    break;
                }
                idx[a] = lo[a];
            }
        }
    }

    /// ∫_{B(z,σ)} G(μ) dy; with G the identity this is μ(B(z,σ)) including atoms.
    pub fn ball_integral(&self, z: &[f64], sigma: f64, map: &dyn PointMap) -> Result<f64> {
        if !(sigma > 0.0) {
            return Err(Error::Domain(format!("radius {sigma} must be positive")));
        }
        let dim = self.dim;
        let vol = ball_volume(dim, sigma);
        if map.is_identity() {
            let mut total = self.background * vol;
            for a in &self.atoms {
                let d2: f64 = (0..dim).map(|k| (a.location[k] - z[k]).powi(2)).sum();
                if d2.sqrt() < sigma {
                    total += a.mass;
                }
            }
            total += self.density_ball_integral(z, sigma, map);
            for placed in &self.profiles {
                let part = RadialPart {
                    profile: &placed.profile,
                    background: 0.0,
                };
                let rho = (0..dim).map(|k| (z[k] - placed.center[k]).powi(2)).sum::<f64>().sqrt();
                total += part.ball_part(rho, sigma, map);
            }
            return Ok(total);
        }
        if self.atoms.iter().any(|a| a.mass > 0.0) {
            let hit = self.atoms.iter().any(|a| {
                let d2: f64 = (0..dim).map(|k| (a.location[k] - z[k]).powi(2)).sum();
                a.mass > 0.0 && d2.sqrt() < sigma
            });
            if hit {
                return Ok(f64::INFINITY);
            }
        }
        if self.profiles.len() + self.density.is_some() as usize > 1 {
            return Err(Error::Parameter("nonlinear ball integrals need a single density or profile component".into()));
        }
        let gk = map.apply(self.background);
        if let Some(placed) = self.profiles.first() {
            let part = RadialPart {
                profile: &placed.profile,
                background: self.background,
            };
            let rho = (0..dim).map(|k| (z[k] - placed.center[k]).powi(2)).sum::<f64>().sqrt();
            let inside = part.ball_part(rho, sigma, map);
            let covered = part.overlap_volume(rho, sigma);
            return Ok(inside + gk * (vol - covered).max(0.0));
        }
        Ok(gk * vol + self.density_ball_integral(z, sigma, map))
    }

    pub fn ball_mass(&self, z: &[f64], sigma: f64) -> Result<f64> {
        self.ball_integral(z, sigma, &Identity)
    }

    /// Centres worth probing: the lattice of pitch σ/4 over the search box, thinned to the
    /// neighbourhood of the non-constant part when the full lattice is too large.
    fn candidate_centers(&self, sigma: f64, search_half_width: f64, pitch: f64, origin: [f64; 3]) -> Vec<[f64; 3]> {
        let dim = self.dim;
        let k = (search_half_width / pitch).ceil() as i64;
        let full = (2 * k + 1) as f64;
        let mut out = Vec::new();
        let push_box = |out: &mut Vec<[f64; 3]>, c: [f64; 3], half: i64| {
            let span = 2 * half + 1;
            let total = span.pow(dim as u32);
            for flat in 0..total {
                let mut rem = flat;
                let mut p = c;
                let mut inside = true;
                for a in (0..dim).rev() {
                    let off = (rem % span) - half;
                    rem /= span;
                    let g = ((c[a] - origin[a]) / pitch).round() as i64 + off;
                    p[a] = origin[a] + g as f64 * pitch;
                    inside &= (p[a] - origin[a]).abs() <= search_half_width + 1e-12;
                }
                if inside {
                    out.push(p);
                }
            }
        };
        if full.powi(dim as i32) <= 2e5 {
            push_box(&mut out, origin, k);
            return out;
        }
        let near = ((2.0 * sigma / pitch).ceil() as i64).max(2);
        for a in &self.atoms {
            push_box(&mut out, a.location, near);
        }
        for p in &self.profiles {
            push_box(&mut out, p.center, near);
        }
        if let Some(d) = &self.density {
            // Brightest cells first.
            let mut order: Vec<usize> = (0..d.values.len()).collect();
            order.sort_by(|a, b| d.values[*b].partial_cmp(&d.values[*a]).unwrap());
            for &i in order.iter().take(8) {
                push_box(&mut out, d.grid.center(i), near);
            }
        }
        // Coarse sweep of the whole box.
        let coarse = (search_half_width / 32.0).max(pitch);
        let kc = (search_half_width / coarse).round() as i64;
        let span = 2 * kc + 1;
        for flat in 0..span.pow(dim as u32) {
            let mut rem = flat;
            let mut p = origin;
            for a in (0..dim).rev() {
                p[a] = origin[a] + ((rem % span) - kc) as f64 * coarse;
                rem /= span;
            }
            out.push(p);
        }
        out
    }
}

fn cell_ball_overlap(dim: usize, c: &[f64; 3], h: f64, z: &[f64], sigma: f64) -> f64 {
    if dim == 1 {
        let lo = (c[0] - 0.5 * h).max(z[0] - sigma);
        let hi = (c[0] + 0.5 * h).min(z[0] + sigma);
        return (hi - lo).max(0.0);
    }
    let mut near = 0.0;
    let mut far = 0.0;
    for a in 0..dim {
        let d = (c[a] - z[a]).abs();
        near += (d - 0.5 * h).max(0.0).powi(2);
        far += (d + 0.5 * h).powi(2);
    }
    let vol = h.powi(dim as i32);
    if far.sqrt() <= sigma {
        return vol;
    }
    if near.sqrt() >= sigma {
        return 0.0;
    }
    let s = 8usize;
    let count = s.pow(dim as u32);
    let mut inside = 0usize;
    for flat in 0..count {
        let mut rem = flat;
        let mut d2 = 0.0;
        for a in 0..dim {
            let k = rem % s;
            rem /= s;
            let x = c[a] - 0.5 * h + (k as f64 + 0.5) * h / s as f64;
            d2 += (x - z[a]).powi(2);
        }
        if d2 < sigma * sigma {
            inside += 1;
        }
    }
    vol * inside as f64 / count as f64
}

/// sup_z ∫_{B(z,σ)} G(μ) over a lattice of pitch σ/4 in [−W, W]^N with one refinement pass.
pub fn sup_ball_integral(mu: &InitialMeasure, sigma: f64, search_half_width: f64, map: &dyn PointMap) -> Result<(f64, [f64; 3])> {
    if !(sigma > 0.0 && search_half_width > 0.0) {
        return Err(Error::Domain("radius and search box must be positive".into()));
    }
    let pitch = sigma / 4.0;
    let centers = mu.candidate_centers(sigma, search_half_width, pitch, [0.0; 3]);
    let scan = |cs: &[[f64; 3]]| -> Result<(f64, [f64; 3])> {
        let vals: Vec<Result<f64>> = cs.par_iter().map(|c| mu.ball_integral(&c[..mu.dim], sigma, map)).collect();
        let mut best = (f64::NEG_INFINITY, [0.0; 3]);
        for (c, v) in cs.iter().zip(vals) {
            let v = v?;
            // Ties keep the centre closest to the origin for reproducible witnesses.
            let closer = norm(c, 3) < norm(&best.1, 3);
            if v > best.0 * (1.0 + 1e-12) || (v >= best.0 * (1.0 - 1e-12) && closer) {
                best = (v, *c);
            }
        }
        Ok(best)
    };
    let coarse = scan(&centers)?;
    let fine_pitch = pitch / 4.0;
    let mut refine = Vec::new();
    let span = 9i64;
    for flat in 0..span.pow(mu.dim as u32) {
        let mut rem = flat;
        let mut p = coarse.1;
        for a in (0..mu.dim).rev() {
            p[a] += ((rem % span) - 4) as f64 * fine_pitch;
            rem /= span;
        }
        if p.iter().take(mu.dim).all(|v| v.abs() <= search_half_width + 1e-12) {
            refine.push(p);
        }
    }
    let fine = scan(&refine)?;
    Ok(if fine.0 > coarse.0 { fine } else { coarse })
}

pub fn sup_ball_mass(mu: &InitialMeasure, sigma: f64, search_half_width: f64) -> Result<(f64, [f64; 3])> {
    sup_ball_integral(mu, sigma, search_half_width, &Identity)
}

/// μ(B(z, σ)).
pub fn ball_mass(mu: &InitialMeasure, z: &[f64], sigma: f64) -> Result<f64> {
    mu.ball_mass(z, sigma)
}

pub fn profile_value(profile: &SingularProfile, x: &[f64]) -> Result<f64> {
    profile.value(x)
}

// Structured-text form of a measure.

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    pub dim: usize,
    #[serde(default)]
    pub background: f64,
    #[serde(default)]
    pub atoms: Vec<AtomSpec>,
    #[serde(default)]
    pub profiles: Vec<ProfileSpec>,
    #[serde(default)]
    pub density: Option<DensitySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub location: Vec<f64>,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    pub case: String,
    pub theta: f64,
    pub p: f64,
    pub q: f64,
    pub coefficient: f64,
    pub cutoff: f64,
    #[serde(default)]
    pub center: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySpec {
    pub half_width: f64,
    pub points: usize,
    /// CSV payload file with one `value` column in row-major order.
    pub csv: String,
}

impl InitialMeasure {
    /// Serialize; a density is written to `density_csv` and referenced by name.
    pub fn to_spec(&self, density_csv: Option<&Path>) -> Result<MeasureSpec> {
        let mut spec = MeasureSpec {
            dim: self.dim,
            background: self.background,
            ..Default::default()
        };
        for a in &self.atoms {
            spec.atoms.push(AtomSpec {
                location: a.location[..self.dim].to_vec(),
                mass: a.mass,
            });
        }
        for p in &self.profiles {
            spec.profiles.push(ProfileSpec {
                case: p.profile.case.name().to_string(),
                theta: p.profile.params.theta(),
                p: p.profile.p,
                q: p.profile.q,
                coefficient: p.profile.coefficient,
                cutoff: p.profile.cutoff,
                center: Some(p.center[..self.dim].to_vec()),
            });
        }
        if let Some(d) = &self.density {
            let path = density_csv.ok_or_else(|| Error::Parameter("density payload needs a CSV path".into()))?;
            let mut text = String::from("value\n");
            for v in &d.values {
                text.push_str(&format!("{v:.17e}\n"));
            }
            std::fs::write(path, text)?;
            spec.density = Some(DensitySpec {
                half_width: d.grid.half_width(),
                points: d.grid.points(),
                csv: path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            });
        }
        Ok(spec)
    }

    pub fn to_text(&self, density_csv: Option<&Path>) -> Result<String> {
        toml::to_string(&self.to_spec(density_csv)?).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Parse; density CSV paths are resolved against `base_dir`.
    pub fn from_text(text: &str, base_dir: &Path) -> Result<Self> {
        let spec: MeasureSpec = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_spec(&spec, base_dir)
    }

    pub fn from_spec(spec: &MeasureSpec, base_dir: &Path) -> Result<Self> {
        let dim = spec.dim;
        let mut mu = Self::constant(dim, spec.background)?;
        for a in &spec.atoms {
            mu = mu.with_atom(&a.location, a.mass)?;
        }
        for p in &spec.profiles {
            let params = FracParams::new(dim, p.theta)?;
            let profile = SingularProfile::new(params, p.p, p.q, p.coefficient, p.cutoff, 0.0)?;
            if profile.case.name() != p.case {
                return Err(Error::Parse(format!(
                    "profile case '{}' does not match classification {}",
                    p.case,
                    profile.case.name()
                )));
            }
            let center = p.center.clone().unwrap_or_else(|| vec![0.0; dim]);
            mu.profiles.push(PlacedProfile {
                profile,
                center: point3(&center),
            });
        }
        if let Some(d) = &spec.density {
            let grid = Grid::new(dim, d.half_width, d.points)?;
            let text = std::fs::read_to_string(base_dir.join(&d.csv))?;
            let values: Vec<f64> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#') && *l != "value")
                .map(|l| l.parse::<f64>().map_err(|e| Error::Parse(format!("{e}: '{l}'"))))
                .collect::<Result<_>>()?;
            mu.density = Some(GridFunction::from_values(&grid, values, 0.0)?);
        }
        Ok(mu)
    }
}
