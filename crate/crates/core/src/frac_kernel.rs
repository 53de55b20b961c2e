//! Fundamental solution of ∂ₜu + (−Δ)^{θ/2}u = 0 and the semigroup S(t).
//!
//! θ = 2 and θ = 1 use the Gaussian and Poisson closed forms. Other orders tabulate
//! the radial profile at t = 1 from its small- and large-radius series where those
//! are numerically safe, and from panel Gauss–Legendre quadrature of the radial
//! Fourier inversion elsewhere. Everything else follows from self-similarity.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use puruspe::{erfc, ln_gamma, Jn};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{Convolver, Grid, GridFunction};
use crate::initial_data::InitialMeasure;
use crate::quad;
use crate::spline::NaturalSpline;

/// Dimension N, order θ and p_θ = 1 + θ/N.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FracParams {
    dim: usize,
    theta: f64,
    p_theta: f64,
}

impl FracParams {
    pub fn new(dim: usize, theta: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Parameter(format!("dimension N={dim} outside the supported range 1..=3")));
        }
        if !(theta > 0.0 && theta <= 2.0) {
            return Err(Error::Parameter(format!("order theta={theta} must satisfy 0 < theta <= 2")));
        }
        Ok(Self {
            dim,
            theta,
            p_theta: 1.0 + theta / dim as f64,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn p_theta(&self) -> f64 {
        self.p_theta
    }

    pub fn sphere_area(&self) -> f64 {
        sphere_area(self.dim)
    }

    pub fn ball_volume(&self, r: f64) -> f64 {
        ball_volume(self.dim, r)
    }
}

/// Surface measure of the unit sphere in ℝ^N (N = 1 counts the two endpoints).
pub fn sphere_area(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => 2.0 * PI.powf(dim as f64 / 2.0) / puruspe::gamma(dim as f64 / 2.0),
    }
}

pub fn ball_volume(dim: usize, r: f64) -> f64 {
    sphere_area(dim) * r.powi(dim as i32) / dim as f64
}

fn omega(dim: usize) -> f64 {
    match dim {
        1 => 1.0 / PI,
        2 => 1.0 / (2.0 * PI),
        _ => 1.0 / (2.0 * PI * PI),
    }
}

fn radial_wave(dim: usize, x: f64) -> f64 {
    match dim {
        1 => x.cos(),
        2 => Jn(0, x),
        _ => {
            if x.abs() < 1e-4 {
                1.0 - x * x / 6.0
            } else {
                x.sin() / x
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvaluationMode {
    ClosedForm,
    Quadrature,
}

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const TABLE_POINTS: usize = 2048;

/// Radial profile r ↦ Γ_θ(r e₁, 1), tabulated once and shared read-only.
#[derive(Debug, Clone)]
pub struct KernelProfile {
    params: FracParams,
    mode: EvaluationMode,
    tolerance: f64,
    radii: Vec<f64>,
    values: Vec<f64>,
    spline: NaturalSpline,
    curvature: f64,
    tail_coeff: f64,
    // N = 1 only: ∫_{r_i}^∞ Γ(r, 1) dr at each knot.
    tail_masses: Vec<f64>,
}

impl KernelProfile {
    pub fn new(params: FracParams) -> Result<Self> {
        Self::with_tolerance(params, DEFAULT_TOLERANCE)
    }

    pub fn with_tolerance(params: FracParams, tolerance: f64) -> Result<Self> {
        if !(tolerance > 0.0 && tolerance < 1.0) {
            return Err(Error::Parameter(format!("tolerance {tolerance} must lie in (0, 1)")));
        }
        let (mode, radii, values) = if params.theta == 2.0 || params.theta == 1.0 {
            let r_max = if params.theta == 2.0 { 40.0 } else { 1e4 };
            let radii = log_radii(1e-3, r_max, TABLE_POINTS);
            let values = radii.iter().map(|&r| closed_form(params, r)).collect();
            (EvaluationMode::ClosedForm, radii, values)
        } else {
            let (radii, values) = tabulate(params, tolerance)?;
            (EvaluationMode::Quadrature, radii, values)
        };
        Self::from_table(params, mode, tolerance, radii, values)
    }

    /// Process-wide cache keyed by (N, θ) at the default tolerance.
    pub fn shared(params: FracParams) -> Result<Arc<KernelProfile>> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, u64), Arc<KernelProfile>>>> = OnceLock::new();
        let key = (params.dim, params.theta.to_bits());
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(p) = cache.lock().unwrap().get(&key) {
            return Ok(p.clone());
        }
        let built = Arc::new(KernelProfile::new(params)?);
        cache.lock().unwrap().entry(key).or_insert(built.clone());
        Ok(built)
    }

    fn from_table(
        params: FracParams,
        mode: EvaluationMode,
        tolerance: f64,
        radii: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if radii.len() < 4 || radii.len() != values.len() {
            return Err(Error::Parse("kernel table needs at least four (radius, value) rows".into()));
        }
        if let Some((r, v)) = radii.iter().zip(&values).find(|(r, v)| !(**r > 0.0 && **v > 0.0 && v.is_finite())) {
            return Err(Error::Evaluation {
                context: format!("non-positive kernel sample {v} at r={r}"),
                target: tolerance,
                achieved: f64::INFINITY,
            });
        }
        if radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parse("kernel table radii must increase".into()));
        }
        let x: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
        let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
        let spline = NaturalSpline::new(x, y);
        let n = params.dim as f64;
        let theta = params.theta;
        let curvature = -small_series_term(params.dim, theta, 1).abs();
        let last = radii.len() - 1;
        let tail_coeff = values[last] * radii[last].powf(n + theta);
        let mut profile = Self {
            params,
            mode,
            tolerance,
            radii,
            values,
            spline,
            curvature,
            tail_coeff,
            tail_masses: Vec::new(),
        };
        if params.dim == 1 {
            profile.tail_masses = profile.build_tail_masses();
        }
        Ok(profile)
    }

    fn build_tail_masses(&self) -> Vec<f64> {
        let n = self.radii.len();
        let mut out = vec![0.0; n];
        let theta = self.params.theta;
        out[n - 1] = if self.mode == EvaluationMode::ClosedForm {
            closed_tail_mass_1d(theta, self.radii[n - 1])
        } else {
            self.tail_coeff * self.radii[n - 1].powf(-theta) / theta
        };
        for i in (0..n - 1).rev() {
            let seg = quad::panel(8, self.radii[i], self.radii[i + 1], |r| self.unit_value(r));
            out[i] = out[i + 1] + seg;
        }
        out
    }

    pub fn params(&self) -> FracParams {
        self.params
    }

    pub fn mode(&self) -> EvaluationMode {
        self.mode
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn table_values(&self) -> &[f64] {
        &self.values
    }

    /// Coefficient c of the far-field tail c·r^{−N−θ}.
    pub fn tail_coefficient(&self) -> f64 {
        self.tail_coeff
    }

    /// Γ_θ(r e₁, 1).
    pub fn unit_value(&self, r: f64) -> f64 {
        let r = r.abs();
        if self.mode == EvaluationMode::ClosedForm {
            return closed_form(self.params, r);
        }
        let r0 = self.radii[0];
        let last = *self.radii.last().unwrap();
        if r < r0 {
            self.values[0] + self.curvature * (r * r - r0 * r0)
        } else if r > last {
            self.tail_coeff * r.powf(-(self.params.dim as f64 + self.params.theta))
        } else {
            self.spline.eval(r.ln()).exp()
        }
    }

    /// Γ_θ at distance r and time t > 0, without argument checks.
    #[inline]
    pub fn value_radial(&self, r: f64, t: f64) -> f64 {
        let theta = self.params.theta;
        let ell = t.powf(1.0 / theta);
        self.unit_value(r / ell) / ell.powi(self.params.dim as i32)
    }

    pub fn value(&self, x: &[f64], t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.value_radial(norm(x, self.params.dim), t))
    }

    /// Γ(x,t) / [t^{−N/θ}(1 + t^{−1/θ}|x|)^{−N−θ}].
    pub fn bound_ratio(&self, x: &[f64], t: f64) -> Result<f64> {
        if self.params.theta == 2.0 {
            return Err(Error::Parameter("the polynomial envelope needs theta < 2".into()));
        }
        check_time(t)?;
        let theta = self.params.theta;
        let n = self.params.dim as f64;
        let xi = norm(x, self.params.dim) / t.powf(1.0 / theta);
        Ok(self.unit_value(xi) * (1.0 + xi).powf(n + theta))
    }

    /// ∫ Γ(x, 1) dx over ℝ^N from the tabulated profile plus its analytic tail.
    pub fn normalization(&self) -> f64 {
        let n = self.params.dim;
        let theta = self.params.theta;
        let s = sphere_area(n);
        let radial = |r: f64| self.unit_value(r) * r.powi(n as i32 - 1);
        let r0 = self.radii[0];
        let last = *self.radii.last().unwrap();
        let mut total = quad::panel(12, 0.0, r0, radial);
        let breaks = quad::geometric_breaks(r0, last, 1.2);
        total += quad::panels(12, &breaks, radial);
        total += if self.mode == EvaluationMode::ClosedForm && theta == 2.0 {
            0.0
        } else {
            self.tail_coeff * last.powf(-theta) / theta
        };
        s * total
    }

    /// ∫_s^∞ Γ(r, 1) dr for N = 1.
    pub fn unit_tail_mass_1d(&self, s: f64) -> f64 {
        debug_assert_eq!(self.params.dim, 1);
        let s = s.abs();
        let theta = self.params.theta;
        if self.mode == EvaluationMode::ClosedForm {
            return closed_tail_mass_1d(theta, s);
        }
        let r0 = self.radii[0];
        let last = *self.radii.last().unwrap();
        if s >= last {
            return self.tail_coeff * s.powf(-theta) / theta;
        }
        if s < r0 {
            let f = |r: f64| self.values[0] * (r - s) + self.curvature * ((r.powi(3) - s.powi(3)) / 3.0 - r0 * r0 * (r - s));
            return self.tail_masses[0] + f(r0);
        }
        let i = self.radii.partition_point(|&r| r <= s).min(self.radii.len() - 1);
        self.tail_masses[i] + quad::panel(8, s, self.radii[i], |r| self.unit_value(r))
    }

    /// ∫ over the cell of half-width h/2 around `center` of Γ(·, t).
    pub fn cell_mass(&self, center: &[f64], h: f64, t: f64) -> f64 {
        let dim = self.params.dim;
        let theta = self.params.theta;
        if theta == 2.0 {
            let s = (4.0 * t).sqrt();
            return (0..dim).map(|a| gaussian_interval(center[a] - 0.5 * h, center[a] + 0.5 * h, s)).product();
        }
        let ell = t.powf(1.0 / theta);
        if dim == 1 {
            let a = (center[0] - 0.5 * h) / ell;
            let b = (center[0] + 0.5 * h) / ell;
            return if a >= 0.0 {
                (self.unit_tail_mass_1d(a) - self.unit_tail_mass_1d(b)).max(0.0)
            } else if b <= 0.0 {
                (self.unit_tail_mass_1d(-b) - self.unit_tail_mass_1d(-a)).max(0.0)
            } else {
                (1.0 - self.unit_tail_mass_1d(-a) - self.unit_tail_mass_1d(b)).max(0.0)
            };
        }
        // Tensor Gauss–Legendre with subdivision when the kernel varies inside the cell.
        let dist = norm(center, dim);
        let reach = 0.5 * h * (dim as f64).sqrt();
        let local = ell.max(dist - reach);
        let sub = ((2.0 * h / local).ceil() as usize).clamp(1, 32);
        let order = if local >= 2.0 * h { 2 } else { 4 };
        let rule = quad::rule(order);
        let hs = h / sub as f64;
        let mut total = 0.0;
        let per_axis = sub * order;
        let mut coords = vec![[0.0f64; 2]; per_axis];
        let mut pts = vec![Vec::with_capacity(per_axis); dim];
        for a in 0..dim {
            for k in 0..sub {
                let lo = center[a] - 0.5 * h + k as f64 * hs;
                for (j, &(x, w)) in rule.iter().enumerate() {
                    coords[k * order + j] = [lo + 0.5 * hs * (x + 1.0), 0.5 * hs * w];
                }
            }
            pts[a] = coords.clone();
        }
        let mut idx = [0usize; 3];
        let count = per_axis.pow(dim as u32);
        for flat in 0..count {
            let mut rem = flat;
            for a in (0..dim).rev() {
                idx[a] = rem % per_axis;
                rem /= per_axis;
            }
            let mut r2 = 0.0;
            let mut w = 1.0;
            for a in 0..dim {
                let [x, wa] = pts[a][idx[a]];
                r2 += x * x;
                w *= wa;
            }
            total += w * self.value_radial(r2.sqrt(), t);
        }
        total
    }

    /// FFT spectrum of the cell-integrated kernel at time t on `grid`.
    pub fn cell_spectrum(&self, conv: &Convolver, grid: &Grid, t: f64) -> Result<(Vec<Complex64>, Option<String>)> {
        check_time(t)?;
        let h = grid.spacing();
        let n = grid.points() as isize;
        let dim = grid.dim();
        let warning = self.resolution_warning(h, t);
        let spectrum = if self.params.theta == 2.0 || dim == 1 {
            let masses: Vec<f64> = (-(n - 1)..n)
                .map(|d| {
                    if dim == 1 {
                        self.cell_mass(&[d as f64 * h], h, t)
                    } else {
                        let s = (4.0 * t).sqrt();
                        let c = d as f64 * h;
                        gaussian_interval(c - 0.5 * h, c + 0.5 * h, s)
                    }
                })
                .collect();
            conv.spectrum_of_offsets(|d| d.iter().map(|&k| masses[(k + n - 1) as usize]).product())
        } else {
            let span = (2 * n - 1) as usize;
            let total = span.pow(dim as u32);
            let weights: Vec<f64> = (0..total)
                .into_par_iter()
                .map(|flat| {
                    let mut rem = flat;
                    let mut c = [0.0; 3];
                    for a in (0..dim).rev() {
                        c[a] = ((rem % span) as isize - (n - 1)) as f64 * h;
                        rem /= span;
                    }
                    self.cell_mass(&c[..dim], h, t)
                })
                .collect();
            conv.spectrum_of_offsets(|d| {
                let idx = d.iter().fold(0usize, |acc, &k| acc * span + (k + n - 1) as usize);
                weights[idx]
            })
        };
        Ok((spectrum, warning))
    }

    /// FFT spectrum of point samples h^N·Γ(d·h, t), the midpoint rule for convolution.
    pub fn point_spectrum(&self, conv: &Convolver, grid: &Grid, t: f64) -> Result<Vec<Complex64>> {
        check_time(t)?;
        let h = grid.spacing();
        let vol = grid.cell_volume();
        Ok(conv.spectrum_of_offsets(|d| {
            let r2: f64 = d.iter().map(|&k| (k as f64 * h).powi(2)).sum();
            vol * self.value_radial(r2.sqrt(), t)
        }))
    }

    pub fn resolution_warning(&self, h: f64, t: f64) -> Option<String> {
        let ell = t.powf(1.0 / self.params.theta);
        (ell < 0.5 * h).then(|| {
            format!("kernel under-resolved: t^(1/theta) = {ell:.3e} is below half the grid spacing {h:.3e} at t = {t:.3e}")
        })
    }

    /// Text export: one header line, a column line, then radius,value rows.
    pub fn to_table_text(&self) -> String {
        let mut s = format!(
            "# N={},theta={},tolerance={:e}\nradius,value\n",
            self.params.dim, self.params.theta, self.tolerance
        );
        for (r, v) in self.radii.iter().zip(&self.values) {
            s.push_str(&format!("{r:.17e},{v:.17e}\n"));
        }
        s
    }

    pub fn from_table_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty kernel table".into()))?;
        let header = header.trim_start_matches('#').trim();
        let mut dim = None;
        let mut theta = None;
        let mut tol = None;
        for part in header.split(',') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("malformed header field '{part}'")))?;
            let v = v.trim();
            match k.trim() {
                "N" => dim = v.parse::<usize>().ok(),
                "theta" => theta = v.parse::<f64>().ok(),
                "tolerance" => tol = v.parse::<f64>().ok(),
                other => return Err(Error::Parse(format!("unknown header field '{other}'"))),
            }
        }
        let (dim, theta, tol) = match (dim, theta, tol) {
            (Some(d), Some(t), Some(e)) => (d, t, e),
            _ => return Err(Error::Parse("header must give N, theta and tolerance".into())),
        };
        let params = FracParams::new(dim, theta)?;
        let mut radii = Vec::new();
        let mut values = Vec::new();
        for line in lines {
            let line = line.trim();
            if line.starts_with('#') || line == "radius,value" {
                continue;
            }
            let (a, b) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("malformed row '{line}'")))?;
            radii.push(a.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{e}: '{a}'")))?);
            values.push(b.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{e}: '{b}'")))?);
        }
        let mode = if theta == 2.0 || theta == 1.0 {
            EvaluationMode::ClosedForm
        } else {
            EvaluationMode::Quadrature
        };
        Self::from_table(params, mode, tol, radii, values)
    }
}

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("time t={t} must be positive and finite")))
    }
}

pub(crate) fn norm(x: &[f64], dim: usize) -> f64 {
    x.iter().take(dim).map(|v| v * v).sum::<f64>().sqrt()
}

fn log_radii(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

fn closed_form(params: FracParams, r: f64) -> f64 {
    let n = params.dim as f64;
    if params.theta == 2.0 {
        (4.0 * PI).powf(-0.5 * n) * (-0.25 * r * r).exp()
    } else {
        // Γ((N+1)/2) π^{−(N+1)/2}
        let c = match params.dim {
            1 => 1.0 / PI,
            2 => 0.5 / PI,
            _ => 1.0 / (PI * PI),
        };
        c * (1.0 + r * r).powf(-0.5 * (n + 1.0))
    }
}

fn closed_tail_mass_1d(theta: f64, s: f64) -> f64 {
    if theta == 2.0 {
        0.5 * erfc(0.5 * s)
    } else {
        (1.0 / s).atan() / PI
    }
}

/// ∫_a^b of the 1D Gaussian with scale s = √(4t), stable in the tails.
fn gaussian_interval(a: f64, b: f64, s: f64) -> f64 {
    if a >= 0.0 {
        0.5 * (erfc(a / s) - erfc(b / s))
    } else if b <= 0.0 {
        0.5 * (erfc(-b / s) - erfc(-a / s))
    } else {
        1.0 - 0.5 * (erfc(-a / s) + erfc(b / s))
    }
}

/// Magnitude-carrying m-th term of the small-radius series without r^{2m}.
fn small_series_term(dim: usize, theta: f64, m: usize) -> f64 {
    let n = dim as f64;
    let mf = m as f64;
    let lg = ln_gamma((2.0 * mf + n) / theta)
        - theta.ln()
        - 0.5 * n * PI.ln()
        - (2.0 * mf + n - 1.0) * 2f64.ln()
        - ln_gamma(mf + 1.0)
        - ln_gamma(mf + 0.5 * n);
    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
    sign * lg.exp()
}

/// ln|c_k| of the large-radius coefficient, without the sine factor.
fn large_series_log_envelope(dim: usize, theta: f64, k: usize) -> f64 {
    let n = dim as f64;
    let kf = k as f64;
    kf * theta * 2f64.ln() + ln_gamma(0.5 * (kf * theta + n)) + ln_gamma(0.5 * kf * theta + 1.0)
        - ln_gamma(kf + 1.0)
        - (0.5 * n + 1.0) * PI.ln()
}

struct SeriesResult {
    sum: f64,
    max_term: f64,
    last_term: f64,
}

fn small_series(dim: usize, theta: f64, r: f64) -> SeriesResult {
    let mut sum = 0.0;
    let mut max_term = 0.0f64;
    let mut last = f64::INFINITY;
    for m in 0..400 {
        let term = if r == 0.0 && m > 0 {
            0.0
        } else {
            small_series_term(dim, theta, m) * r.powi(2 * m as i32)
        };
        sum += term;
        max_term = max_term.max(term.abs());
        last = term.abs();
        if m > 2 && last < 1e-18 * max_term {
            break;
        }
    }
    SeriesResult { sum, max_term, last_term: last }
}

fn large_series(dim: usize, theta: f64, r: f64) -> SeriesResult {
    let n = dim as f64;
    let lr = r.ln();
    let mut sum = 0.0;
    let mut max_term = 0.0f64;
    let mut prev_env = f64::INFINITY;
    let mut last = f64::INFINITY;
    for k in 1..600 {
        let env = (large_series_log_envelope(dim, theta, k) - (n + k as f64 * theta) * lr).exp();
        if theta > 1.0 && env > prev_env {
            // Asymptotic regime: stop at the smallest term.
            break;
        }
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        let term = sign * (k as f64 * PI * theta / 2.0).sin() * env;
        sum += term;
        max_term = max_term.max(env);
        last = env;
        prev_env = env;
        if k > 3 && env < 1e-18 * max_term.max(sum.abs()) {
            break;
        }
    }
    SeriesResult { sum, max_term, last_term: last }
}

fn series_ok(s: &SeriesResult, tol: f64) -> bool {
    s.sum > 0.0 && s.last_term <= 1e-3 * tol * s.sum && s.max_term <= 1e5 * s.sum
}

/// Panel Gauss–Legendre of ω_N ∫₀^∞ e^{−k^θ} k^{N−1} j_N(kr) dk. Returns (value, error estimate).
fn hankel_quadrature(dim: usize, theta: f64, r: f64) -> Result<(f64, f64)> {
    let n = dim as f64;
    let mut kmax = 40f64.powf(1.0 / theta);
    for _ in 0..6 {
        kmax = (40.0 + (n - 1.0) * kmax.max(1.0).ln()).powf(1.0 / theta);
    }
    let osc = if r > 0.0 { PI / r } else { f64::INFINITY };
    let mut breaks = vec![0.0];
    let push_span = |breaks: &mut Vec<f64>, hi: f64| {
        let lo = *breaks.last().unwrap();
        let pieces = ((hi - lo) / osc).ceil().max(1.0) as usize;
        for j in 1..=pieces {
            breaks.push(lo + (hi - lo) * j as f64 / pieces as f64);
        }
    };
    let first = kmax.min(1.0);
    for j in (0..=40).rev() {
        let b = first * 2f64.powi(-j);
        push_span(&mut breaks, b);
    }
    let mut k = first;
    while k < kmax {
        let width = 0.5 * k.min(k.powf(1.0 - theta) / theta);
        let next = (k + width).min(kmax);
        push_span(&mut breaks, next);
        k = next;
        if breaks.len() > 400_000 {
            return Err(Error::Evaluation {
                context: format!("radial Fourier inversion at r={r} needs too many panels"),
                target: DEFAULT_TOLERANCE,
                achieved: f64::INFINITY,
            });
        }
    }
    let f = |k: f64| (-k.powf(theta)).exp() * k.powi(dim as i32 - 1) * radial_wave(dim, k * r);
    let mut total = 0.0;
    let mut err = 0.0;
    for w in breaks.windows(2) {
        let fine = quad::panel(20, w[0], w[1], f);
        let coarse = quad::panel(10, w[0], w[1], f);
        total += fine;
        err += (fine - coarse).abs();
    }
    let om = omega(dim);
    // Cancellation floor of the panel sum.
    let floor = 1e-16 * (breaks.len() as f64).sqrt() * (ln_gamma(n / theta).exp() / theta);
    Ok((om * total, om * (err + floor)))
}

/// Γ_θ(r, 1) for θ ∉ {1, 2} with its error estimate.
pub fn radial_profile_value(dim: usize, theta: f64, r: f64, tol: f64) -> Result<(f64, f64)> {
    if theta > 1.0 {
        let s = small_series(dim, theta, r);
        if series_ok(&s, tol) {
            return Ok((s.sum, s.last_term + 1e-16 * s.max_term));
        }
    }
    if r > 0.0 {
        let s = large_series(dim, theta, r);
        if series_ok(&s, tol) {
            return Ok((s.sum, s.last_term + 1e-16 * s.max_term));
        }
    }
    hankel_quadrature(dim, theta, r)
}

fn tabulate(params: FracParams, tol: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let dim = params.dim;
    let theta = params.theta;
    let f0 = small_series_term(dim, theta, 0);
    let f4 = small_series_term(dim, theta, 2).abs();
    let r_min = (1e-10 * f0 / f4).powf(0.25).clamp(1e-12, 1e-3);
    // Push the edge out until the dropped tail terms are below 1e-6 of the leading one.
    let lead = large_series_log_envelope(dim, theta, 1) + (PI * theta / 2.0).sin().abs().ln();
    let mut r_max = 1e4f64;
    for k in 2..=3 {
        let s = (k as f64 * PI * theta / 2.0).sin().abs();
        if s < 1e-14 {
            continue;
        }
        let ratio = (large_series_log_envelope(dim, theta, k) + s.ln() - lead).exp();
        r_max = r_max.max((ratio * 1e6).powf(1.0 / ((k - 1) as f64 * theta)));
    }
    let r_max = r_max.min(1e30);
    let radii = log_radii(r_min, r_max, TABLE_POINTS);
    let samples: Vec<Result<(f64, f64)>> = radii
        .par_iter()
        .map(|&r| radial_profile_value(dim, theta, r, tol))
        .collect();
    let mut values = Vec::with_capacity(radii.len());
    for (r, s) in radii.iter().zip(samples) {
        let (v, e) = s?;
        if !(v > 0.0) || e > tol * v + 1e-13 * f0 {
            return Err(Error::Evaluation {
                context: format!("kernel profile N={dim} theta={theta} at r={r:e} (value {v:e})"),
                target: tol,
                achieved: e / v.abs(),
            });
        }
        values.push(v);
    }
    Ok((radii, values))
}

/// Convenience: Γ_θ(x, t) through the shared profile cache.
pub fn kernel_value(params: FracParams, x: &[f64], t: f64) -> Result<f64> {
    check_time(t)?;
    KernelProfile::shared(params)?.value(x, t)
}

pub fn kernel_bound_ratio(params: FracParams, x: &[f64], t: f64) -> Result<f64> {
    if params.theta == 2.0 {
        return Err(Error::Parameter("the polynomial envelope needs theta < 2".into()));
    }
    KernelProfile::shared(params)?.bound_ratio(x, t)
}

/// S(t)μ on `grid`: density and profile parts by cell-integrated convolution, atoms
/// by direct evaluation at cell centres, background carried as a constant.
pub fn apply_semigroup(profile: &KernelProfile, mu: &InitialMeasure, t: f64, grid: &Grid) -> Result<GridFunction> {
    check_time(t)?;
    if grid.dim() != profile.params.dim || mu.dim() != grid.dim() {
        return Err(Error::Parameter("measure, grid and kernel dimensions differ".into()));
    }
    let mut out = GridFunction::zeros(grid);
    out.time = t;
    out.background = mu.background();
    if let Some(density) = mu.density_on(grid)? {
        let conv = Convolver::new(grid);
        let (spec, warning) = profile.cell_spectrum(&conv, grid, t)?;
        out.values = conv.convolve(&density, &spec);
        out.warnings.extend(warning);
    }
    if !mu.atoms().is_empty() {
        let dim = grid.dim();
        let atoms = mu.atoms();
        let add: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let x = grid.center(i);
                atoms
                    .iter()
                    .map(|a| {
                        let r2: f64 = (0..dim).map(|k| (x[k] - a.location[k]).powi(2)).sum();
                        a.mass * profile.value_radial(r2.sqrt(), t)
                    })
                    .sum::<f64>()
            })
            .collect();
        for (v, a) in out.values.iter_mut().zip(add) {
            *v += a;
        }
        if let Some(w) = profile.resolution_warning(grid.spacing(), t) {
            if !out.warnings.contains(&w) {
                out.warnings.push(w);
            }
        }
    }
    for v in out.values.iter_mut() {
        // FFT round-off can leave tiny negative values.
        *v = v.max(0.0);
    }
    Ok(out)
}

/// sup over the grid of |Γ(·,t) − Γ(·,t−s) ∗ Γ(·,s)|, the convolution by the midpoint rule.
#[derive(Debug, Clone, PartialEq)]
pub struct ChapmanKolmogorovReport {
    pub max_discrepancy: f64,
    pub warnings: Vec<String>,
}

pub fn chapman_kolmogorov_check(profile: &KernelProfile, t: f64, s: f64, grid: &Grid) -> Result<ChapmanKolmogorovReport> {
    if !(s > 0.0 && s < t) {
        return Err(Error::Domain(format!("need 0 < s < t, got s={s}, t={t}")));
    }
    let conv = Convolver::new(grid);
    let dim = grid.dim();
    let samples: Vec<f64> = (0..grid.len())
        .map(|i| profile.value_radial(norm(&grid.center(i), dim), s))
        .collect();
    let spec = profile.point_spectrum(&conv, grid, t - s)?;
    let composed = conv.convolve(&samples, &spec);
    let max_discrepancy = composed
        .iter()
        .enumerate()
        .map(|(i, c)| (profile.value_radial(norm(&grid.center(i), dim), t) - c).abs())
        .fold(0.0, f64::max);
    let h = grid.spacing();
    let warnings = [t - s, s]
        .iter()
        .filter_map(|&tt| profile.resolution_warning(h, tt))
        .collect();
    Ok(ChapmanKolmogorovReport { max_discrepancy, warnings })
}

/// ‖S(t)μ‖_∞ · t^{N/θ} / sup_x μ(B(x, t^{1/θ})).
pub fn smoothing_constant(
    profile: &KernelProfile,
    mu: &InitialMeasure,
    t: f64,
    grid: &Grid,
    search_half_width: f64,
) -> Result<f64> {
    let st = apply_semigroup(profile, mu, t, grid)?;
    let theta = profile.params.theta;
    let n = profile.params.dim as f64;
    let (mass, _) = crate::initial_data::sup_ball_mass(mu, t.powf(1.0 / theta), search_half_width)?;
    if mass <= 0.0 {
        return Ok(0.0);
    }
    Ok(st.sup_norm() * t.powf(n / theta) / mass)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: usize, theta: f64) -> FracParams {
        FracParams::new(n, theta).unwrap()
    }

    #[test]
    fn rejects_bad_params() {
        assert!(FracParams::new(1, 2.5).is_err());
        assert!(FracParams::new(1, 0.0).is_err());
        assert!(FracParams::new(0, 1.0).is_err());
        assert_eq!(params(2, 1.0).p_theta(), 1.5);
    }

    #[test]
    fn closed_form_values() {
        let g = KernelProfile::new(params(1, 2.0)).unwrap();
        assert!((g.value(&[0.0], 1.0).unwrap() - (4.0 * PI).powf(-0.5)).abs() < 1e-15);
        let c = KernelProfile::new(params(1, 1.0)).unwrap();
        assert!((c.value(&[0.0], 1.0).unwrap() - 1.0 / PI).abs() < 1e-14);
        assert!((c.value(&[0.0], 2.0).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-14);
        assert!(c.value(&[0.0], 0.0).is_err());
    }

    #[test]
    fn quadrature_reproduces_cauchy_kernel() {
        // The generic path, forced at θ = 1, against the closed form.
        for dim in 1..=3 {
            for r in [0.0, 0.3, 2.0, 17.0] {
                let (v, _) = hankel_quadrature(dim, 1.0, r).unwrap();
                let exact = closed_form(params(dim, 1.0), r);
                assert!((v - exact).abs() < 1e-9 * exact, "N={dim} r={r}: {v} vs {exact}");
            }
        }
    }

    #[test]
    fn quadrature_reproduces_gaussian() {
        for dim in 1..=3 {
            for r in [0.0, 1.0, 3.0] {
                let (v, _) = hankel_quadrature(dim, 2.0, r).unwrap();
                let exact = closed_form(params(dim, 2.0), r);
                assert!((v - exact).abs() < 1e-10, "N={dim} r={r}: {v} vs {exact}");
            }
        }
    }

    #[test]
    fn series_agree_with_quadrature() {
        for &(dim, theta, r) in &[(1, 1.5, 0.5), (2, 1.5, 1.0), (1, 0.5, 2.0), (3, 0.7, 5.0), (1, 1.5, 30.0)] {
            let (q, _) = hankel_quadrature(dim, theta, r).unwrap();
            let (v, _) = radial_profile_value(dim, theta, r, 1e-8).unwrap();
            assert!((q - v).abs() < 1e-8 * q, "N={dim} θ={theta} r={r}: {q} vs {v}");
        }
    }

    #[test]
    fn origin_value_matches_gamma_formula() {
        let p = params(1, 1.5);
        let k = KernelProfile::new(p).unwrap();
        let expected = puruspe::gamma(1.0 / 1.5) / (1.5 * PI);
        assert!((k.unit_value(0.0) - expected).abs() < 1e-9);
    }

    #[test]
    fn table_roundtrip() {
        let k = KernelProfile::new(params(1, 1.5)).unwrap();
        let text = k.to_table_text();
        assert!(text.starts_with("# N=1,theta=1.5,tolerance=1e-8"));
        let back = KernelProfile::from_table_text(&text).unwrap();
        for r in [0.0, 0.01, 0.7, 3.0, 80.0, 1e5] {
            assert!((back.unit_value(r) - k.unit_value(r)).abs() <= 1e-12 * k.unit_value(r));
        }
        assert!(KernelProfile::from_table_text("# N=1,theta=1.5\nradius,value\n").is_err());
    }

    #[test]
    fn tail_mass_is_half_at_origin() {
        for theta in [0.5, 1.0, 1.5, 2.0] {
            let k = KernelProfile::new(params(1, theta)).unwrap();
            assert!((k.unit_tail_mass_1d(0.0) - 0.5).abs() < 1e-7, "θ={theta}: {}", k.unit_tail_mass_1d(0.0));
        }
    }

    #[test]
    fn cell_masses_sum_to_one() {
        for (dim, theta) in [(1, 1.5), (2, 1.5), (2, 2.0)] {
            let k = KernelProfile::new(params(dim, theta)).unwrap();
            let h = 0.25;
            let m = 60isize;
            let mut total = 0.0;
            if dim == 1 {
                for i in -m..=m {
                    total += k.cell_mass(&[i as f64 * h], h, 0.1);
                }
            } else {
                for i in -m..=m {
                    for j in -m..=m {
                        total += k.cell_mass(&[i as f64 * h, j as f64 * h], h, 0.1);
                    }
                }
            }
            // Remaining tail beyond the box is of order (t^{1/θ}/15)^θ.
            assert!((total - 1.0).abs() < 2e-3, "N={dim} θ={theta}: {total}");
        }
    }
}
