//! Supersolutions built from one semigroup application and a scalar map, and their
//! numerical verification against the solver's own Duhamel operator.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{CriticalScale, PhiMap};
use crate::classifier::is_critical;
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::initial_data::{InitialMeasure, Power};
use crate::mild_solver::{Solver, SolverOutcome};
use crate::nonlinearity::{check_sample, integral_criterion, Nonlinearity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    /// w = R + 2S(t)μ
    A,
    /// w = 2Φ_α^{−1}(S(t)Φ_α(μ + L))
    B,
    /// w = 2[S(t)μ^α]^{1/α} + R
    C,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::A => "A",
            Family::B => "B",
            Family::C => "C",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Family::A),
            "B" => Ok(Family::B),
            "C" => Ok(Family::C),
            _ => Err(Error::Parse(format!("unknown supersolution family '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupersolutionOptions {
    pub r: f64,
    pub l: f64,
    pub alpha: f64,
    /// Exponent d in the monotonicity of τ^{−d}F for family C; None picks one in (p−1, p).
    pub d: Option<f64>,
    /// Top of the sampled hypothesis range.
    pub sample_top: f64,
}

impl Default for SupersolutionOptions {
    fn default() -> Self {
        Self {
            r: 0.0,
            l: 0.0,
            alpha: 2.0,
            d: None,
            sample_top: 1e12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Supersolution {
    pub family: Family,
    pub r: f64,
    pub l: f64,
    pub alpha: f64,
    scale: Option<CriticalScale>,
    /// The measure that gets evolved: μ, Φ_α(μ + L) or μ^α.
    base: InitialMeasure,
    /// Time shift applied when evolving `base` (the solver's mollification for family A).
    offset: f64,
    /// Hypotheses that were sampled, for the report.
    pub checked: Vec<String>,
}

fn fail(cond: &str, msg: String) -> Error {
    Error::Construction(format!("{cond}: {msg}"))
}

/// Nondecreasing on the sample up to relative round-off; returns the first failure.
fn first_decrease(sample: &[f64], g: impl Fn(f64) -> f64) -> Option<f64> {
    let mut prev = f64::NEG_INFINITY;
    for &t in sample {
        let v = g(t);
        if !(v >= prev * (1.0 - 1e-12)) {
            return Some(t);
        }
        prev = v;
    }
    None
}

fn sample_above(r: f64, top: f64) -> Vec<f64> {
    check_sample(r.max(1e-6), top, 50).into_iter().filter(|&t| t > r).collect()
}

/// The data the solver actually evolves from t = 0: μ itself, or S(2/n)μ on the grid
/// when mollification is on.
fn effective_data(solver: &Solver, mu: &InitialMeasure) -> Result<InitialMeasure> {
    match solver.config().mollification {
        None => Ok(mu.clone()),
        Some(n) => Ok(InitialMeasure::from_density(solver.semigroup(mu, 2.0 / n as f64)?)),
    }
}

/// Construct family `family` for data μ and nonlinearity F on the solver's grid,
/// after sampling the family's hypotheses on F.
pub fn build_supersolution(
    family: Family,
    mu: &InitialMeasure,
    f: &Nonlinearity,
    solver: &Solver,
    options: &SupersolutionOptions,
) -> Result<Supersolution> {
    let params = solver.profile().params();
    let o = *options;
    if !(o.r >= 0.0 && o.l >= 0.0) {
        return Err(Error::Parameter("R and L must be nonnegative".into()));
    }
    if mu.dim() != params.dim() {
        return Err(Error::Parameter("measure and kernel dimensions differ".into()));
    }
    let mut checked = Vec::new();
    let grid = solver.grid();
    match family {
        Family::A => {
            let sample = sample_above(o.r, o.sample_top);
            if let Some(t) = first_decrease(&sample, |t| f.eval(t) / t) {
                return Err(fail("(A1)", format!("tau^-1 F(tau) decreases near tau = {t:.4e} above R = {}", o.r)));
            }
            checked.push("(A1)".into());
            if !integral_criterion(f, params)?.finite {
                return Err(fail("(A2)", format!("the integral of tau^(-p_theta-1) F diverges (p_theta = {})", params.p_theta())));
            }
            checked.push("(A2)".into());
            Ok(Supersolution {
                family,
                r: o.r,
                l: 0.0,
                alpha: 1.0,
                scale: None,
                base: mu.clone(),
                offset: solver.config().mollification.map_or(0.0, |n| 2.0 / n as f64),
                checked,
            })
        }
        Family::B => {
            let (p, q) = f
                .descriptor()
                .ok_or_else(|| fail("(B1)", "F = 0 has no growth to compare with".into()))?;
            if !is_critical(p, params.p_theta()) || q < -1.0 {
                return Err(fail("(B1)", format!("needs p = p_theta = {} and q >= -1, got p = {p}, q = {q}", params.p_theta())));
            }
            let scale = CriticalScale::new(q, o.alpha).map_err(|e| fail("(B4)", e.to_string()))?;
            let start = o.r.max(scale.threshold()).max(std::f64::consts::E * 1.01);
            let sample = sample_above(start, o.sample_top);
            let g = |t: f64| if q == 0.0 { 1.0 } else { t.ln().powf(q) };
            // (B1): τ^{−p_θ}F / G stays in a band.
            let ratios: Vec<f64> = sample.iter().map(|&t| f.eval(t) / t.powf(params.p_theta()) / g(t)).collect();
            let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
            if !(lo > 0.0 && hi / lo < 1e3) {
                return Err(fail("(B1)", format!("tau^-p_theta F / G leaves the band [{lo:.3e}, {hi:.3e}]")));
            }
            checked.push("(B1)".into());
            // (B3)(i): H' τ / G stays in a band.
            let dh: Vec<f64> = sample
                .iter()
                .map(|&t| {
                    let e = 1e-6;
                    let d = (scale.big_h(t * (1.0 + e)) - scale.big_h(t * (1.0 - e))) / (2.0 * e);
                    d / g(t)
                })
                .collect();
            let (lo, hi) = dh.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
            if !(lo > 0.0 && hi / lo < 1e3) {
                return Err(fail("(B3)", format!("tau H'(tau) / G leaves the band [{lo:.3e}, {hi:.3e}]")));
            }
            checked.push("(B3)".into());
            // (B4): Φ_α is increasing and convex above the threshold.
            if !scale.threshold().is_finite() {
                return Err(fail("(B4)", "Psi_alpha is never increasing and concave on the sampled range".into()));
            }
            checked.push("(B4)".into());
            // (B5) with η = θ/(2N).
            let eta = params.theta() / (2.0 * params.dim() as f64);
            if let Some(t) = first_decrease(&sample, |t| t.powf(eta) * scale.big_h(t).powf(-o.alpha) * g(t)) {
                return Err(fail("(B5)", format!("tau^eta H^-alpha G decreases near tau = {t:.4e} (eta = {eta})")));
            }
            checked.push("(B5)".into());
            if let Some(t) = first_decrease(&sample, |t| f.eval(t)) {
                return Err(fail("(B1)", format!("F is not increasing near tau = {t:.4e}")));
            }
            let data = effective_data(solver, mu)?.add(&InitialMeasure::constant(mu.dim(), o.l)?)?;
            let mapped = data.map_cell_averages(grid, &PhiMap(scale))?;
            Ok(Supersolution {
                family,
                r: start,
                l: o.l,
                alpha: o.alpha,
                scale: Some(scale),
                base: InitialMeasure::from_density(mapped),
                offset: 0.0,
                checked,
            })
        }
        Family::C => {
            let (p, q) = f
                .descriptor()
                .ok_or_else(|| fail("(C1)", "F = 0 is not positive".into()))?;
            let bound = params.dim() as f64 * (p - 1.0) / params.theta();
            if !(o.alpha >= 1.0 && o.alpha < bound) {
                return Err(fail(
                    "alpha",
                    format!("alpha = {} is inconsistent: need 1 <= alpha < N(p-1)/theta = {bound}", o.alpha),
                ));
            }
            let d = o.d.unwrap_or(0.5 * ((p - 1.0).max(1.0) + p));
            if !(d > 1.0 && d <= p) {
                return Err(fail("(C1)", format!("d = {d} must lie in (1, p]")));
            }
            let sample = sample_above(o.r, o.sample_top);
            if let Some(t) = first_decrease(&sample, |t| f.eval(t) / t.powf(d)) {
                return Err(fail("(C1)", format!("tau^-d F(tau) decreases near tau = {t:.4e} (d = {d})")));
            }
            if sample.iter().any(|&t| !(f.eval(t) > 0.0)) {
                return Err(fail("(C1)", "F vanishes above R".into()));
            }
            checked.push("(C1)".into());
            let top = sample.iter().copied().filter(|&t| t > std::f64::consts::E).collect::<Vec<_>>();
            let g = |t: f64| t.ln().powf(q);
            let c2 = top.iter().map(|&t| f.eval(t) / t.powf(p) / g(t)).fold(0.0, f64::max);
            if !c2.is_finite() || p < d || p >= d + 1.0 {
                return Err(fail("(C2)", format!("tau^-p F / G unbounded or p = {p} outside [d, d+1)")));
            }
            checked.push("(C2)".into());
            if let Some(t) = first_decrease(&top, |t| -t.powf(-0.5) * g(t)) {
                return Err(fail("(C4)", format!("tau^-1/2 G(tau) increases near tau = {t:.4e}")));
            }
            checked.push("(C4)".into());
            let data = effective_data(solver, mu)?;
            let base = if o.alpha == 1.0 {
                data
            } else {
                InitialMeasure::from_density(data.map_cell_averages(grid, &Power(o.alpha))?)
            };
            Ok(Supersolution {
                family,
                r: o.r,
                l: 0.0,
                alpha: o.alpha,
                scale: None,
                base,
                offset: 0.0,
                checked,
            })
        }
    }
}

impl Supersolution {
    /// w(·, t) on the solver grid: one semigroup application plus the scalar map.
    pub fn evaluate(&self, solver: &Solver, t: f64) -> Result<GridFunction> {
        let s = solver.semigroup(&self.base, t + self.offset)?;
        let map = |v: f64| -> f64 {
            match self.family {
                Family::A => self.r + 2.0 * v,
                Family::B => 2.0 * self.scale.as_ref().unwrap().phi_inverse(v),
                Family::C => 2.0 * v.max(0.0).powf(1.0 / self.alpha) + self.r,
            }
        };
        let mut out = GridFunction::zeros(solver.grid());
        out.time = t;
        out.background = map(s.background);
        out.values = s.values.iter().map(|v| (map(s.background + v) - out.background).max(0.0)).collect();
        out.warnings = s.warnings;
        Ok(out)
    }

    /// w at every solver time level.
    pub fn slices(&self, solver: &Solver) -> Result<Vec<GridFunction>> {
        solver.times().into_par_iter().map(|t| self.evaluate(solver, t)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationRow {
    pub time: f64,
    /// sup(RHS − w) with the solver's own step.
    pub violation: f64,
    /// sup|RHS_M − RHS_{2M}|.
    pub quadrature_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub rows: Vec<VerificationRow>,
    /// Largest violation over every time level, not only the checkpoints.
    pub max_violation: f64,
    pub quadrature_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl VerificationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,max_violation,quadrature_error\n");
        for r in &self.rows {
            out.push_str(&format!("{:.9e},{:.9e},{:.9e}\n", r.time, r.violation, r.quadrature_error));
        }
        out
    }
}

fn sup_diff(a: &GridFunction, b: &GridFunction) -> f64 {
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x + a.background) - (y + b.background))
        .fold(a.background - b.background, f64::max)
}

/// Checks S(t)μ + ∫_0^t S(t−s)F(w(s)) ds ≤ w(t). The left side uses the solver's own
/// time rule at every level; the 2M recomputation at the checkpoints gives the
/// quadrature error, and the check passes when the violation is at most twice that.
pub fn verify_supersolution(
    w: &Supersolution,
    mu: &InitialMeasure,
    f: &Nonlinearity,
    solver: &Solver,
    checkpoints: &[usize],
) -> Result<VerificationReport> {
    let ws = w.slices(solver)?;
    verify_slices(&ws, mu, f, solver, checkpoints)
}

pub fn verify_slices(
    ws: &[GridFunction],
    mu: &InitialMeasure,
    f: &Nonlinearity,
    solver: &Solver,
    checkpoints: &[usize],
) -> Result<VerificationReport> {
    let free = solver.free_evolution(mu)?;
    let mut rhs = solver.picard_sweep(ws, &free, f, 0);
    // The sweep keeps slice 0 as given; at t = 0 the right side is the data alone.
    rhs[0] = free[0].clone();
    let fine = solver.duhamel_rhs_fine(mu, f, ws, checkpoints)?;
    let times = solver.times();
    let violation: Vec<f64> = rhs.iter().zip(ws).map(|(r, w)| sup_diff(r, w)).collect();
    let rows: Vec<VerificationRow> = checkpoints
        .iter()
        .zip(&fine)
        .map(|(&j, r2)| VerificationRow {
            time: times[j],
            violation: violation[j],
            quadrature_error: sup_diff(&rhs[j], r2).max(sup_diff(r2, &rhs[j])),
        })
        .collect();
    let max_violation = violation.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let quadrature_error = rows.iter().map(|r| r.quadrature_error).fold(0.0, f64::max);
    let tolerance = 2.0 * quadrature_error;
    Ok(VerificationReport {
        rows,
        max_violation,
        quadrature_error,
        tolerance,
        passed: max_violation <= tolerance,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominationReport {
    /// sup over slices and grid of u − w.
    pub max_excess: f64,
    pub time_index: usize,
    pub tolerance: f64,
    pub holds: bool,
}

/// u ≤ w slice by slice on the common grid, up to `tolerance`.
pub fn domination_check(outcome: &SolverOutcome, w: &[GridFunction], tolerance: f64) -> Result<DominationReport> {
    let SolverOutcome::Converged(traj) = outcome else {
        return Err(Error::Precondition(format!("domination needs a converged solve, got {}", outcome.verdict())));
    };
    if traj.slices.len() != w.len() {
        return Err(Error::Parameter("trajectory and supersolution have different time levels".into()));
    }
    let (mut worst, mut at) = (f64::NEG_INFINITY, 0);
    for (j, (u, ww)) in traj.slices.iter().zip(w).enumerate() {
        let e = sup_diff(u, ww);
        if e > worst {
            worst = e;
            at = j;
        }
    }
    Ok(DominationReport {
        max_excess: worst,
        time_index: at,
        tolerance,
        holds: worst <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frac_kernel::{FracParams, KernelProfile};
    use crate::initial_data::SingularProfile;
    use crate::mild_solver::SolverConfig;

    fn solver(n: usize, theta: f64, horizon: f64, steps: usize, moll: Option<usize>) -> Solver {
        let prof = KernelProfile::shared(FracParams::new(n, theta).unwrap()).unwrap();
        let cfg = SolverConfig {
            half_width: 8.0,
            points: 128,
            horizon,
            steps,
            mollification: moll,
            ..SolverConfig::default()
        };
        Solver::new(prof, cfg).unwrap()
    }

    #[test]
    fn family_a_dirac_at_origin() {
        let s = solver(1, 2.0, 0.01, 8, Some(16));
        let mu = InitialMeasure::dirac(1, &[0.0], 0.1).unwrap();
        let f = Nonlinearity::prototype(2.0, 0.0, 1.0).unwrap();
        let opts = SupersolutionOptions { r: 0.5, ..Default::default() };
        let w = build_supersolution(Family::A, &mu, &f, &s, &opts).unwrap();
        let t = 0.005;
        let g = w.evaluate(&s, t).unwrap();
        let i = s.grid().locate(0.0).unwrap();
        let gamma0 = s.profile().value_radial(0.0, t + 2.0 / 16.0);
        let got = g.values[i] + g.background;
        let x = s.grid().center(i)[0];
        let expect = 0.5 + 2.0 * 0.1 * s.profile().value_radial(x.abs(), t + 0.125);
        assert!((got - expect).abs() < 1e-9 * expect, "{got} vs {expect}");
        assert!(got <= 0.5 + 0.2 * gamma0 + 1e-12);
    }

    #[test]
    fn family_c_constant_data() {
        let s = solver(1, 2.0, 0.01, 8, None);
        let mu = InitialMeasure::constant(1, 3.0).unwrap();
        let f = Nonlinearity::prototype(7.0, 0.0, 1.0).unwrap();
        let opts = SupersolutionOptions { r: 1.0, alpha: 2.0, ..Default::default() };
        let w = build_supersolution(Family::C, &mu, &f, &s, &opts).unwrap();
        let g = w.evaluate(&s, 0.005).unwrap();
        assert!((g.background - 7.0).abs() < 1e-12);
        assert!(g.values.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn family_c_with_alpha_one_is_family_a() {
        let s = solver(1, 2.0, 0.01, 8, None);
        let prof = SingularProfile::new(FracParams::new(1, 2.0).unwrap(), 7.0, 0.0, 0.2, 1.0, 0.0).unwrap();
        let mu = InitialMeasure::from_profile(prof);
        let f = Nonlinearity::prototype(7.0, 0.0, 1.0).unwrap();
        let a = build_supersolution(Family::A, &mu, &Nonlinearity::prototype(2.0, 0.0, 1.0).unwrap(), &s, &SupersolutionOptions { r: 0.3, ..Default::default() }).unwrap();
        let c = build_supersolution(Family::C, &mu, &f, &s, &SupersolutionOptions { r: 0.3, alpha: 1.0, ..Default::default() }).unwrap();
        for t in [0.0, 0.00125, 0.01] {
            let (ga, gc) = (a.evaluate(&s, t).unwrap(), c.evaluate(&s, t).unwrap());
            assert!(sup_diff(&ga, &gc).abs() < 1e-12 && sup_diff(&gc, &ga).abs() < 1e-12);
        }
    }

    #[test]
    fn hypothesis_failures_name_the_condition() {
        let s = solver(1, 2.0, 0.01, 4, None);
        let mu = InitialMeasure::constant(1, 1.0).unwrap();
        let f = Nonlinearity::prototype(5.0, 0.0, 1.0).unwrap();
        let e = build_supersolution(Family::A, &mu, &f, &s, &SupersolutionOptions::default()).unwrap_err();
        assert!(e.to_string().contains("(A2)"), "{e}");
        let e = build_supersolution(Family::B, &mu, &f, &s, &SupersolutionOptions::default()).unwrap_err();
        assert!(e.to_string().contains("(B1)"), "{e}");
        // α = 2 with θ/(p − 1) = 1/2 puts μ^α outside L¹_loc for the matching profile.
        let e = build_supersolution(Family::C, &mu, &f, &s, &SupersolutionOptions { alpha: 2.0, ..Default::default() }).unwrap_err();
        assert!(matches!(e, Error::Construction(_)), "{e}");
        let sat = Nonlinearity::tabulated(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 1.0], 2.0, 0.0).unwrap();
        let e = build_supersolution(Family::A, &mu, &sat, &s, &SupersolutionOptions::default()).unwrap_err();
        assert!(e.to_string().contains("(A1)"), "{e}");
    }

    #[test]
    fn zero_nonlinearity_verifies_and_dominates() {
        let s = solver(1, 2.0, 0.01, 8, None);
        let prof = SingularProfile::new(FracParams::new(1, 2.0).unwrap(), 5.0, 0.0, 0.5, 1.0, 0.0).unwrap();
        let mu = InitialMeasure::from_profile(prof);
        let w = build_supersolution(Family::A, &mu, &Nonlinearity::zero(), &s, &SupersolutionOptions::default()).unwrap();
        let rep = verify_supersolution(&w, &mu, &Nonlinearity::zero(), &s, &s.default_checkpoints()).unwrap();
        assert!(rep.passed && rep.max_violation <= 0.0);
        let out = s.solve(&mu, &Nonlinearity::zero()).unwrap();
        let ws = w.slices(&s).unwrap();
        assert!(domination_check(&out, &ws, 0.0).unwrap().holds);
    }

    #[test]
    fn zero_data_family_a_is_constant_algebra() {
        // w ≡ R, RHS = T·F(R) on the far field.
        let s = solver(1, 2.0, 0.1, 8, None);
        let mu = InitialMeasure::zero(1);
        let f = Nonlinearity::prototype(2.0, 0.0, 1.0).unwrap();
        let w = build_supersolution(Family::A, &mu, &f, &s, &SupersolutionOptions { r: 1.0, ..Default::default() }).unwrap();
        let rep = verify_supersolution(&w, &mu, &f, &s, &[8]).unwrap();
        assert!((rep.max_violation - (0.1 - 1.0)).abs() < 1e-12, "{rep:?}");
        assert!(rep.passed);
    }

    #[test]
    fn family_b_jensen_and_round_trip() {
        let s = solver(1, 2.0, 0.001, 4, None);
        let p = FracParams::new(1, 2.0).unwrap();
        let prof = SingularProfile::new(p, 3.0, 0.0, 0.05, 0.5, 0.0).unwrap();
        let mu = InitialMeasure::from_profile(prof);
        let f = Nonlinearity::prototype(3.0, 0.0, 1.0).unwrap();
        let w = build_supersolution(Family::B, &mu, &f, &s, &SupersolutionOptions { l: 10.0, alpha: 2.0, ..Default::default() }).unwrap();
        let sc = w.scale.unwrap();
        for y in [1e-3, 1.0, 40.0, 1e6] {
            assert!((sc.phi(sc.phi_inverse(y)) / y - 1.0).abs() < 1e-10);
        }
        for t in [0.00025, 0.001] {
            let wt = w.evaluate(&s, t).unwrap();
            let st = s.semigroup(&mu, t).unwrap();
            for (a, b) in wt.values.iter().zip(&st.values) {
                assert!(a + wt.background >= 2.0 * (b + st.background) * (1.0 - 1e-9));
            }
        }
    }

    #[test]
    fn verification_is_monotone_in_horizon() {
        let mu = InitialMeasure::dirac(1, &[0.0], 0.2).unwrap();
        let f = Nonlinearity::prototype(2.0, 0.0, 1.0).unwrap();
        let opts = SupersolutionOptions { r: 0.5, ..Default::default() };
        let long = solver(1, 2.0, 0.2, 16, Some(16));
        let short = solver(1, 2.0, 0.1, 8, Some(16));
        let v = |s: &Solver| {
            let w = build_supersolution(Family::A, &mu, &f, s, &opts).unwrap();
            verify_supersolution(&w, &mu, &f, s, &[s.config().steps]).unwrap()
        };
        let (rl, rs) = (v(&long), v(&short));
        assert!(rs.max_violation <= rl.max_violation + 1e-15);
    }
}
