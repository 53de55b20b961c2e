//! Solvability regimes, optimal singularities and the necessary / sufficient checks.

use rayon::prelude::*;

use crate::asymptotics::{CriticalScale, PsiPlusMap};
use crate::error::{Error, Result};
use crate::frac_kernel::{ball_volume, FracParams};
use crate::initial_data::{sup_ball_integral, sup_ball_mass, InitialMeasure, Power};
use crate::nonlinearity::{check_d_conditions, integral_criterion, Nonlinearity};
use crate::quad;

/// Solvability regime of (p, q) relative to p_θ = 1 + θ/N.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseLabel {
    Subcritical,
    CriticalIntegrable,
    CriticalBorderline,
    CriticalLog,
    Supercritical,
}

impl CaseLabel {
    pub fn is_singular(self) -> bool {
        matches!(self, Self::CriticalBorderline | Self::CriticalLog | Self::Supercritical)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Subcritical => "subcritical",
            Self::CriticalIntegrable => "critical-integrable",
            Self::CriticalBorderline => "critical-borderline",
            Self::CriticalLog => "critical-log",
            Self::Supercritical => "supercritical",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        [
            Self::Subcritical,
            Self::CriticalIntegrable,
            Self::CriticalBorderline,
            Self::CriticalLog,
            Self::Supercritical,
        ]
        .into_iter()
        .find(|c| c.name() == s)
        .ok_or_else(|| Error::Parse(format!("unknown case '{s}'")))
    }
}

/// Relative tolerance used to decide p = p_θ.
pub fn is_critical(p: f64, p_theta: f64) -> bool {
    (p - p_theta).abs() <= 1e-12 * p.abs().max(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub label: CaseLabel,
    pub params: FracParams,
    pub p: f64,
    pub q: f64,
    pub p_theta: f64,
}

pub fn classify(params: FracParams, p: f64, q: f64) -> Result<Classification> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::Parameter(format!("p = {p} is out of scope (need p > 1)")));
    }
    if !q.is_finite() {
        return Err(Error::Parameter(format!("q = {q} must be finite")));
    }
    let p_theta = params.p_theta();
    let label = if is_critical(p, p_theta) {
        if q < -1.0 {
            CaseLabel::CriticalIntegrable
        } else if q == -1.0 {
            CaseLabel::CriticalBorderline
        } else {
            CaseLabel::CriticalLog
        }
    } else if p < p_theta {
        CaseLabel::Subcritical
    } else {
        CaseLabel::Supercritical
    };
    Ok(Classification {
        label,
        params,
        p,
        q,
        p_theta,
    })
}

/// Exponents (β, γ, δ) of |x|^{−β}|log|x||^{−γ}[log|log|x||]^{−δ} for the singular cases.
pub fn profile_exponents(label: CaseLabel, params: FracParams, p: f64, q: f64) -> Option<(f64, f64, f64)> {
    let n = params.dim() as f64;
    let theta = params.theta();
    match label {
        CaseLabel::CriticalBorderline => Some((n, 1.0, n / theta + 1.0)),
        CaseLabel::CriticalLog => Some((n, n * (q + 1.0) / theta + 1.0, 0.0)),
        CaseLabel::Supercritical => Some((theta / (p - 1.0), q / (p - 1.0), 0.0)),
        _ => None,
    }
}

/// Small rationals print as a/b, everything else as a short decimal.
fn fmt_number(x: f64) -> String {
    for den in 1..=12u32 {
        let num = x * den as f64;
        if (num - num.round()).abs() < 1e-9 * num.abs().max(1.0) {
            let num = num.round() as i64;
            return if den == 1 { format!("{num}") } else { format!("{num}/{den}") };
        }
    }
    format!("{:.6}", x).trim_end_matches('0').to_string()
}

impl Classification {
    pub fn profile_exponents(&self) -> Option<(f64, f64, f64)> {
        profile_exponents(self.label, self.params, self.p, self.q)
    }

    /// The optimal singularity as text, e.g. "|x|^{-1/2}".
    pub fn profile_formula(&self) -> Option<String> {
        let (beta, gamma, delta) = self.profile_exponents()?;
        let mut s = format!("|x|^{{{}}}", fmt_number(-beta));
        if gamma != 0.0 {
            s.push_str(&format!("|log|x||^{{{}}}", fmt_number(-gamma)));
        }
        if delta != 0.0 {
            s.push_str(&format!("[log|log|x||]^{{{}}}", fmt_number(-delta)));
        }
        Some(s)
    }

    /// Which sufficient check matches this case.
    pub fn sufficient_condition(&self) -> ConditionId {
        match self.label {
            CaseLabel::Subcritical | CaseLabel::CriticalIntegrable => ConditionId::SufficientA,
            CaseLabel::CriticalBorderline | CaseLabel::CriticalLog => ConditionId::SufficientB,
            CaseLabel::Supercritical => ConditionId::SufficientC,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConditionId {
    NecessaryIntegral,
    NecessaryEnvelope,
    SufficientA,
    SufficientB,
    SufficientC,
    DiracIntegral,
}

impl ConditionId {
    pub fn name(self) -> &'static str {
        match self {
            Self::NecessaryIntegral => "necessary-integral",
            Self::NecessaryEnvelope => "necessary-envelope",
            Self::SufficientA => "sufficient-a",
            Self::SufficientB => "sufficient-b",
            Self::SufficientC => "sufficient-c",
            Self::DiracIntegral => "dirac-integral",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionRow {
    /// Ball radius, or τ for conditions on F alone.
    pub sigma: f64,
    pub ratio: f64,
    pub witness: [f64; 3],
}

/// Outcome of one check. `constant` is the calibration the ratios were measured against.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub condition: ConditionId,
    pub constant: f64,
    pub worst_ratio: f64,
    pub witness: [f64; 3],
    pub witness_sigma: f64,
    pub satisfied: bool,
    pub rows: Vec<ConditionRow>,
    pub note: String,
}

impl ConditionReport {
    fn from_rows(condition: ConditionId, constant: f64, rows: Vec<ConditionRow>, satisfied: impl Fn(f64) -> bool) -> Self {
        let worst = rows
            .iter()
            .filter(|r| !r.ratio.is_nan())
            .max_by(|a, b| a.ratio.partial_cmp(&b.ratio).unwrap())
            .cloned();
        let (worst_ratio, witness, witness_sigma) = worst.map_or((0.0, [0.0; 3], f64::NAN), |r| (r.ratio, r.witness, r.sigma));
        Self {
            condition,
            constant,
            worst_ratio,
            witness,
            witness_sigma,
            satisfied: satisfied(worst_ratio) && rows.iter().all(|r| !r.ratio.is_nan()),
            rows,
            note: String::new(),
        }
    }

    /// `condition,sigma,ratio,witness` rows; the witness point is `;`-separated.
    pub fn to_csv(&self, dim: usize) -> String {
        let mut out = String::from("condition,sigma,ratio,witness\n");
        for r in &self.rows {
            let w: Vec<String> = r.witness[..dim].iter().map(|v| format!("{v:.6e}")).collect();
            out.push_str(&format!("{},{:.6e},{:.9e},{}\n", self.condition.name(), r.sigma, r.ratio, w.join(";")));
        }
        out
    }
}

/// Dyadic radii 2^{−k}, k = lo..=hi.
pub fn dyadic_sigmas(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|k| 2f64.powi(-k)).collect()
}

/// ∫_a^b s^{−p_θ−1} f(s) ds on geometric panels.
pub fn weighted_integral(f: &dyn Fn(f64) -> f64, p_theta: f64, a: f64, b: f64) -> f64 {
    if !(b > a) || !(a > 0.0) {
        return 0.0;
    }
    let (va, vb) = (a.ln(), b.ln());
    let breaks = quad::uniform_breaks(va, vb, std::f64::consts::LN_10 / 8.0);
    quad::panels(12, &breaks, |v| {
        let s = v.exp();
        (-p_theta * v).exp() * f(s)
    })
}

/// Integral necessary condition at each (z, σ): the weighted integral of f between
/// γ^{−1}T^{−N/θ}m and γ^{−1}σ^{−N}m against γ^{p_θ+1}m^{−θ/N}, m = μ(B(z, σ)).
pub fn necessary_check(
    mu: &InitialMeasure,
    f: &(dyn Fn(f64) -> f64 + Sync),
    params: FracParams,
    horizon: f64,
    gamma: f64,
    samples: &[([f64; 3], f64)],
) -> Result<ConditionReport> {
    if !(gamma >= 1.0) {
        return Err(Error::Parameter(format!("gamma = {gamma} must be at least 1")));
    }
    if !(horizon > 0.0) {
        return Err(Error::Parameter("T must be positive".into()));
    }
    let n = params.dim() as f64;
    let theta = params.theta();
    let pt = params.p_theta();
    let rows: Vec<ConditionRow> = samples
        .par_iter()
        .map(|&(z, sigma)| {
            let m = mu.ball_mass(&z[..params.dim()], sigma)?;
            let lo = horizon.powf(-n / theta) * m / gamma;
            let hi = sigma.powf(-n) * m / gamma;
            let ratio = if m <= 0.0 || hi <= lo {
                0.0
            } else {
                weighted_integral(f, pt, lo, hi) / (gamma.powf(pt + 1.0) * m.powf(-theta / n))
            };
            Ok(ConditionRow { sigma, ratio, witness: z })
        })
        .collect::<Result<_>>()?;
    let mut rep = ConditionReport::from_rows(ConditionId::NecessaryIntegral, gamma, rows, |w| w <= 1.0);
    rep.note = if rep.satisfied {
        format!("satisfied at gamma = {gamma}")
    } else {
        format!("violated at calibration gamma = {gamma}")
    };
    Ok(rep)
}

/// The case envelope of the ball-mass necessary condition at radius σ < 1.
pub fn envelope(params: FracParams, p: f64, q: f64, sigma: f64) -> Result<f64> {
    let c = classify(params, p, q)?;
    let n = params.dim() as f64;
    let theta = params.theta();
    let ls = sigma.ln().abs();
    Ok(if !is_critical(p, c.p_theta) {
        sigma.powf(n - theta / (p - 1.0)) * ls.powf(-q / (p - 1.0))
    } else if q != -1.0 {
        ls.powf(-n * (q + 1.0) / theta)
    } else {
        ls.ln().powf(-n / theta)
    })
}

/// Growth allowed of the envelope quotient from the largest to the smallest σ before it
/// is reported as unbounded.
pub const ENVELOPE_GROWTH_LIMIT: f64 = 1.25;

/// sup_z μ(B(z, σ)) divided by the case envelope over a σ grid.
///
/// The constant reported is the largest quotient (the fitted C). `satisfied` means the
/// quotient does not grow by more than `ENVELOPE_GROWTH_LIMIT` from the largest σ to
/// the smallest.
pub fn necessary_envelope(
    mu: &InitialMeasure,
    params: FracParams,
    p: f64,
    q: f64,
    sigmas: &[f64],
    search_half_width: f64,
) -> Result<ConditionReport> {
    if sigmas.iter().any(|&s| !(s > 0.0 && s < 1.0)) {
        return Err(Error::Domain("envelope radii must lie in (0, 1)".into()));
    }
    let rows: Vec<ConditionRow> = sigmas
        .iter()
        .map(|&sigma| {
            let (m, z) = sup_ball_mass(mu, sigma, search_half_width)?;
            Ok(ConditionRow {
                sigma,
                ratio: m / envelope(params, p, q, sigma)?,
                witness: z,
            })
        })
        .collect::<Result<_>>()?;
    let growth = envelope_growth(&rows);
    let fitted = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let mut rep = ConditionReport::from_rows(ConditionId::NecessaryEnvelope, fitted, rows, |_| growth <= ENVELOPE_GROWTH_LIMIT);
    rep.note = format!("quotient growth from largest to smallest sigma: {growth:.6}");
    Ok(rep)
}

/// Quotient at the smallest σ over the quotient at the largest σ.
pub fn envelope_growth(rows: &[ConditionRow]) -> f64 {
    let largest = rows.iter().max_by(|a, b| a.sigma.partial_cmp(&b.sigma).unwrap());
    let smallest = rows.iter().min_by(|a, b| a.sigma.partial_cmp(&b.sigma).unwrap());
    match (largest, smallest) {
        (Some(a), Some(b)) if a.ratio > 0.0 => b.ratio / a.ratio,
        (Some(_), Some(b)) if b.ratio > 0.0 => f64::INFINITY,
        _ => 1.0,
    }
}

/// Whether the quotient is nondecreasing as σ decreases, to relative tolerance `tol`.
pub fn quotient_nondecreasing(rows: &[ConditionRow], tol: f64) -> bool {
    let mut sorted: Vec<&ConditionRow> = rows.iter().collect();
    sorted.sort_by(|a, b| b.sigma.partial_cmp(&a.sigma).unwrap());
    sorted.windows(2).all(|w| w[1].ratio >= w[0].ratio * (1.0 - tol))
}

/// sup_z μ(B(z, 1)); finite for every measure the crate represents.
pub fn sufficient_check_a(mu: &InitialMeasure, search_half_width: f64) -> Result<ConditionReport> {
    let (m, z) = sup_ball_mass(mu, 1.0, search_half_width)?;
    let rows = vec![ConditionRow {
        sigma: 1.0,
        ratio: m,
        witness: z,
    }];
    let mut rep = ConditionReport::from_rows(ConditionId::SufficientA, f64::INFINITY, rows, f64::is_finite);
    rep.note = format!("sup_z mu(B(z,1)) = {m:.9e}");
    Ok(rep)
}

/// sup_x ψ_α^−[⨍_{B(x,σ)} ψ_α^+(μ)] against εσ^{−N}h(σ^{−1})^{−N/θ}.
pub fn sufficient_check_b(
    mu: &InitialMeasure,
    params: FracParams,
    q: f64,
    alpha: f64,
    epsilon: f64,
    sigmas: &[f64],
    search_half_width: f64,
) -> Result<ConditionReport> {
    if !(epsilon > 0.0) {
        return Err(Error::Parameter("epsilon must be positive".into()));
    }
    let scale = CriticalScale::new(q, alpha)?;
    let n = params.dim() as f64;
    let theta = params.theta();
    let map = PsiPlusMap(scale);
    let rows: Vec<ConditionRow> = sigmas
        .iter()
        .map(|&sigma| {
            let vol = ball_volume(params.dim(), sigma);
            let (lhs, z) = if !mu.atoms().is_empty() {
                (f64::INFINITY, mu.atoms()[0].location)
            } else {
                let (integral, z) = sup_ball_integral(mu, sigma, search_half_width, &map)?;
                (scale.psi_minus(integral / vol), z)
            };
            let rhs = epsilon * sigma.powf(-n) * scale.h(1.0 / sigma).powf(-n / theta);
            Ok(ConditionRow {
                sigma,
                ratio: lhs / rhs,
                witness: z,
            })
        })
        .collect::<Result<_>>()?;
    let mut rep = ConditionReport::from_rows(ConditionId::SufficientB, epsilon, rows, |w| w <= 1.0);
    rep.note = format!("alpha = {alpha}, epsilon = {epsilon}");
    Ok(rep)
}

/// An admissible α for the supercritical check: midway between 1 and N(p−1)/θ.
pub fn suggested_alpha(params: FracParams, p: f64) -> f64 {
    0.5 * (1.0 + params.dim() as f64 * (p - 1.0) / params.theta())
}

/// [⨍_{B(x,σ)} μ^α]^{1/α} against εσ^{−θ/(p−1)}|log σ|^{−q/(p−1)}.
pub fn sufficient_check_c(
    mu: &InitialMeasure,
    params: FracParams,
    p: f64,
    q: f64,
    alpha: f64,
    epsilon: f64,
    sigmas: &[f64],
    search_half_width: f64,
) -> Result<ConditionReport> {
    let n = params.dim() as f64;
    let theta = params.theta();
    if !(p > params.p_theta()) || is_critical(p, params.p_theta()) {
        return Err(Error::Parameter(format!("check C needs p > p_theta = {}", params.p_theta())));
    }
    if !(alpha > 1.0 && alpha * theta / (p - 1.0) < n) {
        return Err(Error::Parameter(format!(
            "alpha = {alpha} is not admissible: need 1 < alpha < N(p-1)/theta = {}; try alpha = {}",
            n * (p - 1.0) / theta,
            suggested_alpha(params, p)
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Parameter("epsilon must be positive".into()));
    }
    let map = Power(alpha);
    let rows: Vec<ConditionRow> = sigmas
        .iter()
        .map(|&sigma| {
            let vol = ball_volume(params.dim(), sigma);
            let (lhs, z) = if !mu.atoms().is_empty() {
                (f64::INFINITY, mu.atoms()[0].location)
            } else {
                let (integral, z) = sup_ball_integral(mu, sigma, search_half_width, &map)?;
                ((integral / vol).powf(1.0 / alpha), z)
            };
            let rhs = epsilon * sigma.powf(-theta / (p - 1.0)) * sigma.ln().abs().powf(-q / (p - 1.0));
            Ok(ConditionRow {
                sigma,
                ratio: lhs / rhs,
                witness: z,
            })
        })
        .collect::<Result<_>>()?;
    let mut rep = ConditionReport::from_rows(ConditionId::SufficientC, epsilon, rows, |w| w <= 1.0);
    rep.note = format!("alpha = {alpha}, epsilon = {epsilon}");
    Ok(rep)
}

/// Whether data δ_y admits a local solution: the F-integral test, after sampling
/// the convexity and growth hypotheses on F.
pub fn dirac_solvable(f: &Nonlinearity, params: FracParams) -> Result<bool> {
    let (p, _) = f
        .descriptor()
        .ok_or_else(|| Error::Precondition("F = 0 has no descriptor; Dirac data is trivially solvable".into()))?;
    let d = 0.5 * (1.0 + p);
    let ok = [1.0, 10.0, 100.0, 1e3, 1e4].iter().any(|&r| check_d_conditions(f, r, d).is_ok());
    if !ok {
        return Err(Error::Precondition(format!(
            "F fails the sampled convexity / growth hypotheses with d = {d} for every R tried"
        )));
    }
    Ok(integral_criterion(f, params)?.finite)
}

pub fn dirac_report(f: &Nonlinearity, params: FracParams) -> Result<ConditionReport> {
    let solvable = dirac_solvable(f, params)?;
    let v = integral_criterion(f, params)?;
    let rows = vec![ConditionRow {
        sigma: v.cutoff,
        ratio: v.partial,
        witness: [0.0; 3],
    }];
    let mut rep = ConditionReport::from_rows(ConditionId::DiracIntegral, f64::NAN, rows, |_| solvable);
    rep.note = if solvable { "solvable".into() } else { "unsolvable".into() };
    Ok(rep)
}
