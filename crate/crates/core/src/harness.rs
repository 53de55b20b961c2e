//! Experiment configuration, the command implementations behind the CLI, and result files.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{
    classify, dirac_report, dyadic_sigmas, necessary_envelope, sufficient_check_a, sufficient_check_b, sufficient_check_c,
    suggested_alpha, CaseLabel, ConditionReport,
};
use crate::error::{Error, Result};
use crate::frac_kernel::{chapman_kolmogorov_check, kernel_bound_ratio, FracParams, KernelProfile};
use crate::grid::Grid;
use crate::initial_data::{AtomSpec, InitialMeasure, SingularProfile};
use crate::mild_solver::{self, Solver, SolverConfig, SolverOutcome};
use crate::nonlinearity::{search_majorant, Nonlinearity};
use crate::supersolution::{build_supersolution, domination_check, verify_supersolution, Family, SupersolutionOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;
pub const EXIT_CONSTRUCTION: i32 = 4;

/// Exit code for an error that escaped a command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Domain(_) | Error::Parameter(_) | Error::Parse(_) | Error::Io(_) => EXIT_USAGE,
        Error::Construction(_) | Error::Precondition(_) | Error::Evaluation { .. } => EXIT_CONSTRUCTION,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemBlock {
    #[serde(rename = "N")]
    pub n: usize,
    pub theta: f64,
    pub p: f64,
    pub q: f64,
    /// L in F(τ) = τ^p [log(L + τ)]^q.
    #[serde(rename = "L")]
    pub l: f64,
    /// "prototype" or "zero".
    pub nonlinearity: String,
}

impl Default for ProblemBlock {
    fn default() -> Self {
        Self {
            n: 1,
            theta: 2.0,
            p: 5.0,
            q: 0.0,
            l: 1.0,
            nonlinearity: "prototype".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataBlock {
    /// "profile", "dirac", "constant", "zero" or "file".
    pub kind: String,
    pub coefficient: f64,
    /// Cutoff radius R of a profile.
    pub cutoff: f64,
    /// Constant K added everywhere.
    pub background: f64,
    pub atoms: Vec<AtomSpec>,
    /// Measure file for kind = "file".
    pub file: Option<String>,
}

impl Default for DataBlock {
    fn default() -> Self {
        Self {
            kind: "profile".into(),
            coefficient: 1.0,
            cutoff: 1.0,
            background: 0.0,
            atoms: Vec::new(),
            file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepBlock {
    pub c_lo: f64,
    pub c_hi: f64,
    /// Stop once c⁺/c⁻ ≤ 1 + tolerance.
    pub tolerance: f64,
    pub workers: Option<usize>,
}

impl Default for SweepBlock {
    fn default() -> Self {
        Self {
            c_lo: 0.1,
            c_hi: 3.0,
            tolerance: 0.1,
            workers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: Option<String>,
    pub csv: bool,
    pub svg: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            dir: None,
            csv: true,
            svg: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupersolutionBlock {
    pub family: String,
    #[serde(flatten)]
    pub options: SupersolutionOptions,
}

impl Default for SupersolutionBlock {
    fn default() -> Self {
        Self {
            family: "A".into(),
            options: SupersolutionOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionsBlock {
    pub gamma: f64,
    pub horizon: f64,
    pub epsilon: f64,
    /// Exponent for the sufficient checks; each check picks an admissible one when unset.
    pub alpha: Option<f64>,
    pub k_lo: i32,
    pub k_hi: i32,
    pub search_half_width: f64,
}

impl Default for ConditionsBlock {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            horizon: 1.0,
            epsilon: 1.0,
            alpha: None,
            k_lo: 3,
            k_hi: 12,
            search_half_width: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemBlock,
    pub data: DataBlock,
    pub solver: SolverConfig,
    pub sweep: SweepBlock,
    pub output: OutputBlock,
    pub supersolution: SupersolutionBlock,
    pub conditions: ConditionsBlock,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the resolved configuration text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn params(&self) -> Result<FracParams> {
        FracParams::new(self.problem.n, self.problem.theta)
    }

    pub fn nonlinearity(&self) -> Result<Nonlinearity> {
        match self.problem.nonlinearity.as_str() {
            "zero" => Ok(Nonlinearity::zero()),
            "prototype" => Nonlinearity::prototype(self.problem.p, self.problem.q, self.problem.l),
            other => Err(Error::Parameter(format!("unknown nonlinearity '{other}'"))),
        }
    }

    /// μ with the configured coefficient.
    pub fn measure(&self) -> Result<InitialMeasure> {
        self.measure_with(self.data.coefficient)
    }

    /// μ with coefficient c in place of the configured one.
    pub fn measure_with(&self, c: f64) -> Result<InitialMeasure> {
        let n = self.problem.n;
        let d = &self.data;
        let mut mu = match d.kind.as_str() {
            "profile" => {
                let prof = SingularProfile::new(self.params()?, self.problem.p, self.problem.q, c, d.cutoff, d.background)?;
                InitialMeasure::from_profile(prof)
            }
            "dirac" => InitialMeasure::dirac(n, &vec![0.0; n], c)?.add(&InitialMeasure::constant(n, d.background)?)?,
            "constant" => InitialMeasure::constant(n, c + d.background)?,
            "zero" => InitialMeasure::constant(n, d.background)?,
            "file" => {
                let path = d.file.as_ref().ok_or_else(|| Error::Parameter("data.kind = \"file\" needs data.file".into()))?;
                let path = Path::new(path);
                let base = path.parent().unwrap_or(Path::new("."));
                InitialMeasure::from_text(&fs::read_to_string(path)?, base)?.scaled(c)?
            }
            other => return Err(Error::Parameter(format!("unknown data kind '{other}'"))),
        };
        for a in &d.atoms {
            mu = mu.with_atom(&a.location, a.mass)?;
        }
        if mu.dim() != n {
            return Err(Error::Parameter(format!("measure has dimension {}, problem has N = {n}", mu.dim())));
        }
        Ok(mu)
    }

    /// Cross-field consistency.
    pub fn validate(&self) -> Result<()> {
        let params = self.params()?;
        if self.problem.nonlinearity == "prototype" {
            classify(params, self.problem.p, self.problem.q)?;
        }
        self.nonlinearity()?;
        self.solver.validate()?;
        let s = &self.sweep;
        if !(s.c_lo > 0.0 && s.c_hi > s.c_lo) {
            return Err(Error::Parameter(format!("sweep range [{}, {}] must satisfy 0 < c_lo < c_hi", s.c_lo, s.c_hi)));
        }
        if !(s.tolerance > 0.0) {
            return Err(Error::Parameter("sweep tolerance must be positive".into()));
        }
        if let Some(alpha) = self.conditions.alpha {
            let c = classify(params, self.problem.p, self.problem.q)?;
            let bound = params.dim() as f64 * (self.problem.p - 1.0) / params.theta();
            if c.label == CaseLabel::Supercritical && !(alpha > 1.0 && alpha < bound) {
                return Err(Error::Parameter(format!(
                    "alpha = {alpha} is not admissible for the supercritical check: need 1 < alpha < {bound}; try {}",
                    suggested_alpha(params, self.problem.p)
                )));
            }
        }
        Ok(())
    }

    pub fn solver_for(&self, steps: Option<usize>) -> Result<Solver> {
        let profile = KernelProfile::shared(self.params()?)?;
        let mut cfg = self.solver.clone();
        if let Some(m) = steps {
            cfg.steps = m;
        }
        Solver::new(profile, cfg)
    }
}

/// Where results go. Every CSV starts with a `#` line carrying the config hash.
#[derive(Debug, Clone)]
pub struct Output {
    pub dir: PathBuf,
    pub hash: String,
    pub csv: bool,
    pub svg: bool,
}

impl Output {
    pub fn new(cfg: &ExperimentConfig, dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            hash: cfg.hash(),
            csv: cfg.output.csv,
            svg: cfg.output.svg,
        })
    }

    /// `body` starts with the column header.
    pub fn csv(&self, name: &str, body: &str) -> Result<Option<PathBuf>> {
        if !self.csv {
            return Ok(None);
        }
        let path = self.dir.join(name);
        fs::write(&path, format!("# config-sha256={}\n{body}", self.hash))?;
        Ok(Some(path))
    }

    pub fn text(&self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, body)?;
        Ok(path)
    }

    pub fn svg_plot(&self, name: &str, title: &str, xs: &[f64], ys: &[f64], log_y: bool) -> Result<()> {
        if self.svg {
            self.text(name, &svg_polyline(title, xs, ys, log_y))?;
        }
        Ok(())
    }
}

/// A bare line plot, enough to eyeball a run.
pub fn svg_polyline(title: &str, xs: &[f64], ys: &[f64], log_y: bool) -> String {
    let (w, h, m) = (640.0, 400.0, 40.0);
    let ty = |y: f64| if log_y { y.max(1e-300).log10() } else { y };
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).filter(|(x, y)| x.is_finite() && ty(**y).is_finite()).map(|(&x, &y)| (x, ty(y))).collect();
    let (x0, x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.0), a.1.max(p.0)));
    let (y0, y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.1), a.1.max(p.1)));
    let sx = if x1 > x0 { (w - 2.0 * m) / (x1 - x0) } else { 0.0 };
    let sy = if y1 > y0 { (h - 2.0 * m) / (y1 - y0) } else { 0.0 };
    let line: Vec<String> = pts
        .iter()
        .map(|(x, y)| format!("{:.2},{:.2}", m + (x - x0) * sx, h - m - (y - y0) * sy))
        .collect();
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n<text x=\"{m}\" y=\"24\" font-size=\"14\">{title}</text>\n<rect x=\"{m}\" y=\"{m}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>\n<polyline fill=\"none\" stroke=\"#1f5fa8\" points=\"{}\"/>\n</svg>\n",
        w - 2.0 * m,
        h - 2.0 * m,
        line.join(" ")
    )
}

// Kernel self-check.

#[derive(Debug, Clone, PartialEq)]
pub struct KernelCheck {
    pub normalization_error: f64,
    pub chapman_kolmogorov: Option<f64>,
    /// (min, max) of the two-sided bound ratio; None at θ = 2.
    pub bound_band: Option<(f64, f64)>,
    pub warnings: Vec<String>,
}

impl KernelCheck {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("check,value\n");
        s.push_str(&format!("normalization_error,{:.6e}\n", self.normalization_error));
        if let Some(c) = self.chapman_kolmogorov {
            s.push_str(&format!("chapman_kolmogorov,{c:.6e}\n"));
        }
        if let Some((lo, hi)) = self.bound_band {
            s.push_str(&format!("bound_ratio_min,{lo:.6e}\nbound_ratio_max,{hi:.6e}\nbound_band_width,{:.6e}\n", hi / lo));
        }
        s
    }
}

pub fn kernel_check(profile: &KernelProfile) -> Result<KernelCheck> {
    let params = profile.params();
    let normalization_error = (profile.normalization() - 1.0).abs();
    let (ck, warnings) = if params.dim() == 1 {
        let grid = Grid::new(1, 64.0, 4096)?;
        let r = chapman_kolmogorov_check(profile, 2.0, 1.0, &grid)?;
        (Some(r.max_discrepancy), r.warnings)
    } else {
        let grid = Grid::new(params.dim(), 16.0, 128)?;
        let r = chapman_kolmogorov_check(profile, 2.0, 1.0, &grid)?;
        (Some(r.max_discrepancy), r.warnings)
    };
    let bound_band = if params.theta() < 2.0 {
        let radii: Vec<f64> = (0..=400).map(|i| if i == 0 { 0.0 } else { 1e-3 * 10f64.powf(5.0 * i as f64 / 400.0) }).collect();
        let times: Vec<f64> = (0..=20).map(|k| 10f64.powf(-2.0 + 2.0 * k as f64 / 20.0)).collect();
        let ratios: Vec<f64> = times
            .par_iter()
            .flat_map_iter(|&t| radii.iter().map(move |&r| (r, t)))
            .map(|(r, t)| {
                let mut x = vec![0.0; params.dim()];
                x[0] = r;
                kernel_bound_ratio(params, &x, t)
            })
            .collect::<Result<_>>()?;
        Some(ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r))))
    } else {
        None
    };
    Ok(KernelCheck {
        normalization_error,
        chapman_kolmogorov: ck,
        bound_band,
        warnings,
    })
}

// Sweep.

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub c: f64,
    pub verdict: &'static str,
    pub final_sup: f64,
    pub sweeps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Largest coefficient seen to converge.
    pub lo: f64,
    /// Smallest coefficient seen to diverge.
    pub hi: f64,
    pub points: Vec<SweepPoint>,
    /// Set when the verdicts were not monotone in c; bisection stops there.
    pub anomaly: Option<String>,
}

impl SweepResult {
    pub fn ratio(&self) -> f64 {
        self.hi / self.lo
    }

    /// Every tested c ≤ lo converged and every c ≥ hi diverged.
    pub fn is_monotone(&self) -> bool {
        self.points.iter().all(|p| {
            if p.c <= self.lo {
                p.verdict == "converged"
            } else if p.c >= self.hi {
                p.verdict == "diverged"
            } else {
                true
            }
        })
    }

    pub fn to_csv(&self) -> String {
        let mut pts = self.points.clone();
        pts.sort_by(|a, b| a.c.partial_cmp(&b.c).unwrap());
        let mut s = String::from("c,verdict,final_sup,sweeps\n");
        for p in pts {
            s.push_str(&format!("{:.9e},{},{:.6e},{}\n", p.c, p.verdict, p.final_sup, p.sweeps));
        }
        s
    }
}

fn sweep_point(solver: &Solver, cfg: &ExperimentConfig, f: &Nonlinearity, c: f64) -> Result<SweepPoint> {
    let mu = cfg.measure_with(c)?;
    let out = solver.solve(&mu, f)?;
    let t = out.trajectory();
    Ok(SweepPoint {
        c,
        verdict: out.verdict(),
        final_sup: t.final_slice().sup_norm(),
        sweeps: t.sweeps,
    })
}

/// Bisects the coefficient of μ = c·μ₁ between a converging c_lo and a diverging c_hi.
/// Each round tests `workers` interior points at once, geometrically spaced.
pub fn sweep(cfg: &ExperimentConfig, workers: usize) -> Result<SweepResult> {
    cfg.validate()?;
    let f = cfg.nonlinearity()?;
    let solver = cfg.solver_for(None)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Parameter(e.to_string()))?;
    let eval = |cs: Vec<f64>| -> Result<Vec<SweepPoint>> {
        pool.install(|| cs.into_par_iter().map(|c| sweep_point(&solver, cfg, &f, c)).collect())
    };
    let (mut lo, mut hi) = (cfg.sweep.c_lo, cfg.sweep.c_hi);
    let mut points = eval(vec![lo, hi])?;
    if points[0].verdict != "converged" || points[1].verdict != "diverged" {
        return Err(Error::Precondition(format!(
            "no dichotomy in range: c = {lo} {} and c = {hi} {}",
            points[0].verdict, points[1].verdict
        )));
    }
    let mut anomaly = None;
    let k = workers.max(1);
    while hi / lo > 1.0 + cfg.sweep.tolerance {
        let cs: Vec<f64> = (1..=k).map(|i| lo * (hi / lo).powf(i as f64 / (k + 1) as f64)).collect();
        let round = eval(cs)?;
        let first_div = round.iter().position(|p| p.verdict == "diverged").unwrap_or(round.len());
        let bad = round.iter().enumerate().find(|(i, p)| {
            p.verdict == "inconclusive" || (*i < first_div && p.verdict != "converged") || (*i >= first_div && p.verdict != "diverged")
        });
        if let Some((_, p)) = bad {
            anomaly = Some(format!("c = {:.6e} is {} inside the bracket [{lo:.6e}, {hi:.6e}]", p.c, p.verdict));
            points.extend(round);
            break;
        }
        if first_div > 0 {
            lo = round[first_div - 1].c;
        }
        if first_div < round.len() {
            hi = round[first_div].c;
        }
        points.extend(round);
    }
    let res = SweepResult { lo, hi, points, anomaly };
    if res.anomaly.is_none() && !res.is_monotone() {
        return Ok(SweepResult {
            anomaly: Some("verdicts are not monotone in c".into()),
            ..res
        });
    }
    Ok(res)
}

// Commands. Each returns the exit code; errors map through `exit_code`.

pub fn cmd_kernel(cfg: &ExperimentConfig, out: &Output, check: bool) -> Result<i32> {
    let params = cfg.params()?;
    let profile = KernelProfile::shared(params)?;
    out.csv("kernel_table.csv", profile.to_table_text().split_once('\n').map_or("", |x| x.1))?;
    println!("kernel N={} theta={} mode={:?}", params.dim(), params.theta(), profile.mode());
    if check {
        let c = kernel_check(&profile)?;
        out.csv("kernel_check.csv", &c.to_csv())?;
        print!("{}", c.to_csv());
        for w in &c.warnings {
            eprintln!("warning: {w}");
        }
    }
    Ok(EXIT_OK)
}

pub fn cmd_classify(cfg: &ExperimentConfig, out: &Output) -> Result<i32> {
    let c = classify(cfg.params()?, cfg.problem.p, cfg.problem.q)?;
    let formula = c.profile_formula();
    println!("case: {}", c.label.name());
    println!("p_theta: {}", c.p_theta);
    match &formula {
        Some(f) => println!("profile: {f}"),
        None => println!("profile: none (solvable iff sup_z mu(B(z,1)) < infinity)"),
    }
    out.csv(
        "classify.csv",
        &format!("case,p_theta,profile\n{},{},{}\n", c.label.name(), c.p_theta, formula.unwrap_or_default()),
    )?;
    Ok(EXIT_OK)
}

pub fn cmd_profile(cfg: &ExperimentConfig, out: &Output, comparison: bool) -> Result<i32> {
    let params = cfg.params()?;
    let c = classify(params, cfg.problem.p, cfg.problem.q)?;
    let prof = SingularProfile::new(params, cfg.problem.p, cfg.problem.q, cfg.data.coefficient, cfg.data.cutoff, cfg.data.background)?;
    println!("profile: {}", c.profile_formula().unwrap_or_default());
    let mut s = String::from("r,value\n");
    let (lo, hi) = (1e-12f64, cfg.data.cutoff);
    for k in 0..=400 {
        let r = lo * (hi / lo).powf(k as f64 / 400.0);
        s.push_str(&format!("{r:.9e},{:.9e}\n", prof.singular_value(r) + prof.background()));
    }
    out.csv("profile.csv", &s)?;
    if comparison {
        let g = search_majorant(&cfg.nonlinearity()?, None)?;
        println!("majorant: kappa = {:e}, L = {:e}", g.kappa(), g.offset());
        out.csv("majorant.csv", &g.to_csv(&crate::nonlinearity::check_sample(1e-6, 1e12, 20)))?;
    }
    Ok(EXIT_OK)
}

/// Second divergence cap used to confirm a blow-up verdict.
pub const SENSITIVITY_CAP: f64 = 1e10;

pub fn cmd_solve(cfg: &ExperimentConfig, out: &Output) -> Result<i32> {
    cfg.validate()?;
    let mu = cfg.measure()?;
    let f = cfg.nonlinearity()?;
    let outcome = mild_solver::solve(KernelProfile::shared(cfg.params()?)?, &mu, &f, &cfg.solver)?;
    let traj = outcome.trajectory();
    out.csv("solve_history.csv", &traj.history_csv())?;
    let last = traj.final_slice();
    let mut s = String::from(match cfg.problem.n {
        1 => "x,u\n",
        2 => "x,y,u\n",
        _ => "x,y,z,u\n",
    });
    for i in 0..last.grid.len() {
        let c = last.grid.center(i);
        let coords: Vec<String> = c[..cfg.problem.n].iter().map(|v| format!("{v:.6e}")).collect();
        s.push_str(&format!("{},{:.9e}\n", coords.join(","), last.total(i)));
    }
    out.csv("solve_final.csv", &s)?;
    let sweeps_axis: Vec<f64> = (0..traj.sup_history.len()).map(|k| k as f64).collect();
    out.svg_plot("solve_history.svg", "sup-norm by sweep", &sweeps_axis, &traj.sup_history, true)?;
    let mut summary = format!(
        "verdict = \"{}\"\nsweeps = {}\nfinal_sup = {:e}\nconfig_sha256 = \"{}\"\n",
        outcome.verdict(),
        traj.sweeps,
        last.sup_norm(),
        out.hash
    );
    if let Some(r) = traj.residual {
        summary.push_str(&format!("residual = {r:e}\n"));
    }
    let mut confirmed = true;
    if let SolverOutcome::Diverged { time_index, sweep, sup_norm, .. } = &outcome {
        summary.push_str(&format!("blowup_time_index = {time_index}\nblowup_sweep = {sweep}\nblowup_sup = {sup_norm:e}\n"));
        // Blow-up against the cap is only a signal; see whether a higher cap agrees.
        if cfg.solver.u_max < SENSITIVITY_CAP {
            let raised = SolverConfig { u_max: SENSITIVITY_CAP, ..cfg.solver.clone() };
            let again = mild_solver::solve(KernelProfile::shared(cfg.params()?)?, &mu, &f, &raised)?;
            confirmed = again.is_diverged();
            summary.push_str(&format!("sensitivity_u_max = {SENSITIVITY_CAP:e}\nsensitivity_verdict = \"{}\"\n", again.verdict()));
        }
    }
    summary.push_str(&format!("warnings = {:?}\n", traj.warnings));
    out.text("solve_summary.toml", &summary)?;
    print!("{summary}");
    Ok(match outcome {
        SolverOutcome::Converged(_) => EXIT_OK,
        SolverOutcome::Diverged { .. } if confirmed => EXIT_DIVERGED,
        _ => EXIT_INCONCLUSIVE,
    })
}

pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Output, workers: usize) -> Result<i32> {
    let res = sweep(cfg, workers)?;
    out.csv("sweep.csv", &res.to_csv())?;
    println!("bracket = [{:.6e}, {:.6e}]  ratio = {:.6}", res.lo, res.hi, res.ratio());
    println!("points = {}  monotone = {}", res.points.len(), res.is_monotone());
    if let Some(a) = &res.anomaly {
        println!("anomaly: {a}");
        return Ok(EXIT_INCONCLUSIVE);
    }
    Ok(EXIT_OK)
}

pub fn cmd_verify_super(cfg: &ExperimentConfig, out: &Output) -> Result<i32> {
    cfg.validate()?;
    let family = Family::from_name(&cfg.supersolution.family)?;
    let mu = cfg.measure()?;
    let f = cfg.nonlinearity()?;
    let solver = cfg.solver_for(None)?;
    let w = build_supersolution(family, &mu, &f, &solver, &cfg.supersolution.options)?;
    let rep = verify_supersolution(&w, &mu, &f, &solver, &solver.default_checkpoints())?;
    out.csv("verify_super.csv", &rep.to_csv())?;
    println!("family {} checked {}", family.name(), w.checked.join(" "));
    println!(
        "max violation = {:.6e}  quadrature error = {:.6e}  passed = {}",
        rep.max_violation, rep.quadrature_error, rep.passed
    );
    let outcome = solver.solve(&mu, &f)?;
    let dominated = if outcome.is_converged() {
        let d = domination_check(&outcome, &w.slices(&solver)?, rep.tolerance)?;
        println!("domination: max excess = {:.6e}  holds = {}", d.max_excess, d.holds);
        d.holds
    } else {
        println!("domination: not checked (solve {})", outcome.verdict());
        true
    };
    Ok(if rep.passed && dominated { EXIT_OK } else { EXIT_CONSTRUCTION })
}

pub fn condition_reports(cfg: &ExperimentConfig) -> Result<Vec<ConditionReport>> {
    let params = cfg.params()?;
    let (p, q) = (cfg.problem.p, cfg.problem.q);
    let c = classify(params, p, q)?;
    let mu = cfg.measure()?;
    let k = &cfg.conditions;
    let sigmas = dyadic_sigmas(k.k_lo, k.k_hi);
    let mut reps = vec![necessary_envelope(&mu, params, p, q, &sigmas, k.search_half_width)?];
    let f = cfg.nonlinearity()?;
    let ff = |s: f64| f.eval(s);
    let samples: Vec<([f64; 3], f64)> = sigmas.iter().map(|&s| ([0.0; 3], s)).collect();
    reps.push(crate::classifier::necessary_check(&mu, &ff, params, k.horizon, k.gamma, &samples)?);
    match c.label {
        CaseLabel::Subcritical | CaseLabel::CriticalIntegrable => reps.push(sufficient_check_a(&mu, k.search_half_width)?),
        CaseLabel::CriticalBorderline | CaseLabel::CriticalLog => {
            let alpha = k.alpha.unwrap_or(params.dim() as f64 / (2.0 * params.theta()));
            reps.push(sufficient_check_b(&mu, params, q, alpha, k.epsilon, &sigmas, k.search_half_width)?);
        }
        CaseLabel::Supercritical => {
            let alpha = k.alpha.unwrap_or_else(|| suggested_alpha(params, p));
            reps.push(sufficient_check_c(&mu, params, p, q, alpha, k.epsilon, &sigmas, k.search_half_width)?);
        }
    }
    if !f.is_zero() {
        match dirac_report(&f, params) {
            Ok(r) => reps.push(r),
            Err(Error::Precondition(m)) => eprintln!("dirac-integral skipped: {m}"),
            Err(e) => return Err(e),
        }
    }
    Ok(reps)
}

pub fn cmd_check_conditions(cfg: &ExperimentConfig, out: &Output) -> Result<i32> {
    let reps = condition_reports(cfg)?;
    let mut csv = String::from("condition,sigma,ratio,witness\n");
    for r in &reps {
        csv.push_str(r.to_csv(cfg.problem.n).split_once('\n').map_or("", |x| x.1));
        println!(
            "{:<20} satisfied = {:<5}  worst ratio = {:.6e}  constant = {:.6e}  {}",
            r.condition.name(),
            r.satisfied,
            r.worst_ratio,
            r.constant,
            r.note
        );
    }
    out.csv("conditions.csv", &csv)?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_and_hash() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
        let mut other = cfg.clone();
        other.problem.p = 4.0;
        assert_ne!(cfg.hash(), other.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn sections_parse_and_unknown_keys_fail() {
        let cfg = ExperimentConfig::from_toml("[problem]\nN = 1\ntheta = 1.0\np = 2.0\n[solver]\nsteps = 32\n[supersolution]\nfamily = \"B\"\nalpha = 2.0\n").unwrap();
        assert_eq!(cfg.problem.theta, 1.0);
        assert_eq!(cfg.solver.steps, 32);
        assert_eq!(cfg.supersolution.options.alpha, 2.0);
        assert!(ExperimentConfig::from_toml("[problem]\nnope = 1\n").is_err());
    }

    #[test]
    fn validation_catches_bad_alpha() {
        let mut cfg = ExperimentConfig::default();
        cfg.conditions.alpha = Some(4.0);
        assert!(cfg.validate().is_err());
        cfg.conditions.alpha = Some(1.5);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Parameter("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::Construction("x".into())), EXIT_CONSTRUCTION);
    }
}
