//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any fails.

use std::time::Instant;

use fraclab::asymptotics::{regvar_inverse, CriticalScale, RatioBand, RegVarFunction};
use fraclab::classifier::{
    classify, dirac_solvable, dyadic_sigmas, necessary_envelope, quotient_nondecreasing, sufficient_check_b, sufficient_check_c,
    suggested_alpha, CaseLabel,
};
use fraclab::frac_kernel::{chapman_kolmogorov_check, kernel_bound_ratio, smoothing_constant, FracParams, KernelProfile};
use fraclab::grid::Grid;
use fraclab::harness::{sweep, ExperimentConfig};
use fraclab::initial_data::{InitialMeasure, SingularProfile};
use fraclab::mild_solver::{refine_and_compare, Solver, SolverConfig};
use fraclab::nonlinearity::Nonlinearity;
use fraclab::supersolution::{build_supersolution, domination_check, verify_supersolution, Family, SupersolutionOptions};

type Outcome = Result<(bool, String), String>;

fn params(n: usize, theta: f64) -> FracParams {
    FracParams::new(n, theta).unwrap()
}

fn kernel_normalization() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for n in [1, 2] {
        for theta in [1.0, 1.5, 2.0] {
            let k = KernelProfile::shared(params(n, theta)).map_err(|e| e.to_string())?;
            worst = worst.max((k.normalization() - 1.0).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((worst < 1e-6 && secs < 60.0, format!("max |mass - 1| = {worst:.3e} (tol 1e-6), {secs:.1} s (limit 60 s)")))
}

fn chapman_kolmogorov() -> Outcome {
    let grid = Grid::new(1, 64.0, 4096).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for theta in [1.0, 1.5, 2.0] {
        let k = KernelProfile::shared(params(1, theta)).map_err(|e| e.to_string())?;
        let r = chapman_kolmogorov_check(&k, 2.0, 1.0, &grid).map_err(|e| e.to_string())?;
        worst = worst.max(r.max_discrepancy);
    }
    Ok((worst < 1e-4, format!("sup discrepancy = {worst:.3e} (tol 1e-4)")))
}

fn two_sided_bound() -> Outcome {
    let mut widest = 0.0f64;
    for n in [1, 2] {
        for theta in [1.0, 1.5] {
            let mut band = RatioBand::empty();
            for kt in 0..=20 {
                let t = 10f64.powf(-2.0 + 0.1 * kt as f64);
                for kr in 0..=300 {
                    let r = if kr == 0 { 0.0 } else { 1e-3 * 10f64.powf(5.0 * kr as f64 / 300.0) };
                    let mut x = vec![0.0; n];
                    x[0] = r;
                    band.push(kernel_bound_ratio(params(n, theta), &x, t).map_err(|e| e.to_string())?);
                }
            }
            widest = widest.max(band.width());
        }
    }
    Ok((widest <= 100.0, format!("widest band max/min = {widest:.3} (limit 100)")))
}

fn smoothing() -> Outcome {
    // Odd point count puts a cell centre on the atom.
    let grid = Grid::new(1, 16.0, 4097).map_err(|e| e.to_string())?;
    let mu = InitialMeasure::dirac(1, &[0.0], 1.0).unwrap();
    let mut worst = 1.0f64;
    for theta in [1.0, 1.5, 2.0] {
        let k = KernelProfile::shared(params(1, theta)).map_err(|e| e.to_string())?;
        let mut band = RatioBand::empty();
        for j in 0..=12 {
            let t = 10f64.powf(-3.0 + 0.25 * j as f64);
            band.push(smoothing_constant(&k, &mu, t, &grid, 1.0).map_err(|e| e.to_string())?);
        }
        worst = worst.max(band.width());
    }
    Ok((worst < 2.0, format!("max/min fitted C = {worst:.4} (limit 2)")))
}

fn ode_oracle() -> Outcome {
    let k = KernelProfile::shared(params(1, 2.0)).map_err(|e| e.to_string())?;
    let mu = InitialMeasure::constant(1, 1.0).unwrap();
    let f = Nonlinearity::prototype(2.0, 0.0, 1.0).unwrap();
    let run = |m: usize| -> Result<f64, String> {
        let cfg = SolverConfig {
            half_width: 4.0,
            points: 16,
            horizon: 0.5,
            steps: m,
            ..SolverConfig::default()
        };
        let out = Solver::new(k.clone(), cfg).and_then(|s| s.solve(&mu, &f)).map_err(|e| e.to_string())?;
        if !out.is_converged() {
            return Err(format!("M = {m}: {}", out.verdict()));
        }
        Ok(out.trajectory().final_slice().background)
    };
    let (u1, u2) = (run(512)?, run(1024)?);
    let (e1, e2) = ((u1 - 2.0).abs(), (u2 - 2.0).abs());
    let ratio = e1 / e2;
    let ok = e1 < 0.2 && (1.6..=2.4).contains(&ratio);
    Ok((ok, format!("u(T) = {u1:.6} (exact 2, tol 10%), error ratio M=512/1024 = {ratio:.3} (expect 2)")))
}

fn dichotomy() -> Outcome {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::default();
    cfg.problem.p = 5.0;
    cfg.problem.q = 0.0;
    cfg.data.kind = "profile".into();
    cfg.data.cutoff = 1.0;
    cfg.solver = SolverConfig {
        half_width: 4.0,
        points: 256,
        horizon: 0.01,
        steps: 256,
        ..SolverConfig::default()
    };
    cfg.sweep.c_lo = 0.1;
    cfg.sweep.c_hi = 3.0;
    cfg.sweep.tolerance = 0.1;
    let res = sweep(&cfg, rayon::current_num_threads().min(8)).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let ok = res.anomaly.is_none() && res.is_monotone() && res.ratio() <= 1.1 && secs < 600.0;
    Ok((
        ok,
        format!(
            "bracket [{:.4}, {:.4}], c+/c- = {:.4} (limit 1.1), {} solves, monotone = {}, {secs:.1} s",
            res.lo,
            res.hi,
            res.ratio(),
            res.points.len(),
            res.is_monotone()
        ),
    ))
}

fn dirac_ladder() -> Outcome {
    let k = KernelProfile::shared(params(1, 2.0)).map_err(|e| e.to_string())?;
    let cfg = SolverConfig {
        half_width: 8.0,
        points: 256,
        horizon: 1.0,
        steps: 256,
        ..SolverConfig::default()
    };
    let ladder: Vec<_> = [4usize, 16, 64, 256].iter().map(|&n| (None, Some(n), 256)).collect();
    let mut notes = Vec::new();
    let mut ok = true;
    // p = 2: solvable, sup-norms saturate.
    let mu = InitialMeasure::dirac(1, &[0.0], 0.5).unwrap();
    let f2 = Nonlinearity::prototype(2.0, 0.0, 1.0).unwrap();
    let e2 = refine_and_compare(k.clone(), &mu, &f2, &cfg, &ladder).map_err(|e| e.to_string())?;
    let sups: Vec<f64> = e2.iter().map(|e| e.final_sup).collect();
    let last = sups[3] / sups[2];
    ok &= e2.iter().all(|e| e.verdict == "converged") && (last - 1.0).abs() <= 0.05;
    notes.push(format!("p=2 sups {:.4?} last ratio {last:.4}", sups));
    // p = 4: unsolvable, each rung at least doubles until the cap.
    let mu = InitialMeasure::dirac(1, &[0.0], 2.0).unwrap();
    let f4 = Nonlinearity::prototype(4.0, 0.0, 1.0).unwrap();
    let e4 = refine_and_compare(k, &mu, &f4, &cfg, &ladder).map_err(|e| e.to_string())?;
    let mut grows = true;
    let mut prev: Option<f64> = None;
    for e in &e4 {
        let s = if e.verdict == "diverged" { cfg.u_max } else { e.final_sup };
        if let Some(p) = prev {
            grows &= s >= 2.0 * p;
        }
        if e.verdict == "diverged" {
            break;
        }
        prev = Some(s);
    }
    let reached_cap = e4.iter().any(|e| e.verdict == "diverged");
    ok &= grows && reached_cap;
    notes.push(format!(
        "p=4 {:?}",
        e4.iter().map(|e| format!("{}:{:.3e}", e.verdict, e.final_sup)).collect::<Vec<_>>()
    ));
    let v2 = dirac_solvable(&f2, params(1, 2.0)).map_err(|e| e.to_string())?;
    let v4 = dirac_solvable(&f4, params(1, 2.0)).map_err(|e| e.to_string())?;
    ok &= v2 && !v4;
    notes.push(format!("classifier: p=2 solvable={v2}, p=4 solvable={v4}"));
    Ok((ok, notes.join("; ")))
}

fn regvar_band() -> Outcome {
    let c1 = classify(params(1, 2.0), 3.0, 0.5).map_err(|e| e.to_string())?;
    let c2 = classify(params(2, 1.5), 3.0, -0.5).map_err(|e| e.to_string())?;
    let cases = [
        (1.5, 2.0, -1.0),
        (1.0, 1.0, 0.0),
        (c1.params.theta() / c1.params.dim() as f64, c1.q, 0.0),
        (c2.params.theta() / c2.params.dim() as f64, c2.q, 0.0),
    ];
    let mut widest = 0.0f64;
    for (a, b, c) in cases {
        let phi = RegVarFunction::new(a, b, c).map_err(|e| e.to_string())?;
        let mut band = RatioBand::empty();
        for k in 0..=200 {
            let y = 1e4 * 1e8f64.powf(k as f64 / 200.0);
            band.push(regvar_inverse(&phi, y).map_err(|e| e.to_string())? / phi.inverse_asymptotic(y));
        }
        widest = widest.max(band.width());
    }
    Ok((widest <= 3.0, format!("widest band = {widest:.4} (limit 3)")))
}

fn classifier_consistency() -> Outcome {
    let sigmas = dyadic_sigmas(3, 12);
    // The borderline profile only decreases radially for |x| < e^{-2.6}, so its cutoff sits below that.
    let cases = [(3.0, -1.0, 0.05), (3.0, 0.0, 0.5), (5.0, 0.0, 1.0)];
    let p1 = params(1, 2.0);
    let mut ok = true;
    let mut notes = Vec::new();
    let eps = 0.1;
    for (p, q, cutoff) in cases {
        let c = classify(p1, p, q).map_err(|e| e.to_string())?;
        let small = InitialMeasure::from_profile(SingularProfile::new(p1, p, q, eps, cutoff, 0.0).map_err(|e| e.to_string())?);
        let large = InitialMeasure::from_profile(SingularProfile::new(p1, p, q, 10.0 * eps, cutoff, 0.0).map_err(|e| e.to_string())?);
        let suff = match c.label {
            CaseLabel::Supercritical => sufficient_check_c(&small, p1, p, q, suggested_alpha(p1, p), 1.0, &sigmas, 1.0),
            _ => sufficient_check_b(&small, p1, q, 1.0 / (2.0 * 2.0), 1.0, &sigmas, 1.0),
        }
        .map_err(|e| e.to_string())?;
        let calib = necessary_envelope(&small, p1, p, q, &sigmas, 1.0).map_err(|e| e.to_string())?;
        let big = necessary_envelope(&large, p1, p, q, &sigmas, 1.0).map_err(|e| e.to_string())?;
        let c_cal = calib.constant;
        let exceeds = big.rows.iter().all(|r| r.ratio > c_cal);
        let monotone = quotient_nondecreasing(&big.rows, 1e-6);
        let this = suff.satisfied && exceeds && monotone;
        ok &= this;
        notes.push(format!(
            "{}: {} ratio {:.3}, 10x quotient {:.3e} vs C_cal {:.3e}, nondecreasing {}",
            c.label.name(),
            suff.condition.name(),
            suff.worst_ratio,
            big.rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min),
            c_cal,
            monotone
        ));
    }
    Ok((ok, notes.join("; ")))
}

fn supersolutions() -> Outcome {
    let base = SolverConfig {
        half_width: 8.0,
        points: 256,
        steps: 256,
        ..SolverConfig::default()
    };
    let p1 = params(1, 2.0);
    let k = KernelProfile::shared(p1).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut notes = Vec::new();
    let mut run = |label: &str, family: Family, mu: InitialMeasure, f: Nonlinearity, cfg: SolverConfig, opts: SupersolutionOptions| -> Result<(), String> {
        let solver = Solver::new(k.clone(), cfg).map_err(|e| e.to_string())?;
        let w = build_supersolution(family, &mu, &f, &solver, &opts).map_err(|e| e.to_string())?;
        let rep = verify_supersolution(&w, &mu, &f, &solver, &solver.default_checkpoints()).map_err(|e| e.to_string())?;
        let out = solver.solve(&mu, &f).map_err(|e| e.to_string())?;
        let dom = domination_check(&out, &w.slices(&solver).map_err(|e| e.to_string())?, rep.tolerance).map_err(|e| e.to_string())?;
        ok &= rep.passed && dom.holds;
        notes.push(format!(
            "{label}: violation {:.2e} vs 2x error {:.2e}, dominated {}",
            rep.max_violation, rep.tolerance, dom.holds
        ));
        Ok(())
    };
    run(
        "A",
        Family::A,
        InitialMeasure::dirac(1, &[0.0], 0.1).unwrap(),
        Nonlinearity::prototype(2.0, 0.0, 1.0).unwrap(),
        SolverConfig { horizon: 0.1, mollification: Some(16), ..base.clone() },
        SupersolutionOptions::default(),
    )?;
    for q in [-1.0, 0.0] {
        let tau_star = CriticalScale::new(q, 2.0).map_err(|e| e.to_string())?.threshold();
        run(
            &format!("B q={q}"),
            Family::B,
            InitialMeasure::dirac(1, &[0.0], 0.1).unwrap(),
            Nonlinearity::prototype(3.0, q, std::f64::consts::E).unwrap(),
            SolverConfig { horizon: 1e-4, mollification: Some(16), ..base.clone() },
            SupersolutionOptions { l: tau_star, alpha: 2.0, ..Default::default() },
        )?;
    }
    let prof = SingularProfile::new(p1, 7.0, 0.0, 0.1, 1.0, 0.0).map_err(|e| e.to_string())?;
    run(
        "C p=7",
        Family::C,
        InitialMeasure::from_profile(prof),
        Nonlinearity::prototype(7.0, 0.0, 1.0).unwrap(),
        SolverConfig { horizon: 0.01, ..base },
        SupersolutionOptions { alpha: 2.0, ..Default::default() },
    )?;
    Ok((ok, notes.join("; ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("kernel normalization", kernel_normalization),
        ("chapman-kolmogorov", chapman_kolmogorov),
        ("two-sided kernel bound", two_sided_bound),
        ("smoothing constant", smoothing),
        ("ode oracle", ode_oracle),
        ("dichotomy sweep", dichotomy),
        ("dirac ladder", dirac_ladder),
        ("regular variation inverse", regvar_band),
        ("classifier consistency", classifier_consistency),
        ("supersolution verification", supersolutions),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} {:>2} {name}: {detail} [{:.1} s]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
