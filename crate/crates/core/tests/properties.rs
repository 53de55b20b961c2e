use std::sync::Arc;

use proptest::prelude::*;

use fraclab::asymptotics::{regvar_inverse, CriticalScale, RegVarFunction};
use fraclab::classifier::{classify, dirac_solvable, is_critical, necessary_check, CaseLabel};
use fraclab::frac_kernel::{FracParams, KernelProfile};
use fraclab::initial_data::{InitialMeasure, SingularProfile};
use fraclab::mild_solver::{Solver, SolverConfig, SolverOutcome};
use fraclab::nonlinearity::{build_minorant, check_above, check_sample, search_majorant, Nonlinearity};

fn kernel(dim: usize, theta: f64) -> Arc<KernelProfile> {
    KernelProfile::shared(FracParams::new(dim, theta).unwrap()).unwrap()
}

fn family() -> impl Strategy<Value = (usize, f64)> {
    prop_oneof![Just((1, 1.0)), Just((1, 1.5)), Just((1, 2.0)), Just((2, 1.0)), Just((2, 2.0))]
}

fn small_solver(dim: usize, theta: f64, steps: usize) -> Solver {
    let cfg = SolverConfig { half_width: 4.0, points: if dim == 1 { 64 } else { 16 }, horizon: 0.05, steps, mollification: Some(16), ..Default::default() };
    Solver::new(kernel(dim, theta), cfg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kernel_positive_and_radially_decreasing((dim, theta) in family(), r1 in 0.0f64..50.0, dr in 0.0f64..50.0, t in 1e-3f64..10.0) {
        let k = kernel(dim, theta);
        let a = k.value_radial(r1, t);
        let b = k.value_radial(r1 + dr, t);
        // The Gaussian underflows far out; positivity is checked where it is representable.
        if theta < 2.0 || (r1 + dr) * (r1 + dr) / t < 1000.0 {
            prop_assert!(a > 0.0 && b > 0.0);
        }
        prop_assert!(b <= a * (1.0 + 1e-9), "{b} > {a}");
    }

    #[test]
    fn kernel_self_similar((dim, theta) in family(), r in 0.0f64..20.0, t in 1e-3f64..100.0) {
        let k = kernel(dim, theta);
        let n = dim as f64;
        let direct = k.value_radial(r, t);
        let scaled = t.powf(-n / theta) * k.value_radial(r * t.powf(-1.0 / theta), 1.0);
        prop_assert!((direct - scaled).abs() <= 1e-8 * scaled.abs(), "{direct} vs {scaled}");
    }

    #[test]
    fn ball_mass_monotone_in_radius(z in -2.0f64..2.0, s1 in 1e-3f64..1.0, ds in 0.0f64..2.0, c in 0.1f64..5.0) {
        let params = FracParams::new(1, 2.0).unwrap();
        let mu = InitialMeasure::from_profile(SingularProfile::new(params, 5.0, 0.0, c, 1.0, 0.0).unwrap())
            .with_atom(&[0.7], 0.3)
            .unwrap();
        let a = mu.ball_mass(&[z], s1).unwrap();
        let b = mu.ball_mass(&[z], s1 + ds).unwrap();
        prop_assert!(b >= a * (1.0 - 1e-9) - 1e-12, "{b} < {a}");
    }

    #[test]
    fn ball_mass_additive(z in -2.0f64..2.0, sigma in 1e-2f64..2.0, m1 in 0.0f64..3.0, m2 in 0.0f64..3.0, k in 0.0f64..2.0) {
        let mu1 = InitialMeasure::dirac(1, &[0.25], m1).unwrap();
        let mu2 = InitialMeasure::constant(1, k).unwrap().with_atom(&[-0.5], m2).unwrap();
        let sum = mu1.add(&mu2).unwrap();
        let lhs = sum.ball_mass(&[z], sigma).unwrap();
        let rhs = mu1.ball_mass(&[z], sigma).unwrap() + mu2.ball_mass(&[z], sigma).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs), "{lhs} vs {rhs}");
    }

    #[test]
    fn ball_mass_translation_invariant(z in -1.0f64..1.0, sigma in 1e-2f64..1.0, v in -1.0f64..1.0, c in 0.1f64..2.0) {
        let params = FracParams::new(1, 1.0).unwrap();
        let mu = InitialMeasure::from_profile(SingularProfile::new(params, 3.0, 0.0, c, 0.5, 0.0).unwrap())
            .with_atom(&[0.3], 0.2)
            .unwrap();
        let moved = mu.translated(&[v]).unwrap();
        let a = mu.ball_mass(&[z], sigma).unwrap();
        let b = moved.ball_mass(&[z + v], sigma).unwrap();
        prop_assert!((a - b).abs() <= 1e-8 * (1.0 + a), "{a} vs {b}");
    }

    #[test]
    fn profiles_have_finite_ball_mass(p in 1.2f64..8.0, q in -2.0f64..2.0, sigma in 1e-4f64..4.0) {
        let params = FracParams::new(1, 1.5).unwrap();
        let label = classify(params, p, q).unwrap().label;
        prop_assume!(label.is_singular());
        let prof = SingularProfile::new(params, p, q, 1.0, 0.05, 0.0).unwrap();
        let m = InitialMeasure::from_profile(prof).ball_mass(&[0.0], sigma).unwrap();
        prop_assert!(m.is_finite() && m > 0.0);
    }

    #[test]
    fn classify_depends_on_sign_and_q(dim in 1usize..=3, theta in 0.2f64..2.0, dp in prop_oneof![Just(-0.05), Just(0.0), Just(0.75)], q in prop_oneof![Just(-1.0), -3.0f64..3.0]) {
        let params = FracParams::new(dim, theta).unwrap();
        let pt = params.p_theta();
        let p = pt + dp;
        let c = classify(params, p, q).unwrap();
        let expected = if dp < 0.0 {
            CaseLabel::Subcritical
        } else if dp > 0.0 {
            CaseLabel::Supercritical
        } else if q < -1.0 {
            CaseLabel::CriticalIntegrable
        } else if q == -1.0 {
            CaseLabel::CriticalBorderline
        } else {
            CaseLabel::CriticalLog
        };
        prop_assert_eq!(c.label, expected);
        prop_assert_eq!(is_critical(p, pt), dp == 0.0);
    }

    #[test]
    fn dirac_solvability_matches_classifier(dim in 1usize..=2, dp in -0.4f64..0.6, q in prop_oneof![Just(-2.0), Just(-1.0), Just(0.0), Just(1.0)]) {
        let params = FracParams::new(dim, 2.0).unwrap();
        let p = params.p_theta() + if dp.abs() < 0.05 { 0.0 } else { dp };
        let label = classify(params, p, q).unwrap().label;
        let f = Nonlinearity::prototype(p, q, 1.0).unwrap();
        let expected = matches!(label, CaseLabel::Subcritical | CaseLabel::CriticalIntegrable);
        prop_assert_eq!(dirac_solvable(&f, params).unwrap(), expected);
    }

    #[test]
    fn necessary_check_trivial_for_zero_f(c in 0.0f64..10.0, gamma in 1.0f64..5.0, k in 3i32..12) {
        let params = FracParams::new(1, 1.0).unwrap();
        let mu = InitialMeasure::dirac(1, &[0.0], c).unwrap();
        let samples = vec![([0.0, 0.0, 0.0], 2f64.powi(-k)), ([0.1, 0.0, 0.0], 0.5)];
        let report = necessary_check(&mu, &|_| 0.0, params, 1.0, gamma, &samples).unwrap();
        prop_assert!(report.satisfied);
    }

    #[test]
    fn regvar_inverse_monotone(a in 0.5f64..4.0, b in -2.0f64..2.0, ly in 2.0f64..25.0, dl in 0.01f64..5.0) {
        let phi = RegVarFunction::new(a, b, 0.0).unwrap();
        let y1 = regvar_inverse(&phi, 10f64.powf(ly)).unwrap();
        let y2 = regvar_inverse(&phi, 10f64.powf(ly + dl)).unwrap();
        prop_assert!(y1 < y2);
    }

    #[test]
    fn phi_round_trip(q in -1.0f64..2.0, alpha in 1.0f64..4.0, lt in 0.0f64..20.0) {
        let scale = CriticalScale::new(q, alpha).unwrap();
        let tau = scale.threshold() * 10f64.powf(lt);
        let back = scale.phi_inverse(scale.phi(tau));
        prop_assert!((back / tau - 1.0).abs() < 1e-6, "{tau} -> {back}");
    }

    #[test]
    fn majorant_dominates_prototype(p in 1.2f64..6.0, q in -2.0f64..2.0) {
        let f = Nonlinearity::prototype(p, q, 1.0).unwrap();
        let g = search_majorant(&f, None).unwrap();
        prop_assert_eq!(check_above(&g, &f, &check_sample(1e-6, 1e12, 50)), None);
    }

    #[test]
    fn minorant_convex(p in 1.5f64..6.0, q in -2.0f64..2.0, r in 0.0f64..10.0) {
        let d = (1.0 + p) / 2.0;
        let g = build_minorant(p, d, q, r, 1.0).unwrap();
        let taus: Vec<f64> = check_sample(r.max(1e-3), 1e10, 20);
        for w in taus.windows(3) {
            let (a, b, c) = (w[0], w[1], w[2]);
            let (ga, gb, gc) = (g.eval(a), g.eval(b), g.eval(c));
            // Slope of the chord may not decrease.
            let s1 = (gb - ga) / (b - a);
            let s2 = (gc - gb) / (c - b);
            prop_assert!(s2 >= s1 - 1e-9 * s1.abs().max(gc / c), "at {b}: {s1} > {s2}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn solver_comparison_principle(c1 in 0.0f64..0.5, extra in 0.0f64..0.5, p in 1.5f64..3.0) {
        let solver = small_solver(1, 2.0, 16);
        let f = Nonlinearity::prototype(p, 0.0, 1.0).unwrap();
        let small = InitialMeasure::dirac(1, &[0.0], c1).unwrap();
        let large = small.add(&InitialMeasure::dirac(1, &[0.5], extra).unwrap()).unwrap();
        let (SolverOutcome::Converged(a), SolverOutcome::Converged(b)) =
            (solver.solve(&small, &f).unwrap(), solver.solve(&large, &f).unwrap())
        else {
            return Err(TestCaseError::reject("not converged"));
        };
        for (sa, sb) in a.slices.iter().zip(&b.slices) {
            for (x, y) in sa.totals().iter().zip(sb.totals()) {
                prop_assert!(*x <= y + 1e-12 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn picard_sweeps_nondecreasing(c in 0.0f64..1.0, p in 1.5f64..4.0) {
        let solver = small_solver(1, 1.0, 16);
        let f = Nonlinearity::prototype(p, 0.0, 1.0).unwrap();
        let mu = InitialMeasure::dirac(1, &[0.0], c).unwrap();
        let outcome = solver.solve(&mu, &f).unwrap();
        let h = &outcome.trajectory().sup_history;
        for w in h.windows(2) {
            prop_assert!(w[1] >= w[0] * (1.0 - 1e-12), "{:?}", h);
        }
    }

    #[test]
    fn truncation_monotone(m1 in 1.0f64..50.0, dm in 0.0f64..50.0) {
        let f = Nonlinearity::prototype(3.0, 0.0, 1.0).unwrap();
        let mu = InitialMeasure::constant(1, 1.0).unwrap();
        let run = |m: f64| {
            let cfg = SolverConfig { half_width: 2.0, points: 8, horizon: 0.3, steps: 32, truncation: Some(m), ..Default::default() };
            Solver::new(kernel(1, 2.0), cfg).unwrap().solve(&mu, &f).unwrap()
        };
        let (a, b) = (run(m1), run(m1 + dm));
        prop_assert!(a.trajectory().sup_norm() <= b.trajectory().sup_norm() * (1.0 + 1e-12));
    }
}
