use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;

use vpsa_core::config::{echo, parse_str};
use vpsa_core::diagnostics::{fit_tail_exponent, weighted_sup};
use vpsa_core::field::{enclosed_charge, RadialFieldSnapshot, RadialNodes};
use vpsa_core::model::{BackgroundSpec, Schedule};
use vpsa_core::phase_grid::{lift, project, ReducedCoords};
use vpsa_core::{Mat3, Vec3};

fn vec3() -> impl Strategy<Value = Vec3> {
    (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64).prop_map(|(a, b, c)| Vec3::new(a, b, c))
}

fn smooth_snapshot(a: f64, b: f64) -> RadialFieldSnapshot {
    let r: Vec<f64> = (0..801).map(|i| 10.0 * i as f64 / 800.0).collect();
    let rho = r.iter().map(|&s| (-a * s * s).exp() * (1.0 + b * s)).collect();
    RadialFieldSnapshot::from_density(0.0, Arc::new(RadialNodes::from_nodes(r).unwrap()), rho).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lift_then_project_is_identity(r in 0.01..100.0f64, u in 0.01..2.0f64, mu in -1.0..1.0f64) {
        let (x, v) = lift(ReducedCoords::new(r, u, mu));
        let c = project(&x, &v);
        prop_assert!((c.r - r).abs() < 1e-12 * r.max(1.0));
        prop_assert!((c.u - u).abs() < 1e-12);
        prop_assert!((c.mu - mu).abs() < 1e-9);
    }

    #[test]
    fn projection_is_rotation_invariant(x in vec3(), v in vec3(), a in -3.0..3.0f64, b in -3.0..3.0f64, c in -3.0..3.0f64) {
        let rot = nalgebra::Rotation3::from_euler_angles(a, b, c);
        let p = project(&x, &v);
        let q = project(&(rot * x), &(rot * v));
        prop_assert!((p.r - q.r).abs() < 1e-12 && (p.u - q.u).abs() < 1e-12);
        if p.r > 1e-6 && p.u > 1e-6 {
            prop_assert!((p.mu - q.mu).abs() < 1e-9);
        }
    }

    #[test]
    fn background_difference_agrees_with_direct(v in vec3(), dv in vec3(), scale in 1e-6..1.0f64) {
        let bg = BackgroundSpec::default();
        let v = v / 3.0;
        let dv = dv * (scale / 3.0);
        let direct = bg.eval_vec(&v) - bg.eval_vec(&(v + dv));
        prop_assert!((bg.difference(&v, &dv) - direct).abs() < 1e-13);
    }

    #[test]
    fn enclosed_charge_is_monotone_for_nonnegative_density(vals in prop::collection::vec(0.0..1.0f64, 2..60)) {
        let r: Vec<f64> = (0..vals.len()).map(|i| 0.1 * i as f64).collect();
        let m = enclosed_charge(&r, &vals);
        prop_assert_eq!(m[0], 0.0);
        prop_assert!(m.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn field_is_rotation_equivariant(x in vec3(), a in -3.0..3.0f64, b in -3.0..3.0f64, c in -3.0..3.0f64) {
        let s = smooth_snapshot(0.7, 0.2);
        let rot = nalgebra::Rotation3::from_euler_angles(a, b, c);
        let lhs = s.field_at(&(rot * x));
        let rhs = rot * s.field_at(&x);
        prop_assert!((lhs - rhs).norm() <= 1e-14 * (1.0 + rhs.norm()));
    }

    #[test]
    fn divergence_is_four_pi_rho(x in vec3(), a in 0.3..2.0f64) {
        let s = smooth_snapshot(a, -0.1);
        prop_assume!(x.norm() > 0.05);
        let div = s.gradient(&x).trace();
        prop_assert!((div - 4.0 * PI * s.density_at(x.norm())).abs() < 1e-12);
        let g: Mat3 = s.gradient(&x);
        prop_assert!((g - g.transpose()).norm() < 1e-12);
    }

    #[test]
    fn weighted_sup_is_monotone_in_the_exponent(vals in prop::collection::vec(-1.0..1.0f64, 1..40), a in 0.0..6.0f64, da in 0.0..2.0f64) {
        let r: Vec<f64> = (0..vals.len()).map(|i| 2f64.sqrt() + 0.5 * i as f64).collect();
        let lo = weighted_sup(&r, &vals, a);
        prop_assert_eq!(lo, weighted_sup(&r, &vals, a));
        prop_assert!(weighted_sup(&r, &vals, a + da) >= lo);
    }

    #[test]
    fn fit_recovers_power_laws(p in 2.0..8.0f64, c in 1e-3..1e3f64) {
        let r: Vec<f64> = (0..40).map(|i| 100.0 * 10f64.powf(i as f64 / 39.0)).collect();
        let rho: Vec<f64> = r.iter().map(|&s| -c * 1e20 * s.powf(-p)).collect();
        prop_assume!(rho.iter().all(|v| v.abs() > 1e-13));
        let fit = fit_tail_exponent(&r, &rho, (100.0, 1000.0)).unwrap();
        prop_assert!((fit.exponent - p).abs() < 1e-9, "{} vs {}", fit.exponent, p);
    }

    #[test]
    fn schedule_stays_within_its_knots(knots in prop::collection::vec((0.0..5.0f64, -1.0..1.0f64), 1..6), t in -1.0..6.0f64) {
        prop_assume!(knots.iter().enumerate().all(|(i, a)| knots[i + 1..].iter().all(|b| a.0 != b.0)));
        let s = Schedule::new(knots.clone()).unwrap();
        let lo = knots.iter().map(|k| k.1).fold(f64::INFINITY, f64::min);
        let hi = knots.iter().map(|k| k.1).fold(f64::NEG_INFINITY, f64::max);
        let v = s.eval(t);
        prop_assert!(v >= lo - 1e-15 && v <= hi + 1e-15);
        prop_assert!(s.sup_abs() >= v.abs() - 1e-15);
    }

    #[test]
    fn config_echo_round_trips(
        steps in 1usize..40,
        dt in prop::sample::select(vec![0.01, 0.025, 0.05, 0.1]),
        q in 13.0..30.0f64,
        depth in 0.0..0.9f64,
        n_r in 16usize..200,
        coef in -1.0..1.0f64,
        radial in any::<bool>(),
    ) {
        let mut text = format!(
            "dt = {dt}\nT = {}\ndt_ode = {}\nq = {q}\ninitial.delta = {depth}\ngrid.n_r = {n_r}\n",
            dt * steps as f64,
            dt / 2.0
        );
        if radial {
            text.push_str(&format!("external.kind = radial3\nexternal.coefficient = {coef}\n"));
        }
        let c = match parse_str(&text) {
            Ok(c) => c,
            // dt * steps may not round-trip as an exact multiple; that is a rejection, not a crash
            Err(_) => return Ok(()),
        };
        let again = parse_str(&echo(&c)).unwrap();
        prop_assert_eq!(echo(&again), echo(&c));
    }
}
