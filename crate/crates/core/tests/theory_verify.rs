use clear_core::autodiff::Tensor;
use clear_core::icnn::{ConvexNet, DenseSpec, Mode, NetArch};
use clear_core::solver::{FnRegularizer, PgdConfig, Schedule};
use clear_core::theory_verify::{
    manifold_distance, manifold_projection, reports_to_csv, verify_distance_properties, verify_minima_on_manifold,
    verify_pgd_convergence, verify_stability, MinimaConfig, SelectorInstance, ToyManifold,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn harmonic(iters: usize, c: f64) -> PgdConfig {
    PgdConfig {
        max_iters: iters,
        schedule: Schedule::Harmonic,
        c,
        record_trace: false,
        early_stop: None,
    }
}

/// Distance to a convex polygon from a fine sampling of its edges, zero inside.
fn polygon_oracle(vertices: &[[f64; 2]], x: [f64; 2]) -> f64 {
    let n = vertices.len();
    let inside = (0..n).all(|i| {
        let (a, b) = (vertices[i], vertices[(i + 1) % n]);
        (b[0] - a[0]) * (x[1] - a[1]) - (b[1] - a[1]) * (x[0] - a[0]) >= 0.0
    });
    if inside {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for i in 0..n {
        let (a, b) = (vertices[i], vertices[(i + 1) % n]);
        for k in 0..=20_000 {
            let t = k as f64 / 20_000.0;
            let p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            best = best.min(((p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2)).sqrt());
        }
    }
    best
}

#[test]
fn distance_examples() {
    let ball = ToyManifold::unit_ball(2);
    assert_eq!(manifold_distance(&ball, &[0.0, 0.0]).unwrap(), 0.0);
    assert_eq!(manifold_distance(&ball, &[2.0, 0.0]).unwrap(), 1.0);
    let tri = ToyManifold::triangle();
    let d = manifold_distance(&tri, &[1.0, 1.0]).unwrap();
    assert!((d - 0.5f64.sqrt()).abs() < 1e-12);
    let p = manifold_projection(&tri, &[1.0, 1.0]).unwrap();
    assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
    assert!((polygon_oracle(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [1.0, 1.0]) - d).abs() < 1e-6);
    let seg = ToyManifold::diagonal_segment();
    assert!((manifold_distance(&seg, &[2.0, 2.0]).unwrap() - 2f64.sqrt()).abs() < 1e-12);
    assert!(manifold_distance(&ball, &[1.0, 2.0, 3.0]).is_err());
}

#[test]
fn polytope_distance_matches_boundary_sampling() {
    let hexagon: Vec<[f64; 2]> = (0..6)
        .map(|k| {
            let a = k as f64 * std::f64::consts::PI / 3.0 + 0.2;
            [1.3 * a.cos() + 0.1, 0.8 * a.sin() - 0.2]
        })
        .collect();
    let cloud = ToyManifold::PointCloud {
        // Interior points must not change the hull.
        points: hexagon.iter().map(|v| v.to_vec()).chain([vec![0.1, -0.2], vec![0.3, 0.0]]).collect(),
    };
    let poly = ToyManifold::Polytope {
        vertices: hexagon.iter().map(|v| v.to_vec()).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let oracle = polygon_oracle(&hexagon, x);
        let got = manifold_distance(&poly, &x).unwrap();
        assert!((got - oracle).abs() < 1e-6, "{x:?}: {got} vs {oracle}");
        assert!((manifold_distance(&cloud, &x).unwrap() - got).abs() < 1e-12);
    }
}

#[test]
fn tetrahedron_projection_is_optimal() {
    let m = ToyManifold::Polytope {
        vertices: vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let d = manifold_distance(&m, &x).unwrap();
        // No sampled point of the set may be nearer than the projection.
        for _ in 0..500 {
            let s = m.sample(&mut rng);
            let ds = s.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(ds >= d - 1e-9);
        }
    }
}

#[test]
fn samples_lie_on_the_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for m in [ToyManifold::unit_ball(3), ToyManifold::diagonal_segment(), ToyManifold::triangle()] {
        for _ in 0..200 {
            let x = m.sample(&mut rng);
            assert!(manifold_distance(&m, &x).unwrap() < 1e-12, "{}", m.name());
        }
    }
}

#[test]
fn distance_properties_hold_on_toy_sets() {
    for m in [ToyManifold::unit_ball(2), ToyManifold::diagonal_segment(), ToyManifold::triangle()] {
        let r = verify_distance_properties(&m, 10_000, 4).unwrap();
        assert!(r.passed, "{}", r.to_text());
        assert_eq!(r.get("violations"), Some(0.0));
        assert_eq!(r, verify_distance_properties(&m, 10_000, 4).unwrap());
    }
}

proptest! {
    #[test]
    fn equal_points_are_tight(x in -3.0f64..3.0, y in -3.0f64..3.0) {
        for m in [ToyManifold::unit_ball(2), ToyManifold::triangle()] {
            let p = [x, y];
            let mid = [0.5 * (x + x), 0.5 * (y + y)];
            let d = manifold_distance(&m, &p).unwrap();
            let lip = (d - manifold_distance(&m, &p).unwrap()).abs() - (x - x).hypot(y - y);
            let cvx = manifold_distance(&m, &mid).unwrap() - 0.5 * (d + d);
            prop_assert_eq!(lip, 0.0);
            prop_assert_eq!(cvx, 0.0);
        }
    }
}

fn ball_distance_reg() -> impl clear_core::solver::Regularizer {
    FnRegularizer::new(
        |x: &Tensor| (x.norm() - 1.0).max(0.0),
        |x: &Tensor| {
            let n = x.norm();
            if n <= 1.0 {
                x.map(|_| 0.0)
            } else {
                x.map(|v| v / n)
            }
        },
    )
}

#[test]
fn exact_distance_descends_onto_the_ball() {
    let cfg = MinimaConfig {
        eps: 1e-3,
        seed: 5,
        ..MinimaConfig::default()
    };
    let r = verify_minima_on_manifold(&ball_distance_reg(), &ToyManifold::unit_ball(2), &cfg).unwrap();
    assert_eq!(r.get("fraction_endpoints_near"), Some(1.0));
    assert_eq!(r.get("fraction_fresh_near_min"), Some(1.0));
    assert_eq!(r.get("fraction_fresh_below_off_quantile"), Some(1.0));
    assert!(r.get("mean_gap_to_distance").unwrap() < 1e-12);
    assert!(r.passed);
}

#[test]
fn untrained_net_still_reports() {
    let net = ConvexNet::build(
        NetArch::Dense(DenseSpec {
            input_dim: 2,
            hidden: vec![8, 8],
            slope: 0.2,
        }),
        Mode::Clear,
        0,
    )
    .unwrap();
    let cfg = MinimaConfig {
        n_starts: 10,
        budget: 50,
        n_off: 50,
        ..MinimaConfig::default()
    };
    let r = verify_minima_on_manifold(&net, &ToyManifold::unit_ball(2), &cfg).unwrap();
    assert_eq!(r.stats.len(), 8);
    assert!(reports_to_csv(&[r]).lines().count() > 8);
}

#[test]
fn analytic_instance_converges_with_step_inequality() {
    let r = verify_pgd_convergence(&SelectorInstance::analytic(), &harmonic(500, 0.75), 1e-3).unwrap();
    assert!(r.passed, "{}", r.to_text());
    assert!(r.get("max_step_slack").unwrap() <= 1e-10);
}

#[test]
fn point_on_constraint_converges_at_once() {
    let cfg = PgdConfig {
        max_iters: 3,
        schedule: Schedule::Constant,
        c: 0.5,
        record_trace: false,
        early_stop: None,
    };
    let r = verify_pgd_convergence(&SelectorInstance::point_on_constraint(), &cfg, 1e-6).unwrap();
    assert!(r.passed, "{}", r.to_text());
    assert!(r.get("final_error").unwrap() < 1e-6);
}

#[test]
fn zero_step_is_a_negative_control() {
    let cfg = PgdConfig {
        max_iters: 20,
        schedule: Schedule::Constant,
        c: 0.0,
        record_trace: false,
        early_stop: None,
    };
    let r = verify_pgd_convergence(&SelectorInstance::analytic(), &cfg, 1e-3).unwrap();
    assert!(!r.passed);
    assert_eq!(r.get("frozen_after_first"), Some(1.0));
    assert_eq!(r.get("final_error"), Some(2.0));
}

#[test]
fn stability_sweep_orders_errors() {
    let inst = SelectorInstance::analytic();
    let cfg = harmonic(500, 0.75);
    let r = verify_stability(&inst, &[0.0, 1e-3, 1e-2, 1e-1], 10, &cfg, 1e-3, 6).unwrap();
    assert!(r.passed, "{}", r.to_text());
    let e = |d: &str| r.get(&format!("error@{d}")).unwrap();
    assert!(e("0.001") < e("0.1"));
    let noiseless = verify_pgd_convergence(&inst, &cfg, 1e-3).unwrap();
    assert_eq!(e("0"), noiseless.get("final_error").unwrap());
    assert!(r.get("max_error_to_perturbed_minimizer").unwrap() < 1e-3);

    let d = verify_stability(&inst, &[0.0, 1e-2, 2e-2], 10, &cfg, 1e-3, 6).unwrap();
    let ratio = d.get("error@0.02").unwrap() / d.get("error@0.01").unwrap();
    assert!((1.5..=2.5).contains(&ratio), "{ratio}");

    assert!(verify_stability(&inst, &[1e-3, 0.0], 1, &cfg, 1e-3, 0).is_err());
}
