use std::collections::BTreeMap;
use std::f64::consts::PI;

use feaflow_core::fem::*;
use proptest::prelude::*;

fn map(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn plate(d: f64, h: f64, hmax: f64) -> Mesh2D {
    generate_rect_mesh(
        d,
        h,
        hmax,
        &[
            ContactSpec::full("Contact1", Side::Left, h),
            ContactSpec::full("Contact2", Side::Right, h),
        ],
    )
    .unwrap()
}

/// Two-layer box with partial contacts on the left and right walls.
fn layered(width: f64, height: f64, split: f64, c1: (f64, f64), c2: (f64, f64), h: f64) -> Mesh2D {
    RectCad {
        width,
        height,
        layers: vec![
            Layer {
                material: "A".into(),
                top: split * height,
            },
            Layer {
                material: "B".into(),
                top: height,
            },
        ],
        contacts: vec![
            ContactSpec {
                tag: "C1".into(),
                side: Side::Left,
                from: c1.0 * height,
                to: c1.1 * height,
            },
            ContactSpec {
                tag: "C2".into(),
                side: Side::Right,
                from: c2.0 * height,
                to: c2.1 * height,
            },
        ],
    }
    .mesh(h, h)
    .unwrap()
}

#[test]
fn plate_field_is_uniform_at_v_over_d() {
    let m = plate(0.022, 0.01, 0.002);
    for (v, want) in [(1.0, 1.0 / 0.022), (2.2, 100.0)] {
        let sol = solve_potential(
            &m,
            &map(&[("domain", 1.0)]),
            &map(&[("Contact1", v), ("Contact2", 0.0)]),
        )
        .unwrap();
        assert!((analytical_plate_field(v, 0.022) - want).abs() < 1e-12);
        for e in sol.electric_field() {
            assert!((e[0].hypot(e[1]) - want).abs() < 1e-8, "{e:?} vs {want}");
        }
    }
}

#[test]
fn plate_current_matches_closed_form_conductance() {
    let (d, h, sigma, v) = (0.022, 0.01, 2.5, 1.3);
    let m = plate(d, h, 0.002);
    let sol = solve_potential(
        &m,
        &map(&[("domain", sigma)]),
        &map(&[("Contact1", v), ("Contact2", 0.0)]),
    )
    .unwrap();
    let i = sol.compute_current("Contact1").unwrap();
    let exact = sigma * v * h / d;
    assert!((i.abs() - exact).abs() <= 1e-8 * exact, "{i} vs {exact}");
}

/// Harmonic on the unit square, so the Laplace problem with it as boundary data has it as solution.
fn harmonic(x: f64, y: f64) -> f64 {
    (PI * x).sin() * (PI * y).sinh() / PI.sinh()
}

#[test]
fn manufactured_solution_converges_at_second_order() {
    let mut m = generate_rect_mesh(1.0, 1.0, 0.25, &[]).unwrap();
    let mut points = Vec::new();
    for _ in 0..4 {
        let sol = solve_boundary_fn(&m, &map(&[("domain", 1.0)]), harmonic).unwrap();
        points.push((m.longest_edge().ln(), sol.l2_error(harmonic).ln()));
        m = m.refine_uniform();
    }
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let slope = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / points.iter().map(|(x, _)| (x - mx).powi(2)).sum::<f64>();
    assert!((slope - 2.0).abs() <= 0.2, "slope {slope}, points {points:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Unit-scale problems (sigma * dV up to a few S*V/m) balance to the absolute target.
    #[test]
    fn contact_currents_balance(
        split in 0.2f64..0.8,
        s_a in 0.1f64..1.0,
        log_s_b in -14.0f64..0.0,
        v1 in -1.0f64..1.0,
        v2 in -1.0f64..1.0,
        lo in 0.0f64..0.4,
    ) {
        let m = layered(0.02, 0.01, split, (lo, 1.0), (0.0, 1.0 - lo), 0.001);
        let sigma = map(&[("A", s_a), ("B", 10f64.powf(log_s_b))]);
        let sol = solve_potential(&m, &sigma, &map(&[("C1", v1), ("C2", v2)])).unwrap();
        let total = sol.compute_current("C1").unwrap() + sol.compute_current("C2").unwrap();
        prop_assert!(total.abs() <= 1e-8, "total {total}");
    }

    /// The solver tolerance is relative, so at larger scales the imbalance is relative too.
    #[test]
    fn contact_currents_balance_relative_to_the_through_current(
        split in 0.2f64..0.8,
        log_s_a in -2.0f64..3.0,
        log_s_b in -14.0f64..3.0,
        v1 in -100.0f64..100.0,
        v2 in -100.0f64..100.0,
        lo in 0.0f64..0.4,
    ) {
        let m = layered(0.02, 0.01, split, (lo, 1.0), (0.0, 1.0 - lo), 0.001);
        let sigma = map(&[("A", 10f64.powf(log_s_a)), ("B", 10f64.powf(log_s_b))]);
        let sol = solve_potential(&m, &sigma, &map(&[("C1", v1), ("C2", v2)])).unwrap();
        let i1 = sol.compute_current("C1").unwrap();
        let total = i1 + sol.compute_current("C2").unwrap();
        prop_assert!(total.abs() <= 1e-8 * i1.abs().max(1.0), "total {total} vs {i1}");
    }

    #[test]
    fn potential_obeys_the_maximum_principle(
        split in 0.2f64..0.8,
        s_a in 0.1f64..10.0,
        s_b in 0.1f64..10.0,
        v1 in -5.0f64..5.0,
        v2 in -5.0f64..5.0,
    ) {
        let m = layered(0.02, 0.01, split, (0.1, 0.9), (0.0, 0.6), 0.001);
        let sol = solve_potential(&m, &map(&[("A", s_a), ("B", s_b)]), &map(&[("C1", v1), ("C2", v2)])).unwrap();
        let (lo, hi) = (v1.min(v2), v1.max(v2));
        for u in &sol.potential {
            prop_assert!(*u >= lo - 1e-9 && *u <= hi + 1e-9, "{u} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn scaling_boundary_values_scales_the_solution(alpha in -20.0f64..20.0, v in 0.1f64..3.0) {
        let m = layered(0.022, 0.023, 0.137, (0.04, 1.0), (0.04, 1.0), 0.0015);
        let sigma = map(&[("A", 1.0), ("B", 1e-14)]);
        let base = solve_potential(&m, &sigma, &map(&[("C1", v), ("C2", 0.0)])).unwrap();
        let scaled = solve_potential(&m, &sigma, &map(&[("C1", alpha * v), ("C2", 0.0)])).unwrap();
        for (a, b) in base.potential.iter().zip(&scaled.potential) {
            prop_assert!((alpha * a - b).abs() <= 1e-12, "{} vs {b}", alpha * a);
        }
    }

    #[test]
    fn refinement_keeps_meshes_valid(w in 0.005f64..0.05, h in 0.005f64..0.05, split in 0.1f64..0.9, lo in 0.0f64..0.5) {
        let hmax = w.min(h) / 3.0;
        let m = layered(w, h, split, (lo, 1.0), (0.0, 1.0 - lo), hmax);
        prop_assert!(m.check().is_ok());
        let r = m.refine_uniform();
        prop_assert!(r.check().is_ok(), "{:?}", r.check());
        prop_assert_eq!(r.triangles.len(), 4 * m.triangles.len());
        prop_assert!((r.total_area() - m.total_area()).abs() <= 1e-12 * m.total_area());
        prop_assert_eq!(r.boundary_tags(), m.boundary_tags());
    }
}
