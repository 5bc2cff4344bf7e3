use feaflow_core::experiment::*;
use proptest::prelude::*;
use proptest::sample::subsequence;

const INPUTS: [&str; 4] = [SLOT_THRESHOLD, SLOT_MAX_ITERATIONS, SLOT_MAX_SIZE, SLOT_MIN_SIZE];

fn plans() -> impl Strategy<Value = ConvergencePlan> {
    (
        "[a-z]{3}-[0-9]{1,3}",
        "[A-Za-z][A-Za-z0-9_]{0,12}",
        proptest::option::of(1e-15f64..1.0),
        2usize..40,
        1e-6f64..1.0,
        1.0f64..50.0,
        subsequence(INPUTS.to_vec(), 0..=INPUTS.len()),
    )
        .prop_map(
            |(model, region, threshold, iterations, min_size, ratio, manual)| ConvergencePlan {
                simulation_model: model,
                target: "FEniCS".into(),
                region,
                metric: SUCCESSIVE_DIFFERENCE.into(),
                threshold,
                iterations,
                max_size: min_size * ratio,
                min_size,
                manual: manual
                    .into_iter()
                    .filter(|s| threshold.is_some() || *s != SLOT_THRESHOLD)
                    .map(String::from)
                    .collect(),
            },
        )
}

fn ordered_manual(plan: &ConvergencePlan) -> Vec<String> {
    let order = convergence_schema();
    let mut m = plan.manual.clone();
    m.sort_by_key(|s| order.slots.iter().position(|x| &x.name == s));
    m
}

proptest! {
    #[test]
    fn rendered_scripts_parse_back(plan in plans()) {
        let text = plan.render_script();
        prop_assert!(ConvergencePlan::looks_like_script(&text));
        let back = ConvergencePlan::parse_script(&text).unwrap();
        prop_assert_eq!(&back.manual, &ordered_manual(&plan));
        prop_assert_eq!(back, ConvergencePlan { manual: ordered_manual(&plan), ..plan });
    }

    #[test]
    fn manual_markers_sit_only_on_manual_lines(plan in plans()) {
        let text = plan.render_script();
        prop_assert_eq!(text.matches("# manual").count(), plan.manual.len());
    }

    #[test]
    fn element_sizes_halve_each_iteration(plan in plans()) {
        for k in 0..plan.iterations - 1 {
            let (a, b) = plan.sizes(k);
            let (c, d) = plan.sizes(k + 1);
            prop_assert_eq!((a, b), (2.0 * c, 2.0 * d));
            prop_assert!(c >= d);
        }
    }

    #[test]
    fn dropping_the_threshold_forgets_its_manual_mark(plan in plans()) {
        let open = plan.clone().without_threshold();
        prop_assert_eq!(open.threshold, None);
        prop_assert!(!open.manual.iter().any(|s| s == SLOT_THRESHOLD));
        prop_assert_eq!(open.manual.len() + usize::from(plan.manual.iter().any(|s| s == SLOT_THRESHOLD)), plan.manual.len());
    }

    #[test]
    fn convergence_tables_round_trip_through_csv(
        rows in prop::collection::vec((1e-9f64..1.0, 1e-9f64..1.0, -1e3f64..1e3, 0.0f64..1e3), 0..20),
    ) {
        let result = ConvergenceResult {
            rows: rows
                .into_iter()
                .map(|(min_size, max_size, quantity, error)| ConvergenceRow { min_size, max_size, quantity, error })
                .collect(),
            terminated_by: Termination::Iterations,
            initial_quantity: 0.0,
        };
        prop_assert_eq!(ConvergenceResult::rows_from_csv(&result.to_csv()).unwrap(), result.rows);
    }
}
