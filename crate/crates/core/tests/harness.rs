use dampen::data::synth::{generate_synthetic, SynthConfig};
use dampen::harness::{
    aggregate, export_results, grid_search, read_aggregate_csv, read_scenarios_csv, run_experiment, run_scenario,
    ExperimentPlan, Method, ScenarioOptions, ScenarioResult, SearchGrid, Split, SplitData,
};
use dampen::nn::{ModelSpec, TrainConfig};
use dampen::par::Execution;

fn small_split() -> SplitData {
    let ds = generate_synthetic(
        &SynthConfig {
            n: 800,
            d: 6,
            ..Default::default()
        },
        3,
    )
    .unwrap();
    SplitData::from_dataset(&ds, 0.2).unwrap()
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 64,
        ..Default::default()
    }
}

fn spec(data: &SplitData) -> ModelSpec {
    ModelSpec::new(data.train.dim(), vec![16, 16], data.num_classes())
}

#[test]
fn zero_rate_is_degenerate() {
    let data = small_split();
    let r = run_scenario(&data, &spec(&data), &small_cfg(), 0.0, 5, &ScenarioOptions::default()).unwrap();
    assert_eq!(r.forget_size, 0);
    assert_eq!(r.assd, r.baseline);
    // same rows, same init, same shuffle: retraining reproduces the baseline
    assert_eq!(r.retrain, r.baseline);
    assert_eq!(r.unlearn_report.dampened_count, 0);
    assert_eq!(r.unlearn_report.chosen_alpha, None);
    assert!(r.baseline.mia.is_none());
}

#[test]
fn scenario_invariants() {
    let data = small_split();
    let r = run_scenario(&data, &spec(&data), &small_cfg(), 0.05, 9, &ScenarioOptions::default()).unwrap();
    assert_eq!(r.forget_size, 32);
    assert_eq!(r.n_train, 640);
    assert_eq!(r.audit_forget_rows_seen, 0);
    for m in Method::ALL {
        let x = r.method(m);
        assert!((0.0..=1.0).contains(&x.train_acc));
        assert!((0.0..=1.0).contains(&x.test_acc));
        let mia = x.mia.unwrap();
        assert!((0.0..=100.0).contains(&mia));
    }
    assert!(r.unlearn_report.dampened_count > 0);
}

#[test]
fn scenario_is_deterministic() {
    let data = small_split();
    let s = spec(&data);
    let opts = ScenarioOptions::default();
    let a = run_scenario(&data, &s, &small_cfg(), 0.05, 11, &opts).unwrap();
    let b = run_scenario(&data, &s, &small_cfg(), 0.05, 11, &opts).unwrap();
    assert_eq!(a.without_timings(), b.without_timings());
    let c = run_scenario(&data, &s, &small_cfg(), 0.05, 12, &opts).unwrap();
    assert_ne!(a.without_timings(), c.without_timings());
}

fn plan(data: &SplitData, n: usize) -> ExperimentPlan {
    ExperimentPlan {
        rates: vec![0.0, 0.05],
        n_scenarios: n,
        base_seed: 40,
        ..ExperimentPlan::new(vec![spec(data)], small_cfg())
    }
}

#[test]
fn single_scenario_has_zero_spread() {
    let data = small_split();
    let out = run_experiment(&data, &plan(&data, 1)).unwrap();
    assert!(out.failures.is_empty());
    assert_eq!(out.results.len(), 2);
    for row in &out.report.rows {
        assert_eq!(row.std, 0.0);
        assert_eq!(row.n_scenarios, 1);
        assert_eq!(row.p_value, None);
    }
    // no forget set at rate 0, hence no attack rows
    assert!(out.report.get("2x16", 0.0, Split::Mia, Method::Assd).is_none());
    assert!(out.report.get("2x16", 0.05, Split::Mia, Method::Assd).is_some());
}

fn check_export_round_trip(results: &[ScenarioResult]) {
    let report = aggregate(results);
    let dir = tempfile::tempdir().unwrap();
    let paths = export_results(&report, results, dir.path()).unwrap();
    let agg = read_aggregate_csv(&paths.aggregate).unwrap();
    assert_eq!(agg, report.rows);
    let rows = read_scenarios_csv(&paths.scenarios).unwrap();
    assert_eq!(rows.len(), results.len());
    assert!(rows
        .windows(2)
        .all(|w| w[0].baseline_test_acc <= w[1].baseline_test_acc));
    for a in &agg {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.model_size == a.model_size && r.error_rate == a.error_rate)
            .filter_map(|r| match (a.split, a.method) {
                (Split::Test, Method::Baseline) => Some(r.baseline_test_acc),
                (Split::Test, Method::Assd) => Some(r.assd_test_acc),
                (Split::Train, Method::Retrain) => Some(r.retrain_train_acc),
                (Split::Mia, Method::Finetune) => r.finetune_mia,
                _ => None,
            })
            .collect();
        if !vals.is_empty() {
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!((mean - a.mean).abs() < 1e-9, "{a:?} vs {mean}");
        }
    }
}

#[test]
fn experiment_export_round_trip_and_significance() {
    let data = small_split();
    let out = run_experiment(&data, &plan(&data, 5)).unwrap();
    assert_eq!(out.results.len(), 10);
    let seeds: Vec<u64> = out.results[..5].iter().map(|r| r.seed).collect();
    assert_eq!(seeds, vec![40, 41, 42, 43, 44]);
    // rate 0: ASSD is the identity so every pair ties
    let p0 = out.report.get("2x16", 0.0, Split::Test, Method::Assd).unwrap().p_value;
    assert_eq!(p0, Some(1.0));
    let p = out
        .report
        .get("2x16", 0.05, Split::Test, Method::Baseline)
        .unwrap()
        .p_value
        .unwrap();
    assert!((0.0..=1.0).contains(&p));
    check_export_round_trip(&out.results);
}

#[test]
fn empty_export_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let paths = export_results(&aggregate(&[]), &[], dir.path()).unwrap();
    for p in [&paths.aggregate, &paths.scenarios, &paths.timings] {
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().count(), 1, "{}", p.display());
    }
    assert!(read_aggregate_csv(&paths.aggregate).unwrap().is_empty());
    assert!(read_scenarios_csv(&paths.scenarios).unwrap().is_empty());
}

#[test]
fn workers_do_not_change_results() {
    let data = small_split();
    let mut p = plan(&data, 2);
    let a = run_experiment(&data, &p).unwrap();
    p.workers = 2;
    let b = run_experiment(&data, &p).unwrap();
    let strip = |rs: &[ScenarioResult]| rs.iter().map(ScenarioResult::without_timings).collect::<Vec<_>>();
    assert_eq!(strip(&a.results), strip(&b.results));
    assert_eq!(a.report, b.report);
}

#[test]
fn invalid_plans_are_rejected() {
    let data = small_split();
    let mut p = plan(&data, 1);
    p.rates.clear();
    assert!(run_experiment(&data, &p).is_err());
    let mut p = plan(&data, 1);
    p.specs.clear();
    assert!(run_experiment(&data, &p).is_err());
    let mut p = plan(&data, 0);
    p.rates = vec![1.5];
    assert!(run_experiment(&data, &p).is_err());
}

#[test]
fn grid_search_prefers_training_over_no_training() {
    let data = small_split();
    let (fit, val) = data.train.temporal_split(0.2).unwrap();
    let grid = SearchGrid {
        learning_rates: vec![0.0, 0.1],
        weight_decays: vec![0.0, 1e-3],
    };
    let g = grid_search(&fit, &val, &spec(&data), &small_cfg(), &grid, 1, Execution::Sequential).unwrap();
    assert_eq!(g.points.len(), 4);
    assert_eq!(g.points[0].val_acc, g.points[1].val_acc);
    assert_eq!(g.best.learning_rate, 0.1);
    assert!(g.points.iter().all(|p| p.val_acc <= g.best.val_acc));
}

#[test]
fn shipped_schema_preset_parses() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas/dataco.toml");
    let schema = dampen::data::SchemaConfig::load(&path).unwrap();
    assert_eq!(schema.timestamp_column, "order date (DateOrders)");
    for leak in [
        "Days for shipping (real)",
        "Delivery Status",
        "Late_delivery_risk",
        "shipping date (DateOrders)",
    ] {
        assert!(
            !schema
                .numeric_columns
                .iter()
                .chain(&schema.categorical_columns)
                .any(|c| c == leak),
            "{leak}"
        );
    }
}

#[test]
fn schema_preset_loads_a_dataco_shaped_file() {
    use std::io::Write;
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas/dataco.toml");
    let schema = dampen::data::SchemaConfig::load(&path).unwrap();
    let mut cols: Vec<String> = schema
        .numeric_columns
        .iter()
        .chain(&schema.categorical_columns)
        .cloned()
        .collect();
    cols.retain(|c| c != "Days for shipment (scheduled)");
    let header = [
        vec![
            "Days for shipping (real)".to_string(),
            "Days for shipment (scheduled)".into(),
            "Customer City".into(),
        ],
        cols.clone(),
        vec!["order date (DateOrders)".into()],
    ]
    .concat();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("dataco.csv");
    let mut f = std::fs::File::create(&csv).unwrap();
    writeln!(f, "{}", header.join(",")).unwrap();
    for i in 0..40 {
        let mut row: Vec<u8> = format!("{},{},", i % 6, 2 + i % 3).into_bytes();
        row.extend_from_slice(b"San Germ\xe1n,"); // Latin-1, not UTF-8
        for c in &cols {
            let cell = if schema.numeric_columns.contains(c) {
                format!("{}.5", i % 7)
            } else {
                format!("v{}", i % 3)
            };
            row.extend_from_slice(cell.as_bytes());
            row.push(b',');
        }
        row.extend_from_slice(format!("{}/{}/2017 {}:05\n", 1 + i % 12, 1 + i % 28, i % 24).as_bytes());
        f.write_all(&row).unwrap();
    }
    drop(f);
    let table = dampen::data::load_csv(&csv, &schema).unwrap();
    assert_eq!(table.dropped_rows, 0);
    assert_eq!(table.class_names, vec!["early", "on-time", "delayed"]);
    let split = SplitData::from_table(&table, 0.2).unwrap();
    assert_eq!(split.train.len() + split.test.len(), 40);
    assert_eq!(split.num_classes(), 3);
}
