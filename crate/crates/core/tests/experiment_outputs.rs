use std::process::Command;

use mabrrt::experiment::{
    curves_from_rows, emit_records, read_aggregates, render_svg, run_experiment, AggregateRow,
    ExperimentConfig, NamedPlanner, Provenance, ResultBundle,
};

fn small_bundle() -> ResultBundle {
    let config = ExperimentConfig {
        scenario_path: "B".into(),
        planners: vec![
            NamedPlanner::preset("ao").unwrap(),
            NamedPlanner::preset("kfmanb").unwrap(),
        ],
        repetitions: 4,
        base_seed: 10,
        iterations: 300,
        enable_regret: true,
        regret_batch_size: 5,
        ..ExperimentConfig::default()
    };
    run_experiment(&config).unwrap()
}

fn approx_eq(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() <= tol,
        (None, None) => true,
        _ => false,
    }
}

#[test]
fn aggregates_match_brute_force_recomputation() {
    let bundle = small_bundle();
    for row in &bundle.aggregates {
        let values: Vec<f64> = bundle
            .runs
            .iter()
            .filter(|r| r.planner == row.series)
            .filter_map(|r| {
                let res = r.outcome.as_ref().ok()?;
                res.cost_trace
                    .iter()
                    .take_while(|(k, _)| *k <= row.iteration)
                    .last()
                    .map(|(_, c)| *c)
            })
            .collect();
        assert_eq!(row.coverage, values.len());
        let n = values.len() as f64;
        if values.is_empty() {
            assert!(row.mean.is_none());
            continue;
        }
        let mean = values.iter().sum::<f64>() / n;
        let half = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            1.96 * (var / n).sqrt()
        } else {
            0.0
        };
        assert!(approx_eq(row.mean, Some(mean), 1e-12));
        assert!(approx_eq(row.ci_lo, Some(mean - half), 1e-12));
        assert!(approx_eq(row.ci_hi, Some(mean + half), 1e-12));
    }
}

#[test]
fn aggregate_csv_round_trips() {
    let bundle = small_bundle();
    let dir = tempfile::tempdir().unwrap();
    emit_records(&bundle, dir.path(), false).unwrap();
    for (file, rows) in [
        ("aggregate.csv", &bundle.aggregates),
        ("regret_aggregate.csv", &bundle.regret_aggregates),
    ] {
        let back = read_aggregates(&dir.path().join(file)).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in back.iter().zip(rows.iter()) {
            assert_eq!(
                (&a.series, a.iteration, a.coverage),
                (&b.series, b.iteration, b.coverage)
            );
            assert!(approx_eq(a.mean, b.mean, 1e-9));
            assert!(approx_eq(a.ci_lo, b.ci_lo, 1e-9));
            assert!(approx_eq(a.ci_hi, b.ci_hi, 1e-9));
        }
    }
    assert!(!dir.path().join("timing.json").exists());
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["seeds"], serde_json::json!([10, 11, 12, 13]));
    assert_eq!(meta["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn runs_csv_has_documented_columns() {
    let bundle = small_bundle();
    let dir = tempfile::tempdir().unwrap();
    emit_records(&bundle, dir.path(), true).unwrap();
    let text = std::fs::read_to_string(dir.path().join("runs.csv")).unwrap();
    let header = text.lines().next().unwrap();
    for column in ["run_id", "seed", "iteration", "best_cost"] {
        assert!(header.split(',').any(|c| c == column), "{header}");
    }
    let regret = std::fs::read_to_string(dir.path().join("regret.csv")).unwrap();
    let header = regret.lines().next().unwrap();
    for column in ["iteration", "strategy", "cumulative_regret"] {
        assert!(header.split(',').any(|c| c == column), "{header}");
    }
    assert!(dir.path().join("timing.json").exists());
}

#[test]
fn svg_is_well_formed_with_one_legend_entry_per_series() {
    let bundle = small_bundle();
    let svg = render_svg(
        "B",
        "iteration",
        "best cost",
        &curves_from_rows(&bundle.aggregates),
    );
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let labels: Vec<&str> = doc
        .descendants()
        .filter(|n| n.has_tag_name("g") && n.attribute("class") == Some("series"))
        .filter_map(|n| n.attribute("data-label"))
        .collect();
    assert_eq!(labels, ["ao", "kfmanb"]);
}

#[test]
fn empty_bundle_writes_headers_only() {
    let config = ExperimentConfig {
        planners: Vec::new(),
        ..ExperimentConfig::default()
    };
    let bundle = ResultBundle {
        runs: Vec::new(),
        aggregates: Vec::<AggregateRow>::new(),
        regret_runs: Vec::new(),
        regret_aggregates: Vec::new(),
        provenance: Provenance {
            scenario: "empty".into(),
            config_sha256: String::new(),
            seeds: Vec::new(),
            library_version: "0".into(),
            config,
        },
    };
    let dir = tempfile::tempdir().unwrap();
    emit_records(&bundle, dir.path(), false).unwrap();
    for file in [
        "runs.csv",
        "aggregate.csv",
        "regret.csv",
        "regret_aggregate.csv",
    ] {
        let text = std::fs::read_to_string(dir.path().join(file)).unwrap();
        assert_eq!(text.lines().count(), 1, "{file}: {text}");
    }
    let svg = render_svg("empty", "x", "y", &[]);
    roxmltree::Document::parse(&svg).unwrap();
}

#[test]
fn cli_rejects_bad_configuration_with_nonzero_exit() {
    let out = Command::new(env!("CARGO_BIN_EXE_mabrrt"))
        .args([
            "plan",
            "--scenario",
            "no_such_scenario",
            "--reps",
            "1",
            "--iters",
            "10",
        ])
        .arg("--out")
        .arg(tempfile::tempdir().unwrap().path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());

    let out = Command::new(env!("CARGO_BIN_EXE_mabrrt"))
        .args(["plan", "--planner", "bogus", "--reps", "1", "--iters", "10"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn cli_writes_records_and_figures() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mabrrt"))
        .args([
            "plan",
            "--scenario",
            "C",
            "--reps",
            "2",
            "--iters",
            "200",
            "--planner",
            "ao,ts",
        ])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for file in ["runs.csv", "aggregate.csv", "meta.json", "cost.svg"] {
        assert!(dir.path().join(file).is_file(), "{file} missing");
    }
    let rendered = Command::new(env!("CARGO_BIN_EXE_mabrrt"))
        .args(["render", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(rendered.status.success());
}
