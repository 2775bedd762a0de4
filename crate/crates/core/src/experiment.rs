//! Seeded benchmark runs, aggregate statistics, CSV/JSON output and SVG
//! curves.
//!
//! Every planner runs `repetitions` times with seeds `base_seed + i`. Cost
//! traces are step functions: at iteration `k` a run contributes the best
//! cost found up to `k`, or nothing if it has not solved yet. Aggregates are
//! mean ± 1.96·s/√n over the runs that contribute, with the contributing
//! count reported as `coverage`.
//!
//! Output files (all deterministic for a fixed config):
//! `runs.csv`, `aggregate.csv`, `regret.csv`, `regret_aggregate.csv`,
//! `meta.json`, and optionally `timing.json` (wall-clock, not deterministic).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path as FsPath, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bandit::Policy;
use crate::error::{Error, Result};
use crate::planner::{mab_rrt, PlanResult, PlannerConfig};
use crate::regret::{regret_series, RegretConfig, RegretSeries, Strategy};
use crate::world::{bundled_scenario, load_scenario, Scenario};

/// Normal-approximation 95% quantile.
pub const Z95: f64 = 1.96;

/// Planner configuration for a named preset: `ao` (goal-biased baseline),
/// `kfmanb`, `ucb1` or `ts`.
pub fn planner_preset(name: &str) -> Result<PlannerConfig> {
    match name.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
        "ao" | "aorrt" => Ok(PlannerConfig::baseline()),
        other => {
            let policy: Policy = other.parse()?;
            Ok(PlannerConfig {
                policy,
                ..PlannerConfig::default()
            })
        }
    }
}

/// Loads a scenario from a file, or from the bundled set when no such file
/// exists (`"A"`, `"scenario_B"`, ...).
pub fn resolve_scenario(source: &str) -> Result<(Scenario, String)> {
    let path = FsPath::new(source);
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let scenario = load_scenario(&text)?;
        return Ok((scenario, text));
    }
    let scenario = bundled_scenario(source)?;
    let text = crate::world::BUNDLED_SCENARIOS
        .iter()
        .find(|(key, _)| format!("scenario_{key}") == scenario.name)
        .map(|(_, text)| text.to_string())
        .unwrap_or_default();
    Ok((scenario, text))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedPlanner {
    pub name: String,
    #[serde(default)]
    pub config: PlannerConfig,
}

impl NamedPlanner {
    pub fn preset(name: &str) -> Result<Self> {
        Ok(NamedPlanner {
            name: name.to_string(),
            config: planner_preset(name)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Scenario file, or a bundled scenario name.
    pub scenario_path: String,
    pub planners: Vec<NamedPlanner>,
    pub repetitions: usize,
    pub base_seed: u64,
    /// Iteration budget; overrides each planner's own.
    pub iterations: usize,
    pub output_dir: PathBuf,
    pub enable_regret: bool,
    pub regret_batch_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario_path: "A".into(),
            planners: ["ao", "kfmanb"]
                .iter()
                .map(|n| NamedPlanner::preset(n).expect("built-in preset"))
                .collect(),
            repetitions: 30,
            base_seed: 0,
            iterations: 1000,
            output_dir: PathBuf::from("results"),
            enable_regret: false,
            regret_batch_size: 50,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.enable_regret && self.regret_batch_size == 0 {
            return bad("regret batch size must be at least 1".into());
        }
        let mut names: Vec<&str> = self.planners.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("planner names must be unique".into());
        }
        for p in &self.planners {
            p.config.validate()?;
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repetitions as u64)
            .map(|i| self.base_seed + i)
            .collect()
    }

    /// Parses a TOML experiment file.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

/// Outcome of one seeded planner run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub planner: String,
    pub run_id: usize,
    pub seed: u64,
    /// `Err` holds the panic or error message of a failed run.
    pub outcome: std::result::Result<PlanResult, String>,
}

impl RunRecord {
    /// Best cost at iteration `k` (1-based), carried forward; `None` before
    /// the first solution or for a failed run.
    pub fn cost_at(&self, k: usize) -> Option<f64> {
        let result = self.outcome.as_ref().ok()?;
        let at = result.cost_trace.partition_point(|(i, _)| *i <= k);
        (at > 0).then(|| result.cost_trace[at - 1].1)
    }

    pub fn final_cost(&self) -> Option<f64> {
        self.outcome
            .as_ref()
            .ok()
            .and_then(|r| r.best_path.as_ref().map(|p| p.total_cost))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: usize,
}

/// Mean and normal-approximation 95% interval; `None` for an empty sample.
/// A single value gives a zero-width interval.
pub fn summarize(values: &[f64]) -> Option<Summary> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let half = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Z95 * (var / n as f64).sqrt()
    } else {
        0.0
    };
    Some(Summary {
        mean,
        ci_lo: mean - half,
        ci_hi: mean + half,
        n,
    })
}

/// One row of `aggregate.csv` / `regret_aggregate.csv`. The statistics are
/// empty when no run contributes at that iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub series: String,
    pub iteration: usize,
    pub mean: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub coverage: usize,
}

impl AggregateRow {
    fn new(series: &str, iteration: usize, values: &[f64]) -> Self {
        let s = summarize(values);
        AggregateRow {
            series: series.to_string(),
            iteration,
            mean: s.map(|s| s.mean),
            ci_lo: s.map(|s| s.ci_lo),
            ci_hi: s.map(|s| s.ci_hi),
            coverage: values.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegretRun {
    pub run_id: usize,
    pub seed: u64,
    pub outcome: std::result::Result<RegretSeries, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scenario: String,
    /// SHA-256 over the experiment config (JSON) and the scenario text.
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub library_version: String,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub planner: String,
    pub seed: u64,
    pub mean_iteration_seconds: f64,
    pub max_iteration_seconds: f64,
    pub clustering_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ResultBundle {
    pub runs: Vec<RunRecord>,
    pub aggregates: Vec<AggregateRow>,
    pub regret_runs: Vec<RegretRun>,
    pub regret_aggregates: Vec<AggregateRow>,
    pub provenance: Provenance,
}

impl ResultBundle {
    pub fn timing(&self) -> Vec<TimingRow> {
        self.runs
            .iter()
            .filter_map(|r| {
                let res = r.outcome.as_ref().ok()?;
                Some(TimingRow {
                    planner: r.planner.clone(),
                    seed: r.seed,
                    mean_iteration_seconds: res.timing.mean_seconds,
                    max_iteration_seconds: res.timing.max_seconds,
                    clustering_seconds: res.timing.clustering_seconds,
                })
            })
            .collect()
    }

    /// Final best costs of one planner's solved runs, in seed order.
    pub fn final_costs(&self, planner: &str) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| r.planner == planner)
            .filter_map(RunRecord::final_cost)
            .collect()
    }
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

/// Per-iteration aggregates of carried-forward cost traces.
pub fn aggregate_costs(
    runs: &[RunRecord],
    planners: &[String],
    iterations: usize,
) -> Vec<AggregateRow> {
    let mut rows = Vec::with_capacity(planners.len() * iterations);
    for name in planners {
        let mine: Vec<&RunRecord> = runs.iter().filter(|r| &r.planner == name).collect();
        for k in 1..=iterations {
            let values: Vec<f64> = mine.iter().filter_map(|r| r.cost_at(k)).collect();
            rows.push(AggregateRow::new(name, k, &values));
        }
    }
    rows
}

/// Per-iteration aggregates of cumulative regret, one series per strategy.
pub fn aggregate_regret(runs: &[RegretRun]) -> Vec<AggregateRow> {
    let series: Vec<&RegretSeries> = runs
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok())
        .collect();
    let len = series.iter().map(|s| s.records.len()).max().unwrap_or(0);
    let mut rows = Vec::new();
    for strategy in Strategy::ALL {
        for k in 0..len {
            let values: Vec<f64> = series
                .iter()
                .filter_map(|s| s.cumulative.get(&strategy).and_then(|c| c.get(k)).copied())
                .collect();
            rows.push(AggregateRow::new(strategy.name(), k + 1, &values));
        }
    }
    rows
}

/// Runs every planner and, when enabled, the regret harness.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultBundle> {
    config.validate()?;
    let (scenario, scenario_text) = resolve_scenario(&config.scenario_path)?;
    let seeds = config.seeds();

    let jobs: Vec<(usize, usize, u64)> = (0..config.planners.len())
        .flat_map(|p| seeds.iter().enumerate().map(move |(i, s)| (p, i, *s)))
        .collect();
    let runs: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(p, run_id, seed)| {
            let named = &config.planners[p];
            let planner = PlannerConfig {
                rng_seed: seed,
                total_iterations: config.iterations,
                ..named.config.clone()
            };
            let outcome = catch_unwind(AssertUnwindSafe(|| mab_rrt(&scenario, &planner)))
                .map_err(panic_message)
                .and_then(|r| r.map_err(|e| e.to_string()));
            RunRecord {
                planner: named.name.clone(),
                run_id,
                seed,
                outcome,
            }
        })
        .collect();

    let names: Vec<String> = config.planners.iter().map(|p| p.name.clone()).collect();
    let aggregates = aggregate_costs(&runs, &names, config.iterations);

    let regret_runs: Vec<RegretRun> = if config.enable_regret {
        seeds
            .par_iter()
            .enumerate()
            .map(|(run_id, &seed)| {
                let mut rc = RegretConfig {
                    batch_size: config.regret_batch_size,
                    ..RegretConfig::default()
                };
                rc.planner.rng_seed = seed;
                rc.planner.total_iterations = config.iterations;
                let outcome = catch_unwind(AssertUnwindSafe(|| regret_series(&scenario, &rc)))
                    .map_err(panic_message)
                    .and_then(|r| r.map_err(|e| e.to_string()));
                RegretRun {
                    run_id,
                    seed,
                    outcome,
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    let regret_aggregates = aggregate_regret(&regret_runs);

    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(config)?);
    hasher.update(scenario_text.as_bytes());
    let provenance = Provenance {
        scenario: scenario.name.clone(),
        config_sha256: hex::encode(hasher.finalize()),
        seeds,
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
    };
    Ok(ResultBundle {
        runs,
        aggregates,
        regret_runs,
        regret_aggregates,
        provenance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub planner: String,
    pub run_id: usize,
    pub seed: u64,
    pub iteration: usize,
    pub best_cost: Option<f64>,
    /// `solved`, `unsolved` or `failed`; `best_cost` is empty unless solved.
    pub status: String,
}

/// Rows of `runs.csv`: every improvement, then one row at the final
/// iteration.
pub fn run_rows(bundle: &ResultBundle) -> Vec<RunRow> {
    let iterations = bundle.provenance.config.iterations;
    let mut rows = Vec::new();
    for run in &bundle.runs {
        let row = |iteration, best_cost, status: &str| RunRow {
            planner: run.planner.clone(),
            run_id: run.run_id,
            seed: run.seed,
            iteration,
            best_cost,
            status: status.to_string(),
        };
        match &run.outcome {
            Ok(result) => {
                for &(k, c) in &result.cost_trace {
                    rows.push(row(k, Some(c), "solved"));
                }
                match run.cost_at(iterations) {
                    Some(c) => rows.push(row(iterations, Some(c), "solved")),
                    None => rows.push(row(iterations, None, "unsolved")),
                }
            }
            Err(_) => rows.push(row(iterations, None, "failed")),
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretRow {
    pub run_id: usize,
    pub seed: u64,
    pub iteration: usize,
    pub strategy: String,
    pub step_regret: f64,
    pub cumulative_regret: f64,
}

pub fn regret_rows(bundle: &ResultBundle) -> Vec<RegretRow> {
    let mut rows = Vec::new();
    for run in &bundle.regret_runs {
        let Ok(series) = &run.outcome else { continue };
        for (k, rec) in series.records.iter().enumerate() {
            for (strategy, regret) in &rec.per_strategy_regret {
                rows.push(RegretRow {
                    run_id: run.run_id,
                    seed: run.seed,
                    iteration: rec.iteration,
                    strategy: strategy.name().to_string(),
                    step_regret: *regret,
                    cumulative_regret: series.cumulative[strategy][k],
                });
            }
        }
    }
    rows
}

fn write_csv<T: Serialize>(path: &FsPath, rows: &[T], header: &[&str]) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    writer.write_record(header)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

const RUN_HEADER: [&str; 6] = [
    "planner",
    "run_id",
    "seed",
    "iteration",
    "best_cost",
    "status",
];
const AGGREGATE_HEADER: [&str; 6] = [
    "planner",
    "iteration",
    "mean_cost",
    "ci_lo",
    "ci_hi",
    "coverage",
];
const REGRET_HEADER: [&str; 6] = [
    "run_id",
    "seed",
    "iteration",
    "strategy",
    "step_regret",
    "cumulative_regret",
];
const REGRET_AGGREGATE_HEADER: [&str; 6] = [
    "strategy",
    "iteration",
    "mean_cumulative_regret",
    "ci_lo",
    "ci_hi",
    "coverage",
];

/// Writes the CSV files and `meta.json` into `dir`; `timing.json` too when
/// `with_timing` is set.
pub fn emit_records(
    bundle: &ResultBundle,
    dir: &FsPath,
    with_timing: bool,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut out = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    write_csv(&out("runs.csv"), &run_rows(bundle), &RUN_HEADER)?;
    write_csv(&out("aggregate.csv"), &bundle.aggregates, &AGGREGATE_HEADER)?;
    write_csv(&out("regret.csv"), &regret_rows(bundle), &REGRET_HEADER)?;
    write_csv(
        &out("regret_aggregate.csv"),
        &bundle.regret_aggregates,
        &REGRET_AGGREGATE_HEADER,
    )?;
    let meta = out("meta.json");
    let mut text = serde_json::to_string_pretty(&bundle.provenance)?;
    text.push('\n');
    fs::write(&meta, text).map_err(|e| Error::io(&meta, e))?;
    if with_timing {
        let timing = out("timing.json");
        let mut text = serde_json::to_string_pretty(&bundle.timing())?;
        text.push('\n');
        fs::write(&timing, text).map_err(|e| Error::io(&timing, e))?;
    }
    Ok(written)
}

/// Reads an `aggregate.csv` or `regret_aggregate.csv` file back.
pub fn read_aggregates(path: &FsPath) -> Result<Vec<AggregateRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let num = |i: usize| -> Result<Option<f64>> {
            let s = field(i);
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| Error::Parse(format!("bad number {s:?} in {}", path.display())))
            }
        };
        let int = |i: usize| -> Result<usize> {
            field(i).parse().map_err(|_| {
                Error::Parse(format!("bad integer {:?} in {}", field(i), path.display()))
            })
        };
        rows.push(AggregateRow {
            series: field(0).to_string(),
            iteration: int(1)?,
            mean: num(2)?,
            ci_lo: num(3)?,
            ci_hi: num(4)?,
            coverage: int(5)?,
        });
    }
    Ok(rows)
}

/// One mean curve with its band.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    /// `(x, mean, lo, hi)`; gaps where the statistic is undefined are omitted.
    pub points: Vec<(f64, f64, f64, f64)>,
}

/// Groups aggregate rows into curves, keeping first-appearance order.
pub fn curves_from_rows(rows: &[AggregateRow]) -> Vec<Curve> {
    let mut order: Vec<String> = Vec::new();
    let mut by_label: BTreeMap<String, Vec<(f64, f64, f64, f64)>> = BTreeMap::new();
    for r in rows {
        if !by_label.contains_key(&r.series) {
            order.push(r.series.clone());
        }
        let pts = by_label.entry(r.series.clone()).or_default();
        if let (Some(m), Some(lo), Some(hi)) = (r.mean, r.ci_lo, r.ci_hi) {
            pts.push((r.iteration as f64, m, lo, hi));
        }
    }
    order
        .into_iter()
        .map(|label| Curve {
            points: by_label.remove(&label).unwrap_or_default(),
            label,
        })
        .collect()
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];
const DASHES: [&str; 6] = ["", "6 3", "2 2", "8 3 2 3", "1 3", "10 4"];

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Line plot with shaded bands, axes, ticks and a legend, as SVG text.
pub fn render_svg(title: &str, x_label: &str, y_label: &str, curves: &[Curve]) -> String {
    let (w, h) = (720.0, 440.0);
    let (left, right, top, bottom) = (70.0, 150.0, 40.0, 55.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let pts = curves.iter().flat_map(|c| c.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, _, lo, hi) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(lo);
        y1 = y1.max(hi);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        let pad = y0.abs().max(1.0) * 0.05;
        y0 -= pad;
        y1 += pad;
    }
    let x_step = nice_step(x1 - x0);
    let y_step = nice_step(y1 - y0);
    (x0, x1) = (
        (x0 / x_step).floor() * x_step,
        (x1 / x_step).ceil() * x_step,
    );
    (y0, y1) = (
        (y0 / y_step).floor() * y_step,
        (y1 / y_step).ceil() * y_step,
    );
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    for xv in ticks(x0, x1, x_step) {
        let px = sx(xv);
        let _ = writeln!(
            svg,
            r##"<line x1="{px:.2}" y1="{top}" x2="{px:.2}" y2="{:.2}" stroke="#ccc"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            top + ph,
            top + ph + 16.0,
            format_tick(xv, x_step)
        );
    }
    for yv in ticks(y0, y1, y_step) {
        let py = sy(yv);
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#ccc"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            left + pw,
            left - 6.0,
            py + 4.0,
            format_tick(yv, y_step)
        );
    }
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        top + ph / 2.0,
        escape(y_label)
    );

    for (i, curve) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let dash = DASHES[i % DASHES.len()];
        let _ = writeln!(
            svg,
            r#"<g class="series" data-label="{}">"#,
            escape(&curve.label)
        );
        if !curve.points.is_empty() {
            let mut band = String::new();
            for &(x, _, _, hi) in &curve.points {
                let _ = write!(band, "{:.2},{:.2} ", sx(x), sy(hi));
            }
            for &(x, _, lo, _) in curve.points.iter().rev() {
                let _ = write!(band, "{:.2},{:.2} ", sx(x), sy(lo));
            }
            let _ = writeln!(
                svg,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                band.trim_end()
            );
            let line: Vec<String> = curve
                .points
                .iter()
                .map(|&(x, m, _, _)| format!("{:.2},{:.2}", sx(x), sy(m)))
                .collect();
            let dash_attr = if dash.is_empty() {
                String::new()
            } else {
                format!(r#" stroke-dasharray="{dash}""#)
            };
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash_attr}/>"#,
                line.join(" ")
            );
        }
        let ly = top + 14.0 + 20.0 * i as f64;
        let lx = left + pw + 12.0;
        let dash_attr = if dash.is_empty() {
            String::new()
        } else {
            format!(r#" stroke-dasharray="{dash}""#)
        };
        let _ = writeln!(
            svg,
            r#"<line class="legend" x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash_attr}/><text x="{}" y="{}">{}</text>"#,
            lx + 26.0,
            lx + 32.0,
            ly + 4.0,
            escape(&curve.label)
        );
        svg.push_str("</g>\n");
    }
    svg.push_str("</svg>\n");
    svg
}

/// Tick spacing of 1, 2 or 5 times a power of ten, giving about five ticks.
fn nice_step(range: f64) -> f64 {
    let raw = range / 5.0;
    let magnitude = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * magnitude)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * magnitude)
}

fn ticks(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

fn format_tick(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    format!("{v:.decimals$}")
}

/// Writes `cost.svg` (and `regret.svg` when regret data exists) into `dir`.
pub fn render_curves(
    scenario: &str,
    aggregates: &[AggregateRow],
    regret_aggregates: &[AggregateRow],
    dir: &FsPath,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let cost = dir.join("cost.svg");
    let svg = render_svg(
        &format!("{scenario}: best cost"),
        "iteration",
        "mean best cost (95% CI)",
        &curves_from_rows(aggregates),
    );
    fs::write(&cost, svg).map_err(|e| Error::io(&cost, e))?;
    written.push(cost);
    if !regret_aggregates.is_empty() {
        let regret = dir.join("regret.svg");
        let svg = render_svg(
            &format!("{scenario}: cumulative regret"),
            "iteration",
            "mean cumulative regret (95% CI)",
            &curves_from_rows(regret_aggregates),
        );
        fs::write(&regret, svg).map_err(|e| Error::io(&regret, e))?;
        written.push(regret);
    }
    Ok(written)
}

/// Re-renders the figures of an output directory from its CSV files.
pub fn render_directory(dir: &FsPath) -> Result<Vec<PathBuf>> {
    let aggregates = read_aggregates(&dir.join("aggregate.csv"))?;
    let regret_path = dir.join("regret_aggregate.csv");
    let regret = if regret_path.is_file() {
        read_aggregates(&regret_path)?
    } else {
        Vec::new()
    };
    let scenario = fs::read_to_string(dir.join("meta.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<Provenance>(&t).ok())
        .map(|p| p.scenario)
        .unwrap_or_else(|| "results".into());
    render_curves(&scenario, &aggregates, &regret, dir)
}
