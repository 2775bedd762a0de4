use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mabrrt::experiment::{
    emit_records, render_curves, render_directory, run_experiment, ExperimentConfig, NamedPlanner,
    ResultBundle, Summary,
};

#[derive(Parser)]
#[command(name = "mabrrt", version, about = "Bandit-guided RRT benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run planners for seeded repetitions and write CSV records and figures.
    Plan(PlanArgs),
    /// Run the regret harness only.
    Regret(CommonArgs),
    /// Redraw figures from the CSV files of an output directory.
    Render {
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Bundled scenario names or scenario files, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "A")]
    scenario: Vec<String>,
    /// First seed; repetition i uses seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    reps: usize,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    /// Output directory; one subdirectory per scenario when several are given.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Regret batch size per arm and strategy.
    #[arg(long, default_value_t = 50)]
    batch: usize,
    /// Also write wall-clock timings (timing.json).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Planner presets: ao, kfmanb, ucb1, ts.
    #[arg(long, value_delimiter = ',', default_value = "ao,kfmanb,ucb1,ts")]
    planner: Vec<String>,
    /// Also run the regret harness.
    #[arg(long)]
    regret: bool,
    /// Experiment file (TOML); command-line scenario, seed, reps, iters and
    /// out still apply.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn out_dir(base: &Path, scenario: &str, many: bool) -> PathBuf {
    if many {
        let stem = Path::new(scenario)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| scenario.to_string());
        base.join(stem)
    } else {
        base.to_path_buf()
    }
}

fn report(bundle: &ResultBundle) {
    let scenario = &bundle.provenance.scenario;
    for p in &bundle.provenance.config.planners {
        let costs = bundle.final_costs(&p.name);
        let runs = bundle.runs.iter().filter(|r| r.planner == p.name).count();
        match mabrrt::experiment::summarize(&costs) {
            Some(Summary {
                mean, ci_lo, ci_hi, ..
            }) => println!(
                "{scenario} {:>8}: final cost {mean:.4} [{ci_lo:.4}, {ci_hi:.4}], solved {}/{runs}",
                p.name,
                costs.len()
            ),
            None => println!("{scenario} {:>8}: no solution in {runs} runs", p.name),
        }
    }
    let k = bundle.provenance.config.iterations;
    for row in bundle.regret_aggregates.iter().filter(|r| r.iteration == k) {
        if let Some(m) = row.mean {
            println!(
                "{scenario} {:>8}: cumulative regret {m:.2} at k={k}",
                row.series
            );
        }
    }
    let failed = bundle.runs.iter().filter(|r| r.outcome.is_err()).count()
        + bundle
            .regret_runs
            .iter()
            .filter(|r| r.outcome.is_err())
            .count();
    if failed > 0 {
        eprintln!("{scenario}: {failed} run(s) failed; see status column in runs.csv");
    }
}

fn execute(config: ExperimentConfig, timing: bool) -> mabrrt::Result<()> {
    let bundle = run_experiment(&config)?;
    emit_records(&bundle, &config.output_dir, timing)?;
    render_curves(
        &bundle.provenance.scenario,
        &bundle.aggregates,
        &bundle.regret_aggregates,
        &config.output_dir,
    )?;
    report(&bundle);
    Ok(())
}

fn run(cli: Cli) -> mabrrt::Result<()> {
    match cli.command {
        Command::Plan(args) => {
            let base = match &args.config {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| {
                        mabrrt::Error::InvalidConfig(format!("{}: {e}", path.display()))
                    })?;
                    ExperimentConfig::from_toml(&text)?
                }
                None => ExperimentConfig {
                    planners: args
                        .planner
                        .iter()
                        .map(|n| NamedPlanner::preset(n))
                        .collect::<mabrrt::Result<_>>()?,
                    ..ExperimentConfig::default()
                },
            };
            let c = &args.common;
            let many = c.scenario.len() > 1;
            for scenario in &c.scenario {
                let config = ExperimentConfig {
                    scenario_path: scenario.clone(),
                    repetitions: c.reps,
                    base_seed: c.seed,
                    iterations: c.iters,
                    output_dir: out_dir(&c.out, scenario, many),
                    enable_regret: args.regret || base.enable_regret,
                    regret_batch_size: c.batch,
                    ..base.clone()
                };
                execute(config, c.timing)?;
            }
            Ok(())
        }
        Command::Regret(c) => {
            let many = c.scenario.len() > 1;
            for scenario in &c.scenario {
                let config = ExperimentConfig {
                    scenario_path: scenario.clone(),
                    planners: Vec::new(),
                    repetitions: c.reps,
                    base_seed: c.seed,
                    iterations: c.iters,
                    output_dir: out_dir(&c.out, scenario, many),
                    enable_regret: true,
                    regret_batch_size: c.batch,
                };
                execute(config, c.timing)?;
            }
            Ok(())
        }
        Command::Render { out } => {
            for path in render_directory(&out)? {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
