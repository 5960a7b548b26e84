use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use calda::data::{generate, load_dataset, save_dataset, Scenario, Shift, SignalLayout, SyntheticSpec};
use calda::experiment::{
    run_protocol, summarize, train, write_results, ws_noise_sweep, ExperimentConfig, MethodSpec, ProtocolOptions, ResultRow,
};
use calda::gradcheck::{run_suite, STEP, TOLERANCE};
use calda::{Error, Result};

#[derive(Parser)]
#[command(name = "calda", version, about = "Contrastive adversarial multi-source domain adaptation for time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic multi-domain dataset.
    Generate(GenerateArgs),
    /// Train one model from a JSON config.
    Train(TrainArgs),
    /// Run the multi-target, multi-source-set evaluation protocol.
    Protocol(ProtocolArgs),
    /// Train weak-supervision variants under noisy label proportions.
    WsSweep(SweepArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    scenario: Scenario,
    #[arg(long, default_value = "intra_translate")]
    shift: Shift,
    #[arg(long, default_value_t = 1.0)]
    magnitude: f64,
    #[arg(long, default_value_t = 12)]
    domains: usize,
    #[arg(long, default_value_t = 100)]
    windows_per_class: usize,
    #[arg(long, default_value_t = 50)]
    window_len: usize,
    /// Sum the two SW sine components into one channel.
    #[arg(long)]
    summed: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Full generator spec as JSON; overrides the other generator flags.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// 30000 iterations with batch 128.
    #[arg(long)]
    paper_scale: bool,
    /// Results CSV with one row.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Common {
    /// Base config; its dataset is replaced by `--dataset`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    model_seed: Option<u64>,
}

#[derive(Args)]
struct ProtocolArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',', required = true)]
    method: Vec<MethodSpec>,
    #[arg(long, value_delimiter = ',', required = true)]
    n_list: Vec<usize>,
    #[arg(long)]
    targets: Option<usize>,
    #[arg(long, default_value_t = 3)]
    sets: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.1,0.2,0.4")]
    budgets: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "calda-xs-h-ws")]
    method: Vec<MethodSpec>,
    #[arg(long)]
    target: Option<usize>,
    #[arg(long)]
    n_sources: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

fn read_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_json(&fs::read_to_string(path)?)
}

fn base_config(common: &Common, dataset: &Path) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = match &common.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => ExperimentConfig::default(),
    };
    cfg.dataset = Some(dataset.to_path_buf());
    cfg.synthetic = None;
    if common.paper_scale {
        cfg = cfg.paper_scale();
    }
    if let Some(i) = common.iterations {
        cfg.iterations = i;
    }
    if let Some(s) = common.model_seed {
        cfg.model_seed = s;
    }
    Ok(cfg)
}

fn write_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    write_results(rows, fs::File::create(path)?)
}

fn print_summary(rows: &[ResultRow]) {
    for s in summarize(rows) {
        println!(
            "{:<24} n={:<3} trials={:<3} mean={:.4} deviation={:.4}",
            s.method, s.n_sources, s.trials, s.mean, s.deviation
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => {
            let spec = match &a.spec {
                Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
                None => SyntheticSpec {
                    shift: a.shift,
                    shift_magnitude: a.magnitude,
                    n_domains: a.domains,
                    windows_per_class: a.windows_per_class,
                    window_len: a.window_len,
                    layout: if a.summed { SignalLayout::Summed } else { SignalLayout::Components },
                    seed: a.seed,
                    ..SyntheticSpec::new(a.scenario)
                },
            };
            let dataset = generate(&spec)?;
            save_dataset(&a.out, &dataset)?;
            println!("wrote {} domains to {}", dataset.domains.len(), a.out.display());
        }
        Command::Train(a) => {
            let mut cfg = read_config(&a.config)?;
            if a.paper_scale {
                cfg = cfg.paper_scale();
            }
            let result = train(&cfg)?;
            if let Some(out) = &a.out {
                write_csv(out, &[ResultRow::from_trial(cfg.method, &result)])?;
            }
            let summary = serde_json::json!({
                "fingerprint": result.fingerprint,
                "method": result.method,
                "target": result.target,
                "sources": result.sources,
                "best_iteration": result.best_iteration,
                "source_valid_acc": result.source_valid_acc,
                "target_test_acc": result.target_test_acc,
                "realized_ws_noise": result.realized_ws_noise,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Protocol(a) => {
            let base = base_config(&a.common, &a.dataset)?;
            let dataset = load_dataset(&a.dataset)?;
            let opts = ProtocolOptions {
                n_targets: a.targets.unwrap_or(if a.common.paper_scale {
                    ProtocolOptions::PAPER_TARGETS
                } else {
                    ProtocolOptions::default().n_targets
                }),
                sets_per_target: a.sets,
                seed: a.seed,
            };
            let rows = run_protocol(&base, &dataset, &a.method, &a.n_list, opts)?;
            write_csv(&a.out, &rows)?;
            print_summary(&rows);
        }
        Command::WsSweep(a) => {
            let mut base = base_config(&a.common, &a.dataset)?;
            if let Some(t) = a.target {
                base.target = t;
            }
            if let Some(n) = a.n_sources {
                base.n_sources = n;
            }
            let dataset = load_dataset(&a.dataset)?;
            let rows = ws_noise_sweep(&base, &dataset, &a.budgets, &a.method)?;
            write_csv(&a.out, &rows)?;
            for r in &rows {
                println!(
                    "{:<24} realized noise {:.4}  target test {:.4}",
                    r.method.to_string(),
                    r.realized_ws_noise,
                    r.target_test_acc
                );
            }
        }
        Command::Gradcheck { seed } => {
            let reports = run_suite(seed)?;
            let mut failed = 0;
            for r in &reports {
                let status = if r.passed() { "ok" } else { "FAIL" };
                println!(
                    "{status:<4} {:<28} {:>4} scalars  max rel error {:.3e} ({})",
                    r.name, r.scalars, r.max_rel_error, r.worst
                );
                failed += usize::from(!r.passed());
            }
            println!("step {STEP:e}, tolerance {TOLERANCE:e}");
            if failed > 0 {
                return Err(Error::InvalidArgument(format!("{failed} gradient checks failed")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
