use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mojet::harness::{
    run_experiment, write_outputs, Experiment, ExperimentConfig, ExperimentReport,
};
use mojet::{Error, Result};

/// Run a modular jet experiment and write its report and CSV tables.
#[derive(Parser, Debug)]
#[command(name = "mojet", version)]
struct Args {
    /// One of: linreg, deep_regressor, pipeline_classification, digits,
    /// sweep_eps, sweep_probes, sweep_k, cost.
    experiment: Experiment,

    /// JSON overlay on the experiment defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long)]
    out: PathBuf,

    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,

    /// Also write plot_data.csv.
    #[arg(long)]
    plot_data: bool,

    /// Estimate jets at different bases in parallel.
    #[arg(long)]
    parallel: bool,

    /// Print the resolved config and exit without running.
    #[arg(long)]
    print_config: bool,
}

fn load_config(args: &Args) -> Result<ExperimentConfig> {
    let mut overlay = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => serde_json::json!({}),
    };
    let map = overlay
        .as_object_mut()
        .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
    if let Some(seed) = args.seed {
        map.insert("seed".into(), seed.into());
    }
    if args.parallel {
        map.insert("parallel".into(), true.into());
    }
    ExperimentConfig::from_overlay(args.experiment, &overlay)
}

fn print_summary(r: &ExperimentReport) {
    println!("experiment {} (seed {})", r.experiment, r.provenance.seed);
    for (k, v) in &r.metrics {
        println!("  {k:<40} {v:.6}");
    }
    if let Some(d) = &r.diagnostics {
        for t in &d.taps {
            println!(
                "  rank {:<40} median {:.1}  mean {:.2}",
                t.label, t.rank.median, t.rank.mean
            );
        }
        for p in &d.pairs {
            println!(
                "  jetsim {:<38} mean {:.4}  median {:.4}  flag {:?}",
                p.label, p.jetsim.mean, p.jetsim.median, p.flag
            );
        }
        println!(
            "  forward passes: {} probe, {} base",
            d.cost.probe_passes, d.cost.base_passes
        );
    }
    for row in r.sweep.iter().flatten() {
        println!(
            "  {} = {:<10} jetsim {:.4}  ranks {:.2} / {:.2}",
            row.parameter, row.value, row.mean_jetsim, row.mean_rank_a, row.mean_rank_b
        );
    }
    for row in r.cost_table.iter().flatten() {
        println!(
            "  J = {:<4} probe passes {} (expected {})  {:.3}s",
            row.j, row.probe_passes, row.expected_probe_passes, row.wall_time_s
        );
    }
}

fn run(args: &Args) -> Result<()> {
    let cfg = load_config(args)?;
    if args.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(());
    }
    let report = run_experiment(&cfg)?;
    write_outputs(&report, &args.out, args.plot_data)?;
    print_summary(&report);
    println!("wrote {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
