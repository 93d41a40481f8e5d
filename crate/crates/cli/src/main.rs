use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use switchfed::config::ExperimentConfig;
use switchfed::metrics::{plot_points_to_csv, MetricsTable};
use switchfed::orchestrator::{run_seed, Strategy};

#[derive(Parser)]
#[command(name = "switchfed", about = "Simulator for module-switching federated fine-tuning over a cellular uplink", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one experiment and write its metrics CSV.
    Run(RunArgs),
    /// Run a grid of experiments in parallel and merge the results.
    Sweep(SweepArgs),
    /// Execute the built-in invariant and oracle checks.
    Check,
    /// Aggregate metrics CSVs into seed-averaged plot series.
    Plotdata(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat key/value config file; omit for full defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output path.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grid axis as key=v1,v2,... (repeatable; axes combine as a cartesian product).
    #[arg(long = "vary")]
    vary: Vec<String>,
    /// Comma-separated strategies to sweep over.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long, default_value = "sweep.csv")]
    output: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// Input metrics CSVs.
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "plotdata.csv")]
    output: PathBuf,
}

fn load_config(path: &Option<PathBuf>) -> anyhow::Result<(ExperimentConfig, String)> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    let cfg = ExperimentConfig::parse(&text)?;
    Ok((cfg, text))
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Check => cmd_check(),
        Command::Plotdata(args) => cmd_plotdata(args),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn cmd_run(args: RunArgs) -> anyhow::Result<()> {
    let (mut cfg, _) = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    let output = args.output.unwrap_or_else(|| PathBuf::from(&cfg.output_csv));
    let table = switchfed::run_experiment(&cfg)?;
    table.write_csv(&output)?;
    println!("{} rows -> {} (config {})", table.rows.len(), output.display(), cfg.hash());
    Ok(())
}

/// Apply `key = value` text overrides on top of a base config document.
/// Values are substituted at the text level so the parser's validation and
/// unknown-key rejection still apply.
fn override_config(base: &str, overrides: &[(String, String)]) -> anyhow::Result<ExperimentConfig> {
    let mut kept: Vec<&str> = base
        .lines()
        .filter(|line| {
            let key = line.split('=').next().unwrap_or("").trim();
            !overrides.iter().any(|(k, _)| k == key)
        })
        .collect();
    let mut text = kept.join("\n");
    kept.clear();
    for (key, value) in overrides {
        let rendered = if value.parse::<f64>().is_ok() {
            format!("\n{key} = {value}")
        } else {
            format!("\n{key} = \"{value}\"")
        };
        text.push_str(&rendered);
    }
    Ok(ExperimentConfig::parse(&text)?)
}

fn cmd_sweep(args: SweepArgs) -> anyhow::Result<()> {
    let (_, base_text) = load_config(&args.config)?;
    // Build the cartesian product of all axes.
    let mut axes: Vec<(String, Vec<String>)> = Vec::new();
    for spec in &args.vary {
        let (key, values) = spec
            .split_once('=')
            .with_context(|| format!("--vary `{spec}` is not key=v1,v2,..."))?;
        axes.push((key.trim().to_string(), values.split(',').map(|v| v.trim().to_string()).collect()));
    }
    if let Some(strats) = &args.strategy {
        axes.push(("strategy".to_string(), strats.split(',').map(|s| s.trim().to_string()).collect()));
    }
    let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (key, values) in &axes {
        combos = combos
            .into_iter()
            .flat_map(|combo| {
                values.iter().map(move |v| {
                    let mut next = combo.clone();
                    next.push((key.clone(), v.clone()));
                    next
                })
            })
            .collect();
    }
    // One worker per (config, seed); the merge below restores a total order
    // so the output is independent of scheduling.
    let mut jobs: Vec<(ExperimentConfig, u64)> = Vec::new();
    for combo in &combos {
        let cfg = override_config(&base_text, combo)?;
        for &seed in &cfg.seeds {
            jobs.push((cfg.clone(), seed));
        }
    }
    let tables: Vec<MetricsTable> = jobs
        .par_iter()
        .map(|(cfg, seed)| run_seed(cfg, *seed))
        .collect::<switchfed::Result<Vec<_>>>()?;
    let merged = MetricsTable::merge(tables);
    merged.write_csv(&args.output)?;
    println!(
        "{} runs, {} rows -> {}",
        jobs.len(),
        merged.rows.len(),
        args.output.display()
    );
    Ok(())
}

fn cmd_plotdata(args: PlotArgs) -> anyhow::Result<()> {
    if args.inputs.is_empty() {
        bail!("plotdata needs at least one input CSV");
    }
    let mut tables = Vec::new();
    for path in &args.inputs {
        tables.push(MetricsTable::read_csv(path).with_context(|| format!("reading {}", path.display()))?);
    }
    let merged = MetricsTable::merge(tables);
    let points = merged.aggregate();
    std::fs::write(&args.output, plot_points_to_csv(&points))?;
    println!("{} series points -> {}", points.len(), args.output.display());
    Ok(())
}

fn cmd_check() -> anyhow::Result<()> {
    let mut failures = 0;
    let mut report = |name: &str, ok: bool, detail: String| {
        println!("{}: {}{}", name, if ok { "ok" } else { "FAIL" }, detail);
        if !ok {
            failures += 1;
        }
    };

    // Lambert W inverse identity across the domain.
    let mut worst: f64 = 0.0;
    for i in 0..10_000 {
        let t = i as f64 / 9_999.0;
        let x = -std::f64::consts::E.recip() + 1e-6 + 1e6 * t * t * t;
        let w = switchfed::radio::lambert_w(x)?;
        worst = worst.max((w * w.exp() - x).abs() / x.abs().max(1e-12));
    }
    report("lambert_w inverse identity", worst <= 1e-12, format!(" (max rel residual {worst:.2e})"));

    // Success probability stays in (0, 1] and falls with distance.
    let mut prev = 1.0 + 1e-12;
    let mut monotone = true;
    for d in [10.0, 50.0, 100.0, 200.0, 400.0] {
        let link = switchfed::channel::LinkParams {
            d_k: d,
            alpha: 3.8,
            theta: 10f64.powf(-0.5),
            phi_density: 1e-5,
            bandwidth_hz: 1e9,
            noise_density: 10f64.powf(-16.2) * 1e-3,
        };
        let lam = switchfed::channel::success_probability(0.2, 0.1, &link)?;
        monotone &= lam > 0.0 && lam <= 1.0 && lam < prev;
        prev = lam;
    }
    report("success probability monotone in distance", monotone, String::new());

    // Seeded rerun of a small experiment is byte-identical.
    let cfg = ExperimentConfig::parse(
        "k_ues = 3\nn_modules = 2\nrounds = 3\nseeds = [5]\ndim = 3\nn_samples = 90\nn_classes = 2\ne_min_s = 1e-5",
    )?;
    let a = switchfed::run_experiment(&cfg)?.to_csv();
    let b = switchfed::run_experiment(&cfg)?.to_csv();
    report("experiment determinism", a == b, String::new());

    // Every strategy runs end to end.
    let mut all_ok = true;
    for strategy in ["proposed", "vanilla-fedlora", "greedy", "one-shot", "max-power"] {
        Strategy::from_name(strategy)?;
        let mut c = cfg.clone();
        c.strategy = strategy.to_string();
        all_ok &= switchfed::run_experiment(&c).is_ok();
    }
    report("all strategies execute", all_ok, String::new());

    if failures > 0 {
        bail!("{failures} check(s) failed");
    }
    println!("all checks passed");
    Ok(())
}
