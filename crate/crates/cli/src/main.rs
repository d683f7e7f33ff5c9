use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use rough_stiff::exec::Execution;
use rough_stiff::fbm::{sample_fbm, FbmConfig, DEFAULT_MAX_STEPS};
use rough_stiff::grid::{format_sig, Grid};
use rough_stiff::harness::{
    local_error_probe, run_study, stability_demo, write_study, ProbeConfig, ProblemId,
    StabilityOptions, StudyConfig,
};
use rough_stiff::schemes::SchemeId;

#[derive(Parser)]
#[command(name = "rough-stiff", version, about = "Implicit schemes for stiff rough differential equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convergence study against a fine-step reference.
    Run(RunArgs),
    /// Explicit vs implicit Euler on the stiff linear example.
    Stability(StabilityArgs),
    /// One-step error slopes on a smooth driver.
    ProbeLocal(ProbeArgs),
    /// Sample fractional Brownian motion on a uniform grid.
    SampleFbm(SampleArgs),
}

#[derive(Args)]
struct RunArgs {
    /// example1, example2 or example3
    #[arg(long)]
    problem: ProblemId,
    /// Defaults to implicit-euler (examples 1, 2) or simplified-milstein (example 3).
    #[arg(long)]
    scheme: Option<SchemeId>,
    /// One value, or one per driver component separated by commas.
    #[arg(long, value_delimiter = ',')]
    hurst: Option<Vec<f64>>,
    /// Step exponents `a..b`, inclusive: h = T 2^-a, ..., T 2^-b.
    #[arg(long, default_value = "5..10")]
    steps: String,
    /// Reference step exponent.
    #[arg(long = "ref", default_value_t = 12)]
    reference: u32,
    /// A count n (seeds 0..n) or a comma-separated list.
    #[arg(long, default_value = "20")]
    seeds: String,
    #[arg(long)]
    out: PathBuf,
    /// Run on one thread.
    #[arg(long)]
    sequential: bool,
    /// Raise the reference step cap (default 4096).
    #[arg(long)]
    max_steps: Option<usize>,
}

#[derive(Args)]
struct StabilityArgs {
    /// Step size, as a number or as `2^-k`.
    #[arg(long)]
    h: String,
    #[arg(long, default_value_t = 0.75)]
    hurst: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Drop the driver.
    #[arg(long)]
    no_noise: bool,
    /// CSV with columns t,implicit,explicit[,reference].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    scheme: SchemeId,
    /// Step exponents `a..b`.
    #[arg(long, default_value = "6..12")]
    steps: String,
    #[arg(long, default_value_t = 256)]
    substeps: usize,
    /// CSV with columns h,error; a `_loglog` file is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long, value_delimiter = ',')]
    hurst: Vec<f64>,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    /// Raise the step cap (default 4096).
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_range(s: &str) -> Result<Vec<u32>> {
    let (a, b) = s
        .split_once("..")
        .with_context(|| format!("expected a range a..b, got {s:?}"))?;
    let a: u32 = a.trim().parse().with_context(|| format!("bad range start {a:?}"))?;
    let b: u32 = b.trim().parse().with_context(|| format!("bad range end {b:?}"))?;
    if a > b {
        bail!("empty range {s:?}");
    }
    Ok((a..=b).collect())
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if s.contains(',') {
        return s
            .split(',')
            .map(|v| v.trim().parse().with_context(|| format!("bad seed {v:?}")))
            .collect();
    }
    let n: u64 = s.trim().parse().with_context(|| format!("bad seed count {s:?}"))?;
    if n == 0 {
        bail!("need at least one seed");
    }
    Ok((0..n).collect())
}

fn parse_step(s: &str) -> Result<f64> {
    if let Some(k) = s.strip_prefix("2^") {
        let k: i32 = k.parse().with_context(|| format!("bad exponent in {s:?}"))?;
        return Ok(2f64.powi(k));
    }
    if let Some((a, b)) = s.split_once('/') {
        let a: f64 = a.parse().with_context(|| format!("bad numerator in {s:?}"))?;
        let b: f64 = b.parse().with_context(|| format!("bad denominator in {s:?}"))?;
        return Ok(a / b);
    }
    s.parse().with_context(|| format!("bad step size {s:?}"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn run(args: RunArgs) -> Result<()> {
    let problem = args.problem;
    let scheme = args.scheme.unwrap_or(problem.default_scheme());
    let mut hurst = args.hurst.unwrap_or_else(|| problem.default_hurst());
    let m = problem.problem().noise_dim();
    if hurst.len() == 1 && m > 1 {
        hurst = vec![hurst[0]; m];
    }
    let mut config = StudyConfig::new(
        format!("{problem}-{scheme}"),
        problem.problem(),
        scheme,
        hurst,
        parse_range(&args.steps)?,
        args.reference,
        parse_seeds(&args.seeds)?,
    );
    if args.sequential {
        config.execution = Execution::Sequential;
    }
    if let Some(cap) = args.max_steps {
        config.max_steps = cap;
    }
    let report = run_study(&config)?;
    write_study(&report, &args.out)?;

    println!("h,mean_error,mean_eoc,std_error");
    for r in &report.aggregate {
        let f = |v: Option<f64>| v.map(format_sig).unwrap_or_default();
        println!("{},{},{},{}", format_sig(r.h), f(r.mean_error), f(r.mean_eoc), f(r.std_error));
    }
    match report.mean_average_eoc {
        Some(e) => println!("mean average EOC: {e:.4}"),
        None => println!("mean average EOC: undefined"),
    }
    let flagged = report.flagged_rows().count();
    if flagged > 0 {
        eprintln!("warning: {flagged} runs diverged; see flags.csv");
    }
    let violations = report.bound_checks().filter(|ok| !ok).count();
    if violations > 0 {
        eprintln!("warning: boundedness certificate violated on {violations} trajectories");
    }
    Ok(())
}

fn stability(args: StabilityArgs) -> Result<()> {
    let h = parse_step(&args.h)?;
    let opts = StabilityOptions {
        hurst: args.hurst,
        seed: args.seed,
        noise: !args.no_noise,
        ..Default::default()
    };
    let report = stability_demo(h, &opts)?;
    println!("h = {}, |1 - 70h| = {}", format_sig(h), format_sig(report.contraction_factor));
    println!(
        "explicit: {}, {} sign flips, max |y| = {}",
        if report.explicit_unstable { "unstable" } else { "stable" },
        report.explicit_flips,
        format_sig(report.explicit_max_amplitude)
    );
    println!(
        "implicit: stable, {} sign flips, max |y| = {}",
        report.implicit_flips,
        format_sig(report.implicit_max_amplitude)
    );
    if let Err(e) = &report.explicit {
        println!("explicit run diverged: {e}");
    }
    if let Some(path) = args.out {
        let mut w = create(&path)?;
        report.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn probe(args: ProbeArgs) -> Result<()> {
    let mut config = ProbeConfig::scalar_linear();
    config.steps = parse_range(&args.steps)?
        .into_iter()
        .map(|k| 0.5f64.powi(k as i32))
        .collect();
    config.substeps = args.substeps;
    let result = local_error_probe(args.scheme, &config)?;
    println!("h,error");
    for (h, e) in result.steps.iter().zip(&result.errors) {
        println!("{},{}", format_sig(*h), format_sig(*e));
    }
    match result.slope {
        Some(s) => println!("slope {s:.4}, theoretical {:.4} (p = 1)", result.theoretical),
        None => println!("errors at round-off; no slope, theoretical {:.4}", result.theoretical),
    }
    if let Some(path) = args.out {
        let mut w = create(&path)?;
        writeln!(w, "h,error")?;
        for (h, e) in result.steps.iter().zip(&result.errors) {
            writeln!(w, "{},{}", format_sig(*h), format_sig(*e))?;
        }
        w.flush()?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("probe");
        let mut w = create(&path.with_file_name(format!("{stem}_loglog.csv")))?;
        writeln!(w, "log10_h,log10_error")?;
        for (h, e) in result.steps.iter().zip(&result.errors).filter(|(_, e)| **e > 0.0) {
            writeln!(w, "{},{}", format_sig(h.log10()), format_sig(e.log10()))?;
        }
        w.flush()?;
    }
    Ok(())
}

fn sample(args: SampleArgs) -> Result<()> {
    let grid = Grid::new(args.horizon, args.n)?;
    let config = FbmConfig {
        hurst: args.hurst,
        grid,
        max_steps: args.max_steps.unwrap_or(DEFAULT_MAX_STEPS),
    };
    let path = sample_fbm(&config, args.seed)?;
    let mut w = create(&args.out)?;
    path.write_csv(&mut w, "x")?;
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::Stability(a) => stability(a),
        Command::ProbeLocal(a) => probe(a),
        Command::SampleFbm(a) => sample(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
