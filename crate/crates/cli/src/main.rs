use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use dmd_core::config::{write_bundle, write_summary, ExperimentId, RunConfig};
use dmd_core::trace::{render_table, summarize};
use dmd_core::verify::{verify, VerifyOptions, SUITES};
use dmd_core::Error;
use rayon::prelude::*;

const EXIT_VALIDATION: u8 = 1;
const EXIT_INVARIANT: u8 = 2;
const EXIT_RESOURCE: u8 = 3;

#[derive(Parser)]
#[command(name = "dmd", version, about = "Online learning in dynamic environments: experiments, checks and trace summaries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment over one or more seeds and write traces.
    Run(RunArgs),
    /// Run the numerical invariant suites.
    Verify(VerifyArgs),
    /// Aggregate trace files by algorithm.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// a, b, c or custom.
    #[arg(long)]
    experiment: Option<String>,
    /// Seed list such as `1,2,7` or the inclusive range `1..=20`.
    #[arg(long)]
    seeds: Option<String>,
    /// Number of rounds.
    #[arg(long = "T")]
    horizon: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Seeds processed concurrently.
    #[arg(long)]
    workers: Option<usize>,
    /// Keep every n-th prediction.
    #[arg(long)]
    stride: Option<usize>,
    /// Share rate for experiment b: a number or `auto` for m / (T - 1).
    #[arg(long)]
    lambda: Option<String>,
    /// Reweighting rate for experiment b: a number or `auto`.
    #[arg(long = "eta-r")]
    eta_r: Option<String>,
    /// Switch budget m for experiment b.
    #[arg(long)]
    switches: Option<usize>,
    /// Base step size of the forecasters.
    #[arg(long)]
    eta0: Option<f64>,
    /// Base step size of the parameter updates (experiment c).
    #[arg(long)]
    rho0: Option<f64>,
    /// L1 weight (experiment b).
    #[arg(long)]
    tau_reg: Option<f64>,
    /// Grid exponent (custom experiment).
    #[arg(long)]
    gamma: Option<f64>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Restrict to these suites (repeatable).
    #[arg(long = "suite")]
    suites: Vec<String>,
    #[arg(long, default_value_t = VerifyOptions::default().seed)]
    seed: u64,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Trace files or directories holding them.
    paths: Vec<PathBuf>,
    /// Named interval `name=start..end` (inclusive, repeatable).
    #[arg(long = "interval")]
    intervals: Vec<String>,
}

/// A failure with its exit status.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Resource { .. } => EXIT_RESOURCE,
            Error::Internal(_) => EXIT_INVARIANT,
            Error::Input(_) | Error::Config(_) => EXIT_VALIDATION,
        };
        Failure { code, error: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: EXIT_VALIDATION, error }
    }
}

fn validation(msg: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_VALIDATION,
        error: anyhow::anyhow!(msg.into()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_VALIDATION) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Verify(args) => run_verify(args),
        Command::Summarize(args) => run_summarize(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, Failure> {
    let bad = || validation(format!("--seeds: cannot parse `{text}`"));
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..=") {
            let (a, b): (u64, u64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
            out.extend(a..=b);
        } else if let Some((a, b)) = part.split_once("..") {
            let (a, b): (u64, u64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
            out.extend(a..b);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    Ok(out)
}

/// `auto` maps to `None`.
fn parse_auto(flag: &str, text: &str) -> Result<Option<f64>, Failure> {
    if text == "auto" {
        return Ok(None);
    }
    text.parse()
        .map(Some)
        .map_err(|_| validation(format!("{flag}: expected a number or `auto`, got `{text}`")))
}

fn resolve_config(args: &RunArgs) -> Result<RunConfig, Failure> {
    let experiment = args.experiment.as_deref().map(str::parse::<ExperimentId>).transpose()?;
    let mut cfg = match (&args.config, experiment) {
        (Some(path), exp) => {
            let mut c = RunConfig::load(path)?;
            if let Some(e) = exp {
                c.experiment = e;
            }
            c
        }
        (None, Some(e)) => RunConfig::new(e),
        (None, None) => return Err(validation("run: give --experiment or --config")),
    };
    if let Some(s) = &args.seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    if let Some(t) = args.horizon {
        cfg.set_horizon(t);
    }
    if let Some(d) = &args.out_dir {
        cfg.out_dir = d.clone();
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if args.stride.is_some() {
        cfg.stride = args.stride;
    }
    let only = |flag: &str, exp: ExperimentId| {
        if cfg.experiment == exp {
            Ok(())
        } else {
            Err(validation(format!("{flag} applies only to experiment {}", exp.as_str())))
        }
    };
    if let Some(l) = &args.lambda {
        only("--lambda", ExperimentId::B)?;
        cfg.video.lambda = parse_auto("--lambda", l)?;
    }
    if let Some(e) = &args.eta_r {
        only("--eta-r", ExperimentId::B)?;
        cfg.video.eta_r = parse_auto("--eta-r", e)?;
    }
    if let Some(m) = args.switches {
        only("--switches", ExperimentId::B)?;
        cfg.video.switches = m;
    }
    if let Some(t) = args.tau_reg {
        only("--tau-reg", ExperimentId::B)?;
        cfg.video.tau_reg = t;
    }
    if let Some(r) = args.rho0 {
        only("--rho0", ExperimentId::C)?;
        cfg.hawkes.rho0 = r;
    }
    if let Some(g) = args.gamma {
        only("--gamma", ExperimentId::Custom)?;
        cfg.custom.gamma = g;
    }
    if let Some(e) = args.eta0 {
        match cfg.experiment {
            ExperimentId::A => cfg.texture.eta0 = e,
            ExperimentId::B => cfg.video.eta0 = e,
            ExperimentId::C => cfg.hawkes.eta0 = e,
            ExperimentId::Custom => cfg.custom.eta0 = e,
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let cfg = resolve_config(&args)?;
    if args.print_config {
        print!("{}", cfg.render()?);
        return Ok(());
    }
    std::fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("cannot create {}", cfg.out_dir.display()))?;
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .context("cannot start worker pool")?;
    let results: Vec<Result<_, Error>> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|seed| {
                let bundle = cfg
                    .run_seed(*seed)
                    .map_err(|e| annotate(e, cfg.experiment, *seed))?;
                write_bundle(&cfg.out_dir, &bundle)?;
                Ok(bundle)
            })
            .collect()
    });
    let bundles = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let exp = cfg.experiment.as_str();
    std::fs::write(cfg.out_dir.join(format!("{exp}_config.toml")), cfg.render()?)
        .context("cannot write the resolved config")?;
    let summary = write_summary(&cfg.out_dir, exp, &bundles)?;
    eprintln!(
        "experiment {exp}: {} seed(s) in {:.2}s, summary at {}",
        bundles.len(),
        started.elapsed().as_secs_f64(),
        summary.display()
    );
    let incomplete: Vec<String> = bundles
        .iter()
        .flat_map(|b| {
            b.traces
                .iter()
                .filter(|t| !t.complete)
                .map(move |t| format!("seed {} {}: {}", b.seed, t.name, t.error.as_deref().unwrap_or("incomplete")))
        })
        .collect();
    if !incomplete.is_empty() {
        return Err(Failure {
            code: EXIT_INVARIANT,
            error: anyhow::anyhow!("incomplete traces:\n  {}", incomplete.join("\n  ")),
        });
    }
    Ok(())
}

fn annotate(e: Error, exp: ExperimentId, seed: u64) -> Error {
    let tag = format!("experiment {} seed {seed}", exp.as_str());
    match e {
        Error::Input(m) => Error::Input(format!("{tag}: {m}")),
        Error::Config(m) => Error::Config(format!("{tag}: {m}")),
        Error::Internal(m) => Error::Internal(format!("{tag}: {m}")),
        Error::Resource { what, required, budget } => Error::Resource {
            what: format!("{tag}: {what}"),
            required,
            budget,
        },
    }
}

fn run_verify(args: VerifyArgs) -> Result<(), Failure> {
    if let Some(s) = args.suites.iter().find(|s| !SUITES.contains(&s.as_str())) {
        return Err(validation(format!("--suite: unknown suite `{s}` (known: {})", SUITES.join(", "))));
    }
    let opts = VerifyOptions {
        seed: args.seed,
        ..VerifyOptions::default()
    };
    let results = verify(&args.suites, &opts)?;
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Failure {
            code: EXIT_INVARIANT,
            error: anyhow::anyhow!("{failed} invariant(s) failed"),
        });
    }
    Ok(())
}

fn parse_interval(text: &str) -> Result<(String, [usize; 2]), Failure> {
    let bad = || validation(format!("--interval: expected name=start..end, got `{text}`"));
    let (name, range) = text.split_once('=').ok_or_else(bad)?;
    let (a, b) = range.split_once("..").ok_or_else(bad)?;
    let a: usize = a.parse().map_err(|_| bad())?;
    let b: usize = b.trim_start_matches('=').parse().map_err(|_| bad())?;
    if a == 0 || a > b {
        return Err(bad());
    }
    Ok((name.to_string(), [a, b]))
}

fn collect_traces(paths: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("cannot read {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|e| e.extension().is_some_and(|x| x == "csv"))
                .collect();
            entries.sort();
            out.extend(entries);
        } else if Path::new(p).exists() {
            out.push(p.clone());
        } else {
            return Err(validation(format!("{}: no such file", p.display())));
        }
    }
    Ok(out)
}

fn run_summarize(args: SummarizeArgs) -> Result<(), Failure> {
    let intervals = args
        .intervals
        .iter()
        .map(|s| parse_interval(s))
        .collect::<Result<Vec<_>, _>>()?;
    let files = collect_traces(&args.paths)?;
    let rows = summarize(&files, &intervals)?;
    print!("{}", render_table(&rows));
    Ok(())
}
