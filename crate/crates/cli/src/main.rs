use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fdcka_core::recipe::{AttackConfig, SweepConfig};
use fdcka_core::{parse_report, render_report, run_attack, run_evaluate, run_sweep, Error, LoadedRecipe, ReportFormat};

#[derive(Parser)]
#[command(name = "fdcka", version, about = "Fréchet distance and kernel CKA between real and generated feature sets")]
struct Cli {
    /// Worker threads for metric cells (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// More log output; repeat for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute every configured metric on every cell.
    Evaluate(RunArgs),
    /// Compare random and histogram-matched subsets of the synthesized pool.
    Attack {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        attack: AttackArgs,
    },
    /// Recompute the metrics over increasing synthesized-sample counts.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated sample counts.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
    /// Re-render an existing JSON report.
    Report {
        /// JSON report to read.
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    recipe: PathBuf,
    /// Report destination; stdout when neither this nor the recipe names one.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Overrides the recipe seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AttackArgs {
    /// Subset size.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long)]
    pool_labels: Option<PathBuf>,
    #[arg(long)]
    real_labels: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Table,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
            Format::Table => ReportFormat::Table,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads: must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("--threads: {e}")))?;
    pool.install(|| dispatch(cli.command))
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Evaluate(args) => {
            let loaded = load(&args)?;
            let report = run_evaluate(&loaded)?;
            emit(&loaded, &args, &report)
        }
        Command::Attack { run, attack } => {
            let mut loaded = load(&run)?;
            apply_attack_flags(&mut loaded, attack)?;
            let report = run_attack(&loaded)?;
            emit(&loaded, &run, &report)
        }
        Command::Sweep { run, sizes } => {
            let mut loaded = load(&run)?;
            if let Some(sizes) = sizes {
                loaded.recipe.sweep = Some(SweepConfig { sizes: Some(sizes) });
            }
            let report = run_sweep(&loaded)?;
            emit(&loaded, &run, &report)
        }
        Command::Report { input, out, format } => {
            let bytes = std::fs::read(&input).map_err(|e| io_error(&input, e))?;
            let report = parse_report(&bytes)?;
            write_output(out.as_deref(), &render_report(&report, format.into())?)
        }
    }
}

fn load(args: &RunArgs) -> Result<LoadedRecipe, Error> {
    let mut loaded = LoadedRecipe::from_file(&args.recipe)?;
    if let Some(seed) = args.seed {
        loaded.recipe.seed = seed;
    }
    Ok(loaded)
}

// Flag paths are relative to the working directory, recipe paths to the recipe.
fn absolute(p: PathBuf) -> Result<PathBuf, Error> {
    std::path::absolute(&p).map_err(|e| io_error(&p, e))
}

fn apply_attack_flags(loaded: &mut LoadedRecipe, flags: AttackArgs) -> Result<(), Error> {
    let pool_labels = flags.pool_labels.map(absolute).transpose()?;
    let real_labels = flags.real_labels.map(absolute).transpose()?;
    let attack = match loaded.recipe.attack.take() {
        Some(mut a) => {
            a.m = flags.m.unwrap_or(a.m);
            a.num_classes = flags.num_classes.unwrap_or(a.num_classes);
            a.pool_labels = pool_labels.or(a.pool_labels);
            a.real_labels = real_labels.unwrap_or(a.real_labels);
            a
        }
        None => {
            let missing = |flag: &str| Error::Config(format!("attack: recipe has no attack section and {flag} is not set"));
            AttackConfig {
                pool_labels,
                real_labels: real_labels.ok_or_else(|| missing("--real-labels"))?,
                m: flags.m.ok_or_else(|| missing("--m"))?,
                num_classes: flags.num_classes.ok_or_else(|| missing("--num-classes"))?,
                noise_seeds: Vec::new(),
            }
        }
    };
    loaded.recipe.attack = Some(attack);
    Ok(())
}

fn emit(loaded: &LoadedRecipe, args: &RunArgs, report: &fdcka_core::EvaluationReport) -> Result<(), Error> {
    let format = args
        .format
        .map(ReportFormat::from)
        .or(loaded.recipe.format)
        .unwrap_or(ReportFormat::Json);
    let out = match (&args.out, &loaded.recipe.output) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(p)) if p.is_relative() => Some(loaded.base_dir.join(p)),
        (None, Some(p)) => Some(p.clone()),
        (None, None) => None,
    };
    write_output(out.as_deref(), &render_report(report, format)?)
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, bytes).map_err(|e| io_error(path, e)),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| io_error(Path::new("<stdout>"), e)),
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}
