//! `tabperturb` command-line front end.
//!
//! Exit codes: 0 on success, 1 for I/O failures, 2 for configuration and
//! validation errors (including bad arguments).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use tabperturb::harness::{self, Axis, Metric, Scenario, SweepSpec, TaskSpec};
use tabperturb::pipeline::{self, AugmentSpec, Config, PreparedSet, TraindataMode, TransformBasis};
use tabperturb::sampling::SamplingPlan;
use tabperturb::table::{self, CsvOptions, DataTable};
use tabperturb::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "tabperturb", version, about = "Noise-injecting tabular preprocessing")]
struct Cli {
    /// More diagnostics on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a basis on training data and prepare it.
    Fit(FitArgs),
    /// Prepare data on a saved basis.
    Transform(TransformArgs),
    /// Print the seed budget for new row counts.
    SeedReport(SeedReportArgs),
    /// Stack noisy duplicates of training data.
    Augment(AugmentArgs),
    /// Run the noise sensitivity sweep on a synthetic task.
    Sweep(SweepArgs),
}

/// Overrides for the configuration's `sampling_dict` and seeds.
#[derive(Args, Debug, Default)]
struct SamplingArgs {
    /// Newline-delimited integer seeds.
    #[arg(long)]
    entropy_seeds: Option<PathBuf>,
    /// default, bulk_seeds, sampling_seed or transform_seed.
    #[arg(long)]
    sampling_type: Option<String>,
    /// supplemental_seeds or primary_seeds.
    #[arg(long)]
    seeding_type: Option<String>,
    /// PCG64, MT19937 or off.
    #[arg(long)]
    extra_seed_generator: Option<String>,
}

impl SamplingArgs {
    fn apply_to(&self, config: &mut Config) -> Result<()> {
        if let Some(path) = &self.entropy_seeds {
            config.entropy_seeds = read_seeds(path)?;
        }
        let dict = &mut config.sampling_dict;
        if let Some(t) = &self.sampling_type {
            dict.sampling_type = Some(t.clone());
        }
        if let Some(t) = &self.seeding_type {
            dict.seeding_type = Some(t.clone());
        }
        if let Some(g) = &self.extra_seed_generator {
            dict.extra_seed_generator = Some(g.clone());
        }
        Ok(())
    }

    /// Plan for commands that have no configuration file.
    fn plan(&self) -> Result<SamplingPlan> {
        let mut config = Config::default();
        self.apply_to(&mut config)?;
        config.sampling_plan()
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Training CSV.
    train: PathBuf,
    /// JSON configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Test CSV prepared on the fitted basis.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    labels_column: Option<String>,
    #[command(flatten)]
    sampling: SamplingArgs,
}

#[derive(Args, Debug)]
struct TransformArgs {
    data: PathBuf,
    #[arg(long)]
    basis: PathBuf,
    /// test, train, train_no_noise or test_no_noise.
    #[arg(long, default_value = "test")]
    traindata: String,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    sampling: SamplingArgs,
}

#[derive(Args, Debug)]
struct SeedReportArgs {
    #[arg(long)]
    basis: PathBuf,
    /// Defaults to the basis training row count.
    #[arg(long)]
    rows_train: Option<u64>,
    /// Zero omits the test budget.
    #[arg(long, default_value_t = 0)]
    rows_test: u64,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    train: PathBuf,
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    basis: Option<PathBuf>,
    /// Fit this configuration on the training data first.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Integer count keeps one noiseless copy; a float count (e.g. 2.0)
    /// makes every copy noisy.
    #[arg(long)]
    count: String,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    sampling: SamplingArgs,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// sigma or flip_prob.
    #[arg(long, default_value = "sigma")]
    axis: String,
    /// Comma-separated noise levels.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.06, 0.3, 1.0])]
    grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec!["train".to_string(), "test".to_string(), "traintest".to_string()])]
    scenarios: Vec<String>,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    /// accuracy or auc.
    #[arg(long, default_value = "accuracy")]
    metric: String,
    #[arg(long, default_value_t = 1)]
    seed: u32,
    /// Seed of the synthetic task.
    #[arg(long, default_value_t = 7)]
    task_seed: u64,
    #[arg(long, default_value_t = 1000)]
    rows: usize,
    #[arg(long)]
    out: PathBuf,
}

fn read_seeds(path: &Path) -> Result<Vec<u32>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<u32>().map_err(|e| {
                Error::Config(format!("{}:{}: bad seed {:?}: {e}", path.display(), i + 1, l.trim()))
            })
        })
        .collect()
}

fn load_table(path: &Path) -> Result<DataTable> {
    table::load_csv(path, &CsvOptions::default())
}

fn write_set(set: &PreparedSet, path: &Path) -> Result<()> {
    table::write_csv(&set.with_labels()?, path)
}

fn log_activations(what: &str, set: &PreparedSet) {
    for (col, n) in &set.activations {
        info!("{what}: {n} noisy entries in {col}");
    }
}

fn log_config(config: &Config) {
    match serde_json::to_string(config) {
        Ok(s) => info!("effective config: {s}"),
        Err(e) => warn!("could not render config: {e}"),
    }
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn run_fit(args: FitArgs) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    args.sampling.apply_to(&mut config)?;
    if let Some(l) = args.labels_column {
        config.labels_column = Some(l);
    }
    log_config(&config);
    let plan = config.sampling_plan()?;
    let train = load_table(&args.train)?;
    let test = args.test.as_deref().map(load_table).transpose()?;
    let out = pipeline::fit(&train, test.as_ref(), &config, &plan)?;

    std::fs::create_dir_all(&args.out_dir).map_err(io_err(&args.out_dir))?;
    let dir = &args.out_dir;
    write_set(&out.train, &dir.join("train.out.csv"))?;
    log_activations("train", &out.train);
    if let Some(v) = &out.validation {
        write_set(v, &dir.join("val.out.csv"))?;
        log_activations("validation", v);
    }
    if let Some(t) = &out.test {
        write_set(t, &dir.join("test.out.csv"))?;
        log_activations("test", t);
    }
    out.basis.save(dir.join("basis.json"))?;
    let report = serde_json::to_string_pretty(&out.basis.seed_report).map_err(|e| Error::Internal(e.to_string()))?;
    let report_path = dir.join("seed_report.json");
    std::fs::write(&report_path, report + "\n").map_err(io_err(&report_path))?;
    info!("seeds consumed: {:?}", out.usage);
    Ok(())
}

fn run_transform(args: TransformArgs) -> Result<()> {
    let mode = TraindataMode::parse(&args.traindata)
        .ok_or_else(|| Error::Config(format!("unknown traindata mode {:?}", args.traindata)))?;
    let basis = TransformBasis::load(&args.basis)?;
    let plan = args.sampling.plan()?;
    let data = load_table(&args.data)?;
    let (set, usage) = pipeline::apply_with_usage(&basis, &data, mode, &plan)?;
    log_activations("transform", &set);
    info!("seeds consumed: {usage:?}");
    let out = set.with_labels()?;
    match &args.out {
        Some(path) => table::write_csv(&out, path),
        None => {
            let stdout = std::io::stdout();
            table::to_writer(&out, stdout.lock(), b',', None)
        }
    }
}

fn run_seed_report(args: SeedReportArgs) -> Result<()> {
    let basis = TransformBasis::load(&args.basis)?;
    let rows_train = args.rows_train.unwrap_or(basis.seed_report.rowcount_basis_train);
    let budget = basis.seed_report.rescaled(rows_train, args.rows_test);
    let text = serde_json::to_string_pretty(&budget).map_err(|e| Error::Internal(e.to_string()))?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{text}").map_err(|source| Error::Io {
        path: PathBuf::from("<stdout>"),
        source,
    })
}

fn run_augment(args: AugmentArgs) -> Result<()> {
    let spec = AugmentSpec::parse(&args.count)?;
    let train = load_table(&args.train)?;
    let set = match (&args.basis, &args.config) {
        (Some(b), _) => {
            let basis = TransformBasis::load(b)?;
            let plan = args.sampling.plan()?;
            pipeline::augment(&basis, &train, spec, &plan)?
        }
        (None, Some(c)) => {
            let mut config = Config::load(c)?;
            args.sampling.apply_to(&mut config)?;
            config.noise_augment = Some(spec_number(spec));
            log_config(&config);
            let plan = config.sampling_plan()?;
            pipeline::fit(&train, None, &config, &plan)?.train
        }
        (None, None) => return Err(Error::Config("augment needs --basis or --config".into())),
    };
    log_activations("augment", &set);
    table::write_csv(&set.with_labels()?, &args.out)
}

/// Config form of an augment count: integers keep a noiseless copy.
fn spec_number(spec: AugmentSpec) -> serde_json::Number {
    if spec.all_noisy {
        serde_json::Number::from_f64(f64::from(spec.count)).expect("finite count")
    } else {
        serde_json::Number::from(spec.count)
    }
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let axis = Axis::parse(&args.axis).ok_or_else(|| Error::Config(format!("unknown axis {:?}", args.axis)))?;
    let metric = match args.metric.as_str() {
        "accuracy" => Metric::Accuracy,
        "auc" => Metric::Auc,
        other => return Err(Error::Config(format!("unknown metric {other:?}"))),
    };
    let scenarios = args
        .scenarios
        .iter()
        .map(|s| Scenario::parse(s).ok_or_else(|| Error::Config(format!("unknown scenario {s:?}"))))
        .collect::<Result<Vec<_>>>()?;
    if args.reps == 0 || args.grid.is_empty() {
        return Err(Error::Config("sweep needs at least one repetition and one grid value".into()));
    }
    let task = harness::generate_task(&TaskSpec {
        seed: args.task_seed,
        n_train: args.rows,
        n_test: args.rows,
        ..TaskSpec::default()
    })?;
    let sweep = SweepSpec {
        axis,
        grid: args.grid.clone(),
        scenarios: scenarios.clone(),
        reps: args.reps,
        seed: args.seed,
        ..SweepSpec::default()
    };
    let results = harness::run_sweep(&task, &sweep)?;
    harness::emit_curves(&results, metric, &args.out)?;
    for s in scenarios {
        let t = harness::trend_test(&results, s, &args.grid, metric);
        info!(
            "{}: means {:?}, {} decreases / {} increases, p = {:.4}",
            s.name(),
            t.means,
            t.decreases,
            t.increases,
            t.p_value
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("TABPERTURB_LOG")
        .target(env_logger::Target::Stderr)
        .init();

    let result = match cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Transform(a) => run_transform(a),
        Command::SeedReport(a) => run_seed_report(a),
        Command::Augment(a) => run_augment(a),
        Command::Sweep(a) => run_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
