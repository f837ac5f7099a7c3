//! Command-line front end. Exit codes: 0 success, 1 runtime failure, 2 usage or
//! validation error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::error::QnbmError;
use crate::model::{build_qnbm, NeuronStructure, ParameterSet, SamplingMode, DEFAULT_BRANCH_CAP};
use crate::neuron::DEFAULT_MAX_ATTEMPTS;
use crate::stress::{
    emit_report, gate_census, hqc_estimate, run_stress_test, shot_requirements, PricingSpec,
    ReportFormat, StressConfig, DEFAULT_K, DEFAULT_TRIALS,
};
use crate::target::{cardinality_distribution, CardinalitySpec, DEFAULT_CARDINALITY};
use crate::training::{
    train, GradientEstimator, TrainingConfig, TrainingTrace, DEFAULT_ITERATIONS,
    DEFAULT_LEARNING_RATE,
};

/// Default directory for output files when `--output` is not given.
pub const OUTPUT_DIR_ENV: &str = "QNBM_OUTPUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const DEFAULT_STRUCTURES: [&str; 3] = ["1,0,2", "2,0,3", "3,0,4"];

#[derive(Debug, Parser)]
#[command(
    name = "qnbm",
    version,
    about = "Train, sample and stress-test quantum neuron Born machines"
)]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model against the cardinality target on the exact simulator.
    Train(TrainArgs),
    /// Sample a trained model and write the shot histogram.
    Sample(SampleArgs),
    /// Train and repeatedly sample a sweep of structures.
    Stress(StressArgs),
    /// Print gate counts, shot budgets and cost estimates.
    Resources(ResourcesArgs),
}

#[derive(Debug, Args)]
struct TrainingFlags {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    iterations: usize,
    #[arg(long = "learning-rate", default_value_t = DEFAULT_LEARNING_RATE)]
    learning_rate: f64,
    /// Number of ones in every target bitstring.
    #[arg(long, default_value_t = DEFAULT_CARDINALITY)]
    cardinality: usize,
    /// finite_difference (fd) or parameter_shift (ps).
    #[arg(long, default_value = "finite_difference")]
    estimator: String,
}

impl TrainingFlags {
    fn config(&self) -> Result<TrainingConfig, CliError> {
        let config = TrainingConfig {
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            estimator: self
                .estimator
                .parse::<GradientEstimator>()
                .map_err(CliError::usage)?,
            seed: self.seed,
            ..TrainingConfig::default()
        };
        config.validate().map_err(CliError::usage)?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, default_value = "1,0,2")]
    structure: String,
    #[command(flatten)]
    training: TrainingFlags,
    /// Trace JSON path; the loss curve goes next to it as `<stem>_loss.csv`.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long, default_value = "1,0,2")]
    structure: String,
    /// Parameter JSON, or a training trace whose final parameters are used.
    #[arg(long)]
    params: PathBuf,
    #[arg(long, default_value = "classical_control")]
    mode: String,
    #[arg(long = "K", short = 'K', alias = "k", default_value_t = DEFAULT_K)]
    k: u64,
    /// Overrides the shot budget derived from K.
    #[arg(long)]
    shots: Option<u64>,
    #[arg(long = "max-attempts", default_value_t = DEFAULT_MAX_ATTEMPTS)]
    max_attempts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StressArgs {
    /// Repeat for several structures; defaults to 1,0,2 2,0,3 3,0,4.
    #[arg(long)]
    structure: Vec<String>,
    /// Repeat for several modes; defaults to both.
    #[arg(long)]
    mode: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long = "K", short = 'K', alias = "k", default_value_t = DEFAULT_K)]
    k: u64,
    /// Overrides the shot budget derived from K.
    #[arg(long)]
    shots: Option<u64>,
    #[arg(long = "max-attempts", default_value_t = DEFAULT_MAX_ATTEMPTS)]
    max_attempts: usize,
    #[command(flatten)]
    training: TrainingFlags,
    #[arg(long)]
    pricing: Option<PathBuf>,
    #[arg(long, default_value = "json")]
    format: String,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Omit the timestamp so identical seeds give byte-identical reports.
    #[arg(long)]
    reproducible: bool,
}

#[derive(Debug, Args)]
struct ResourcesArgs {
    /// Structure, e.g. 2,0,3.
    #[arg(value_name = "STRUCTURE", conflicts_with = "structure")]
    positional: Option<String>,
    #[arg(long)]
    structure: Option<String>,
    #[arg(long = "K", short = 'K', alias = "k", default_value_t = DEFAULT_K)]
    k: u64,
    #[arg(long = "max-attempts", default_value_t = DEFAULT_MAX_ATTEMPTS)]
    max_attempts: usize,
    #[arg(long)]
    pricing: Option<PathBuf>,
    /// Parameters for the expected-attempt count; without it a model is
    /// trained first with the training flags below.
    #[arg(long)]
    params: Option<PathBuf>,
    #[command(flatten)]
    training: TrainingFlags,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn usage(e: impl std::fmt::Display) -> Self {
        CliError::Usage(e.to_string())
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let jobs = match cli.jobs {
        Some(0) => {
            return Err(CliError::usage(QnbmError::config(
                "jobs",
                "must be at least 1",
            )))
        }
        Some(n) => n,
        None => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(CliError::runtime)?;
    pool.install(|| match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Stress(a) => cmd_stress(a),
        Command::Resources(a) => cmd_resources(a),
    })
}

fn parse_structure(s: &str) -> Result<NeuronStructure, CliError> {
    let structure: NeuronStructure = s.parse().map_err(CliError::usage)?;
    structure.ensure_executable().map_err(CliError::usage)?;
    Ok(structure)
}

fn parse_mode(s: &str) -> Result<SamplingMode, CliError> {
    s.parse().map_err(CliError::usage)
}

fn load_pricing(path: Option<&Path>) -> Result<PricingSpec, CliError> {
    match path {
        None => Ok(PricingSpec::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("pricing: {}: {e}", p.display())))?;
            PricingSpec::from_json(&text).map_err(|e| CliError::Usage(format!("pricing: {e}")))
        }
    }
}

/// Accepts a bare parameter set or a training trace.
fn load_params(path: &Path, structure: &NeuronStructure) -> Result<ParameterSet, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("params: {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("params: {e}")))?;
    let params_value = value.get("final_params").cloned().unwrap_or(value);
    let params: ParameterSet = serde_json::from_value(params_value)
        .map_err(|e| CliError::Usage(format!("params: {e}")))?;
    params
        .check_dimensions(structure)
        .and_then(|_| params.check_range())
        .map_err(|e| CliError::Usage(format!("params: {e}")))?;
    Ok(params)
}

fn output_path(explicit: Option<PathBuf>, default_name: &str) -> Result<PathBuf, CliError> {
    let path = match explicit {
        Some(p) => p,
        None => {
            let dir = std::env::var_os(OUTPUT_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("."));
            dir.join(default_name)
        }
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", parent.display())))?;
    }
    Ok(path)
}

fn slug(structure: &NeuronStructure) -> String {
    structure.to_string().replace(',', "-")
}

fn train_for(
    structure: &NeuronStructure,
    flags: &TrainingFlags,
) -> Result<TrainingTrace, CliError> {
    let config = flags.config()?;
    let spec =
        CardinalitySpec::new(structure.n_out(), flags.cardinality).map_err(CliError::usage)?;
    let target = cardinality_distribution(spec).map_err(CliError::usage)?;
    train(structure, &target, &config).map_err(CliError::runtime)
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let structure = parse_structure(&args.structure)?;
    args.training.config()?;
    let path = output_path(
        args.output,
        &format!("trace_{}_seed{}.json", slug(&structure), args.training.seed),
    )?;
    let trace = train_for(&structure, &args.training)?;

    let json = trace.to_json().map_err(CliError::runtime)?;
    fs::write(&path, json + "\n")
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    let csv_path = path.with_file_name(format!("{stem}_loss.csv"));
    let file = fs::File::create(&csv_path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", csv_path.display())))?;
    trace.write_loss_csv(file).map_err(CliError::runtime)?;

    println!("structure: {structure}");
    println!("iterations: {}", args.training.iterations);
    println!("final KL: {:.6}", trace.final_loss());
    println!("trace: {}", path.display());
    println!("loss curve: {}", csv_path.display());
    Ok(())
}

fn cmd_sample(args: SampleArgs) -> Result<(), CliError> {
    let structure = parse_structure(&args.structure)?;
    let mode = parse_mode(&args.mode)?;
    if args.max_attempts == 0 {
        return Err(CliError::usage(QnbmError::config(
            "max_attempts",
            "must be at least 1",
        )));
    }
    let shots = match args.shots {
        Some(0) => {
            return Err(CliError::usage(QnbmError::config(
                "shots",
                "must be at least 1",
            )))
        }
        Some(s) => s,
        None => shot_requirements(structure.n_out(), args.k, mode).map_err(CliError::usage)?,
    };
    let params = load_params(&args.params, &structure)?;
    let path = output_path(
        args.output,
        &format!(
            "histogram_{}_{}_seed{}.json",
            slug(&structure),
            mode,
            args.seed
        ),
    )?;

    let model = build_qnbm(&structure, &params).map_err(CliError::runtime)?;
    let histogram = model
        .sample(mode, shots, args.max_attempts, args.seed)
        .map_err(CliError::runtime)?;
    let json = histogram.to_json().map_err(CliError::runtime)?;
    fs::write(&path, json + "\n")
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;

    println!("structure: {structure}");
    println!("mode: {mode}");
    println!("shots: {}", histogram.total_shots());
    println!("kept: {}", histogram.kept_shots());
    println!("discarded: {}", histogram.discarded_shots());
    println!("histogram: {}", path.display());
    Ok(())
}

fn cmd_stress(args: StressArgs) -> Result<(), CliError> {
    let structures = if args.structure.is_empty() {
        DEFAULT_STRUCTURES
            .iter()
            .map(|s| parse_structure(s))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        args.structure
            .iter()
            .map(|s| parse_structure(s))
            .collect::<Result<Vec<_>, _>>()?
    };
    let modes = if args.mode.is_empty() {
        SamplingMode::ALL.to_vec()
    } else {
        let mut modes = Vec::new();
        for m in &args.mode {
            let m = parse_mode(m)?;
            if !modes.contains(&m) {
                modes.push(m);
            }
        }
        modes
    };
    let format: ReportFormat = args.format.parse().map_err(CliError::usage)?;
    if args.trials == 0 {
        return Err(CliError::usage(QnbmError::config(
            "trials",
            "must be at least 1",
        )));
    }
    if args.k == 0 {
        return Err(CliError::usage(QnbmError::config(
            "k",
            "must be at least 1",
        )));
    }
    if args.max_attempts == 0 {
        return Err(CliError::usage(QnbmError::config(
            "max_attempts",
            "must be at least 1",
        )));
    }
    if args.shots == Some(0) {
        return Err(CliError::usage(QnbmError::config(
            "shots",
            "must be at least 1",
        )));
    }
    for s in &structures {
        CardinalitySpec::new(s.n_out(), args.training.cardinality).map_err(CliError::usage)?;
    }
    let config = StressConfig {
        training: args.training.config()?,
        k: args.k,
        max_attempts: args.max_attempts,
        cardinality: args.training.cardinality,
        master_seed: args.training.seed,
        pricing: load_pricing(args.pricing.as_deref())?,
        shots_override: args.shots,
    };
    let path = output_path(args.output, &format!("stress_report.{format}"))?;

    let progress = |line: &str| {
        let mut err = std::io::stderr().lock();
        let _ = writeln!(err, "{line}");
    };
    let mut report = run_stress_test(&structures, &modes, args.trials, &config, &progress)
        .map_err(CliError::usage)?;
    if !args.reproducible {
        report.generated_at_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .ok()
            .map(|d| d.as_secs());
    }
    emit_report(&report, format, &path).map_err(CliError::runtime)?;

    for s in &report.structures {
        for c in &s.cells {
            let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into());
            println!(
                "{} {}: shots {} best KL {} mean KL {} std {} discard {:.4} HQC {:.1}",
                s.structure,
                c.mode,
                c.shots,
                fmt(c.kl_best),
                fmt(c.kl_mean),
                fmt(c.kl_std),
                c.discard_rate,
                c.hqc_estimate
            );
        }
        if let Some(e) = &s.error {
            println!("{}: failed: {e}", s.structure);
        }
    }
    if let (Some(t), Some(m)) = (report.trend, report.trend_mode) {
        println!(
            "trend ({m}, x = structure index): slope {:.6} intercept {:.6}",
            t.slope, t.intercept
        );
    }
    println!("report: {}", path.display());

    if !structures.is_empty() && report.successful_cells() == 0 {
        return Err(CliError::Runtime("every stress cell failed".into()));
    }
    Ok(())
}

fn cmd_resources(args: ResourcesArgs) -> Result<(), CliError> {
    let text = args
        .positional
        .or(args.structure)
        .unwrap_or_else(|| DEFAULT_STRUCTURES[0].to_string());
    let structure = parse_structure(&text)?;
    if args.max_attempts == 0 {
        return Err(CliError::usage(QnbmError::config(
            "max_attempts",
            "must be at least 1",
        )));
    }
    let pricing = load_pricing(args.pricing.as_deref())?;
    let census = gate_census(&structure, args.max_attempts).map_err(CliError::usage)?;
    let n_out = structure.n_out();
    let cc_shots = shot_requirements(n_out, args.k, SamplingMode::ClassicalControl)
        .map_err(CliError::usage)?;
    let ps_shots =
        shot_requirements(n_out, args.k, SamplingMode::PostSelection).map_err(CliError::usage)?;

    let (params, source) = match &args.params {
        Some(p) => (
            load_params(p, &structure)?,
            format!("parameters from {}", p.display()),
        ),
        None => {
            let trace = train_for(&structure, &args.training)?;
            (
                trace.final_params,
                format!("model trained with seed {}", args.training.seed),
            )
        }
    };
    let model = build_qnbm(&structure, &params).map_err(CliError::runtime)?;
    let attempts = model
        .classical_control(args.max_attempts, DEFAULT_BRANCH_CAP)
        .map_err(CliError::runtime)?
        .expected_attempts;
    let cc_hqc = hqc_estimate(&census, cc_shots, &attempts, &pricing).map_err(CliError::runtime)?;
    let ps_hqc =
        hqc_estimate(&census, ps_shots, &vec![1.0; n_out], &pricing).map_err(CliError::runtime)?;

    println!("structure: {structure}");
    println!("qubits: {}", census.qubits);
    println!("parameterized_2q: {}", census.parameterized_2q);
    println!("fixed_1q: {}", census.fixed_1q);
    println!("fixed_2q: {}", census.fixed_2q);
    println!("input_hadamards: {}", census.input_hadamards);
    println!(
        "mid_circuit_measurements: {}",
        census.mid_circuit_measurements
    );
    println!("classical_registers: {}", census.classical_registers);
    println!("final_measurements: {}", census.final_measurements);
    let attempts_text: Vec<String> = attempts.iter().map(|a| format!("{a:.4}")).collect();
    println!(
        "expected_attempts_per_block: [{}] ({source})",
        attempts_text.join(", ")
    );
    println!("cc shots: {cc_shots}");
    println!("ps shots: {ps_shots}");
    println!("cc HQC: {cc_hqc:.2}");
    println!("ps HQC: {ps_hqc:.2}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_uppercase_k() {
        let cli = Cli::try_parse_from(["qnbm", "resources", "1,0,2", "--K", "10"]).unwrap();
        match cli.command {
            Command::Resources(a) => assert_eq!(a.k, 10),
            _ => panic!("wrong command"),
        }
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["qnbm", "train", "--structure", "2,1,2"]), EXIT_USAGE);
        assert_eq!(run(["qnbm", "train", "--iterations", "0"]), EXIT_USAGE);
        assert_eq!(run(["qnbm", "stress", "--mode", "bogus"]), EXIT_USAGE);
        assert_eq!(run(["qnbm", "nonsense"]), EXIT_USAGE);
    }
}
