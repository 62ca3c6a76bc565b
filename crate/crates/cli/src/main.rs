use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use ineqreg::diagnostics::{acf, summarize, DiagnosticsError, DrawTable};
use ineqreg::experiments::{
    self, DesignMode, ExperimentError, ExperimentReport, Restriction, Scale, SimulationConfig,
    DELTA_GRID,
};
use ineqreg::io::{self, DatasetFormat, IoError};
use ineqreg::multivariate::{run_chain_mv, MvData, PriorSpecMV};
use ineqreg::numerics::{Matrix, Vector};
use ineqreg::restrictions::{restrictions_from_json, RestrictionError};
use ineqreg::univariate::{run_chain, EngineError, PriorSpec, RegressionData, SamplerConfig};

const REPORT_FORMAT: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "ineqreg", about = "Bayesian regression under linear inequality restrictions")]
#[command(version = version_string())]
struct Cli {
    /// Re-run the invocation recorded in a manifest.
    #[arg(long, global = true)]
    from_manifest: Option<PathBuf>,
    /// Directory for output files.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

fn version_string() -> &'static str {
    concat!(env!("CARGO_PKG_VERSION"), " (report format 1)")
}

#[derive(Args, Debug, Clone, Default)]
struct SamplerFlags {
    /// Total Gibbs iterations per chain
    #[arg(long)]
    iters: Option<usize>,
    /// Iterations discarded before summaries (default: a tenth)
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Coordinate sweeps over the restricted block per iteration
    #[arg(long)]
    inner_sweeps: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a single-response model from a JSON config.
    FitUni {
        config: PathBuf,
        #[command(flatten)]
        flags: SamplerFlags,
    },
    /// Fit a multi-response model from a JSON config.
    FitMulti {
        config: PathBuf,
        #[command(flatten)]
        flags: SamplerFlags,
    },
    /// Re-run one of the simulation studies or data analyses.
    Replicate {
        #[arg(value_enum)]
        study: Study,
        #[arg(long, value_enum, default_value = "desk")]
        scale: ScaleArg,
        #[command(flatten)]
        flags: SamplerFlags,
        /// Override the scale's replication count
        #[arg(long)]
        replications: Option<usize>,
        /// Cap on parallel replications.
        #[arg(long)]
        jobs: Option<usize>,
        /// Redraw covariates each replication, or hold them fixed
        #[arg(long, value_enum, default_value = "fresh")]
        design: DesignArg,
        /// Data file for the rent and chemical analyses.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// ACF and summary for every column of a chain CSV.
    Diagnose {
        chain: PathBuf,
        #[arg(long, default_value_t = 50)]
        max_lag: usize,
    },
}

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
#[serde(rename_all = "kebab-case")]
enum Study {
    #[value(name = "example1-r1")]
    Example1R1,
    #[value(name = "example1-r2")]
    Example1R2,
    DeltaSweep,
    Example2,
    Rent,
    Chemical,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ScaleArg {
    Desk,
    Paper,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum DesignArg {
    Fresh,
    Fixed,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Degenerate(String),
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Degenerate(_) => 3,
            CliError::Internal(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Degenerate(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        if e.is_degenerate_model() {
            CliError::Degenerate(e.to_string())
        } else if matches!(e, EngineError::InvalidConfig(_) | EngineError::Restriction(_)) {
            CliError::Config(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

impl From<RestrictionError> for CliError {
    fn from(e: RestrictionError) -> Self {
        EngineError::from(e).into()
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Engine(e) => e.into(),
            ExperimentError::InvalidConfig(_) | ExperimentError::ShapeMismatch(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<DiagnosticsError> for CliError {
    fn from(e: DiagnosticsError) -> Self {
        CliError::Config(e.to_string())
    }
}

/// Input files are the user's responsibility; failures there are config errors.
fn input_error(e: IoError) -> CliError {
    CliError::Config(e.to_string())
}

fn output_error(e: IoError) -> CliError {
    CliError::Internal(e.to_string())
}

#[derive(Serialize, Deserialize, Debug, Clone)]
struct DataSource {
    path: PathBuf,
    format: DatasetFormat,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
#[serde(deny_unknown_fields)]
struct UniPrior {
    a: f64,
    b: f64,
    /// Prior mean in coefficient order; OLS when absent.
    #[serde(default)]
    mean: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
#[serde(deny_unknown_fields)]
struct MultiPrior {
    r: f64,
    /// `Q = RSS / q_divisor`; defaults to n.
    #[serde(default)]
    q_divisor: Option<f64>,
    /// Rows are coefficients, columns are responses; OLS when absent.
    #[serde(default)]
    mean: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
#[serde(deny_unknown_fields)]
struct FitConfig<P> {
    data: DataSource,
    /// Inline restriction object, or a path to one.
    restrictions: Value,
    prior: P,
    sampler: SamplerConfig,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Invocation {
    FitUni {
        config: FitConfig<UniPrior>,
    },
    FitMulti {
        config: FitConfig<MultiPrior>,
    },
    Replicate {
        study: Study,
        simulation: SimulationConfig,
        sampler: SamplerConfig,
        data: Option<PathBuf>,
    },
    Diagnose {
        chain: PathBuf,
        max_lag: usize,
    },
}

#[derive(Serialize, Deserialize, Debug, Clone)]
struct FileDigest {
    path: PathBuf,
    sha256: String,
}

#[derive(Serialize, Deserialize, Debug)]
struct RunManifest {
    invocation: Invocation,
    seed: Option<u64>,
    library_version: String,
    report_format: u32,
    out_dir: PathBuf,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    timings: Value,
}

fn digest(path: &Path) -> Result<FileDigest, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// What a run produced: files to digest and timing values kept out of them.
struct RunOutput {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    timings: serde_json::Map<String, Value>,
}

impl RunOutput {
    fn new(inputs: Vec<PathBuf>) -> Self {
        Self {
            inputs,
            outputs: Vec::new(),
            timings: serde_json::Map::new(),
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::Internal(e.to_string()))
}

/// Moves wall-clock fields out of a report so reruns give identical files.
fn strip_timings(value: &mut Value, path: &str, sink: &mut serde_json::Map<String, Value>) {
    match value {
        Value::Object(map) => {
            for key in ["seconds_per_iteration", "timing_ratio"] {
                if let Some(v) = map.remove(key) {
                    sink.insert(format!("{path}{key}"), v);
                }
            }
            for (k, v) in map.iter_mut() {
                strip_timings(v, &format!("{path}{k}."), sink);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter_mut().enumerate() {
                strip_timings(v, &format!("{path}{i}."), sink);
            }
        }
        _ => {}
    }
}

fn write_report<T: Serialize>(out: &mut RunOutput, dir: &Path, name: &str, report: &T) -> Result<(), CliError> {
    let mut value = to_value(report)?;
    strip_timings(&mut value, "", &mut out.timings);
    let path = dir.join(name);
    io::write_json(&path, &value).map_err(output_error)?;
    out.outputs.push(path);
    Ok(())
}

fn apply_flags(mut cfg: SamplerConfig, flags: &SamplerFlags) -> SamplerConfig {
    if let Some(i) = flags.iters {
        cfg.iters = i;
    }
    if let Some(b) = flags.burn_in {
        cfg.burn_in = Some(b);
    }
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(s) = flags.inner_sweeps {
        cfg.inner_sweeps = s;
    }
    cfg
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_fit_config<P: for<'de> Deserialize<'de>>(path: &Path, flags: &SamplerFlags) -> Result<FitConfig<P>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut cfg: FitConfig<P> = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    cfg.data.path = resolve(base, &cfg.data.path);
    if let Value::String(s) = &cfg.restrictions {
        let p = resolve(base, Path::new(s));
        let text = fs::read_to_string(&p)
            .map_err(|e| CliError::Config(format!("restrictions {}: {e}", p.display())))?;
        cfg.restrictions = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("restrictions {}: {e}", p.display())))?;
    }
    cfg.sampler = apply_flags(cfg.sampler, flags);
    Ok(cfg)
}

fn load_data(src: &DataSource) -> Result<io::Dataset, CliError> {
    if !src.path.exists() {
        return Err(CliError::Config(format!("data.path: {} does not exist", src.path.display())));
    }
    io::load_dataset(&src.path, &src.format).map_err(input_error)
}

fn fit_uni(cfg: &FitConfig<UniPrior>, dir: &Path) -> Result<RunOutput, CliError> {
    let ds = load_data(&cfg.data)?;
    if ds.y.ncols() != 1 {
        return Err(CliError::Config(format!(
            "data.format: expected one response, found {}",
            ds.y.ncols()
        )));
    }
    let spec = restrictions_from_json(&cfg.restrictions)?;
    let data = RegressionData::new(ds.x.clone(), ds.y_vector())?;
    spec.system.validate(data.p(), 1)?;
    let part = spec.partition()?;
    let mut prior = PriorSpec::from_ols(&data, &part, cfg.prior.a, cfg.prior.b)?;
    if let Some(mean) = &cfg.prior.mean {
        if mean.len() != data.p() {
            return Err(CliError::Config(format!("prior.mean: expected {} values", data.p())));
        }
        prior = prior.with_mean(&part, &Vector::from_row_slice(mean));
    }
    let chain = run_chain(&data, &spec.system, Some(&part), &prior, &cfg.sampler)?;
    let mut out = RunOutput::new(vec![cfg.data.path.clone()]);
    let chain_path = dir.join("chain.csv");
    io::write_chain_csv(&chain_path, &chain).map_err(output_error)?;
    out.outputs.push(chain_path);
    let summary_path = dir.join("summary.json");
    io::write_summary_json(&summary_path, &summarize(&DrawTable::from(&chain))?).map_err(output_error)?;
    out.outputs.push(summary_path);
    out.timings.insert("seconds_per_iteration".into(), chain.timing.seconds_per_iteration.into());
    Ok(out)
}

fn fit_multi(cfg: &FitConfig<MultiPrior>, dir: &Path) -> Result<RunOutput, CliError> {
    let ds = load_data(&cfg.data)?;
    let spec = restrictions_from_json(&cfg.restrictions)?;
    let data = MvData::new(ds.x.clone(), ds.y.clone())?;
    spec.system.validate(data.p(), data.k())?;
    let part = spec.partition()?;
    let divisor = cfg.prior.q_divisor.unwrap_or(data.n() as f64);
    let mut prior = PriorSpecMV::from_ols(&data, &part, cfg.prior.r, divisor)?;
    if let Some(rows) = &cfg.prior.mean {
        if rows.len() != data.p() || rows.iter().any(|r| r.len() != data.k()) {
            return Err(CliError::Config(format!(
                "prior.mean: expected a {}x{} matrix",
                data.p(),
                data.k()
            )));
        }
        let m = Matrix::from_fn(data.p(), data.k(), |i, j| rows[i][j]);
        let (m_s, m_sp) = part.split(&m);
        prior.m_s = m_s;
        prior.m_s_prime = m_sp;
    }
    let chain = run_chain_mv(&data, &spec.system, Some(&part), &prior, &cfg.sampler)?;
    let mut out = RunOutput::new(vec![cfg.data.path.clone()]);
    let chain_path = dir.join("chain.csv");
    io::write_chain_mv_csv(&chain_path, &chain).map_err(output_error)?;
    out.outputs.push(chain_path);
    let summary_path = dir.join("summary.json");
    io::write_summary_json(&summary_path, &summarize(&DrawTable::from(&chain))?).map_err(output_error)?;
    out.outputs.push(summary_path);
    out.timings.insert("seconds_per_iteration".into(), chain.timing.seconds_per_iteration.into());
    Ok(out)
}

fn write_replicates(out: &mut RunOutput, dir: &Path, report: &ExperimentReport) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for m in &report.methods {
        let method = to_value(&m.method)?.as_str().unwrap_or_default().to_string();
        let names = m.parameter_names();
        for (k, rep) in m.replicates.iter().enumerate() {
            for (name, v) in names.iter().zip(rep) {
                rows.push(vec![k.to_string(), method.clone(), name.clone(), v.to_string()]);
            }
        }
    }
    let path = dir.join("replicates.csv");
    io::write_csv(&path, &["replication", "method", "parameter", "estimate"], &rows).map_err(output_error)?;
    out.outputs.push(path);
    Ok(())
}

fn replicate(
    study: Study,
    sim: &SimulationConfig,
    sampler: &SamplerConfig,
    data: Option<&Path>,
    dir: &Path,
) -> Result<RunOutput, CliError> {
    let mut out = RunOutput::new(data.map(|p| vec![p.to_path_buf()]).unwrap_or_default());
    match study {
        Study::Example1R1 | Study::Example1R2 | Study::Example2 => {
            let report = match study {
                Study::Example1R1 => experiments::run_example1(Restriction::First, sim)?,
                Study::Example1R2 => experiments::run_example1(Restriction::Second, sim)?,
                _ => experiments::run_example2(sim)?,
            };
            write_replicates(&mut out, dir, &report)?;
            write_report(&mut out, dir, "report.json", &report)?;
        }
        Study::DeltaSweep => {
            let report = experiments::run_delta_sweep(&DELTA_GRID, sim)?;
            let rows: Vec<Vec<String>> = report
                .points
                .iter()
                .map(|p| vec![p.delta.to_string(), p.re.to_string()])
                .collect();
            let path = dir.join("delta_sweep.csv");
            io::write_csv(&path, &["delta", "re"], &rows).map_err(output_error)?;
            out.outputs.push(path);
            write_report(&mut out, dir, "report.json", &report)?;
        }
        Study::Rent | Study::Chemical => {
            let path = data.ok_or_else(|| CliError::Config("--data is required".into()))?;
            if !path.exists() {
                return Err(CliError::Config(format!("--data: {} does not exist", path.display())));
            }
            if study == Study::Rent {
                let ds = io::load_dataset(path, &DatasetFormat::Rent).map_err(input_error)?;
                let a = experiments::run_rent_analysis(&ds, sampler)?;
                for (name, chain) in [("chain_bks.csv", &a.bks), ("chain_baseline.csv", &a.baseline)] {
                    let p = dir.join(name);
                    io::write_chain_csv(&p, chain).map_err(output_error)?;
                    out.outputs.push(p);
                }
                write_report(&mut out, dir, "report.json", &a.report)?;
            } else {
                let ds = io::load_dataset(path, &DatasetFormat::Chemical).map_err(input_error)?;
                let a = experiments::run_chemical_analysis(&ds, sampler)?;
                let p = dir.join("chain.csv");
                io::write_chain_mv_csv(&p, &a.chain).map_err(output_error)?;
                out.outputs.push(p);
                write_report(&mut out, dir, "report.json", &a.report)?;
            }
        }
    }
    Ok(out)
}

fn file_stem_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect()
}

fn diagnose(chain: &Path, max_lag: usize, dir: &Path) -> Result<RunOutput, CliError> {
    let table = io::read_chain_csv(chain).map_err(input_error)?;
    if max_lag >= table.rows() {
        return Err(CliError::Config(format!(
            "--max-lag {max_lag} must be smaller than the chain length {}",
            table.rows()
        )));
    }
    let mut out = RunOutput::new(vec![chain.to_path_buf()]);
    for (name, column) in table.names.iter().zip(&table.columns) {
        let rho = acf(column, max_lag)?;
        let path = dir.join(format!("acf_{}.csv", file_stem_safe(name)));
        io::write_acf_csv(&path, &rho).map_err(output_error)?;
        out.outputs.push(path);
    }
    let path = dir.join("summary.json");
    io::write_summary_json(&path, &summarize(&table)?).map_err(output_error)?;
    out.outputs.push(path);
    Ok(out)
}

fn execute(inv: &Invocation, dir: &Path) -> Result<RunOutput, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Internal(format!("{}: {e}", dir.display())))?;
    match inv {
        Invocation::FitUni { config } => fit_uni(config, dir),
        Invocation::FitMulti { config } => fit_multi(config, dir),
        Invocation::Replicate {
            study,
            simulation,
            sampler,
            data,
        } => replicate(*study, simulation, sampler, data.as_deref(), dir),
        Invocation::Diagnose { chain, max_lag } => diagnose(chain, *max_lag, dir),
    }
}

fn invocation_seed(inv: &Invocation) -> Option<u64> {
    match inv {
        Invocation::FitUni { config } => Some(config.sampler.seed),
        Invocation::FitMulti { config } => Some(config.sampler.seed),
        Invocation::Replicate { study: Study::Rent | Study::Chemical, sampler, .. } => Some(sampler.seed),
        Invocation::Replicate { simulation, .. } => Some(simulation.seed),
        Invocation::Diagnose { .. } => None,
    }
}

const DEFAULT_SEED: u64 = 1;
const ANALYSIS_ITERS: usize = 10_000;

fn build_invocation(cmd: Command) -> Result<Invocation, CliError> {
    Ok(match cmd {
        Command::FitUni { config, flags } => Invocation::FitUni {
            config: read_fit_config(&config, &flags)?,
        },
        Command::FitMulti { config, flags } => Invocation::FitMulti {
            config: read_fit_config(&config, &flags)?,
        },
        Command::Replicate {
            study,
            scale,
            flags,
            replications,
            jobs,
            design,
            data,
        } => {
            let seed = flags.seed.unwrap_or(DEFAULT_SEED);
            let scale = match scale {
                ScaleArg::Desk => Scale::Desk,
                ScaleArg::Paper => Scale::Paper,
            };
            let mut sim = SimulationConfig::for_scale(scale, seed);
            sim.iters = flags.iters.unwrap_or(sim.iters);
            sim.burn_in = flags.burn_in;
            sim.inner_sweeps = flags.inner_sweeps.unwrap_or(sim.inner_sweeps);
            sim.replications = replications.unwrap_or(sim.replications);
            sim.jobs = jobs;
            sim.design = match design {
                DesignArg::Fresh => DesignMode::Fresh,
                DesignArg::Fixed => DesignMode::Fixed,
            };
            let sampler = apply_flags(SamplerConfig::new(ANALYSIS_ITERS, seed), &flags);
            let data = data.or_else(|| match study {
                Study::Rent => Some(PathBuf::from("data/rent.csv")),
                Study::Chemical => Some(PathBuf::from("data/chemical.csv")),
                _ => None,
            });
            Invocation::Replicate {
                study,
                simulation: sim,
                sampler,
                data,
            }
        }
        Command::Diagnose { chain, max_lag } => Invocation::Diagnose { chain, max_lag },
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (invocation, default_dir) = match (cli.from_manifest, cli.command) {
        (Some(path), None) => {
            let text = fs::read_to_string(&path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let m: RunManifest = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            (m.invocation, m.out_dir)
        }
        (None, Some(cmd)) => (build_invocation(cmd)?, PathBuf::from("out")),
        (Some(_), Some(_)) => {
            return Err(CliError::Config("--from-manifest cannot be combined with a subcommand".into()))
        }
        (None, None) => return Err(CliError::Config("a subcommand or --from-manifest is required".into())),
    };
    let dir = cli.out_dir.unwrap_or(default_dir);
    let start = Instant::now();
    let mut out = execute(&invocation, &dir)?;
    out.timings.insert("wall_seconds".into(), start.elapsed().as_secs_f64().into());
    let manifest = RunManifest {
        seed: invocation_seed(&invocation),
        invocation,
        library_version: env!("CARGO_PKG_VERSION").into(),
        report_format: REPORT_FORMAT,
        out_dir: dir.clone(),
        inputs: out.inputs.iter().map(|p| digest(p)).collect::<Result<_, _>>()?,
        outputs: out.outputs.iter().map(|p| digest(p)).collect::<Result<_, _>>()?,
        timings: Value::Object(out.timings),
    };
    io::write_json(&dir.join("manifest.json"), &manifest).map_err(output_error)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
