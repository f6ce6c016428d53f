//! Command-line front end shared by the `dsn` binary and the tests.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error
//! (I/O, formats, weights), 3 verification failure.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use thiserror::Error;

use crate::blocks::ExecMode;
use crate::error::DsnError;
use crate::ledger::{bench, count_macs, effective_macs, ActivationReport, ActivationRow, GateSetting};
use crate::model::{DsnModel, Init, ModelConfig};
use crate::policy::{map_ovrl_to_theta, GateVector, MetricScore};
use crate::signal::{frame_count, read_wav, write_wav};
use crate::verify;
use crate::weights::WeightStore;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

/// Environment variable capping parallel file workers of `enhance`.
pub const THREADS_ENV: &str = "DSN_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] DsnError),
    #[error("{0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(DsnError::Config(_) | DsnError::InvalidArgument(_)) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Verification(_) => EXIT_VERIFY,
        }
    }

    fn data(msg: impl Into<String>) -> Self {
        CliError::Data(DsnError::UnsupportedFormat(msg.into()))
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "dsn", version, about = "Dynamically slimmable speech enhancement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// TOML model configuration; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Weight manifest (`.json`); its blob is resolved next to it.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Seed for freshly drawn weights when no weight file is given.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Enhance a WAV file or every WAV file in a directory.
    Enhance {
        input: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "slim")]
        mode: ExecMode,
        /// Force every gate to 0 or 1, or let the policy decide.
        #[arg(long, default_value = "policy")]
        gate_override: GateSetting,
        /// Sidecar of `id<TAB>OVRL` scores; adds gate_loss.csv.
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long, default_value = "enhanced")]
        out: PathBuf,
    },
    /// Join gate ratios with sidecar keys and report grouped statistics.
    Analyze {
        gates: PathBuf,
        /// Sidecar of `id<TAB>key` lines (OVRL score, SNR, ...).
        #[arg(long)]
        metrics: PathBuf,
        /// Round numeric keys down to multiples of this width.
        #[arg(long)]
        bucket: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the per-module MAC table.
    Maccount {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time slim and masked-dense inference under fixed and policy gates.
    Bench {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 2.0)]
        seconds: f64,
        #[arg(long, default_value_t = crate::ledger::BENCH_RUNS)]
        runs: usize,
        /// Restrict to one mode; both by default.
        #[arg(long)]
        mode: Option<ExecMode>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic policy gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        trials: u64,
    },
    /// Run the slimming, causality, streaming and MAC-counter suites.
    Selftest {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write a seeded weight file and the configuration used.
    Init {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parse `args` (program name first), run, and return the exit code.
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
    let mut stdout = std::io::stdout().lock();
    match execute(cli, &mut stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> CliResult {
    match cli.command {
        Command::Enhance {
            input,
            model,
            mode,
            gate_override,
            metrics,
            out: dir,
        } => enhance(&input, &model, mode, gate_override, metrics.as_deref(), &dir, out),
        Command::Analyze {
            gates,
            metrics,
            bucket,
            out: dir,
        } => analyze(&gates, &metrics, bucket, dir.as_deref(), out),
        Command::Maccount { config, out: dir } => maccount(config.as_deref(), dir.as_deref(), out),
        Command::Bench {
            model,
            seconds,
            runs,
            mode,
            out: dir,
        } => run_bench(&model, seconds, runs, mode, dir.as_deref(), out),
        Command::Gradcheck { seed, trials } => gradcheck(seed, trials, out),
        Command::Selftest { config } => selftest(config.as_deref(), out),
        Command::Init { model, out: dir } => init(&model, &dir, out),
    }
}

fn say(out: &mut dyn Write, line: impl AsRef<str>) -> CliResult {
    writeln!(out, "{}", line.as_ref()).map_err(|e| DsnError::io("<stdout>", e).into())
}

fn load_config(path: Option<&Path>) -> CliResult<ModelConfig> {
    Ok(match path {
        Some(p) => ModelConfig::from_file(p)?,
        None => ModelConfig::default(),
    })
}

fn load_model(args: &ModelArgs) -> CliResult<DsnModel> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let init = match &args.weights {
        Some(p) => Init::Weights(WeightStore::load(p)?),
        None => Init::Seed(config.seed),
    };
    Ok(DsnModel::build(config, init)?)
}

fn ensure_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| DsnError::io(dir, e).into())
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult {
    fs::write(path, contents).map_err(|e| DsnError::io(path, e).into())
}

fn thread_cap() -> CliResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
    }
}

fn wav_inputs(input: &Path) -> CliResult<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if !input.is_dir() {
        return Err(DsnError::io(input, std::io::Error::from(std::io::ErrorKind::NotFound)).into());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| DsnError::io(input, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::data(format!("no .wav files in {}", input.display())));
    }
    Ok(files)
}

fn utterance_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Sidecar lines `id<TAB>value`; blank lines and `#` comments are skipped.
pub fn read_sidecar(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| DsnError::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, value) = line
            .split_once('\t')
            .ok_or_else(|| CliError::data(format!("{}:{}: expected `id<TAB>value`", path.display(), i + 1)))?;
        rows.push((id.trim().to_string(), value.trim().to_string()));
    }
    Ok(rows)
}

fn lookup<'a>(ids: impl Iterator<Item = &'a str>, table: &HashMap<String, String>) -> CliResult {
    let missing: Vec<&str> = ids.filter(|id| !table.contains_key(*id)).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::data(format!("sidecar has no rows for: {}", missing.join(", "))))
    }
}

struct GateRow {
    id: String,
    gates: GateVector,
}

#[allow(clippy::too_many_arguments)]
fn enhance(
    input: &Path,
    model_args: &ModelArgs,
    mode: ExecMode,
    setting: GateSetting,
    metrics: Option<&Path>,
    dir: &Path,
    out: &mut dyn Write,
) -> CliResult {
    let model = load_model(model_args)?;
    let files = wav_inputs(input)?;
    ensure_dir(dir)?;
    let work = |path: &PathBuf| -> CliResult<GateRow> {
        let audio = read_wav(path)?;
        let cfg = model.config();
        let frames = frame_count(audio.len(), cfg.fft_size, cfg.hop);
        let forced = match setting {
            GateSetting::AllZero => Some(GateVector::constant(frames, false)),
            GateSetting::AllOne => Some(GateVector::constant(frames, true)),
            GateSetting::Policy => None,
        };
        let enhanced = model.forward_utterance(&audio, mode, forced.as_ref())?;
        let id = utterance_id(path);
        write_wav(dir.join(format!("{id}.wav")), &enhanced.audio)?;
        Ok(GateRow {
            id,
            gates: enhanced.gates,
        })
    };
    let results: Vec<CliResult<GateRow>> = match thread_cap()? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {n} workers: {e}")))?
            .install(|| files.par_iter().map(work).collect()),
        None => files.par_iter().map(work).collect(),
    };
    let rows = results.into_iter().collect::<CliResult<Vec<_>>>()?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::data(format!("csv: {e}"));
    w.write_record(["utterance_id", "frames", "ratio", "gates"]).map_err(csv_err)?;
    for r in &rows {
        w.write_record([
            r.id.clone(),
            r.gates.len().to_string(),
            format!("{:.6}", r.gates.activation_ratio()),
            r.gates.to_bitstring(),
        ])
        .map_err(csv_err)?;
        say(
            out,
            format!("{}: {} frames, activation ratio {:.3}", r.id, r.gates.len(), r.gates.activation_ratio()),
        )?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::data(format!("csv: {e}")))?;
    write_file(&dir.join("gates.csv"), &bytes)?;

    if let Some(sidecar) = metrics {
        let table: HashMap<String, String> = read_sidecar(sidecar)?.into_iter().collect();
        lookup(rows.iter().map(|r| r.id.as_str()), &table)?;
        let lambda = model.config().lambda;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["utterance_id", "ovrl", "theta", "ratio", "loss"]).map_err(csv_err)?;
        for r in &rows {
            let raw = &table[&r.id];
            let m = raw
                .parse::<f64>()
                .map_err(|_| CliError::data(format!("OVRL score `{raw}` for {} is not a number", r.id)))
                .and_then(|v| Ok(MetricScore::new(v)?))?;
            let theta = map_ovrl_to_theta(m, lambda)?;
            let loss = (r.gates.activation_ratio() - theta).max(0.0);
            w.write_record([
                r.id.clone(),
                raw.clone(),
                format!("{theta:.6}"),
                format!("{:.6}", r.gates.activation_ratio()),
                format!("{loss:.6}"),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::data(format!("csv: {e}")))?;
        write_file(&dir.join("gate_loss.csv"), &bytes)?;
    }
    say(out, format!("wrote {} file(s) to {}", rows.len(), dir.display()))
}

/// `(utterance_id, ratio)` pairs from a gates CSV. The ratio is recomputed
/// from the bit string when one is present.
pub fn read_gates_csv(path: &Path) -> CliResult<Vec<(String, f64)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id_col = col("utterance_id")
        .ok_or_else(|| CliError::data(format!("{}: missing utterance_id column", path.display())))?;
    let ratio_col = col("ratio");
    let gates_col = col("gates");
    if ratio_col.is_none() && gates_col.is_none() {
        return Err(CliError::data(format!("{}: needs a ratio or gates column", path.display())));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let id = record.get(id_col).unwrap_or_default().to_string();
        let ratio = match (gates_col.and_then(|c| record.get(c)), ratio_col.and_then(|c| record.get(c))) {
            (Some(bits), _) if !bits.is_empty() => GateVector::from_bitstring(bits)?.activation_ratio(),
            (_, Some(r)) => r
                .parse::<f64>()
                .map_err(|_| CliError::data(format!("{}: bad ratio `{r}` for {id}", path.display())))?,
            _ => return Err(CliError::data(format!("{}: row {id} has no ratio", path.display()))),
        };
        rows.push((id, ratio));
    }
    Ok(rows)
}

fn bucket_key(raw: &str, width: Option<f64>) -> CliResult<String> {
    match width {
        None => Ok(raw.to_string()),
        Some(w) if w > 0.0 => {
            let v: f64 = raw
                .parse()
                .map_err(|_| CliError::data(format!("key `{raw}` is not numeric, cannot bucket")))?;
            Ok(format!("{}", (v / w).floor() * w))
        }
        Some(w) => Err(CliError::Usage(format!("bucket width {w} must be positive"))),
    }
}

fn analyze(gates: &Path, metrics: &Path, bucket: Option<f64>, dir: Option<&Path>, out: &mut dyn Write) -> CliResult {
    let rows = read_gates_csv(gates)?;
    let table: HashMap<String, String> = read_sidecar(metrics)?.into_iter().collect();
    lookup(rows.iter().map(|(id, _)| id.as_str()), &table)?;
    let rows = rows
        .into_iter()
        .map(|(id, ratio)| {
            let key = bucket_key(&table[&id], bucket)?;
            Ok(ActivationRow {
                utterance_id: id,
                key: Some(key),
                ratio,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let report = ActivationReport::from_rows(rows)?;
    match dir {
        Some(d) => {
            ensure_dir(d)?;
            write_file(&d.join("activation.csv"), report.to_csv().as_bytes())?;
            write_file(&d.join("activation_groups.csv"), report.groups_csv().as_bytes())?;
        }
        None => say(out, report.to_csv().trim_end())?,
    }
    say(out, report.groups_csv().trim_end())?;
    say(
        out,
        format!(
            "overall: {} utterances, mean {:.6}, std {:.6}",
            report.rows.len(),
            report.mean,
            report.std
        ),
    )
}

fn maccount(config: Option<&Path>, dir: Option<&Path>, out: &mut dyn Write) -> CliResult {
    let config = load_config(config)?;
    let report = count_macs(&config)?;
    say(out, report.to_table().trim_end())?;
    say(
        out,
        format!(
            "effective at 50% activation: {:.3} M MACs/s",
            effective_macs(&report, 0.5)? / 1e6
        ),
    )?;
    say(
        out,
        "reference anchors (not binding): 141 M zero activation, 221 M at 50%, 0.30 G static baseline",
    )?;
    if let Some(d) = dir {
        ensure_dir(d)?;
        write_file(&d.join("macs.csv"), report.to_csv().as_bytes())?;
    }
    Ok(())
}

fn run_bench(
    model_args: &ModelArgs,
    seconds: f64,
    runs: usize,
    mode: Option<ExecMode>,
    dir: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult {
    if !(seconds > 0.0 && seconds.is_finite()) || runs == 0 {
        return Err(CliError::Usage("bench needs positive --seconds and --runs".into()));
    }
    let model = load_model(model_args)?;
    let modes = match mode {
        Some(m) => vec![m],
        None => vec![ExecMode::Slim, ExecMode::MaskedDense],
    };
    let report = bench(&model, seconds, &modes, runs, model.config().seed)?;
    say(out, report.to_csv().trim_end())?;
    if let (Some(zero), Some(one)) = (
        report.row(ExecMode::Slim, GateSetting::AllZero),
        report.row(ExecMode::Slim, GateSetting::AllOne),
    ) {
        say(out, format!("slim throughput ratio g=0 / g=1: {:.2}x", zero.throughput() / one.throughput()))?;
    }
    if let Some(d) = dir {
        ensure_dir(d)?;
        write_file(&d.join("bench.csv"), report.to_csv().as_bytes())?;
    }
    Ok(())
}

fn gradcheck(seed: u64, trials: u64, out: &mut dyn Write) -> CliResult {
    if trials == 0 {
        return Err(CliError::Usage("--trials must be positive".into()));
    }
    let cfg = ModelConfig::default();
    let bins = cfg.bins();
    let mut worst = 0.0f64;
    for s in seed..seed + trials {
        let r = verify::policy_gradcheck(s, cfg.channels[1], bins.f2, 20)?;
        say(
            out,
            format!("seed {s}: loss {:.6e}, {} params, max rel err {:.3e}", r.loss, r.params, r.max_rel_err),
        )?;
        worst = worst.max(r.max_rel_err);
    }
    say(out, format!("max relative error: {worst:.3e}"))?;
    if worst <= verify::GRAD_REL_TOL {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "gradient check failed: {worst:.3e} > {:e}",
            verify::GRAD_REL_TOL
        )))
    }
}

fn selftest(config: Option<&Path>, out: &mut dyn Write) -> CliResult {
    let config = load_config(config)?;
    let outcomes = verify::selftest(&config)?;
    for o in &outcomes {
        say(out, o.to_string())?;
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name.as_str()).collect();
    if failed.is_empty() {
        say(out, "all checks passed")
    } else {
        Err(CliError::Verification(format!("failed: {}", failed.join(", "))))
    }
}

fn init(model_args: &ModelArgs, dir: &Path, out: &mut dyn Write) -> CliResult {
    let model = load_model(model_args)?;
    ensure_dir(dir)?;
    let manifest = model.weights().save(dir.join("model"))?;
    write_file(&dir.join("config.toml"), model.config().to_toml_string().as_bytes())?;
    say(
        out,
        format!("wrote {} ({} parameters)", manifest.display(), model.param_count()),
    )
}
