//! `keydyn` command line: synth, summary, extract, train, matrix, report, selftest.
//!
//! Exit codes: 0 ok, 1 usage, 2 data, 3 numeric.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::features::{
    combine_devices, fit_vocabulary, vectorize, write_feature_csv, write_mask_csv, DeviceConfig, FeatureVector,
    VocabularyCaps,
};
use crate::ingest::{dataset_summary, load_dir, Dataset, Mode, DATA_DIR_ENV};
use crate::protocol::{
    full_matrix, run_experiment, write_results, ExperimentConfig, FeatureStore, MatrixOutput, MatrixPlan, ModelKind,
    OutputFormat, ProtocolError, ProtocolSettings, Task, DEFAULT_SELECTOR_K,
};
use crate::synth::{generate, write_dataset, GeneratorConfig};

// a closed pipe (e.g. `| head`) is not an error worth a panic
macro_rules! out {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Run configuration file. Every key is optional; flags win over keys.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub tasks: Vec<Task>,
    pub device_configs: Vec<DeviceConfig>,
    pub modes: Vec<Mode>,
    pub models: Vec<ModelKind>,
    pub seeds: Vec<u64>,
    /// Overrides `protocol.caps`.
    pub caps: Option<VocabularyCaps>,
    pub selector_k: Vec<usize>,
    pub format: Option<OutputFormat>,
    pub overlay: bool,
    pub jobs: Option<usize>,
    pub protocol: ProtocolSettings,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
    }

    fn settings(&self) -> ProtocolSettings {
        let mut s = self.protocol.clone();
        if let Some(caps) = self.caps {
            s.caps = caps;
        }
        s
    }

    /// The matrix to run, with unset lists filled by the defaults.
    pub fn plan(&self) -> MatrixPlan {
        fn or<T: Clone>(v: &[T], d: &[T]) -> Vec<T> {
            if v.is_empty() { d } else { v }.to_vec()
        }
        MatrixPlan {
            tasks: or(&self.tasks, &Task::ALL),
            device_configs: or(&self.device_configs, &DeviceConfig::ALL),
            modes: or(&self.modes, &Mode::ALL),
            models: self.models.clone(),
            seeds: or(&self.seeds, &[0]),
            selector_k: or(&self.selector_k, &DEFAULT_SELECTOR_K),
            settings: self.settings(),
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Protocol(p) => p.into(),
            Error::Neural(_) => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::Incompatible { .. } | ProtocolError::EmptyGrid => CliError::Usage(e.to_string()),
            e if e.is_numeric() => CliError::Numeric(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|_| format!("unknown mode `{s}` (free or fixed)"))
}

#[derive(Parser, Debug)]
#[command(name = "keydyn", version, about = "Keystroke-dynamics features and soft-biometric inference")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Directory with events.csv and labels.csv (else config, else KEYDYN_DATA_DIR).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic population as events.csv and labels.csv.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        signal: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Keystrokes per (device, mode) stream.
        #[arg(long)]
        keystrokes: Option<usize>,
        /// Generator configuration JSON (effect table, timing, text).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the dataset manifest as JSON.
    Summary {
        #[command(flatten)]
        common: Common,
    },
    /// Write per-configuration feature, mask and vocabulary files.
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        device_configs: Vec<DeviceConfig>,
        #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
        modes: Vec<Mode>,
    },
    /// Run one experiment cell and save its provenance and model.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        task: Task,
        #[arg(long)]
        model: ModelKind,
        #[arg(long, default_value = "combined")]
        device_config: DeviceConfig,
        #[arg(long, default_value = "free", value_parser = parse_mode)]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',')]
        selector_k: Vec<usize>,
    },
    /// Run the full matrix and write results/<task>.md, .csv and provenance.json.
    Matrix {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        tasks: Vec<Task>,
        #[arg(long, value_delimiter = ',')]
        device_configs: Vec<DeviceConfig>,
        #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
        modes: Vec<Mode>,
        #[arg(long, value_delimiter = ',')]
        models: Vec<ModelKind>,
        /// Number of seeded splits (seeds 0..n).
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        selector_k: Vec<usize>,
        #[arg(long)]
        format: Option<OutputFormat>,
        /// Annotate the best cells with the published numbers.
        #[arg(long)]
        overlay: bool,
        /// Worker threads (0 = all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Training epochs for the neural models.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Re-render tables from an existing results/provenance.json.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        format: Option<OutputFormat>,
        #[arg(long)]
        overlay: bool,
    },
    /// Gradient checks and built-in oracle suites.
    Selftest,
}

impl clap::ValueEnum for OutputFormat {
    fn value_variants<'a>() -> &'a [Self] {
        &[OutputFormat::Md, OutputFormat::Csv, OutputFormat::Both]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            OutputFormat::Md => "md",
            OutputFormat::Csv => "csv",
            OutputFormat::Both => "both",
        }))
    }
}

impl Common {
    fn config(&self) -> Result<RunConfig, CliError> {
        match &self.config {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::default()),
        }
    }

    fn data_dir(&self, cfg: &RunConfig) -> Result<PathBuf, CliError> {
        self.data_dir
            .clone()
            .or_else(|| cfg.data_dir.clone())
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .ok_or_else(|| CliError::Usage(format!("no data directory: pass --data-dir or set {DATA_DIR_ENV}")))
    }

    fn out_dir(&self, cfg: &RunConfig) -> PathBuf {
        self.out.clone().or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("."))
    }

    fn dataset(&self, cfg: &RunConfig) -> Result<Dataset, CliError> {
        let dir = self.data_dir(cfg)?;
        log::info!("loading {}", dir.display());
        Ok(load_dir(&dir)?)
    }
}

fn io_err(p: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", p.display()))
}

fn create(p: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(p).map(BufWriter::new).map_err(io_err(p))
}

fn write_json<T: Serialize>(p: &Path, value: &T) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(p, json).map_err(io_err(p))
}

fn init_logging(verbose: bool) {
    let level = if verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    let _ = env_logger::Builder::new().filter_level(level).parse_env("KEYDYN_LOG").try_init();
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(std::io::stdout(), "{e}");
                return EXIT_OK;
            }
            eprintln!("{e}");
            eprintln!("{}", Cli::command().render_help());
            return EXIT_USAGE;
        }
    };
    init_logging(cli.verbose);
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

fn run(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Synth { out, users, signal, seed, keystrokes, config } => {
            let mut cfg = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p)
                        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                    serde_json::from_str(&text)
                        .map_err(|e| CliError::Usage(format!("bad config {}: {e}", p.display())))?
                }
                None => GeneratorConfig::default(),
            };
            cfg.n_users = users.unwrap_or(cfg.n_users);
            cfg.signal_strength = signal.unwrap_or(cfg.signal_strength);
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.keystrokes_per_stream = keystrokes.unwrap_or(cfg.keystrokes_per_stream);
            let data = generate(&cfg).map_err(CliError::Usage)?;
            write_dataset(&data, &out)?;
            out!("wrote {} users, {} events to {}", data.labels.len(), data.events.len(), out.display());
            Ok(EXIT_OK)
        }
        Command::Summary { common } => {
            let cfg = common.config()?;
            let ds = common.dataset(&cfg)?;
            let manifest = dataset_summary(&ds);
            out!("{}", serde_json::to_string_pretty(&manifest).expect("serializable"));
            if ds.report.dropped_inverted > 0 {
                eprintln!("note: {} events dropped (release before press)", ds.report.dropped_inverted);
            }
            Ok(EXIT_OK)
        }
        Command::Extract { common, device_configs, modes } => {
            let cfg = common.config()?;
            let ds = common.dataset(&cfg)?;
            let caps = cfg.settings().caps;
            let dcs = if device_configs.is_empty() { cfg.plan().device_configs } else { device_configs };
            let modes = if modes.is_empty() { cfg.plan().modes } else { modes };
            let dir = common.out_dir(&cfg).join("features");
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            for &dc in &dcs {
                for &mode in &modes {
                    let n = extract(&ds, dc, mode, caps, &dir)?;
                    out!("{dc} {mode}: {n} features");
                }
            }
            Ok(EXIT_OK)
        }
        Command::Train { common, task, model, device_config, mode, seed, selector_k } => {
            let cfg = common.config()?;
            let settings = cfg.settings();
            let selector_k = if selector_k.is_empty() { cfg.plan().selector_k } else { selector_k };
            let ds = common.dataset(&cfg)?;
            let store = FeatureStore::new(&ds);
            let config = ExperimentConfig {
                task,
                device_config,
                mode,
                model,
                grid: settings.grid_for(model, task),
                selector_k,
                seed,
            };
            let r = run_experiment(&config, &store, &settings)?;
            let dir = common.out_dir(&cfg).join("train");
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let stem = format!("{task}_{device_config}_{mode}_{model}_seed{seed}");
            write_json(&dir.join(format!("{stem}.provenance.json")), &r.provenance)?;
            let p = dir.join(format!("{stem}.model.json"));
            std::fs::write(&p, r.model.to_json()).map_err(io_err(&p))?;
            let w = &r.provenance.grid[r.provenance.winner];
            out!("{task} {device_config} {mode} {model} seed {seed}");
            out!("{}: {:.4} (baseline {:.4})", task.metric_name(), r.metric, r.provenance.baseline);
            out!("winner: k={} {:?}", w.selector_k, w.params);
            out!("saved {}", dir.join(&stem).display());
            Ok(EXIT_OK)
        }
        Command::Matrix {
            common,
            tasks,
            device_configs,
            modes,
            models,
            seeds,
            selector_k,
            format,
            overlay,
            jobs,
            epochs,
        } => {
            let mut cfg = common.config()?;
            fn set<T>(dst: &mut Vec<T>, src: Vec<T>) {
                if !src.is_empty() {
                    *dst = src;
                }
            }
            set(&mut cfg.tasks, tasks);
            set(&mut cfg.device_configs, device_configs);
            set(&mut cfg.modes, modes);
            set(&mut cfg.models, models);
            set(&mut cfg.selector_k, selector_k);
            if let Some(n) = seeds {
                cfg.seeds = (0..n).collect();
            }
            if let Some(e) = epochs {
                cfg.protocol.neural_epochs = e;
            }
            let plan = cfg.plan();
            if plan.cell_count() == 0 {
                return Err(CliError::Usage("the plan has no cells".into()));
            }
            let ds = common.dataset(&cfg)?;
            let store = FeatureStore::new(&ds);
            log::info!("{} cells x {} seeds", plan.cell_count(), plan.seeds.len());
            let output = full_matrix(&store, &plan, jobs.or(cfg.jobs).unwrap_or(0));
            let dir = common.out_dir(&cfg).join("results");
            write_results(&dir, &output, format.or(cfg.format).unwrap_or(OutputFormat::Both), overlay || cfg.overlay)?;
            Ok(matrix_status(&output, &dir))
        }
        Command::Report { common, format, overlay } => {
            let cfg = common.config()?;
            let dir = common.out_dir(&cfg).join("results");
            let p = dir.join("provenance.json");
            let text = std::fs::read_to_string(&p).map_err(io_err(&p))?;
            let output: MatrixOutput =
                serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            let overlay = overlay || cfg.overlay;
            write_results(&dir, &output, format.or(cfg.format).unwrap_or(OutputFormat::Both), overlay)?;
            let table = output.table();
            for &task in &output.plan.tasks {
                out!("{}", crate::protocol::render_markdown(&table, task, overlay));
            }
            Ok(EXIT_OK)
        }
        Command::Selftest => {
            let checks = crate::selftest::run_all();
            for c in &checks {
                out!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            out!("{} of {} checks passed", checks.len() - failed, checks.len());
            Ok(if failed == 0 { EXIT_OK } else { EXIT_NUMERIC })
        }
    }
}

fn matrix_status(output: &MatrixOutput, dir: &Path) -> i32 {
    let table = output.table();
    let failed = table.cells.values().filter(|c| c.mean().is_none()).count();
    out!("{} of {} cells completed; results in {}", table.cells.len() - failed, table.cells.len(), dir.display());
    for f in &output.failures {
        eprintln!(
            "failed: {} {} {} {} seed {}: {}",
            f.key.task, f.key.device_config, f.key.mode, f.key.model, f.seed, f.error
        );
    }
    if failed == 0 {
        EXIT_OK
    } else if output.failures.iter().any(|f| f.numeric) {
        EXIT_NUMERIC
    } else {
        EXIT_DATA
    }
}

/// Vocabularies are fitted on every user, so these files are for inspection,
/// not for evaluation.
fn extract(ds: &Dataset, dc: DeviceConfig, mode: Mode, caps: VocabularyCaps, dir: &Path) -> Result<usize, CliError> {
    let users: Vec<&str> = ds.users().collect();
    let mut names = Vec::new();
    let mut per_user: Vec<BTreeMap<_, FeatureVector>> = vec![BTreeMap::new(); users.len()];
    let mut vocabularies = Vec::new();
    for &device in dc.devices() {
        let training = users.iter().filter_map(|u| ds.stream(u, device, mode).map(|s| (*u, s)));
        let vocab = fit_vocabulary(device, mode, training, caps).map_err(|e| CliError::Data(format!("{device} {mode}: {e}")))?;
        names.extend(vocab.names());
        for (u, slot) in users.iter().zip(per_user.iter_mut()) {
            slot.insert(device, vectorize(u, ds.stream(u, device, mode).unwrap_or(&[]), &vocab));
        }
        vocabularies.push(vocab);
    }
    let vectors = per_user
        .into_iter()
        .map(|mut m| {
            if dc == DeviceConfig::Combined {
                combine_devices(&m).map_err(|e| CliError::Data(e.to_string()))
            } else {
                Ok(m.pop_first().expect("one device").1)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let stem = format!("{dc}_{mode}");
    let csv_err = |p: &Path, e: csv::Error| CliError::Data(format!("{}: {e}", p.display()));
    let p = dir.join(format!("{stem}.csv"));
    write_feature_csv(create(&p)?, &names, &vectors).map_err(|e| csv_err(&p, e))?;
    let p = dir.join(format!("{stem}.mask.csv"));
    write_mask_csv(create(&p)?, &names, &vectors).map_err(|e| csv_err(&p, e))?;
    write_json(&dir.join(format!("{stem}.vocabulary.json")), &vocabularies)?;
    Ok(names.len())
}
