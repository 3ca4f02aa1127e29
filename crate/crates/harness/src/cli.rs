//! Command-line front end. Structured logs go to stderr as JSON lines;
//! reports and tables go to stdout.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use trifusion_core::dataio::{load_dataset, Architecture, DatasetSource, ModalitySet, RunConfig};
use trifusion_core::fusion::{build_attention, RangeSource};
use trifusion_core::seed::derive_seed;
use trifusion_core::simulator::{generate_dataset, SceneConfig};
use trifusion_core::CoreError;
use trifusion_net::checkpoint;

use crate::error::{HarnessError, Result};
use crate::eval::{evaluate, read_record, write_record};
use crate::plots::{emit_plots, fusion_panel};
use crate::suite::{run_suite, split_for, standard_suite, table, TableScope, RECORD_FILE, REPORT_FILE};
use crate::train::{train, Logger, BEST_CHECKPOINT, CONFIG_FILE};

/// Overrides the root directory for run outputs.
pub const OUTPUT_ROOT_ENV: &str = "TRIFUSION_OUTPUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "trifusion", version, about = "Optical-acoustic-pressure leader localization toolkit")]
pub struct Cli {
    /// Suppress JSON-lines progress records on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Simulate(SimulateArgs),
    /// Render the optical-acoustic fusion panel for one frame.
    Fuse(FuseArgs),
    /// Train one configuration.
    Train(RunArgs),
    /// Evaluate a trained run on its test split.
    Eval(EvalArgs),
    /// Train and evaluate the ablation and baseline suite.
    Suite(SuiteArgs),
    /// Emit figures from record files.
    Plot(PlotArgs),
    /// Summarize a dataset, checkpoint or record.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scene preset: lab, toy or field.
    #[arg(long, default_value = "toy")]
    pub preset: String,
    /// Frames per case.
    #[arg(long, default_value_t = 130)]
    pub frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for the dataset.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML scene file; its keys override the preset and flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Case id as listed in the manifest.
    #[arg(long)]
    pub case: String,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output PNG path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct RunArgs {
    /// Dataset directory.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Base settings: toy or paper.
    #[arg(long, default_value = "toy")]
    pub profile: String,
    /// TOML run file; its keys override the profile and flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub name: Option<String>,
    /// Modalities such as O+A+P, O+A, O or P.
    #[arg(long)]
    pub modalities: Option<ModalitySet>,
    /// fusion_net, conv_pressure or late_fusion.
    #[arg(long)]
    pub architecture: Option<Architecture>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Restrict to cases with usable pressure.
    #[arg(long)]
    pub pressure_cases_only: bool,
    /// Output directory; defaults to <output root>/<name>.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory holding config.toml and best.safetensors.
    #[arg(long)]
    pub run: PathBuf,
    /// Dataset directory; defaults to the one in the run config.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Checkpoint file; defaults to the run's best checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SuiteArgs {
    #[command(flatten)]
    pub base: RunArgs,
    /// Only run these entries (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<String>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Record files written by eval or suite.
    #[arg(long, required = true, num_args = 1..)]
    pub record: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub record: Option<PathBuf>,
}

/// Recursively overlays `top` onto `base`.
pub fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn config_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Data(CoreError::Config(e.to_string()))
}

/// Applies a TOML file on top of an already flag-adjusted value.
pub fn overlay<T: Serialize + DeserializeOwned>(value: T, file: Option<&Path>) -> Result<T> {
    let Some(path) = file else { return Ok(value) };
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let top: toml::Value = toml::from_str(&text).map_err(config_err)?;
    let mut base = toml::Value::try_from(value).map_err(config_err)?;
    merge(&mut base, top);
    base.try_into().map_err(config_err)
}

pub fn output_root(cfg: &RunConfig) -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| cfg.output_dir.clone(), PathBuf::from)
}

/// Profile, then flags, then the config file.
pub fn resolve_run(a: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::profile(&a.profile, a.dataset.clone().unwrap_or_default())?;
    if let Some(n) = &a.name {
        cfg.name = n.clone();
    }
    if let Some(m) = a.modalities {
        cfg.modalities = m;
    }
    if let Some(x) = a.architecture {
        cfg.network.architecture = x;
    }
    if let Some(e) = a.epochs {
        cfg.optimizer.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.optimizer.batch_size = b;
    }
    if let Some(lr) = a.learning_rate {
        cfg.optimizer.learning_rate = lr;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.split_seed {
        cfg.split_seed = s;
    }
    cfg.pressure_cases_only |= a.pressure_cases_only;
    let cfg = overlay(cfg, a.config.as_deref())?;
    if cfg.dataset.as_os_str().is_empty() {
        return Err(HarnessError::Usage("no dataset given (--dataset or `dataset` in the config file)".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_dir(a: &RunArgs, cfg: &RunConfig) -> PathBuf {
    a.out.clone().unwrap_or_else(|| output_root(cfg).join(&cfg.name))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v).expect("serializable")).map_err(|e| HarnessError::io(path, e))
}

fn execute(cli: Cli, log: &mut Logger<'_>) -> Result<()> {
    let mut stdout = std::io::stdout();
    match cli.command {
        Command::Simulate(a) => {
            let mut scene = SceneConfig::preset(&a.preset)?;
            scene.seed = a.seed;
            let scene = overlay(scene, a.config.as_deref())?;
            log.log(json!({"event": "simulate", "preset": a.preset, "frames": a.frames, "out": a.out.display().to_string()}));
            let m = generate_dataset(&scene, a.frames, &a.out, scene.seed)?;
            let _ = writeln!(stdout, "wrote {} cases, {} frames to {}", m.cases.len(), m.total_frames(), a.out.display());
        }
        Command::Fuse(a) => {
            let ds = load_dataset(&a.dataset)?;
            let data = ds.load_case(&a.case)?;
            let cfg = RunConfig::paper(&a.dataset);
            let stats = data.acoustic_stats(&cfg.fusion);
            let frame = data.frame(&ds, a.frame)?;
            let seed = derive_seed(a.seed, &[&a.case, &a.frame.to_string(), "attention"]);
            let att = build_attention(&frame, RangeSource::Stats(&stats), &ds.manifest.image_rig(), &cfg.fusion, seed)?;
            let png = fusion_panel(&frame.image, &att)?;
            if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
            }
            std::fs::write(&a.out, png).map_err(|e| HarnessError::io(&a.out, e))?;
            log.log(json!({"event": "fuse", "case": a.case, "frame": a.frame, "receiving": att.receiving, "out": a.out.display().to_string()}));
        }
        Command::Train(a) => {
            let cfg = resolve_run(&a)?;
            let ds = load_dataset(&cfg.dataset)?;
            let sp = split_for(&cfg, &ds)?;
            let dir = run_dir(&a, &cfg);
            let outcome = train(&cfg, &ds, &sp.train, &dir, log)?;
            write_json(&dir.join(crate::suite::OUTCOME_FILE), &outcome)?;
            let _ = writeln!(
                stdout,
                "best epoch {} (validation loss {:.6}); checkpoint {}",
                outcome.best_epoch,
                outcome.best_val_loss,
                outcome.checkpoint.display()
            );
        }
        Command::Eval(a) => {
            let mut cfg = RunConfig::load(&a.run.join(CONFIG_FILE))?;
            if let Some(d) = a.dataset {
                cfg.dataset = d;
            }
            let ds = load_dataset(&cfg.dataset)?;
            let sp = split_for(&cfg, &ds)?;
            let ckpt = a.checkpoint.unwrap_or_else(|| a.run.join(BEST_CHECKPOINT));
            let (evaluation, record) = evaluate(&ckpt, &cfg, &ds, &sp.test)?;
            write_record(&record, &a.run.join(RECORD_FILE))?;
            write_json(&a.run.join(REPORT_FILE), &evaluation)?;
            log.log(json!({"event": "evaluated", "run": cfg.name, "frames": evaluation.overall.count}));
            let _ = write!(stdout, "{}", evaluation.to_text());
        }
        Command::Suite(a) => {
            let base = resolve_run(&a.base)?;
            let ds = load_dataset(&base.dataset)?;
            let mut entries = standard_suite(&base);
            if !a.only.is_empty() {
                if let Some(bad) = a.only.iter().find(|n| !entries.iter().any(|e| &e.name == *n)) {
                    return Err(HarnessError::Usage(format!("unknown suite entry {bad:?}")));
                }
                entries.retain(|e| a.only.contains(&e.name));
            }
            let root = a.base.out.clone().unwrap_or_else(|| output_root(&base));
            let rows = run_suite(&entries, &ds, &root, log)?;
            let text = format!("{}\n{}", table(&rows, TableScope::Close), table(&rows, TableScope::Overall));
            let p = root.join("suite_table.txt");
            std::fs::write(&p, &text).map_err(|e| HarnessError::io(&p, e))?;
            let _ = write!(stdout, "{text}");
        }
        Command::Plot(a) => {
            let records = a.record.iter().map(|p| read_record(p)).collect::<Result<Vec<_>>>()?;
            for f in emit_plots(&records, &a.out)? {
                let _ = writeln!(stdout, "{}", f.display());
            }
        }
        Command::Inspect(a) => {
            let mut any = false;
            if let Some(d) = a.dataset {
                any = true;
                let ds = load_dataset(&d)?;
                let m = &ds.manifest;
                let with_p = m.cases.iter().filter(|c| c.pressure_available).count();
                let _ = writeln!(
                    stdout,
                    "dataset {}: {} cases ({} with pressure), {} frames, {} px images, seed {}",
                    d.display(),
                    m.cases.len(),
                    with_p,
                    m.total_frames(),
                    m.image_size,
                    m.seed
                );
            }
            if let Some(c) = a.checkpoint {
                any = true;
                let mut net = checkpoint::load::<f32>(&c)?;
                let (params, flops) = (net.count_params(), net.count_flops());
                let _ = writeln!(
                    stdout,
                    "checkpoint {}: {:?} {}, {params} parameters, {flops} FLOPs per frame",
                    c.display(),
                    net.config.architecture,
                    net.config.modalities
                );
            }
            if let Some(r) = a.record {
                any = true;
                let rec = read_record(&r)?;
                let eval = crate::eval::evaluation_from_record(&rec)?;
                let _ = write!(stdout, "record {} ({}, {})\n{}", r.display(), rec.run, rec.modalities, eval.to_text());
            }
            if !any {
                return Err(HarnessError::Usage("inspect needs --dataset, --checkpoint or --record".into()));
            }
        }
    }
    Ok(())
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn main_with(args: Vec<OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let mut err = std::io::stderr();
    let mut log = if cli.quiet { Logger::silent() } else { Logger::new(vec![&mut err]) };
    match execute(cli, &mut log) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            log.log(json!({"event": "error", "exit_code": code, "error": e.to_string()}));
            drop(log);
            eprintln!("error: {e}");
            code
        }
    }
}
