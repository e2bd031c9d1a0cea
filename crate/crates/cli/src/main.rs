use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prednet_core::config::{Profile, RunConfig, SEED_ENV};
use prednet_core::data::pcfv::{self, FeatureClip};
use prednet_core::data::shapes::standard_classes;
use prednet_core::data::{generate_moving_shapes, write_dataset, DatasetManifest};
use prednet_core::eval::{emit_report, evaluate};
use prednet_core::gradcheck::{check_model, ModelCheckConfig};
use prednet_core::train::{self, fit, initial_checkpoint, Checkpoint, ClipSet};
use prednet_core::{Error, Model, Result};

/// Predictive coding network for video action recognition.
///
/// Any `--section.key=value` flag overrides that key of the resolved
/// configuration, e.g. `--train.lr=0.01`.
#[derive(Parser, Debug)]
#[command(name = "prednet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a MovingShapes dataset with train/val/test manifests.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Number of motion classes (even, 2 to 8).
        #[arg(long)]
        classes: Option<usize>,
        /// Training clips per class.
        #[arg(long)]
        clips: Option<usize>,
    },
    /// Train a model; writes last.pcck, best.pcck and train_log.csv.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory with train.json and val.json (default: paths.data_dir).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue from <out>/last.pcck.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint; writes metrics.json, confusion.csv, confusion.ppm.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory with the split manifest (default: paths.data_dir from the checkpoint).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Compare backprop gradients with finite differences on a small model.
    Gradcheck {
        #[arg(long, value_enum, default_value = "desk")]
        profile: ProfileArg,
        #[arg(long)]
        seed: Option<u64>,
        /// Exit with status 2 when the maximum relative error exceeds this.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long)]
        deterministic: bool,
    },
    /// Print the header and summary statistics of a .pcfv or .pcck file.
    Inspect { file: PathBuf },
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    /// Master seed; falls back to PREDNET_SEED, then the profile default.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; nothing is written outside it.
    #[arg(long)]
    out: PathBuf,
    /// Force sequential execution (always the case in this build).
    #[arg(long)]
    deterministic: bool,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum ProfileArg {
    Paper,
    Desk,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Paper => Profile::Paper,
            ProfileArg::Desk => Profile::Desk,
        }
    }
}

/// Splits `--a.b=v` overrides from the arguments clap understands.
fn split_overrides(argv: Vec<String>) -> (Vec<String>, Vec<String>) {
    argv.into_iter().partition(|a| {
        a.strip_prefix("--")
            .and_then(|s| s.split_once('='))
            .is_none_or(|(k, _)| !k.contains('.'))
    })
}

fn resolve(common: &Common, mut overrides: Vec<String>) -> Result<RunConfig> {
    let text = match &common.config {
        Some(p) => Some(fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?),
        None => None,
    };
    if let Some(p) = common.profile {
        let name = match Profile::from(p) {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        };
        overrides.insert(0, format!("profile=\"{name}\""));
    }
    if let Some(s) = common.seed {
        overrides.insert(0, format!("seed={s}"));
    }
    let env = std::env::var(SEED_ENV).ok();
    let cfg = RunConfig::resolve(text.as_deref(), &overrides, env.as_deref())?;
    eprintln!("# resolved configuration\n{}", cfg.to_toml());
    Ok(cfg)
}

fn create_out(out: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let p = out.join("config.toml");
    fs::write(&p, cfg.to_toml()).map_err(|e| io_err(&p, e))
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load_split(dir: &Path, split: &str) -> Result<(DatasetManifest, Vec<FeatureClip>)> {
    let path = dir.join(format!("{split}.json"));
    let m = DatasetManifest::load(&path)?;
    let clips = m.load_clips(&path)?;
    Ok((m, clips))
}

fn gen_data(common: Common, classes: Option<usize>, clips: Option<usize>, overrides: Vec<String>) -> Result<()> {
    let mut cfg = resolve(&common, overrides)?;
    if let Some(n) = classes {
        cfg.data.classes = standard_classes(n)?;
        cfg.model.num_classes = n;
    }
    if let Some(n) = clips {
        cfg.data.train_clips = n;
    }
    create_out(&common.out, &cfg)?;
    let ds = generate_moving_shapes(&cfg.data)?;
    let manifests = write_dataset(&ds, &common.out)?;
    for m in manifests {
        println!("{}: {} clips", m.split, m.entries.len());
    }
    Ok(())
}

fn train_cmd(common: Common, data: Option<PathBuf>, resume: bool, overrides: Vec<String>) -> Result<()> {
    let cfg = resolve(&common, overrides)?;
    let data_dir = data.unwrap_or_else(|| PathBuf::from(&cfg.paths.data_dir));
    let model = Model::new(cfg.model.clone())?;
    let start = if resume {
        let ckpt = Checkpoint::load(&common.out.join(train::LAST_CHECKPOINT))?;
        check_compatible(&model, &ckpt)?;
        ckpt
    } else {
        initial_checkpoint(&model, &cfg.train, cfg.to_json())
    };
    create_out(&common.out, &cfg)?;
    let (tm, train_clips) = load_split(&data_dir, "train")?;
    let (_, val_clips) = load_split(&data_dir, "val")?;
    if tm.classes.len() != cfg.model.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model.num_classes is {}",
            tm.classes.len(),
            cfg.model.num_classes
        )));
    }
    let train_set = ClipSet::prepare(&model, &start.params, &train_clips, &cfg.normalization)?;
    let val_set = ClipSet::prepare(&model, &start.params, &val_clips, &cfg.normalization)?;
    println!("{}", train::LOG_HEADER);
    let outcome = fit(
        &model,
        &train_set,
        &val_set,
        &cfg.train,
        cfg.sampling,
        start,
        Some(&common.out),
    )?;
    for row in &outcome.log {
        println!("{}", row.to_csv());
    }
    Ok(())
}

fn check_compatible(model: &Model, ckpt: &Checkpoint) -> Result<()> {
    let fresh = model.init_params(&mut train::init_rng(0));
    let want: Vec<(&str, &[usize])> = fresh.iter().map(|(n, t)| (n, t.shape())).collect();
    let got: Vec<(&str, &[usize])> = ckpt.params.iter().map(|(n, t)| (n, t.shape())).collect();
    if want != got {
        return Err(Error::Config(
            "checkpoint parameters do not match the configured model".into(),
        ));
    }
    Ok(())
}

fn eval_cmd(common: Common, checkpoint: PathBuf, data: Option<PathBuf>, split: String) -> Result<()> {
    let ckpt = Checkpoint::load(&checkpoint)?;
    let cfg = RunConfig::from_json(&ckpt.config)?;
    let model = Model::new(cfg.model.clone())?;
    check_compatible(&model, &ckpt)?;
    let data_dir = data.unwrap_or_else(|| PathBuf::from(&cfg.paths.data_dir));
    let (m, clips) = load_split(&data_dir, &split)?;
    if m.classes.len() != cfg.model.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, checkpoint model has {}",
            m.classes.len(),
            cfg.model.num_classes
        )));
    }
    let set = ClipSet::prepare(&model, &ckpt.params, &clips, &cfg.normalization)?;
    let metrics = evaluate(&model, &ckpt.params, &set, cfg.sampling, &m.classes)?;
    emit_report(&metrics, &common.out)?;
    println!("samples {}", metrics.samples);
    println!("top1 {}", metrics.top1);
    println!("top5 {}", metrics.top5);
    Ok(())
}

fn gradcheck_cmd(profile: ProfileArg, seed: Option<u64>, tolerance: f64) -> Result<()> {
    if let ProfileArg::Paper = profile {
        return Err(Error::Usage(
            "gradcheck runs the desk-sized model only; the paper model is too large for finite differences".into(),
        ));
    }
    let mut cfg = ModelCheckConfig::desk();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let report = check_model(&cfg)?;
    for (name, err) in &report.per_param {
        println!("{name:<28} {err:.3e}");
    }
    println!("parameters {}", report.scalars);
    println!("max relative error {:.3e}", report.max_rel_error);
    println!("elapsed {:.2}s", report.elapsed.as_secs_f64());
    if report.max_rel_error.is_nan() || report.max_rel_error > tolerance {
        return Err(Error::NonFinite(format!(
            "max relative error {:.3e} exceeds tolerance {tolerance:.1e}",
            report.max_rel_error
        )));
    }
    Ok(())
}

fn summary(data: &[f64]) -> String {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let min = data.iter().copied().fold(f64::INFINITY, f64::min);
    let max = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    format!("min {min} max {max} mean {mean} std {}", var.sqrt())
}

fn inspect(file: &Path) -> Result<()> {
    let bytes = fs::read(file).map_err(|e| io_err(file, e))?;
    if bytes.starts_with(pcfv::MAGIC) {
        let id = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let clip = FeatureClip::from_bytes(&bytes, id)?;
        let [c, h, w] = clip.frame_shape();
        println!("format PCFV v{}", pcfv::VERSION);
        println!("kind {}", if clip.pixels { "pixels" } else { "features" });
        println!("frames {}", clip.num_frames());
        println!("shape [{c}, {h}, {w}]");
        println!("label {}", clip.label);
        println!("{}", summary(clip.frames.data()));
    } else if bytes.starts_with(train::checkpoint::MAGIC) {
        let ckpt = Checkpoint::from_bytes(&bytes)?;
        println!("format PCCK v{}", train::checkpoint::VERSION);
        println!("epoch {}", ckpt.epoch);
        println!("lr {}", ckpt.optimizer.lr);
        for (name, t) in ckpt.params.iter() {
            println!("{name} {:?} {}", t.shape(), summary(t.data()));
        }
    } else {
        return Err(Error::Input(format!(
            "{}: not a PCFV or PCCK file",
            file.display()
        )));
    }
    Ok(())
}

fn run(argv: Vec<String>) -> ExitCode {
    let (args, overrides) = split_overrides(argv);
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let takes_overrides = matches!(
        cli.command,
        Command::GenData { .. } | Command::Train { .. }
    );
    if !overrides.is_empty() && !takes_overrides {
        eprintln!("error: configuration overrides are not accepted by this subcommand: {}", overrides.join(" "));
        return ExitCode::from(1);
    }
    let result = match cli.command {
        Command::GenData {
            common,
            classes,
            clips,
        } => gen_data(common, classes, clips, overrides),
        Command::Train {
            common,
            data,
            resume,
        } => train_cmd(common, data, resume, overrides),
        Command::Eval {
            common,
            checkpoint,
            data,
            split,
        } => eval_cmd(common, checkpoint, data, split),
        Command::Gradcheck {
            profile,
            seed,
            tolerance,
            deterministic: _,
        } => gradcheck_cmd(profile, seed, tolerance),
        Command::Inspect { file } => inspect(&file),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Usage(_)) { 1 } else { 2 })
        }
    }
}

fn main() -> ExitCode {
    run(std::env::args().collect())
}
