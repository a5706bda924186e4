//! `sed-workbench`: toy data synthesis, CNMF pseudo labeling, training,
//! inference, scoring and reports.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use macaron_sed::config::RunConfig;
use macaron_sed::data::synth_toy_dataset;
use macaron_sed::parallel::Execution;
use macaron_sed::pipeline::{
    list_clips, stage_evaluate, stage_extract_dict, stage_infer, stage_pseudo_label, stage_train,
    DataLayout, FeatureStore, InferenceModel, CACHE_ENV,
};
use macaron_sed::report::write_report;

#[derive(Parser)]
#[command(name = "sed-workbench", version, about)]
#[command(after_help = format!(
    "Mel spectrograms are cached in ${CACHE_ENV} when it is set."
))]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Config file of `section.key = value` lines; unset keys keep defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.seed=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Run on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Render the toy dataset (audio plus strong/weak/unlabeled manifests).
    SynthData {
        #[arg(long)]
        out: PathBuf,
        /// Overrides `toy.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build one CNMF dictionary per class from the strong subset.
    ExtractDict {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Approximate frame-level labels for the weak subset.
    PseudoLabel {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the frame level and clip level models.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pseudo: PathBuf,
        /// Directory for checkpoints and `train_log.csv`.
        #[arg(long)]
        out: PathBuf,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs_warmup: Option<usize>,
        #[arg(long)]
        epochs_tuning: Option<usize>,
        /// Continue from a checkpoint such as `<out>/last.sedt`.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Detect events and write a prediction TSV.
    Infer {
        /// Checkpoint to load.
        #[arg(long)]
        model: PathBuf,
        /// Directory holding the clips.
        #[arg(long)]
        audio: PathBuf,
        /// Manifest listing the clips; defaults to every `.wav` in `--audio`.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Event-based scores of a prediction TSV against a reference TSV.
    Evaluate {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        estimated: PathBuf,
        /// Per-class scores CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summary table plus loss, lr, lambda and w plots (CSV and SVG).
    Report {
        /// Training log, usually `<train out>/train_log.csv`.
        #[arg(long)]
        log: PathBuf,
        /// Scores CSV from `evaluate`.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(g: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &g.overrides {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("`--set {kv}`: expected KEY=VALUE"))?;
        if let Err(e) = cfg.set(k.trim(), v.trim()) {
            bail!("`--set {kv}`: {e}");
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.global)?;
    let exec = if cli.global.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let store = || FeatureStore::from_env(cfg.frontend.clone());
    match cli.command {
        Command::SynthData { out, seed } => {
            if let Some(s) = seed {
                cfg.toy.seed = s;
            }
            let ds = synth_toy_dataset(&cfg.toy, &out, exec)?;
            println!(
                "{} strong, {} weak, {} unlabeled, {} validation, {} test clips in {}",
                ds.strong.len(),
                ds.weak.len(),
                ds.unlabeled.len(),
                ds.validation.len(),
                ds.test.len(),
                out.display()
            );
        }
        Command::ExtractDict { data, out } => {
            let dicts = stage_extract_dict(&DataLayout::new(data), &cfg, &store(), &out, exec)?;
            for (label, d) in &dicts {
                println!("{label}: {} components", d.bases.n_components());
            }
        }
        Command::PseudoLabel { data, dict, out } => {
            let rep =
                stage_pseudo_label(&DataLayout::new(data), &cfg, &store(), &dict, &out, exec)?;
            println!("{} clips labeled", rep.labels.len());
            if let Some(f1) = rep.frame_f1 {
                println!("frame F1 against hidden ground truth: {f1:.4}");
            }
        }
        Command::Train {
            data,
            pseudo,
            out,
            seed,
            epochs_warmup,
            epochs_tuning,
            resume,
        } => {
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(e) = epochs_warmup {
                cfg.train.warmup_epochs = e;
            }
            if let Some(e) = epochs_tuning {
                cfg.train.tuning_epochs = e;
            }
            let outcome = stage_train(
                &DataLayout::new(data),
                &cfg,
                &store(),
                &pseudo,
                &out,
                resume.as_deref(),
                exec,
            )?;
            write_text(&out.join("config.conf"), &cfg.to_text())?;
            println!(
                "{} iterations logged to {}",
                outcome.log.len(),
                out.join("train_log.csv").display()
            );
            if let Some(f1) = outcome.best_f1 {
                println!("best validation macro F1 {f1:.4}");
            }
        }
        Command::Infer {
            model,
            audio,
            manifest,
            out,
        } => {
            let m = InferenceModel::load(&model)?;
            let names = list_clips(&audio, manifest.as_deref())?;
            let preds = stage_infer(&m, &cfg, &store(), &audio, &names, Some(&out), exec)?;
            let n: usize = preds.values().map(Vec::len).sum();
            println!(
                "{n} events in {} clips written to {}",
                preds.len(),
                out.display()
            );
        }
        Command::Evaluate {
            reference,
            estimated,
            out,
        } => {
            let scores = stage_evaluate(&reference, &estimated, &cfg)?;
            print!("{}", scores.to_table());
            if let Some(p) = out {
                write_text(&p, &scores.to_csv())?;
            }
        }
        Command::Report { log, scores, out } => {
            let files = write_report(&log, scores.as_deref(), &out)?;
            print!("{}", fs::read_to_string(&files.summary)?);
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
