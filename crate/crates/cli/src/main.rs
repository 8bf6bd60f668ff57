//! Command-line frontend: synthetic data generation, feature
//! extraction, model training, prediction, standalone capacity
//! estimation, and submission scoring.
//!
//! Exit codes: 0 success, 2 validation error, 3 evaluation error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fillmass::audio::{classical_features, frames_to_csv, short_term_features};
use fillmass::fusion::{read_submission, write_submission};
use fillmass::geometry::{estimate_capacity_sequence, FrameMasks};
use fillmass::media::{read_calibration, read_manifest, read_pgm_mask, read_wav};
use fillmass::pipeline::{
    evaluate, format_report, load_calibs, load_dataset, predict_sequence, run_pipeline,
    train_models, PipelineConfig, PipelineError, SequenceLog, TrainedModels,
};
use fillmass::synth::generate_dataset;

#[derive(Parser)]
#[command(name = "fillmass", version, about = "Filling mass estimation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Configuration file plus flag overrides; flags win.
#[derive(Args, Clone, Default)]
struct ConfigOpts {
    /// Pipeline configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Small fast hyper-parameters suitable for synthetic data.
    #[arg(long)]
    desk_scale: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    prior_ml: Option<f64>,
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
}

impl ConfigOpts {
    fn resolve(&self) -> Result<PipelineConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::validation(format!("read {}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::validation(format!("parse {}: {e}", path.display())))?
            }
            None if self.desk_scale => PipelineConfig::desk_scale(0),
            None => PipelineConfig::default(),
        };
        if self.desk_scale && self.config.is_some() {
            return Err(CliError::validation("--desk-scale conflicts with --config"));
        }
        if let Some(s) = self.seed {
            config.seed = s;
            config.training.seed = s;
        }
        if let Some(p) = self.prior_ml {
            config.prior_ml = p;
        }
        if let Some(n) = self.n_trees {
            config.forest.n_trees = n;
        }
        if let Some(h) = self.hidden {
            config.gru_hidden = h;
        }
        if let Some(e) = self.epochs {
            config.training.max_epochs = e;
        }
        if let Some(lr) = self.lr {
            config.training.lr = lr;
        }
        if let Some(b) = self.batch_size {
            config.training.batch_size = b;
        }
        if let Some(k) = self.folds {
            config.cv_folds = k;
        }
        config.validate().map_err(CliError::from)?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic dataset.
    SynthGen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        n_per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Extract classical audio features from a WAV file.
    ExtractFeatures {
        #[arg(long)]
        audio: PathBuf,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dump the per-frame 68-column matrix instead of the 136-d vector.
        #[arg(long)]
        frames: bool,
    },
    /// Train all enabled models on every labeled sequence of a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory to write model files into.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigOpts,
    },
    /// Predict a submission CSV for a manifest.
    Predict {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory (submission.csv, sidecar.json, report.json).
        #[arg(long)]
        out: PathBuf,
        /// Cross-validate: train per fold and predict each fold's
        /// held-out sequences (no saved models needed).
        #[arg(long)]
        train: bool,
        /// Directory of saved models (required without --train).
        #[arg(long)]
        models: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigOpts,
    },
    /// Estimate container capacity from one sequence's masks.
    Capacity {
        /// Directory holding exactly four PGM masks, lexicographically
        /// ordered as camera1/frame0, camera1/frame1, camera2/frame0,
        /// camera2/frame1.
        #[arg(long)]
        masks: PathBuf,
        /// Two calibration JSON files (camera 1, camera 2).
        #[arg(long, num_args = 2)]
        calib: Vec<PathBuf>,
        #[arg(long, default_value_t = 500.0)]
        prior_ml: f64,
    },
    /// Score a submission CSV against a labeled manifest.
    Evaluate {
        #[arg(long)]
        submission: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Optional metric report JSON output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct CliError {
    message: String,
    code: u8,
}

impl CliError {
    fn validation(message: impl Into<String>) -> Self {
        CliError { message: message.into(), code: 2 }
    }

    fn evaluation(message: impl Into<String>) -> Self {
        CliError { message: message.into(), code: 3 }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Evaluation(_) => CliError::evaluation(e.to_string()),
            _ => CliError::validation(e.to_string()),
        }
    }
}

macro_rules! from_error {
    ($ty:ty) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::validation(e.to_string())
            }
        }
    };
}
from_error!(fillmass::media::MediaError);
from_error!(fillmass::audio::AudioError);
from_error!(fillmass::fusion::FusionError);
from_error!(fillmass::geometry::GeometryError);
from_error!(fillmass::synth::SynthError);

fn write_or_print(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::validation(format!("write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_outputs(
    dir: &PathBuf,
    rows: &[fillmass::fusion::SubmissionRow],
    logs: &[SequenceLog],
    report: Option<&fillmass::fusion::MetricReport>,
) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::validation(format!("create {}: {e}", dir.display())))?;
    write_submission(dir.join("submission.csv"), rows)?;
    let sidecar = serde_json::to_string_pretty(logs).expect("serializable");
    std::fs::write(dir.join("sidecar.json"), sidecar)
        .map_err(|e| CliError::validation(e.to_string()))?;
    if let Some(report) = report {
        let text = serde_json::to_string_pretty(report).expect("serializable");
        std::fs::write(dir.join("report.json"), text)
            .map_err(|e| CliError::validation(e.to_string()))?;
        print!("{}", format_report(report));
    }
    println!("wrote {} rows to {}", rows.len(), dir.join("submission.csv").display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::SynthGen { out, n_per_class, seed } => {
            let manifest = generate_dataset(&out, n_per_class, seed)?;
            println!(
                "generated {} sequences under {}",
                manifest.records.len(),
                out.display()
            );
            Ok(())
        }
        Command::ExtractFeatures { audio, out, frames } => {
            let clip = read_wav(&audio)?;
            let text = if frames {
                let f = short_term_features(&clip, 0.050, 0.025)?;
                frames_to_csv(&f)
            } else {
                let v = classical_features(&clip)?;
                let cols: Vec<String> = v.as_slice().iter().map(|x| format!("{x}")).collect();
                format!("{}\n", cols.join(","))
            };
            write_or_print(&out, &text)
        }
        Command::Train { manifest, out, config } => {
            let config = config.resolve()?;
            let manifest = read_manifest(&manifest)?;
            let data = load_dataset(&manifest);
            let labeled: Vec<usize> =
                (0..data.len()).filter(|&i| data[i].labels.is_some()).collect();
            if labeled.is_empty() {
                return Err(CliError::validation("manifest has no labeled sequences"));
            }
            let models = train_models(&data, &labeled, &labeled, &config, 0);
            models.save(&out)?;
            println!("saved models to {} (prior {:.1} mL)", out.display(), models.prior_ml);
            Ok(())
        }
        Command::Predict { manifest, out, train, models, config } => {
            let config = config.resolve()?;
            let manifest = read_manifest(&manifest)?;
            if train {
                let output = run_pipeline(&manifest, &config)?;
                write_outputs(&out, &output.rows, &output.logs, output.report.as_ref())
            } else {
                let models_dir = models.ok_or_else(|| {
                    CliError::validation("--models is required without --train")
                })?;
                let models = TrainedModels::load(&models_dir)?;
                let calibs = load_calibs(&manifest, &config)?;
                let data = load_dataset(&manifest);
                let mut rows = Vec::new();
                let mut logs = Vec::new();
                for d in &data {
                    let pred = predict_sequence(d, &models, &config, (&calibs.0, &calibs.1));
                    let ftype =
                        fillmass::fusion::FillingType::from_index(pred.type_probs.argmax())
                            .expect("4-way probs");
                    let level =
                        fillmass::fusion::FillingLevel::from_index(pred.level_probs.argmax())
                            .expect("3-way probs");
                    rows.push(fillmass::fusion::SubmissionRow {
                        sequence_id: pred.sequence_id.clone(),
                        capacity_ml: pred.capacity_ml,
                        filling_type: ftype,
                        filling_level: level,
                        mass_g: fillmass::fusion::filling_mass(
                            pred.capacity_ml,
                            level,
                            ftype,
                            &config.densities,
                        ),
                    });
                    logs.push(SequenceLog {
                        sequence_id: pred.sequence_id,
                        millis: pred.millis,
                        used_prior: pred.used_prior,
                        warnings: pred.warnings,
                    });
                }
                rows.sort_by(|a, b| a.sequence_id.cmp(&b.sequence_id));
                logs.sort_by(|a, b| a.sequence_id.cmp(&b.sequence_id));
                let report = if manifest.records.iter().all(|r| r.labels.is_some()) {
                    Some(evaluate(&rows, &manifest)?)
                } else {
                    None
                };
                write_outputs(&out, &rows, &logs, report.as_ref())
            }
        }
        Command::Capacity { masks, calib, prior_ml } => {
            if calib.len() != 2 {
                return Err(CliError::validation("--calib needs exactly two paths"));
            }
            let c1 = read_calibration(&calib[0])?;
            let c2 = read_calibration(&calib[1])?;
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&masks)
                .map_err(|e| CliError::validation(format!("read {}: {e}", masks.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
                .collect();
            paths.sort();
            if paths.len() != 4 {
                return Err(CliError::validation(format!(
                    "expected exactly 4 .pgm masks in {}, found {}",
                    masks.display(),
                    paths.len()
                )));
            }
            let loaded: Vec<_> = paths
                .iter()
                .map(|p| read_pgm_mask(p, None))
                .collect::<Result<_, _>>()?;
            let frames = [
                FrameMasks { cam1: &loaded[0], cam2: &loaded[2] },
                FrameMasks { cam1: &loaded[1], cam2: &loaded[3] },
            ];
            let est = estimate_capacity_sequence(
                &frames,
                (&c1, &c2),
                prior_ml,
                &fillmass::geometry::FitConfig::default(),
            )?;
            println!(
                "capacity {:.1} mL (r_bar {:.4} m, h {:.4} m, prior used: {})",
                est.capacity_ml, est.r_bar, est.h, est.used_prior
            );
            Ok(())
        }
        Command::Evaluate { submission, manifest, out } => {
            let rows = read_submission(&submission)?;
            let manifest = read_manifest(&manifest)?;
            let report = evaluate(&rows, &manifest)?;
            print!("{}", format_report(&report));
            if let Some(path) = out {
                let text = serde_json::to_string_pretty(&report).expect("serializable");
                std::fs::write(&path, text)
                    .map_err(|e| CliError::validation(format!("write {}: {e}", path.display())))?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
