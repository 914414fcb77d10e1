//! End-to-end commands: train, evaluate, explain, bench, synth.
//!
//! Every stage error is wrapped with the stage name so the CLI can report
//! where a run failed.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::{trace_digest, ArtifactMetadata, ModelArtifact, Seeds};
use crate::canlog::{default_corpus, parse_log_file, write_log, CanFrame, LogSchema};
use crate::config::{Profile, RunConfig};
use crate::distill::{predict, train_student, train_teacher, ClassifierTrace};
use crate::error::{Error, Result, StageExt};
use crate::explain::{explain_models, ReportView, ShapReport};
use crate::features::{
    aggregate_windows, balanced_subset, fit_scaler, read_windows, split_train_test, write_windows, BalanceRequest,
    WindowSample,
};
use crate::metrics::{
    complexity_report, confusion_with_names, measure_inference, render_complexity, BatchPipeline, ComplexityRow,
    MetricsReport, TimingRecord,
};
use crate::neural::Matrix;
use crate::vae::{latent_features, reconstruction_errors, train_vae, VaeTrace};

pub const ARTIFACT_FILE: &str = "model.canids";
pub const TEST_WINDOWS_FILE: &str = "test_windows.csv";
pub const TRAIN_REPORT_JSON: &str = "train_report.json";
pub const TRAIN_REPORT_TXT: &str = "train_report.txt";
pub const CONFIG_DUMP: &str = "config.toml";

/// Frames grouped by source; windows never straddle two sources.
pub fn load_frames(config: &RunConfig) -> Result<Vec<Vec<CanFrame>>> {
    if config.data.files.is_empty() {
        return match (config.profile, &config.data.corpus) {
            (Profile::Synthetic, Some(corpus)) => Ok(vec![corpus.generate()?]),
            (Profile::Synthetic, None) => Ok(vec![default_corpus(config.seed)?]),
            (p, _) => Err(Error::Config(format!("profile {p} needs [[data.files]] entries"))),
        };
    }
    config
        .data
        .files
        .iter()
        .map(|file| {
            let schema = match config.profile {
                Profile::Hcrl => LogSchema::hcrl(file.attack.expect("validated: HCRL files carry an attack")),
                Profile::CicIov => LogSchema::cic_iov(),
                Profile::Synthetic => LogSchema::synthetic(),
            };
            let parsed = parse_log_file(&file.path, &schema)?;
            info!(
                "{}: {} rows, {} accepted, {} malformed",
                file.path.display(),
                parsed.report.rows,
                parsed.report.accepted,
                parsed.report.malformed
            );
            Ok(parsed.frames)
        })
        .collect()
}

pub fn build_windows(config: &RunConfig, sources: &[Vec<CanFrame>]) -> Result<Vec<WindowSample>> {
    let classes = config.profile.classes();
    let mut out = Vec::new();
    let mut offset = 0;
    for frames in sources {
        let mut windows = aggregate_windows(frames, config.window, config.profile.layout(), &classes)?;
        for w in &mut windows {
            w.span = (w.span.0 + offset, w.span.1 + offset);
        }
        offset += frames.len();
        out.extend(windows);
    }
    if out.is_empty() {
        return Err(Error::Data("no complete windows in the input".into()));
    }
    Ok(out)
}

pub fn windows_matrix(windows: &[WindowSample]) -> Result<Matrix> {
    let rows: Vec<&[f64]> = windows.iter().map(|w| w.features.as_slice()).collect();
    Matrix::from_rows(&rows)
}

pub fn labels(windows: &[WindowSample]) -> Vec<usize> {
    windows.iter().map(|w| w.label).collect()
}

/// Outputs of the scale -> encode -> classify path for a batch of raw windows.
#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub classes: Vec<usize>,
    pub probabilities: Matrix,
    pub latents: Matrix,
    pub scaled: Matrix,
}

/// Raw feature rows -> persisted scaler -> VAE posterior mean -> student.
pub struct ScoringPipeline<'a> {
    pub artifact: &'a ModelArtifact,
}

impl ScoringPipeline<'_> {
    pub fn scale(&self, raw: &Matrix) -> Result<Matrix> {
        let scaler = &self.artifact.scaler;
        let mut scaled = Matrix::zeros(raw.rows, raw.cols);
        for r in 0..raw.rows {
            scaled.row_mut(r).copy_from_slice(&scaler.transform(raw.row(r))?);
        }
        Ok(scaled)
    }

    pub fn score(&self, raw: &Matrix) -> Result<Scores> {
        let scaled = self.scale(raw)?;
        let latents = latent_features(&self.artifact.vae, &scaled)?;
        let (classes, probabilities) = predict(&self.artifact.student, &latents)?;
        Ok(Scores {
            classes,
            probabilities,
            latents,
            scaled,
        })
    }

    pub fn reconstruction_errors(&self, scaled: &Matrix) -> Result<Vec<f64>> {
        reconstruction_errors(&self.artifact.vae, scaled)
    }
}

impl BatchPipeline for ScoringPipeline<'_> {
    fn classify(&self, batch: &Matrix) -> Result<Vec<usize>> {
        Ok(self.score(batch)?.classes)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Traces {
    pub vae: VaeTrace,
    pub teacher: ClassifierTrace,
    pub student: ClassifierTrace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub profile: Profile,
    pub student: MetricsReport,
    pub teacher: MetricsReport,
    pub complexity: Vec<ComplexityRow>,
}

impl Evaluation {
    pub fn render(&self) -> String {
        format!(
            "profile {}\n\n-- student\n{}\n-- teacher\n{}\n-- parameters\n{}",
            self.profile,
            self.student.render(),
            self.teacher.render(),
            render_complexity(&self.complexity)
        )
    }
}

pub struct TrainOutcome {
    pub artifact: ModelArtifact,
    pub evaluation: Evaluation,
    pub test_windows: Vec<WindowSample>,
    pub traces: Traces,
}

pub fn complexity(artifact: &ModelArtifact) -> Vec<ComplexityRow> {
    let d = &artifact.metadata.distill;
    complexity_report(&[
        ("teacher", &artifact.teacher.net, Some(d.teacher_budget)),
        ("student", &artifact.student.net, Some(d.student_budget)),
        ("vae encoder", &artifact.vae.encoder, None),
    ])
}

/// Student and teacher metrics on raw windows through the persisted scaler.
pub fn evaluate(artifact: &ModelArtifact, windows: &[WindowSample]) -> Result<Evaluation> {
    if windows.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let raw = windows_matrix(windows)?;
    let pipeline = ScoringPipeline { artifact };
    let scores = pipeline.score(&raw)?;
    let (teacher_pred, _) = predict(&artifact.teacher, &scores.latents)?;
    let truth = labels(windows);
    let names = artifact.classes().names();
    Ok(Evaluation {
        profile: artifact.profile,
        student: confusion_with_names(&scores.classes, &truth, &names)?,
        teacher: confusion_with_names(&teacher_pred, &truth, &names)?,
        complexity: complexity(artifact),
    })
}

/// The full training pipeline on already-built windows.
pub fn train_on_windows(config: &RunConfig, windows: Vec<WindowSample>) -> Result<TrainOutcome> {
    config.validate()?;
    let (train, test) = split_train_test(windows, config.train_fraction, config.split_seed()).stage("split")?;
    info!("{} training windows, {} test windows", train.len(), test.len());
    let scaler = fit_scaler(&train).stage("scale")?;
    let scaled_train = scaler.apply_all(&train).stage("scale")?;
    let train_x = windows_matrix(&scaled_train)?;
    let train_y = labels(&scaled_train);

    let vae_cfg = config.vae_config();
    let vae_input = if vae_cfg.benign_only {
        let benign: Vec<WindowSample> = scaled_train.iter().filter(|w| w.label == 0).cloned().collect();
        windows_matrix(&benign)?
    } else {
        train_x.clone()
    };
    let (vae, vae_trace) = train_vae(&vae_input, vae_cfg).stage("vae")?;
    let latents = latent_features(&vae, &train_x).stage("vae")?;

    let classes = config.profile.classes();
    let distill = config.distill_config();
    let (teacher, teacher_trace) = train_teacher(&latents, &train_y, &classes, &distill).stage("teacher")?;
    let (student, student_trace) = train_student(&latents, &train_y, &teacher, &distill).stage("student")?;
    info!(
        "train accuracy: teacher {:.4}, student {:.4}",
        teacher_trace.train_accuracy, student_trace.train_accuracy
    );

    let digest = trace_digest(&[
        &vae_trace.total,
        &vae_trace.reconstruction,
        &vae_trace.kl,
        &teacher_trace.loss,
        &student_trace.loss,
    ]);
    let artifact = ModelArtifact {
        profile: config.profile,
        metadata: ArtifactMetadata {
            config: config.clone(),
            seeds: Seeds {
                run: config.seed,
                vae: vae.config.train.seed,
                teacher: distill.teacher.seed,
                student: distill.student.seed,
                split: config.split_seed(),
            },
            distill,
            classes,
            scaler_fitted_on: scaler.fitted_on.clone(),
            trace_digest: digest,
            train_windows: train.len(),
        },
        scaler,
        vae,
        teacher,
        student,
    };
    let evaluation = evaluate(&artifact, &test).stage("evaluate")?;
    Ok(TrainOutcome {
        artifact,
        evaluation,
        test_windows: test,
        traces: Traces {
            vae: vae_trace,
            teacher: teacher_trace,
            student: student_trace,
        },
    })
}

pub fn train(config: &RunConfig) -> Result<TrainOutcome> {
    let sources = load_frames(config).stage("parse")?;
    let windows = build_windows(config, &sources).stage("window")?;
    train_on_windows(config, windows)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Artifact(e.to_string()))
}

/// Files written by [`cmd_train`].
#[derive(Clone, Debug)]
pub struct TrainFiles {
    pub artifact: PathBuf,
    pub test_windows: PathBuf,
    pub report_json: PathBuf,
    pub report_text: PathBuf,
}

/// Trains and writes the artifact, reports, test-window dump and resolved
/// config into `config.out_dir`.
pub fn cmd_train(config: &RunConfig) -> Result<(TrainOutcome, TrainFiles)> {
    let outcome = train(config)?;
    let dir = &config.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)).stage("output")?;
    let files = TrainFiles {
        artifact: dir.join(ARTIFACT_FILE),
        test_windows: dir.join(TEST_WINDOWS_FILE),
        report_json: dir.join(TRAIN_REPORT_JSON),
        report_text: dir.join(TRAIN_REPORT_TXT),
    };
    let write = || -> Result<()> {
        outcome.artifact.save(&files.artifact)?;
        let mut dump = Vec::new();
        write_windows(&outcome.test_windows, &mut dump)?;
        write_file(&files.test_windows, dump)?;
        write_file(&files.report_json, to_json(&outcome.evaluation)?)?;
        write_file(&files.report_text, outcome.evaluation.render())?;
        write_file(&dir.join(CONFIG_DUMP), config.to_toml()?)
    };
    write().stage("output")?;
    Ok((outcome, files))
}

pub fn read_window_file(path: &Path) -> Result<Vec<WindowSample>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_windows(std::io::BufReader::new(file))
}

/// Where `evaluate` and `explain` take their windows from.
pub enum WindowSource<'a> {
    /// A `write_windows` dump, e.g. the test split written by `train`.
    Dump(&'a Path),
    /// The data section of a run config.
    Config(&'a RunConfig),
}

pub fn resolve_windows(artifact: &ModelArtifact, source: WindowSource<'_>) -> Result<Vec<WindowSample>> {
    let windows = match source {
        WindowSource::Dump(path) => read_window_file(path).stage("parse")?,
        WindowSource::Config(config) => {
            if config.profile != artifact.profile {
                return Err(Error::Config(format!(
                    "artifact was trained on profile {}, data is profile {}",
                    artifact.profile, config.profile
                )));
            }
            let sources = load_frames(config).stage("parse")?;
            build_windows(config, &sources).stage("window")?
        }
    };
    if let Some(w) = windows.first() {
        if w.features.len() != artifact.scaler.width() {
            return Err(Error::Config(format!(
                "windows have {} features, the artifact expects {}",
                w.features.len(),
                artifact.scaler.width()
            )));
        }
    }
    Ok(windows)
}

pub fn cmd_evaluate(artifact: &ModelArtifact, source: WindowSource<'_>) -> Result<Evaluation> {
    let windows = resolve_windows(artifact, source)?;
    evaluate(artifact, &windows).stage("evaluate")
}

/// Balanced explanation subset and background drawn from `windows`.
pub fn cmd_explain(artifact: &ModelArtifact, windows: &[WindowSample]) -> Result<ShapReport> {
    let config = &artifact.metadata.config;
    let ec = config.explain_config();
    let per_class = BalanceRequest::PerClass(ec.instances_per_class);
    let subset = balanced_subset(windows, per_class, config.subset_seed());
    if subset.windows.is_empty() {
        return Err(Error::Data("no windows to explain".into())).stage("explain");
    }
    let background = balanced_subset(
        windows,
        BalanceRequest::Total(ec.background_size),
        config.subset_seed().wrapping_add(1),
    );
    let pipeline = ScoringPipeline { artifact };
    let subset_latents = pipeline.score(&windows_matrix(&subset.windows)?)?.latents;
    let bg_windows = if background.windows.is_empty() {
        &subset.windows
    } else {
        &background.windows
    };
    let bg_latents = pipeline.score(&windows_matrix(bg_windows)?)?.latents;
    explain_models(
        &artifact.teacher,
        &artifact.student,
        artifact.profile.layout(),
        &subset_latents,
        &labels(&subset.windows),
        &bg_latents,
        &ec,
    )
    .stage("explain")
}

pub fn write_shap_report(report: &ShapReport, dir: &Path, view: ReportView) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join("shap_report.json");
    let text = dir.join("shap_report.txt");
    write_file(&json, report.to_json()?)?;
    write_file(&text, report.render(view))?;
    Ok((json, text))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub timing: TimingRecord,
    pub complexity: Vec<ComplexityRow>,
}

impl BenchReport {
    pub fn render(&self) -> String {
        format!("{}\n{}", self.timing.render(), render_complexity(&self.complexity))
    }
}

/// Seeded raw rows spread over the scaler's fitted range.
pub fn synthetic_batch(artifact: &ModelArtifact, rows: usize, seed: u64) -> Result<Matrix> {
    let s = &artifact.scaler;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(rows * s.width());
    for _ in 0..rows {
        for j in 0..s.width() {
            data.push(s.min[j] + rng.random::<f64>() * (s.max[j] - s.min[j]));
        }
    }
    Matrix::from_vec(rows, s.width(), data)
}

pub fn cmd_bench(artifact: &ModelArtifact, batch: &Matrix, repetitions: usize, warmup: usize) -> Result<BenchReport> {
    let pipeline = ScoringPipeline { artifact };
    let timing = measure_inference(&pipeline, batch, repetitions, warmup).stage("bench")?;
    Ok(BenchReport {
        timing,
        complexity: complexity(artifact),
    })
}

/// Synthetic log in the synthetic CSV schema.
pub fn cmd_synth(config: &RunConfig, out: &Path) -> Result<usize> {
    let frames = match &config.data.corpus {
        Some(c) => c.generate()?,
        None => default_corpus(config.seed)?,
    };
    let mut buf = Vec::new();
    write_log(&frames, &LogSchema::synthetic(), &mut buf)?;
    write_file(out, buf)?;
    Ok(frames.len())
}
