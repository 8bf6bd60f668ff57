//! End-to-end orchestration: per-type cross-validation splits, model
//! training per fold, late fusion of the per-task model outputs,
//! capacity estimation, mass composition, and scoring.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::classical_features;
use crate::forest::{train_forest, ForestConfig, RandomForestModel};
use crate::fusion::{
    average_probs, capacity_score, filling_mass, mass_score, weighted_f1, ClassProbs,
    DensityTable, FillingLevel, FillingType, MetricReport, SequenceScore, SubmissionRow,
};
use crate::geometry::{estimate_capacity_sequence, FitConfig, FrameMasks};
use crate::gru::{
    classify, combine_streams, softmax, train, ClassifierHead, GruStack, Sample, TrainingConfig,
};
use crate::media::{
    read_calibration, read_embedding_sequence_with_camera, read_pgm_mask, read_wav,
    CameraCalibration, ContainerType, DatasetManifest, EmbeddingSequence, MaskImage,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("split error: {0}")]
    Split(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("i/o error: {0}")]
    Io(String),
}

// ---------------------------------------------------------------------------
// Cross-validation splits
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectRef {
    pub id: u32,
    pub container_type: ContainerType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train_object_ids: Vec<u32>,
    pub val_object_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvSplit {
    pub folds: Vec<Fold>,
}

/// Per-type k-fold object splits: each container type must contribute
/// exactly `k` objects; fold i validates the i-th object of each type
/// under a seeded per-type shuffle and trains on the rest.
pub fn make_cv_splits(objects: &[ObjectRef], k: usize, seed: u64) -> Result<CvSplit, PipelineError> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    if k == 0 {
        return Err(PipelineError::Split("k must be >= 1".into()));
    }
    let mut by_type: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    for obj in objects {
        let ids = by_type.entry(obj.container_type.to_string()).or_default();
        if ids.contains(&obj.id) {
            return Err(PipelineError::Split(format!("duplicate object id {}", obj.id)));
        }
        ids.push(obj.id);
    }
    for (t, ids) in &by_type {
        if ids.len() != k {
            return Err(PipelineError::Split(format!(
                "container type '{t}' has {} objects, expected exactly {k}",
                ids.len()
            )));
        }
    }
    // sort before shuffling so the result is invariant to input order
    let mut shuffled: BTreeMap<&String, Vec<u32>> = BTreeMap::new();
    for (type_idx, (t, ids)) in by_type.iter().enumerate() {
        let mut ids = ids.clone();
        ids.sort_unstable();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
            seed.wrapping_add(type_idx as u64),
        );
        ids.shuffle(&mut rng);
        shuffled.insert(t, ids);
    }
    let mut folds = Vec::with_capacity(k);
    for i in 0..k {
        let mut val: Vec<u32> = shuffled.values().map(|ids| ids[i]).collect();
        let mut train: Vec<u32> = shuffled
            .values()
            .flat_map(|ids| ids.iter().enumerate())
            .filter(|(j, _)| *j != i)
            .map(|(_, &id)| id)
            .collect();
        val.sort_unstable();
        train.sort_unstable();
        folds.push(Fold { train_object_ids: train, val_object_ids: val });
    }
    Ok(CvSplit { folds })
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Forest,
    AudioGru,
    VideoGru,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub cv_folds: usize,
    pub forest: ForestShape,
    pub gru_hidden: usize,
    pub gru_layers_audio: usize,
    pub gru_layers_video: usize,
    pub training: TrainingConfig,
    pub fit: FitShape,
    pub densities: DensityTable,
    /// Fallback capacity when fold-train labels are unavailable.
    pub prior_ml: f64,
    pub type_models: Vec<ModelKind>,
    pub level_models: Vec<ModelKind>,
    /// Optional explicit calibration paths; default <manifest root>/calib{1,2}.json.
    pub calib1: Option<PathBuf>,
    pub calib2: Option<PathBuf>,
}

/// Serializable subset of `ForestConfig`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestShape {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
}

impl Default for ForestShape {
    fn default() -> Self {
        let c = ForestConfig::default();
        ForestShape {
            n_trees: c.n_trees,
            max_depth: c.max_depth,
            min_samples_split: c.min_samples_split,
        }
    }
}

/// Serializable mirror of `FitConfig`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitShape {
    pub r_max: f64,
    pub half_height: f64,
    pub ring_spacing: f64,
    pub shrink_step: f64,
    pub r_min: f64,
    pub n_angles: usize,
}

impl Default for FitShape {
    fn default() -> Self {
        let c = FitConfig::default();
        FitShape {
            r_max: c.r_max,
            half_height: c.half_height,
            ring_spacing: c.ring_spacing,
            shrink_step: c.shrink_step,
            r_min: c.r_min,
            n_angles: c.n_angles,
        }
    }
}

impl FitShape {
    pub fn to_fit_config(&self) -> FitConfig {
        FitConfig {
            r_max: self.r_max,
            half_height: self.half_height,
            ring_spacing: self.ring_spacing,
            shrink_step: self.shrink_step,
            r_min: self.r_min,
            n_angles: self.n_angles,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            cv_folds: 3,
            forest: ForestShape::default(),
            gru_hidden: 512,
            gru_layers_audio: 5,
            gru_layers_video: 3,
            training: TrainingConfig::default(),
            fit: FitShape::default(),
            densities: DensityTable::default(),
            prior_ml: 500.0,
            type_models: vec![ModelKind::Forest, ModelKind::AudioGru],
            level_models: vec![ModelKind::Forest, ModelKind::AudioGru, ModelKind::VideoGru],
            calib1: None,
            calib2: None,
        }
    }
}

impl PipelineConfig {
    /// Small hyper-parameters for fast desk-scale runs on synthetic
    /// data; classification accuracy is limited by the data, not the
    /// model size, at this scale.
    pub fn desk_scale(seed: u64) -> Self {
        PipelineConfig {
            seed,
            gru_hidden: 32,
            gru_layers_audio: 1,
            gru_layers_video: 1,
            forest: ForestShape { n_trees: 30, ..ForestShape::default() },
            training: TrainingConfig {
                batch_size: 16,
                lr: 3e-3,
                max_epochs: 12,
                seed,
                ..TrainingConfig::default()
            },
            ..PipelineConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.type_models.is_empty() || self.level_models.is_empty() {
            return Err(PipelineError::Validation("per-task model set must be non-empty".into()));
        }
        if self.type_models.contains(&ModelKind::VideoGru) {
            return Err(PipelineError::Validation(
                "the type task has no video stream".into(),
            ));
        }
        if self.prior_ml <= 0.0 {
            return Err(PipelineError::Validation("prior must be positive".into()));
        }
        if self.cv_folds == 0 || self.gru_hidden == 0 {
            return Err(PipelineError::Validation("folds and hidden size must be >= 1".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Dataset loading
// ---------------------------------------------------------------------------

/// Everything known about one sequence, with modalities optional so a
/// broken file degrades to a per-model skip rather than an abort.
pub struct SequenceData {
    pub sequence_id: String,
    pub container_id: u32,
    pub container_type: ContainerType,
    pub classical: Option<Vec<f64>>,
    pub audio_embedding: Option<EmbeddingSequence>,
    pub video_embeddings: Vec<EmbeddingSequence>,
    /// masks[camera][frame]
    pub masks: Vec<Vec<MaskImage>>,
    pub labels: Option<crate::media::SequenceLabels>,
    pub warnings: Vec<String>,
}

pub fn load_dataset(manifest: &DatasetManifest) -> Vec<SequenceData> {
    let mut out = Vec::with_capacity(manifest.records.len());
    for rec in &manifest.records {
        let mut warnings = Vec::new();
        let classical = match read_wav(manifest.resolve(&rec.audio))
            .map_err(|e| e.to_string())
            .and_then(|clip| classical_features(&clip).map_err(|e| e.to_string()))
        {
            Ok(v) => Some(v.as_slice().to_vec()),
            Err(e) => {
                warnings.push(format!("audio unavailable: {e}"));
                None
            }
        };
        let audio_embedding = match read_embedding_sequence_with_camera(
            manifest.resolve(&rec.audio_embedding),
            None,
        ) {
            Ok(s) => Some(s),
            Err(e) => {
                warnings.push(format!("audio embedding unavailable: {e}"));
                None
            }
        };
        let mut video_embeddings = Vec::new();
        for (i, rel) in rec.video_embeddings.iter().enumerate() {
            match read_embedding_sequence_with_camera(manifest.resolve(rel), Some(i as u32 + 1)) {
                Ok(s) => video_embeddings.push(s),
                Err(e) => warnings.push(format!("video embedding {} unavailable: {e}", i + 1)),
            }
        }
        let mut masks = Vec::new();
        for cam in &rec.masks {
            let mut frames = Vec::new();
            for rel in cam {
                match read_pgm_mask(manifest.resolve(rel), None) {
                    Ok(m) => frames.push(m),
                    Err(e) => warnings.push(format!("mask unavailable: {e}")),
                }
            }
            masks.push(frames);
        }
        out.push(SequenceData {
            sequence_id: rec.sequence_id.clone(),
            container_id: rec.container_id,
            container_type: rec.container_type,
            classical,
            audio_embedding,
            video_embeddings,
            masks,
            labels: rec.labels.clone(),
            warnings,
        });
    }
    out
}

// ---------------------------------------------------------------------------
// Per-fold training and prediction
// ---------------------------------------------------------------------------

const N_TYPE_CLASSES: usize = 4;
const N_LEVEL_CLASSES: usize = 3;

/// Every model one training pass produces, plus the capacity prior
/// computed from the same training labels.
pub struct TrainedModels {
    pub forest_type: Option<RandomForestModel>,
    pub forest_level: Option<RandomForestModel>,
    pub gru_type: Option<(GruStack, ClassifierHead)>,
    pub gru_level: Option<(GruStack, ClassifierHead)>,
    pub gru_video: Option<(GruStack, ClassifierHead)>,
    pub prior_ml: f64,
}

impl TrainedModels {
    /// Writes each present model as JSON plus a small prior file.
    pub fn save(&self, dir: &std::path::Path) -> Result<(), PipelineError> {
        let io = |e: std::io::Error| PipelineError::Io(e.to_string());
        std::fs::create_dir_all(dir).map_err(io)?;
        let gru = |m: &(GruStack, ClassifierHead)| crate::gru::checkpoint_to_json(&m.0, &m.1);
        let files: [(&str, Option<String>); 5] = [
            ("forest_type.json", self.forest_type.as_ref().map(crate::forest::model_to_json)),
            ("forest_level.json", self.forest_level.as_ref().map(crate::forest::model_to_json)),
            ("gru_type.json", self.gru_type.as_ref().map(gru)),
            ("gru_level.json", self.gru_level.as_ref().map(gru)),
            ("gru_video.json", self.gru_video.as_ref().map(gru)),
        ];
        for (name, text) in files {
            if let Some(text) = text {
                std::fs::write(dir.join(name), text).map_err(io)?;
            }
        }
        std::fs::write(dir.join("prior.json"), format!("{{\"prior_ml\":{}}}", self.prior_ml))
            .map_err(io)
    }

    /// Loads whichever model files exist in `dir`.
    pub fn load(dir: &std::path::Path) -> Result<Self, PipelineError> {
        let read = |name: &str| -> Option<String> { std::fs::read_to_string(dir.join(name)).ok() };
        let parse_forest = |name| {
            read(name).map(|t| crate::forest::model_from_json(&t)).transpose().map_err(|e| {
                PipelineError::Io(format!("{name}: {e}"))
            })
        };
        let parse_gru = |name: &str| -> Result<Option<(GruStack, ClassifierHead)>, PipelineError> {
            read(name)
                .map(|t| crate::gru::checkpoint_from_json(&t).map(|c| (c.stack, c.head)))
                .transpose()
                .map_err(|e| PipelineError::Io(format!("{name}: {e}")))
        };
        #[derive(serde::Deserialize)]
        struct Prior {
            prior_ml: f64,
        }
        let prior_ml = read("prior.json")
            .and_then(|t| serde_json::from_str::<Prior>(&t).ok())
            .map(|p| p.prior_ml)
            .ok_or_else(|| PipelineError::Io("prior.json missing or invalid".into()))?;
        Ok(TrainedModels {
            forest_type: parse_forest("forest_type.json")?,
            forest_level: parse_forest("forest_level.json")?,
            gru_type: parse_gru("gru_type.json")?,
            gru_level: parse_gru("gru_level.json")?,
            gru_video: parse_gru("gru_video.json")?,
            prior_ml,
        })
    }
}

fn forest_config(shape: &ForestShape, seed: u64) -> ForestConfig {
    ForestConfig {
        n_trees: shape.n_trees,
        max_depth: shape.max_depth,
        min_samples_split: shape.min_samples_split,
        seed,
        ..ForestConfig::default()
    }
}

fn train_gru_task(
    samples: &[Sample],
    val: &[Sample],
    input_dim: usize,
    n_classes: usize,
    hidden: usize,
    layers: usize,
    training: &TrainingConfig,
    seed: u64,
) -> Option<(GruStack, ClassifierHead)> {
    if samples.is_empty() {
        return None;
    }
    let stack = GruStack::init(input_dim, hidden, layers, seed);
    let head = ClassifierHead::init(n_classes, hidden, seed.wrapping_add(1));
    let config = TrainingConfig { seed: training.seed.wrapping_add(seed), ..training.clone() };
    train(stack, head, samples, &config, val).ok().map(|m| (m.stack, m.head))
}

/// Trains every enabled model on `train_idx`, using `val_idx` for GRU
/// best-epoch selection. `fold` only perturbs the seeds.
pub fn train_models(
    data: &[SequenceData],
    train_idx: &[usize],
    val_idx: &[usize],
    config: &PipelineConfig,
    fold: usize,
) -> TrainedModels {
    let labeled = |idx: &[usize]| -> Vec<usize> {
        idx.iter().copied().filter(|&i| data[i].labels.is_some()).collect()
    };
    let tr = labeled(train_idx);
    let va = labeled(val_idx);
    let fold_seed = config.seed.wrapping_add(1000 * (fold as u64 + 1));

    // forests on the classical audio features
    let mut fx = Vec::new();
    let mut f_type = Vec::new();
    let mut f_level = Vec::new();
    for &i in &tr {
        if let (Some(c), Some(l)) = (&data[i].classical, &data[i].labels) {
            fx.push(c.clone());
            f_type.push(l.filling_type as usize);
            f_level.push(l.filling_level as usize);
        }
    }
    let forest_type = (!fx.is_empty())
        .then(|| train_forest(&fx, &f_type, N_TYPE_CLASSES, &forest_config(&config.forest, fold_seed)).ok())
        .flatten();
    let forest_level = (!fx.is_empty())
        .then(|| {
            train_forest(&fx, &f_level, N_LEVEL_CLASSES, &forest_config(&config.forest, fold_seed.wrapping_add(1))).ok()
        })
        .flatten();

    // audio-embedding GRUs
    let audio_samples = |idx: &[usize], label_of: &dyn Fn(&crate::media::SequenceLabels) -> usize| {
        idx.iter()
            .filter_map(|&i| {
                let d = &data[i];
                let emb = d.audio_embedding.as_ref()?;
                let l = d.labels.as_ref()?;
                Some(Sample::from_embedding(emb, label_of(l)))
            })
            .collect::<Vec<_>>()
    };
    let type_label = |l: &crate::media::SequenceLabels| l.filling_type as usize;
    let level_label = |l: &crate::media::SequenceLabels| l.filling_level as usize;
    let gru_type = train_gru_task(
        &audio_samples(&tr, &type_label),
        &audio_samples(&va, &type_label),
        crate::media::AUDIO_EMBED_DIM,
        N_TYPE_CLASSES,
        config.gru_hidden,
        config.gru_layers_audio,
        &config.training,
        fold_seed.wrapping_add(10),
    );
    let gru_level = train_gru_task(
        &audio_samples(&tr, &level_label),
        &audio_samples(&va, &level_label),
        crate::media::AUDIO_EMBED_DIM,
        N_LEVEL_CLASSES,
        config.gru_hidden,
        config.gru_layers_audio,
        &config.training,
        fold_seed.wrapping_add(20),
    );

    // video-embedding GRU: every camera sequence is a training sample
    let video_samples = |idx: &[usize]| {
        idx.iter()
            .flat_map(|&i| {
                let d = &data[i];
                d.labels.iter().flat_map(move |l| {
                    d.video_embeddings
                        .iter()
                        .map(move |emb| Sample::from_embedding(emb, l.filling_level as usize))
                })
            })
            .collect::<Vec<_>>()
    };
    let gru_video = train_gru_task(
        &video_samples(&tr),
        &video_samples(&va),
        crate::media::VIDEO_EMBED_DIM,
        N_LEVEL_CLASSES,
        config.gru_hidden,
        config.gru_layers_video,
        &config.training,
        fold_seed.wrapping_add(30),
    );

    // training prior = mean labeled capacity over the fold's train set
    let caps: Vec<f64> = tr
        .iter()
        .filter_map(|&i| data[i].labels.as_ref().map(|l| l.capacity_ml))
        .collect();
    let prior_ml = if caps.is_empty() {
        config.prior_ml
    } else {
        caps.iter().sum::<f64>() / caps.len() as f64
    };

    TrainedModels { forest_type, forest_level, gru_type, gru_level, gru_video, prior_ml }
}

fn gru_probs(model: &(GruStack, ClassifierHead), emb: &EmbeddingSequence) -> Option<ClassProbs> {
    let sample = Sample::from_embedding(emb, 0);
    let logits =
        classify(&model.0, &model.1, &sample.data, sample.dim, sample.timesteps, sample.timesteps)
            .ok()?;
    ClassProbs::new(softmax(&logits)).ok()
}

fn video_probs(model: &(GruStack, ClassifierHead), embs: &[EmbeddingSequence]) -> Option<ClassProbs> {
    let mut streams = Vec::new();
    for emb in embs {
        let sample = Sample::from_embedding(emb, 0);
        let logits = classify(
            &model.0, &model.1, &sample.data, sample.dim, sample.timesteps, sample.timesteps,
        )
        .ok()?;
        streams.push(logits);
    }
    if streams.is_empty() {
        return None;
    }
    combine_streams(&streams).ok()
}

/// Per-sequence prediction before decoding.
pub struct SequencePrediction {
    pub sequence_id: String,
    pub type_probs: ClassProbs,
    pub level_probs: ClassProbs,
    pub capacity_ml: f64,
    pub used_prior: bool,
    pub warnings: Vec<String>,
    pub millis: f64,
}

pub fn predict_sequence(
    d: &SequenceData,
    models: &TrainedModels,
    config: &PipelineConfig,
    calibs: (&CameraCalibration, &CameraCalibration),
) -> SequencePrediction {
    let start = Instant::now();
    let mut warnings = d.warnings.clone();

    let mut collect = |task_models: &[ModelKind], is_level: bool| -> ClassProbs {
        let mut probs = Vec::new();
        for kind in task_models {
            let p = match kind {
                ModelKind::Forest => {
                    let forest = if is_level { &models.forest_level } else { &models.forest_type };
                    match (forest, &d.classical) {
                        (Some(f), Some(x)) => crate::forest::predict_proba(f, x).ok(),
                        _ => None,
                    }
                }
                ModelKind::AudioGru => {
                    let gru = if is_level { &models.gru_level } else { &models.gru_type };
                    match (gru, &d.audio_embedding) {
                        (Some(g), Some(e)) => gru_probs(g, e),
                        _ => None,
                    }
                }
                ModelKind::VideoGru => match &models.gru_video {
                    Some(g) if !d.video_embeddings.is_empty() => {
                        video_probs(g, &d.video_embeddings)
                    }
                    _ => None,
                },
            };
            match p {
                Some(p) => probs.push(p),
                None => warnings.push(format!(
                    "{}: {:?} model skipped (modality or model missing)",
                    if is_level { "level" } else { "type" },
                    kind
                )),
            }
        }
        match average_probs(&probs) {
            Ok(p) => p,
            Err(_) => ClassProbs::uniform(if is_level { N_LEVEL_CLASSES } else { N_TYPE_CLASSES }),
        }
    };

    let type_probs = collect(&config.type_models, false);
    let level_probs = collect(&config.level_models, true);

    // capacity from the two selected frames in both cameras
    let fit = config.fit.to_fit_config();
    let (capacity_ml, used_prior) = if d.masks.len() >= 2
        && d.masks[0].len() >= 2
        && d.masks[1].len() >= 2
    {
        let frames = [
            FrameMasks { cam1: &d.masks[0][0], cam2: &d.masks[1][0] },
            FrameMasks { cam1: &d.masks[0][1], cam2: &d.masks[1][1] },
        ];
        match estimate_capacity_sequence(&frames, calibs, models.prior_ml, &fit) {
            Ok(est) => (est.capacity_ml, est.used_prior),
            Err(e) => {
                warnings.push(format!("capacity estimation failed: {e}"));
                (models.prior_ml, true)
            }
        }
    } else {
        warnings.push("masks incomplete; capacity falls back to prior".into());
        (models.prior_ml, true)
    };

    SequencePrediction {
        sequence_id: d.sequence_id.clone(),
        type_probs,
        level_probs,
        capacity_ml,
        used_prior,
        warnings,
        millis: start.elapsed().as_secs_f64() * 1000.0,
    }
}

// ---------------------------------------------------------------------------
// Pipeline entry points
// ---------------------------------------------------------------------------

/// Sidecar record for failure analysis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceLog {
    pub sequence_id: String,
    pub millis: f64,
    pub used_prior: bool,
    pub warnings: Vec<String>,
}

pub struct PipelineOutput {
    pub rows: Vec<SubmissionRow>,
    pub report: Option<MetricReport>,
    pub logs: Vec<SequenceLog>,
}

pub fn load_calibs(
    manifest: &DatasetManifest,
    config: &PipelineConfig,
) -> Result<(CameraCalibration, CameraCalibration), PipelineError> {
    let p1 = config.calib1.clone().unwrap_or_else(|| manifest.root.join("calib1.json"));
    let p2 = config.calib2.clone().unwrap_or_else(|| manifest.root.join("calib2.json"));
    let c1 = read_calibration(&p1).map_err(|e| PipelineError::Io(e.to_string()))?;
    let c2 = read_calibration(&p2).map_err(|e| PipelineError::Io(e.to_string()))?;
    Ok((c1, c2))
}

/// Cross-validated run: every sequence is predicted by the fold that
/// holds its container out of training. Deterministic for a fixed
/// manifest, config, and seed.
pub fn run_pipeline(
    manifest: &DatasetManifest,
    config: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    config.validate()?;
    let data = load_dataset(manifest);
    let (c1, c2) = load_calibs(manifest, config)?;

    let mut seen = BTreeMap::new();
    for d in &data {
        seen.insert(d.container_id, d.container_type);
    }
    let objects: Vec<ObjectRef> = seen
        .into_iter()
        .map(|(id, container_type)| ObjectRef { id, container_type })
        .collect();
    let split = make_cv_splits(&objects, config.cv_folds, config.seed)?;

    let mut predictions: BTreeMap<String, SequencePrediction> = BTreeMap::new();
    for (fold_idx, fold) in split.folds.iter().enumerate() {
        let train_idx: Vec<usize> = (0..data.len())
            .filter(|&i| fold.train_object_ids.contains(&data[i].container_id))
            .collect();
        let val_idx: Vec<usize> = (0..data.len())
            .filter(|&i| fold.val_object_ids.contains(&data[i].container_id))
            .collect();
        let models = train_models(&data, &train_idx, &val_idx, config, fold_idx);
        for &i in &val_idx {
            let pred = predict_sequence(&data[i], &models, config, (&c1, &c2));
            predictions.insert(pred.sequence_id.clone(), pred);
        }
    }

    let mut rows = Vec::with_capacity(predictions.len());
    let mut logs = Vec::with_capacity(predictions.len());
    for pred in predictions.values() {
        let ftype = FillingType::from_index(pred.type_probs.argmax()).expect("4-way probs");
        let level = FillingLevel::from_index(pred.level_probs.argmax()).expect("3-way probs");
        let mass = filling_mass(pred.capacity_ml, level, ftype, &config.densities);
        rows.push(SubmissionRow {
            sequence_id: pred.sequence_id.clone(),
            capacity_ml: pred.capacity_ml,
            filling_type: ftype,
            filling_level: level,
            mass_g: mass,
        });
        logs.push(SequenceLog {
            sequence_id: pred.sequence_id.clone(),
            millis: pred.millis,
            used_prior: pred.used_prior,
            warnings: pred.warnings.clone(),
        });
    }

    let report = if manifest.records.iter().all(|r| r.labels.is_some()) {
        Some(evaluate(&rows, manifest)?)
    } else {
        None
    };
    Ok(PipelineOutput { rows, report, logs })
}

/// Scores a submission against a labeled manifest. Order-independent;
/// every manifest sequence must be present.
pub fn evaluate(
    rows: &[SubmissionRow],
    manifest: &DatasetManifest,
) -> Result<MetricReport, PipelineError> {
    let by_id: BTreeMap<&str, &SubmissionRow> =
        rows.iter().map(|r| (r.sequence_id.as_str(), r)).collect();
    let missing: Vec<&str> = manifest
        .records
        .iter()
        .filter(|r| !by_id.contains_key(r.sequence_id.as_str()))
        .map(|r| r.sequence_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(PipelineError::Evaluation(format!(
            "submission is missing sequences: {}",
            missing.join(", ")
        )));
    }

    let mut type_pred = Vec::new();
    let mut type_true = Vec::new();
    let mut level_pred = Vec::new();
    let mut level_true = Vec::new();
    let mut cap_scores = Vec::new();
    let mut mass_scores = Vec::new();
    let mut per_sequence = Vec::new();
    for rec in &manifest.records {
        let labels = rec.labels.as_ref().ok_or_else(|| {
            PipelineError::Evaluation(format!("sequence {} has no labels", rec.sequence_id))
        })?;
        let row = by_id[rec.sequence_id.as_str()];
        type_pred.push(row.filling_type.index());
        type_true.push(labels.filling_type as usize);
        level_pred.push(row.filling_level.index());
        level_true.push(labels.filling_level as usize);
        let cs = capacity_score(row.capacity_ml, labels.capacity_ml);
        let ms = mass_score(row.mass_g, labels.mass_g);
        cap_scores.push(cs);
        mass_scores.push(ms);
        per_sequence.push(SequenceScore {
            sequence_id: rec.sequence_id.clone(),
            capacity_score: cs,
            mass_score: ms,
            type_correct: row.filling_type.index() == labels.filling_type as usize,
            level_correct: row.filling_level.index() == labels.filling_level as usize,
        });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(MetricReport {
        schema_version: 1,
        type_weighted_f1: weighted_f1(&type_pred, &type_true, N_TYPE_CLASSES)
            .map_err(|e| PipelineError::Evaluation(e.to_string()))?,
        level_weighted_f1: weighted_f1(&level_pred, &level_true, N_LEVEL_CLASSES)
            .map_err(|e| PipelineError::Evaluation(e.to_string()))?,
        capacity_score: mean(&cap_scores),
        mass_score: mean(&mass_scores),
        per_sequence,
    })
}

/// Human-readable score table; all scores are printed x100.
pub fn format_report(report: &MetricReport) -> String {
    let mut out = String::new();
    out.push_str("metric                         score\n");
    out.push_str(&format!("filling level (weighted F1)   {:6.1}\n", report.level_weighted_f1 * 100.0));
    out.push_str(&format!("filling type (weighted F1)    {:6.1}\n", report.type_weighted_f1 * 100.0));
    out.push_str(&format!("container capacity            {:6.1}\n", report.capacity_score * 100.0));
    out.push_str(&format!("filling mass                  {:6.1}\n", report.mass_score * 100.0));
    out
}
