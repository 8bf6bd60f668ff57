//! Late fusion and mass composition: probability averaging, label
//! decoding, filling-mass arithmetic, and the scoring functions
//! (weighted F1, relative-error capacity/mass scores).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Probabilities and labels
// ---------------------------------------------------------------------------

/// A discrete probability distribution over C classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbs {
    p: Vec<f64>,
}

impl ClassProbs {
    pub fn new(p: Vec<f64>) -> Result<Self, FusionError> {
        if p.is_empty() {
            return Err(FusionError::Domain("empty probability vector".into()));
        }
        if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(FusionError::Domain("negative or non-finite probability".into()));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(FusionError::Domain(format!("probabilities sum to {sum}")));
        }
        Ok(ClassProbs { p })
    }

    pub fn uniform(c: usize) -> Self {
        ClassProbs {
            p: vec![1.0 / c as f64; c],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// Argmax with ties broken toward the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.p.iter().enumerate().skip(1) {
            if v > self.p[best] {
                best = i;
            }
        }
        best
    }
}

/// Discretized filling level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FillingLevel {
    Empty0,
    Half50,
    Full90,
}

impl FillingLevel {
    pub const COUNT: usize = 3;

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(FillingLevel::Empty0),
            1 => Some(FillingLevel::Half50),
            2 => Some(FillingLevel::Full90),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        match self {
            FillingLevel::Empty0 => 0,
            FillingLevel::Half50 => 1,
            FillingLevel::Full90 => 2,
        }
    }

    pub fn percent(self) -> u32 {
        match self {
            FillingLevel::Empty0 => 0,
            FillingLevel::Half50 => 50,
            FillingLevel::Full90 => 90,
        }
    }

    pub fn from_percent(p: u32) -> Option<Self> {
        match p {
            0 => Some(FillingLevel::Empty0),
            50 => Some(FillingLevel::Half50),
            90 => Some(FillingLevel::Full90),
            _ => None,
        }
    }
}

/// Content category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillingType {
    Empty,
    Pasta,
    Rice,
    Water,
}

impl FillingType {
    pub const COUNT: usize = 4;

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(FillingType::Empty),
            1 => Some(FillingType::Pasta),
            2 => Some(FillingType::Rice),
            3 => Some(FillingType::Water),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        match self {
            FillingType::Empty => 0,
            FillingType::Pasta => 1,
            FillingType::Rice => 2,
            FillingType::Water => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FillingType::Empty => "empty",
            FillingType::Pasta => "pasta",
            FillingType::Rice => "rice",
            FillingType::Water => "water",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "empty" => Some(FillingType::Empty),
            "pasta" => Some(FillingType::Pasta),
            "rice" => Some(FillingType::Rice),
            "water" => Some(FillingType::Water),
            _ => None,
        }
    }
}

/// Grams-per-mL for each non-empty filling type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityTable {
    pub pasta: f64,
    pub rice: f64,
    pub water: f64,
}

impl Default for DensityTable {
    fn default() -> Self {
        DensityTable {
            pasta: 0.41,
            rice: 0.85,
            water: 1.00,
        }
    }
}

impl DensityTable {
    pub fn density(&self, filling: FillingType) -> f64 {
        match filling {
            FillingType::Empty => 0.0,
            FillingType::Pasta => self.pasta,
            FillingType::Rice => self.rice,
            FillingType::Water => self.water,
        }
    }
}

// ---------------------------------------------------------------------------
// Fusion operations
// ---------------------------------------------------------------------------

/// Elementwise mean of equally-sized distributions.
pub fn average_probs(probs: &[ClassProbs]) -> Result<ClassProbs, FusionError> {
    let first = probs
        .first()
        .ok_or_else(|| FusionError::Domain("no distributions to average".into()))?;
    let c = first.len();
    if probs.iter().any(|p| p.len() != c) {
        return Err(FusionError::Domain("mixed class counts".into()));
    }
    let n = probs.len() as f64;
    let mut acc = vec![0.0; c];
    for p in probs {
        for (a, v) in acc.iter_mut().zip(p.values()) {
            *a += v;
        }
    }
    for a in acc.iter_mut() {
        *a /= n;
    }
    ClassProbs::new(acc)
}

/// Final label decode: argmax with ties to the lowest index.
pub fn decode_label(probs: &ClassProbs) -> usize {
    probs.argmax()
}

/// Mass in grams from capacity, level and type.
pub fn filling_mass(
    capacity_ml: f64,
    level: FillingLevel,
    filling: FillingType,
    densities: &DensityTable,
) -> f64 {
    if filling == FillingType::Empty {
        return 0.0;
    }
    capacity_ml * (level.percent() as f64 / 100.0) * densities.density(filling)
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Support-weighted mean of per-class F1 scores, with F1 = 0 when a
/// class has neither predicted nor true positives contributing.
pub fn weighted_f1(predictions: &[usize], ground_truth: &[usize], n_classes: usize) -> Result<f64, FusionError> {
    if predictions.is_empty() || predictions.len() != ground_truth.len() {
        return Err(FusionError::Domain("empty or mismatched label lists".into()));
    }
    if predictions
        .iter()
        .chain(ground_truth)
        .any(|&l| l >= n_classes)
    {
        return Err(FusionError::Domain("label out of range".into()));
    }
    let n = ground_truth.len() as f64;
    let mut score = 0.0;
    for c in 0..n_classes {
        let tp = predictions
            .iter()
            .zip(ground_truth)
            .filter(|&(&p, &t)| p == c && t == c)
            .count() as f64;
        let pred_pos = predictions.iter().filter(|&&p| p == c).count() as f64;
        let true_pos = ground_truth.iter().filter(|&&t| t == c).count() as f64;
        let precision = if pred_pos > 0.0 { tp / pred_pos } else { 0.0 };
        let recall = if true_pos > 0.0 { tp / true_pos } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        score += f1 * (true_pos / n);
    }
    Ok(score)
}

/// Clamped relative-error score: `max(0, 1 - |pred - true| / true)` for
/// positive truth; a zero truth scores 1 iff |pred| <= 1.
pub fn relative_error_score(pred: f64, truth: f64, zero_tolerance: f64) -> f64 {
    if truth > 0.0 {
        (1.0 - (pred - truth).abs() / truth).max(0.0)
    } else if pred.abs() <= zero_tolerance {
        1.0
    } else {
        0.0
    }
}

/// Capacity score for one sequence.
pub fn capacity_score(pred_ml: f64, true_ml: f64) -> f64 {
    relative_error_score(pred_ml, true_ml, 1.0)
}

/// Mass score for one sequence; an empty (0 g) truth tolerates 1 g.
pub fn mass_score(pred_g: f64, true_g: f64) -> f64 {
    relative_error_score(pred_g, true_g, 1.0)
}

// ---------------------------------------------------------------------------
// Submission CSV and metric report
// ---------------------------------------------------------------------------

pub const SUBMISSION_HEADER: &str =
    "sequence_id,container_capacity_ml,filling_type,filling_level_percent,filling_mass_g";

/// One per-sequence prediction row.
#[derive(Debug, Clone, PartialEq)]
pub struct SubmissionRow {
    pub sequence_id: String,
    pub capacity_ml: f64,
    pub filling_type: FillingType,
    pub filling_level: FillingLevel,
    pub mass_g: f64,
}

pub fn write_submission(path: impl AsRef<Path>, rows: &[SubmissionRow]) -> Result<(), FusionError> {
    let mut out = String::from(SUBMISSION_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.sequence_id,
            r.capacity_ml,
            r.filling_type.name(),
            r.filling_level.percent(),
            r.mass_g
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_submission(path: impl AsRef<Path>) -> Result<Vec<SubmissionRow>, FusionError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == SUBMISSION_HEADER => {}
        _ => return Err(FusionError::Format("missing or wrong submission header".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(FusionError::Format(format!("row {} has {} fields", i + 2, fields.len())));
        }
        let parse_f = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| FusionError::Format(format!("bad number '{s}' on row {}", i + 2)))
        };
        rows.push(SubmissionRow {
            sequence_id: fields[0].to_string(),
            capacity_ml: parse_f(fields[1])?,
            filling_type: FillingType::from_name(fields[2])
                .ok_or_else(|| FusionError::Format(format!("bad filling type '{}'", fields[2])))?,
            filling_level: fields[3]
                .parse::<u32>()
                .ok()
                .and_then(FillingLevel::from_percent)
                .ok_or_else(|| FusionError::Format(format!("bad level '{}'", fields[3])))?,
            mass_g: parse_f(fields[4])?,
        });
    }
    Ok(rows)
}

/// Evaluation scores over a labeled dataset; scores in [0, 1]
/// (multiplied by 100 at the CLI).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub type_weighted_f1: f64,
    pub level_weighted_f1: f64,
    pub capacity_score: f64,
    pub mass_score: f64,
    pub per_sequence: Vec<SequenceScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    pub sequence_id: String,
    pub capacity_score: f64,
    pub mass_score: f64,
    pub type_correct: bool,
    pub level_correct: bool,
}
