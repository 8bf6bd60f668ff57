//! Ingestion and validation of all external data: PCM WAV audio, PGM
//! silhouette masks, JSON camera calibrations, CSV embedding sequences,
//! and JSON dataset manifests.
//!
//! Every reader is a pure function of file content; returned values are
//! immutable and safe to share across threads.

use std::fmt;
use std::fs;
use std::io::{Read as _, Write as _};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Audio embedding dimensionality.
pub const AUDIO_EMBED_DIM: usize = 128;
/// Video embedding dimensionality.
pub const VIDEO_EMBED_DIM: usize = 512;

#[derive(Debug, Error)]
pub enum MediaError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("unsupported encoding in {path}: {reason}")]
    Unsupported { path: PathBuf, reason: String },
    #[error("validation error in {path}: {reason}")]
    Validation { path: PathBuf, reason: String },
    #[error("dimension error in {path}: got {got} columns, expected 128 or 512")]
    Dimension { path: PathBuf, got: usize },
    #[error("domain error: {0}")]
    Domain(String),
}

impl MediaError {
    fn format(path: &Path, reason: impl Into<String>) -> Self {
        MediaError::Format {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }
    fn validation(path: &Path, reason: impl Into<String>) -> Self {
        MediaError::Validation {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }
    fn io(path: &Path, source: std::io::Error) -> Self {
        MediaError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

// ---------------------------------------------------------------------------
// AudioClip
// ---------------------------------------------------------------------------

/// Mono audio clip with samples normalized to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, MediaError> {
        if sample_rate == 0 {
            return Err(MediaError::Domain("sample_rate must be positive".into()));
        }
        if let Some(s) = samples.iter().find(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(MediaError::Domain(format!(
                "sample {s} outside [-1, 1] or not finite"
            )));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Duration in seconds (`len / sample_rate`).
    pub fn duration_sec(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Reads a PCM WAV file (8/16/32-bit integer or 32-bit float, 1-8
/// channels) and downmixes to mono by the arithmetic channel mean.
/// Integer samples are scaled to [-1, 1] by the type maximum.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, MediaError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| MediaError::io(path, e))?;
    parse_wav(&bytes, path)
}

fn parse_wav(bytes: &[u8], path: &Path) -> Result<AudioClip, MediaError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(MediaError::format(path, "not a RIFF/WAVE file"));
    }
    let mut pos = 12usize;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        if body_start + size > bytes.len() {
            return Err(MediaError::format(path, "truncated chunk"));
        }
        let body = &bytes[body_start..body_start + size];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(MediaError::format(path, "fmt chunk too small"));
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word-aligned
        pos = body_start + size + (size & 1);
    }
    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| MediaError::format(path, "missing fmt chunk"))?;
    let data = data.ok_or_else(|| MediaError::format(path, "missing data chunk"))?;
    if !(1..=8).contains(&channels) {
        return Err(MediaError::Unsupported {
            path: path.to_path_buf(),
            reason: format!("{channels} channels"),
        });
    }
    if rate == 0 {
        return Err(MediaError::format(path, "zero sample rate"));
    }
    let decode_frame: fn(&[u8]) -> f64;
    let bytes_per_sample: usize;
    match (format, bits) {
        (1, 8) => {
            bytes_per_sample = 1;
            decode_frame = |b| (b[0] as i16 - 128) as f64 / 127.0;
        }
        (1, 16) => {
            bytes_per_sample = 2;
            decode_frame = |b| i16::from_le_bytes([b[0], b[1]]) as f64 / i16::MAX as f64;
        }
        (1, 32) => {
            bytes_per_sample = 4;
            decode_frame =
                |b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64 / i32::MAX as f64;
        }
        (3, 32) => {
            bytes_per_sample = 4;
            decode_frame = |b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
        }
        _ => {
            return Err(MediaError::Unsupported {
                path: path.to_path_buf(),
                reason: format!("format tag {format} with {bits} bits"),
            })
        }
    }
    let frame_bytes = bytes_per_sample * channels as usize;
    if data.len() % frame_bytes != 0 {
        return Err(MediaError::format(path, "data chunk not a whole number of frames"));
    }
    let n_frames = data.len() / frame_bytes;
    let mut samples = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let mut acc = 0.0;
        for c in 0..channels as usize {
            let off = f * frame_bytes + c * bytes_per_sample;
            acc += decode_frame(&data[off..off + bytes_per_sample]);
        }
        samples.push((acc / channels as f64).clamp(-1.0, 1.0));
    }
    AudioClip::new(samples, rate)
}

/// Writes a mono clip as 16-bit PCM WAV.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<(), MediaError> {
    let path = path.as_ref();
    let n = clip.samples.len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &clip.samples {
        let q = (s * i16::MAX as f64).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| MediaError::io(path, e))
}

// ---------------------------------------------------------------------------
// MaskImage
// ---------------------------------------------------------------------------

/// Binary foreground mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskImage {
    width: usize,
    height: usize,
    foreground: Vec<bool>,
}

impl MaskImage {
    pub fn new(width: usize, height: usize, foreground: Vec<bool>) -> Result<Self, MediaError> {
        if width == 0 || height == 0 {
            return Err(MediaError::Domain("mask dimensions must be positive".into()));
        }
        if foreground.len() != width * height {
            return Err(MediaError::Domain(format!(
                "foreground length {} != {}x{}",
                foreground.len(),
                width,
                height
            )));
        }
        Ok(MaskImage {
            width,
            height,
            foreground,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_foreground(&self, col: usize, row: usize) -> bool {
        col < self.width && row < self.height && self.foreground[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, value: bool) {
        self.foreground[row * self.width + col] = value;
    }

    pub fn foreground_count(&self) -> usize {
        self.foreground.iter().filter(|&&b| b).count()
    }
}

/// Reads a PGM (P2 ASCII or P5 binary) image and binarizes it.
/// `threshold = None` uses `maxval / 2`; a pixel is foreground when its
/// value is >= threshold.
pub fn read_pgm_mask(
    path: impl AsRef<Path>,
    threshold: Option<f64>,
) -> Result<MaskImage, MediaError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| MediaError::io(path, e))?;
    parse_pgm(&bytes, threshold, path)
}

fn parse_pgm(bytes: &[u8], threshold: Option<f64>, path: &Path) -> Result<MaskImage, MediaError> {
    if bytes.len() < 2 {
        return Err(MediaError::format(path, "too short"));
    }
    let magic = &bytes[0..2];
    let binary = match magic {
        b"P5" => true,
        b"P2" => false,
        _ => return Err(MediaError::format(path, "not a PGM (P2/P5) file")),
    };
    // header tokens: width height maxval, with # comments allowed
    let mut pos = 2usize;
    let mut header = [0usize; 3];
    for slot in header.iter_mut() {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(MediaError::format(path, "malformed header"));
        }
        *slot = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| MediaError::format(path, "malformed header"))?;
    }
    let [width, height, maxval] = header;
    if width == 0 || height == 0 {
        return Err(MediaError::format(path, "zero dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(MediaError::format(path, format!("maxval {maxval} out of range")));
    }
    let thr = threshold.unwrap_or(maxval as f64 / 2.0);
    if thr <= 0.0 || thr >= maxval as f64 + 1.0 {
        return Err(MediaError::Domain(format!(
            "threshold {thr} outside (0, {maxval}]"
        )));
    }
    let n = width * height;
    let mut values = Vec::with_capacity(n);
    if binary {
        pos += 1; // single whitespace after maxval
        let wide = maxval > 255;
        let need = n * if wide { 2 } else { 1 };
        if bytes.len() < pos + need {
            return Err(MediaError::format(path, "truncated pixel payload"));
        }
        for i in 0..n {
            let v = if wide {
                u16::from_be_bytes([bytes[pos + 2 * i], bytes[pos + 2 * i + 1]]) as usize
            } else {
                bytes[pos + i] as usize
            };
            values.push(v);
        }
    } else {
        let text = std::str::from_utf8(&bytes[pos..])
            .map_err(|_| MediaError::format(path, "non-ASCII P2 payload"))?;
        for tok in text.split_whitespace().take(n) {
            values.push(
                tok.parse()
                    .map_err(|_| MediaError::format(path, "bad P2 pixel value"))?,
            );
        }
        if values.len() < n {
            return Err(MediaError::format(path, "truncated pixel payload"));
        }
    }
    let foreground = values.iter().map(|&v| v as f64 >= thr).collect();
    MaskImage::new(width, height, foreground)
}

/// Writes a mask as binary PGM (P5) with foreground = 255.
pub fn write_pgm_mask(path: impl AsRef<Path>, mask: &MaskImage) -> Result<(), MediaError> {
    let path = path.as_ref();
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend(mask.foreground.iter().map(|&b| if b { 255u8 } else { 0 }));
    fs::write(path, out).map_err(|e| MediaError::io(path, e))
}

// ---------------------------------------------------------------------------
// CameraCalibration
// ---------------------------------------------------------------------------

/// Pinhole intrinsics plus a world-to-camera rigid transform.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraCalibration {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Rotation world -> camera.
    pub rotation: Matrix3<f64>,
    /// Translation world -> camera, meters.
    pub translation: Vector3<f64>,
}

const ORTHONORMALITY_TOL: f64 = 1e-6;

impl CameraCalibration {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, MediaError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(MediaError::Domain(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        let gram = rotation.transpose() * rotation;
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev > ORTHONORMALITY_TOL {
            return Err(MediaError::Domain(format!(
                "rotation not orthonormal (max deviation {dev:.3e})"
            )));
        }
        if (rotation.determinant() - 1.0).abs() > ORTHONORMALITY_TOL {
            return Err(MediaError::Domain(
                "rotation determinant is not +1 (reflection rejected)".into(),
            ));
        }
        Ok(CameraCalibration {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CalibrationFile {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    /// Row-major 3x3 rotation, world -> camera.
    #[serde(rename = "R")]
    r: Vec<f64>,
    /// World -> camera translation, meters.
    t: Vec<f64>,
}

/// Reads a calibration JSON file and validates the rotation.
pub fn read_calibration(path: impl AsRef<Path>) -> Result<CameraCalibration, MediaError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| MediaError::io(path, e))?;
    let file: CalibrationFile =
        serde_json::from_str(&text).map_err(|e| MediaError::format(path, e.to_string()))?;
    if file.r.len() != 9 {
        return Err(MediaError::format(path, "R must have 9 entries"));
    }
    if file.t.len() != 3 {
        return Err(MediaError::format(path, "t must have 3 entries"));
    }
    let rotation = Matrix3::from_row_slice(&file.r);
    let translation = Vector3::new(file.t[0], file.t[1], file.t[2]);
    CameraCalibration::new(file.fx, file.fy, file.cx, file.cy, rotation, translation)
        .map_err(|e| match e {
            MediaError::Domain(reason) => MediaError::validation(path, reason),
            other => other,
        })
}

/// Writes a calibration JSON file in the same schema `read_calibration` accepts.
pub fn write_calibration(
    path: impl AsRef<Path>,
    calib: &CameraCalibration,
) -> Result<(), MediaError> {
    let path = path.as_ref();
    let file = CalibrationFile {
        fx: calib.fx,
        fy: calib.fy,
        cx: calib.cx,
        cy: calib.cy,
        r: calib.rotation.transpose().as_slice().to_vec(), // column-major storage -> row-major dump
        t: calib.translation.as_slice().to_vec(),
    };
    let text = serde_json::to_string_pretty(&file).expect("serializable");
    fs::write(path, text).map_err(|e| MediaError::io(path, e))
}

// ---------------------------------------------------------------------------
// EmbeddingSequence
// ---------------------------------------------------------------------------

/// Origin of an embedding sequence, inferred from its dimensionality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbeddingSource {
    AudioEmbedding,
    VideoEmbedding,
}

impl fmt::Display for EmbeddingSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbeddingSource::AudioEmbedding => write!(f, "audio-embedding"),
            EmbeddingSource::VideoEmbedding => write!(f, "video-embedding"),
        }
    }
}

/// T x D feature sequence standing in for a pretrained network's output.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    data: Vec<f64>, // row-major T x D
    timesteps: usize,
    dim: usize,
    source: EmbeddingSource,
    camera_id: Option<u32>,
}

impl EmbeddingSequence {
    pub fn new(
        rows: Vec<Vec<f64>>,
        camera_id: Option<u32>,
    ) -> Result<Self, MediaError> {
        let timesteps = rows.len();
        if timesteps == 0 {
            return Err(MediaError::Domain("embedding sequence must have T >= 1".into()));
        }
        let dim = rows[0].len();
        let source = match dim {
            AUDIO_EMBED_DIM => EmbeddingSource::AudioEmbedding,
            VIDEO_EMBED_DIM => EmbeddingSource::VideoEmbedding,
            _ => {
                return Err(MediaError::Domain(format!(
                    "embedding dimension {dim} not in {{128, 512}}"
                )))
            }
        };
        let mut data = Vec::with_capacity(timesteps * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(MediaError::Domain("ragged embedding rows".into()));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(MediaError::Domain("non-finite embedding entry".into()));
            }
            data.extend_from_slice(row);
        }
        Ok(EmbeddingSequence {
            data,
            timesteps,
            dim,
            source,
            camera_id,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self) -> EmbeddingSource {
        self.source
    }

    pub fn camera_id(&self) -> Option<u32> {
        self.camera_id
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }
}

/// Reads an embedding sequence from headerless CSV, one timestep per row.
/// The source tag is inferred from the column count (128 audio, 512 video).
pub fn read_embedding_sequence(path: impl AsRef<Path>) -> Result<EmbeddingSequence, MediaError> {
    read_embedding_sequence_with_camera(path, None)
}

/// Same as [`read_embedding_sequence`] but attaches a camera id (video streams).
pub fn read_embedding_sequence_with_camera(
    path: impl AsRef<Path>,
    camera_id: Option<u32>,
) -> Result<EmbeddingSequence, MediaError> {
    let path = path.as_ref();
    let mut text = String::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| MediaError::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut dim = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|_| MediaError::format(path, format!("bad number on line {}", lineno + 1)))
            })
            .collect::<Result<_, _>>()?;
        if row.iter().any(|v| v.is_nan()) {
            return Err(MediaError::validation(
                path,
                format!("NaN entry on line {}", lineno + 1),
            ));
        }
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(MediaError::format(
                    path,
                    format!("ragged row on line {}: {} columns, expected {d}", lineno + 1, row.len()),
                ))
            }
            _ => {}
        }
        rows.push(row);
    }
    let dim = dim.ok_or_else(|| MediaError::format(path, "empty file"))?;
    if dim != AUDIO_EMBED_DIM && dim != VIDEO_EMBED_DIM {
        return Err(MediaError::Dimension {
            path: path.to_path_buf(),
            got: dim,
        });
    }
    EmbeddingSequence::new(rows, camera_id)
}

/// Writes an embedding sequence as headerless CSV (shortest round-trip
/// float formatting, so write-then-read is bit-exact).
pub fn write_embedding_sequence(
    path: impl AsRef<Path>,
    seq: &EmbeddingSequence,
) -> Result<(), MediaError> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| MediaError::io(path, e))?;
    let mut line = String::new();
    for row in seq.rows() {
        line.clear();
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&format!("{v}"));
        }
        line.push('\n');
        file.write_all(line.as_bytes())
            .map_err(|e| MediaError::io(path, e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// DatasetManifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContainerType {
    Cup,
    Glass,
    Box,
}

impl fmt::Display for ContainerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContainerType::Cup => write!(f, "cup"),
            ContainerType::Glass => write!(f, "glass"),
            ContainerType::Box => write!(f, "box"),
        }
    }
}

/// Ground-truth labels attached to a sequence, when available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceLabels {
    pub filling_type: u8,
    pub filling_level: u8,
    pub capacity_ml: f64,
    pub mass_g: f64,
}

/// One recorded sequence: file references plus optional labels.
/// Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub sequence_id: String,
    pub container_id: u32,
    pub container_type: ContainerType,
    pub audio: PathBuf,
    /// Outer index = camera, inner = frame.
    pub masks: Vec<Vec<PathBuf>>,
    pub audio_embedding: PathBuf,
    /// One per camera.
    pub video_embeddings: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<SequenceLabels>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    /// Directory paths in records are relative to.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }
}

/// Loads a manifest (JSON array of records), checking id uniqueness and
/// that every referenced path exists.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, MediaError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| MediaError::io(path, e))?;
    let records: Vec<ManifestRecord> =
        serde_json::from_str(&text).map_err(|e| MediaError::format(path, e.to_string()))?;
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut seen = std::collections::HashSet::new();
    for rec in &records {
        if !seen.insert(rec.sequence_id.clone()) {
            return Err(MediaError::validation(
                path,
                format!("duplicate sequence_id {}", rec.sequence_id),
            ));
        }
        let mut paths: Vec<&PathBuf> = vec![&rec.audio, &rec.audio_embedding];
        paths.extend(rec.video_embeddings.iter());
        paths.extend(rec.masks.iter().flatten());
        for rel in paths {
            let p = root.join(rel);
            if !p.exists() {
                return Err(MediaError::validation(
                    path,
                    format!("referenced path {} does not exist", p.display()),
                ));
            }
        }
    }
    Ok(DatasetManifest { records, root })
}

/// Writes a manifest as a pretty-printed JSON array.
pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<(), MediaError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(records).expect("serializable");
    fs::write(path, text).map_err(|e| MediaError::io(path, e))
}

// ---------------------------------------------------------------------------
// Sequence length formulas
// ---------------------------------------------------------------------------

/// Expected embedding sequence lengths for a clip of `t_sec` seconds and
/// a video of `t_frames` frames: `(floor(t_sec / 0.96), floor(t_frames / 16))`.
pub fn expected_sequence_lengths(t_sec: f64, t_frames: f64) -> Result<(u64, u64), MediaError> {
    if !(t_sec >= 0.0) || !(t_frames >= 0.0) {
        return Err(MediaError::Domain(format!(
            "negative duration or frame count ({t_sec}, {t_frames})"
        )));
    }
    let t_vgg = (t_sec / 0.96).floor() as u64;
    let t_r21d = (t_frames / 16.0).floor() as u64;
    Ok((t_vgg, t_r21d))
}
