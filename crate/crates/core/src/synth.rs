//! Synthetic data with exact ground truth: analytic stereo cylinder
//! silhouettes, class-conditioned audio, class-conditioned embedding
//! sequences, and a full on-disk dataset generator.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use thiserror::Error;

use crate::fusion::{filling_mass, DensityTable, FillingLevel, FillingType};
use crate::media::{
    self, AudioClip, CameraCalibration, EmbeddingSequence, ManifestRecord, MaskImage,
    MediaError, SequenceLabels, AUDIO_EMBED_DIM, VIDEO_EMBED_DIM,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("generation error: {0}")]
    Generation(String),
    #[error(transparent)]
    Media(#[from] MediaError),
}

// ---------------------------------------------------------------------------
// Scene rendering
// ---------------------------------------------------------------------------

/// An upright solid cylinder observed by two cameras.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub radius: f64,
    pub height: f64,
    pub center: Vector3<f64>,
    pub cam1: CameraCalibration,
    pub cam2: CameraCalibration,
    pub image_width: usize,
    pub image_height: usize,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.radius > 0.0 && self.height > 0.0) {
            return Err(SynthError::Domain("cylinder r and h must be positive".into()));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(SynthError::Domain("image size must be positive".into()));
        }
        for (i, cam) in [&self.cam1, &self.cam2].iter().enumerate() {
            let (u, v) = crate::geometry::project_point(cam, self.center).ok_or_else(|| {
                SynthError::Generation(format!("cylinder behind camera {}", i + 1))
            })?;
            if u < 0.0 || v < 0.0 || u >= self.image_width as f64 || v >= self.image_height as f64 {
                return Err(SynthError::Domain(format!(
                    "cylinder center projects outside camera {} image ({u:.1}, {v:.1})",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

/// Does the ray `o + t d` (t > 0) hit the solid finite cylinder?
fn ray_hits_cylinder(
    origin: Vector3<f64>,
    dir: Vector3<f64>,
    center: Vector3<f64>,
    radius: f64,
    height: f64,
) -> bool {
    // interval of t inside the infinite cylinder
    let ox = origin.x - center.x;
    let oy = origin.y - center.y;
    let a = dir.x * dir.x + dir.y * dir.y;
    let (mut t_lo, mut t_hi);
    if a < 1e-18 {
        // ray parallel to the axis
        if ox * ox + oy * oy > radius * radius {
            return false;
        }
        t_lo = f64::NEG_INFINITY;
        t_hi = f64::INFINITY;
    } else {
        let b = 2.0 * (ox * dir.x + oy * dir.y);
        let c = ox * ox + oy * oy - radius * radius;
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return false;
        }
        let sq = disc.sqrt();
        t_lo = (-b - sq) / (2.0 * a);
        t_hi = (-b + sq) / (2.0 * a);
    }
    // intersect with the z slab
    let z_min = center.z - height / 2.0;
    let z_max = center.z + height / 2.0;
    if dir.z.abs() < 1e-18 {
        if origin.z < z_min || origin.z > z_max {
            return false;
        }
    } else {
        let ta = (z_min - origin.z) / dir.z;
        let tb = (z_max - origin.z) / dir.z;
        t_lo = t_lo.max(ta.min(tb));
        t_hi = t_hi.min(ta.max(tb));
    }
    t_lo <= t_hi && t_hi > 0.0
}

/// Analytic silhouettes of the scene's cylinder in both cameras: a pixel
/// is foreground iff the ray through its center hits the solid cylinder.
pub fn render_cylinder_masks(scene: &SceneSpec) -> Result<(MaskImage, MaskImage), SynthError> {
    scene.validate()?;
    let mut out = Vec::with_capacity(2);
    for cam in [&scene.cam1, &scene.cam2] {
        let origin = -(cam.rotation.transpose() * cam.translation);
        let mut fg = vec![false; scene.image_width * scene.image_height];
        for row in 0..scene.image_height {
            for col in 0..scene.image_width {
                let u = col as f64 + 0.5;
                let v = row as f64 + 0.5;
                let dir_cam =
                    Vector3::new((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
                let dir = cam.rotation.transpose() * dir_cam;
                if ray_hits_cylinder(origin, dir, scene.center, scene.radius, scene.height) {
                    fg[row * scene.image_width + col] = true;
                }
            }
        }
        out.push(MaskImage::new(scene.image_width, scene.image_height, fg)?);
    }
    let second = out.pop().unwrap();
    Ok((out.pop().unwrap(), second))
}

/// A camera at `eye` looking toward `target`, world +z kept upward in
/// the image; 640x480 intrinsics with f = 600 px.
pub fn look_at_calibration(eye: Vector3<f64>, target: Vector3<f64>) -> CameraCalibration {
    let fwd = (target - eye).normalize();
    let world_up = Vector3::new(0.0, 0.0, 1.0);
    let right = fwd.cross(&world_up).normalize();
    let down = fwd.cross(&right).normalize();
    let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
    let t = -rot * eye;
    CameraCalibration::new(600.0, 600.0, 320.0, 240.0, rot, t).expect("valid look-at pose")
}

// ---------------------------------------------------------------------------
// Audio
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct AudioSpec {
    pub class: FillingType,
    pub duration_sec: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl AudioSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.duration_sec < 0.5 {
            return Err(SynthError::Domain(format!(
                "duration {} s below the 0.5 s minimum",
                self.duration_sec
            )));
        }
        if self.sample_rate == 0 {
            return Err(SynthError::Domain("sample rate must be positive".into()));
        }
        Ok(())
    }
}

fn impulse_train(
    n: usize,
    sample_rate: f64,
    rate_hz: f64,
    decay_sec: f64,
    amplitude: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut samples = vec![0.0; n];
    let gap = Exp::new(rate_hz).expect("positive rate");
    let mut t = gap.sample(rng);
    let duration = n as f64 / sample_rate;
    let tail = (decay_sec * 8.0 * sample_rate) as usize;
    while t < duration {
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let start = (t * sample_rate) as usize;
        for i in start..(start + tail).min(n) {
            let dt = (i - start) as f64 / sample_rate;
            samples[i] += sign * amplitude * (-dt / decay_sec).exp();
        }
        t += gap.sample(rng);
    }
    samples
}

/// Class-conditioned synthetic audio. Each filling type gets a signature
/// separable by the classical feature families: near-silence (empty),
/// low-passed amplitude-modulated noise (water), and sparse decaying
/// impulses at class-specific rates (rice, pasta).
pub fn synth_audio(spec: &AudioSpec) -> Result<AudioClip, SynthError> {
    spec.validate()?;
    let rate = spec.sample_rate as f64;
    let n = (spec.duration_sec * rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut samples = match spec.class {
        FillingType::Empty => (0..n).map(|_| rng.gen_range(-1e-4..1e-4)).collect::<Vec<f64>>(),
        FillingType::Water => {
            // white noise -> one-pole low-pass at 1 kHz -> 2 Hz tremolo
            let rc = 1.0 / (2.0 * PI * 1000.0);
            let alpha = (1.0 / rate) / (rc + 1.0 / rate);
            let mut y = 0.0;
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let x: f64 = rng.gen_range(-1.0..1.0);
                y += alpha * (x - y);
                let am = 1.0 + 0.8 * (2.0 * PI * 2.0 * i as f64 / rate).sin();
                out.push(y * am);
            }
            let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
            let scale = 0.1 / rms;
            out.iter_mut().for_each(|v| *v *= scale);
            out
        }
        FillingType::Rice => impulse_train(n, rate, 200.0, 0.003, 0.5, &mut rng),
        FillingType::Pasta => impulse_train(n, rate, 30.0, 0.010, 0.8, &mut rng),
    };
    samples.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    Ok(AudioClip::new(samples, spec.sample_rate)?)
}

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

/// Namespaces keeping type-conditioned and level-conditioned class mean
/// directions independent of each other and of per-sequence seeds.
const TYPE_MEAN_NS: u64 = 0xA1CE_0000;
const LEVEL_MEAN_NS: u64 = 0xB0B5_0000;

fn seeded_direction(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    // fixed direction scaled to norm 2
    v.iter_mut().for_each(|x| *x *= 2.0 / norm);
    v
}

/// Fixed mean direction for a class index (norm 2, committed by seed).
pub fn class_mean(class: usize, dim: usize) -> Vec<f64> {
    seeded_direction(TYPE_MEAN_NS + class as u64, dim)
}

/// Fixed mean direction for a filling level (norm 2).
pub fn level_mean(level: FillingLevel, dim: usize) -> Vec<f64> {
    seeded_direction(LEVEL_MEAN_NS + level.index() as u64, dim)
}

/// Rows = `mean` + seeded Gaussian noise of the given scale.
pub fn embedding_with_mean(
    mean: &[f64],
    timesteps: usize,
    seed: u64,
    noise_scale: f64,
    camera_id: Option<u32>,
) -> Result<EmbeddingSequence, SynthError> {
    if timesteps == 0 {
        return Err(SynthError::Domain("embedding needs T >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let rows: Vec<Vec<f64>> = (0..timesteps)
        .map(|_| {
            mean.iter()
                .map(|&m| m + noise_scale * normal.sample(&mut rng))
                .collect()
        })
        .collect();
    Ok(EmbeddingSequence::new(rows, camera_id)?)
}

pub const EMBED_NOISE_SCALE: f64 = 0.5;

/// Class-conditioned embedding sequence: rows ~ N(mu_class, 0.5^2 I).
/// D picks the stream: 128 = audio embedding, 512 = video embedding.
pub fn synth_embedding_sequence(
    class: usize,
    timesteps: usize,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingSequence, SynthError> {
    let camera = if dim == VIDEO_EMBED_DIM { Some(1) } else { None };
    embedding_with_mean(&class_mean(class, dim), timesteps, seed, EMBED_NOISE_SCALE, camera)
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

pub const N_CONTAINERS: u32 = 9;

/// Deterministic cylinder geometry per container id (1-based):
/// radii 0.025..0.06 m, heights 0.08..0.17 m.
pub fn container_geometry(container_id: u32) -> (f64, f64) {
    let k = ((container_id - 1) % N_CONTAINERS) as f64;
    (0.028 + 0.0035 * k, 0.085 + 0.011 * k)
}

pub fn container_type_for(container_id: u32) -> crate::media::ContainerType {
    match (container_id - 1) % 3 {
        0 => crate::media::ContainerType::Cup,
        1 => crate::media::ContainerType::Glass,
        _ => crate::media::ContainerType::Box,
    }
}

/// The fixed stereo rig used by the generator: two cameras about 1 m
/// out, ~75 degrees apart, both looking at the table center.
pub fn default_cameras() -> (CameraCalibration, CameraCalibration) {
    let target = Vector3::new(0.0, 0.0, 0.08);
    let cam1 = look_at_calibration(Vector3::new(1.0, 0.0, 0.35), target);
    let cam2 = look_at_calibration(
        Vector3::new(1.0 * (75.0f64).to_radians().cos(), 1.0 * (75.0f64).to_radians().sin(), 0.35),
        target,
    );
    (cam1, cam2)
}

const AUDIO_DURATION_SEC: f64 = 2.0;
const AUDIO_SAMPLE_RATE: u32 = 16_000;
const VIDEO_FRAMES: u64 = 64;
const N_CAMERAS: u32 = 2;

/// The 12 (type, level) combinations: all four types at all three
/// levels, with the empty type pinned to level 0.
pub fn class_combinations() -> Vec<(FillingType, FillingLevel)> {
    let mut out = Vec::with_capacity(12);
    for t in 0..4 {
        for l in 0..3 {
            let ftype = FillingType::from_index(t).unwrap();
            let level = if ftype == FillingType::Empty {
                FillingLevel::Empty0
            } else {
                FillingLevel::from_index(l).unwrap()
            };
            out.push((ftype, level));
        }
    }
    out
}

/// Writes a complete labeled dataset under `out_dir` and returns its
/// manifest. `n_per_class` sequences are generated for each of the 12
/// type/level combinations; containers cycle round-robin. Regeneration
/// with the same seed is byte-identical.
pub fn generate_dataset(
    out_dir: impl AsRef<Path>,
    n_per_class: usize,
    seed: u64,
) -> Result<crate::media::DatasetManifest, SynthError> {
    if n_per_class == 0 {
        return Err(SynthError::Domain("n_per_class must be >= 1".into()));
    }
    let root = out_dir.as_ref();
    for sub in ["audio", "masks", "embed"] {
        std::fs::create_dir_all(root.join(sub))
            .map_err(|e| SynthError::Generation(format!("create {sub}: {e}")))?;
    }
    let (cam1, cam2) = default_cameras();
    media::write_calibration(root.join("calib1.json"), &cam1)?;
    media::write_calibration(root.join("calib2.json"), &cam2)?;

    let combos = class_combinations();
    let (t_audio, t_video) =
        media::expected_sequence_lengths(AUDIO_DURATION_SEC, VIDEO_FRAMES as f64)?;
    let mut records = Vec::with_capacity(combos.len() * n_per_class);
    let mut index: u64 = 0;
    for rep in 0..n_per_class {
        for &(ftype, level) in &combos {
            let seq_seed = seed ^ index;
            let sid = format!("seq_{index:04}");
            let container_id = (index % N_CONTAINERS as u64) as u32 + 1;
            let (r, h) = container_geometry(container_id);
            let mut jitter = ChaCha8Rng::seed_from_u64(seq_seed.wrapping_mul(0x9E37_79B9));
            let center = Vector3::new(
                jitter.gen_range(-0.03..0.03),
                jitter.gen_range(-0.03..0.03),
                h / 2.0,
            );
            let scene = SceneSpec {
                radius: r,
                height: h,
                center,
                cam1: cam1.clone(),
                cam2: cam2.clone(),
                image_width: 640,
                image_height: 480,
                seed: seq_seed,
            };
            let (m1, m2) = render_cylinder_masks(&scene)?;

            // the container is static, so the two selected frames see
            // the same silhouette
            let mut mask_paths = vec![Vec::new(), Vec::new()];
            for (cam_idx, mask) in [&m1, &m2].iter().enumerate() {
                for frame in 0..2 {
                    let rel = PathBuf::from(format!(
                        "masks/{sid}_cam{}_frame{frame}.pgm",
                        cam_idx + 1
                    ));
                    media::write_pgm_mask(root.join(&rel), mask)?;
                    mask_paths[cam_idx].push(rel);
                }
            }

            let clip = synth_audio(&AudioSpec {
                class: ftype,
                duration_sec: AUDIO_DURATION_SEC,
                sample_rate: AUDIO_SAMPLE_RATE,
                seed: seq_seed.wrapping_add(1),
            })?;
            let audio_rel = PathBuf::from(format!("audio/{sid}.wav"));
            media::write_wav(root.join(&audio_rel), &clip)?;

            // audio embedding carries both type and level information
            let mut audio_mean = class_mean(ftype.index(), AUDIO_EMBED_DIM);
            for (m, l) in audio_mean.iter_mut().zip(level_mean(level, AUDIO_EMBED_DIM)) {
                *m += l;
            }
            let audio_embed = embedding_with_mean(
                &audio_mean,
                t_audio as usize,
                seq_seed.wrapping_add(2),
                EMBED_NOISE_SCALE,
                None,
            )?;
            let audio_embed_rel = PathBuf::from(format!("embed/{sid}_audio.csv"));
            media::write_embedding_sequence(root.join(&audio_embed_rel), &audio_embed)?;

            // video embeddings carry level information only
            let video_mean = level_mean(level, VIDEO_EMBED_DIM);
            let mut video_rels = Vec::new();
            for cam in 1..=N_CAMERAS {
                let seq = embedding_with_mean(
                    &video_mean,
                    t_video as usize,
                    seq_seed.wrapping_add(2 + cam as u64),
                    EMBED_NOISE_SCALE,
                    Some(cam),
                )?;
                let rel = PathBuf::from(format!("embed/{sid}_cam{cam}.csv"));
                media::write_embedding_sequence(root.join(&rel), &seq)?;
                video_rels.push(rel);
            }

            let capacity_ml = r * r * h * PI * 1e6;
            records.push(ManifestRecord {
                sequence_id: sid,
                container_id,
                container_type: container_type_for(container_id),
                audio: audio_rel,
                masks: mask_paths,
                audio_embedding: audio_embed_rel,
                video_embeddings: video_rels,
                labels: Some(SequenceLabels {
                    filling_type: ftype.index() as u8,
                    filling_level: level.index() as u8,
                    capacity_ml,
                    mass_g: filling_mass(capacity_ml, level, ftype, &DensityTable::default()),
                }),
            });
            index += 1;
            let _ = rep;
        }
    }
    media::write_manifest(root.join("manifest.json"), &records)?;
    media::read_manifest(root.join("manifest.json")).map_err(SynthError::from)
}
