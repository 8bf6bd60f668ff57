//! Two-view container geometry: mask centroids, ray back-projection,
//! midpoint triangulation, iterative cylinder fitting against both
//! silhouettes, and capacity from the fitted rings.
//!
//! The world frame has +z up and the cylinder axis is assumed vertical.
//! All lengths are meters internally; capacity crosses the interface in
//! milliliters.

use nalgebra::Vector3;
use thiserror::Error;

use crate::media::{CameraCalibration, MaskImage};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no detection: cylinder model is empty")]
    NoDetection,
}

/// Pixel-space centroid (u along columns, v along rows).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centroid2D {
    pub u: f64,
    pub v: f64,
}

/// World-frame 3D centroid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centroid3D {
    pub x: Vector3<f64>,
}

/// A world-frame ray with unit direction.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

/// Vertical-axis cylinder described by a stack of rings.
#[derive(Debug, Clone, PartialEq)]
pub struct CylinderModel {
    pub axis_point: Vector3<f64>,
    /// Ring heights, strictly increasing with uniform spacing.
    pub ring_z: Vec<f64>,
    /// Ring radii; 0 marks an empty ring.
    pub ring_r: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityEstimate {
    pub capacity_ml: f64,
    pub used_prior: bool,
    pub r_bar: f64,
    pub h: f64,
}

/// Constants of the silhouette-fitting loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub r_max: f64,
    pub half_height: f64,
    pub ring_spacing: f64,
    pub shrink_step: f64,
    pub r_min: f64,
    pub n_angles: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            r_max: 0.15,
            half_height: 0.15,
            ring_spacing: 0.005,
            shrink_step: 0.002,
            r_min: 0.005,
            n_angles: 72,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let all_pos = self.r_max > 0.0
            && self.half_height > 0.0
            && self.ring_spacing > 0.0
            && self.shrink_step > 0.0
            && self.r_min > 0.0
            && self.n_angles > 0;
        if !all_pos {
            return Err(GeometryError::Domain("fit config fields must be positive".into()));
        }
        if self.r_min >= self.r_max {
            return Err(GeometryError::Domain("r_min must be below r_max".into()));
        }
        Ok(())
    }
}

/// Mean of foreground pixel centers; `None` for an empty mask.
/// Pixel (col, row) has center (col + 0.5, row + 0.5).
pub fn mask_centroid(mask: &MaskImage) -> Option<Centroid2D> {
    let mut su = 0.0;
    let mut sv = 0.0;
    let mut n = 0usize;
    for row in 0..mask.height() {
        for col in 0..mask.width() {
            if mask.is_foreground(col, row) {
                su += col as f64 + 0.5;
                sv += row as f64 + 0.5;
                n += 1;
            }
        }
    }
    if n == 0 {
        None
    } else {
        Some(Centroid2D {
            u: su / n as f64,
            v: sv / n as f64,
        })
    }
}

/// World-frame viewing ray through a pixel.
pub fn backproject_ray(calib: &CameraCalibration, c: Centroid2D) -> Ray {
    let dir_cam = Vector3::new((c.u - calib.cx) / calib.fx, (c.v - calib.cy) / calib.fy, 1.0);
    let direction = (calib.rotation.transpose() * dir_cam).normalize();
    let origin = -(calib.rotation.transpose() * calib.translation);
    Ray { origin, direction }
}

/// Projects a world point; `None` when it lies at or behind the camera.
pub fn project_point(calib: &CameraCalibration, p: Vector3<f64>) -> Option<(f64, f64)> {
    let cam = calib.rotation * p + calib.translation;
    if cam.z <= 0.0 {
        return None;
    }
    Some((
        calib.fx * cam.x / cam.z + calib.cx,
        calib.fy * cam.y / cam.z + calib.cy,
    ))
}

const MIN_RAY_ANGLE_DEG: f64 = 0.5;

/// Midpoint of the shortest segment between two rays (closed form).
pub fn triangulate_midpoint(r1: &Ray, r2: &Ray) -> Result<Centroid3D, GeometryError> {
    let b = r1.direction.dot(&r2.direction);
    // acute angle between the ray lines; parallel and antiparallel both degenerate
    let angle = b.abs().clamp(-1.0, 1.0).acos().to_degrees();
    if angle < MIN_RAY_ANGLE_DEG {
        return Err(GeometryError::Degenerate(format!(
            "rays are near-parallel ({angle:.4} deg apart)"
        )));
    }
    let d = r2.origin - r1.origin;
    let denom = 1.0 - b * b;
    let t1 = (d.dot(&r1.direction) - b * d.dot(&r2.direction)) / denom;
    let t2 = (b * d.dot(&r1.direction) - d.dot(&r2.direction)) / denom;
    let p1 = r1.origin + t1 * r1.direction;
    let p2 = r2.origin + t2 * r2.direction;
    Ok(Centroid3D { x: 0.5 * (p1 + p2) })
}

fn point_in_foreground(mask: &MaskImage, calib: &CameraCalibration, p: Vector3<f64>) -> bool {
    match project_point(calib, p) {
        Some((u, v)) => {
            if u < 0.0 || v < 0.0 {
                return false;
            }
            let (col, row) = (u.floor() as usize, v.floor() as usize);
            col < mask.width() && row < mask.height() && mask.is_foreground(col, row)
        }
        // behind the camera counts as outside, never an error
        None => false,
    }
}

/// Keeps the maximal contiguous non-zero run containing `center`; all
/// other rings are zeroed. A zero center ring empties the model.
pub(crate) fn trim_to_center_run(ring_r: &mut [f64], center: usize) {
    if ring_r[center] == 0.0 {
        ring_r.iter_mut().for_each(|r| *r = 0.0);
        return;
    }
    let mut lo = center;
    while lo > 0 && ring_r[lo - 1] > 0.0 {
        lo -= 1;
    }
    let mut hi = center;
    while hi + 1 < ring_r.len() && ring_r[hi + 1] > 0.0 {
        hi += 1;
    }
    for (i, r) in ring_r.iter_mut().enumerate() {
        if i < lo || i > hi {
            *r = 0.0;
        }
    }
}

/// Fits ring radii around a vertical axis through `x` by shrinking each
/// ring from `r_max` until every sampled circle point projects into the
/// foreground of both masks (or the ring bottoms out at zero).
pub fn fit_cylinder(
    masks: (&MaskImage, &MaskImage),
    calibs: (&CameraCalibration, &CameraCalibration),
    x: &Centroid3D,
    cfg: &FitConfig,
) -> Result<CylinderModel, GeometryError> {
    cfg.validate()?;
    if masks.0.foreground_count() == 0 || masks.1.foreground_count() == 0 {
        return Err(GeometryError::Domain("both masks must be non-empty".into()));
    }
    let n_rings = (2.0 * cfg.half_height / cfg.ring_spacing).round() as usize + 1;
    let center = (n_rings - 1) / 2;
    let mut ring_z = Vec::with_capacity(n_rings);
    let mut ring_r = Vec::with_capacity(n_rings);
    for j in 0..n_rings {
        let z = x.x.z - cfg.half_height + j as f64 * cfg.ring_spacing;
        ring_z.push(z);
        let mut r = cfg.r_max;
        let accepted = loop {
            let fits = (0..cfg.n_angles).all(|k| {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / cfg.n_angles as f64;
                let p = Vector3::new(x.x.x + r * theta.cos(), x.x.y + r * theta.sin(), z);
                point_in_foreground(masks.0, calibs.0, p)
                    && point_in_foreground(masks.1, calibs.1, p)
            });
            if fits {
                break r;
            }
            r -= cfg.shrink_step;
            if r < cfg.r_min {
                break 0.0;
            }
        };
        ring_r.push(accepted);
    }
    trim_to_center_run(&mut ring_r, center);
    Ok(CylinderModel {
        axis_point: x.x,
        ring_z,
        ring_r,
    })
}

/// Mean non-zero radius, stacked height, and capacity in milliliters.
pub fn capacity_from_cylinder(model: &CylinderModel) -> Result<(f64, f64, f64), GeometryError> {
    let nonzero: Vec<f64> = model.ring_r.iter().copied().filter(|&r| r > 0.0).collect();
    if nonzero.is_empty() {
        return Err(GeometryError::NoDetection);
    }
    if model.ring_z.len() < 2 {
        return Err(GeometryError::Domain("need >= 2 rings to infer spacing".into()));
    }
    let spacing = model.ring_z[1] - model.ring_z[0];
    let r_bar = nonzero.iter().sum::<f64>() / nonzero.len() as f64;
    let h = nonzero.len() as f64 * spacing;
    let capacity_ml = r_bar * r_bar * h * std::f64::consts::PI * 1e6;
    Ok((r_bar, h, capacity_ml))
}

/// First frame and the 20th-to-last frame, clamped at zero.
pub fn select_frames(t_frames: u64) -> (u64, u64) {
    (0, t_frames.saturating_sub(20))
}

/// Per-camera masks for one frame.
pub struct FrameMasks<'a> {
    pub cam1: &'a MaskImage,
    pub cam2: &'a MaskImage,
}

fn estimate_frame(
    frame: &FrameMasks<'_>,
    calibs: (&CameraCalibration, &CameraCalibration),
    cfg: &FitConfig,
) -> Option<(f64, f64, f64)> {
    let c1 = mask_centroid(frame.cam1)?;
    let c2 = mask_centroid(frame.cam2)?;
    let r1 = backproject_ray(calibs.0, c1);
    let r2 = backproject_ray(calibs.1, c2);
    let x = triangulate_midpoint(&r1, &r2).ok()?;
    let model = fit_cylinder((frame.cam1, frame.cam2), calibs, &x, cfg).ok()?;
    capacity_from_cylinder(&model).ok()
}

/// Runs the per-frame pipeline on both selected frames and averages the
/// survivors; falls back to the training prior when every frame fails.
pub fn estimate_capacity_sequence(
    frames: &[FrameMasks<'_>],
    calibs: (&CameraCalibration, &CameraCalibration),
    prior_ml: f64,
    cfg: &FitConfig,
) -> Result<CapacityEstimate, GeometryError> {
    if prior_ml <= 0.0 {
        return Err(GeometryError::Domain("prior must be positive".into()));
    }
    let results: Vec<(f64, f64, f64)> = frames
        .iter()
        .filter_map(|f| estimate_frame(f, calibs, cfg))
        .collect();
    if results.is_empty() {
        return Ok(CapacityEstimate {
            capacity_ml: prior_ml,
            used_prior: true,
            r_bar: 0.0,
            h: 0.0,
        });
    }
    let n = results.len() as f64;
    Ok(CapacityEstimate {
        capacity_ml: results.iter().map(|r| r.2).sum::<f64>() / n,
        used_prior: false,
        r_bar: results.iter().map(|r| r.0).sum::<f64>() / n,
        h: results.iter().map(|r| r.1).sum::<f64>() / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_calib() -> CameraCalibration {
        CameraCalibration::new(600.0, 600.0, 320.0, 240.0, Matrix3::identity(), Vector3::zeros())
            .unwrap()
    }

    fn mask_with(width: usize, height: usize, pixels: &[(usize, usize)]) -> MaskImage {
        let mut fg = vec![false; width * height];
        for &(col, row) in pixels {
            fg[row * width + col] = true;
        }
        MaskImage::new(width, height, fg).unwrap()
    }

    #[test]
    fn centroid_single_pixel() {
        let m = mask_with(32, 32, &[(10, 20)]);
        let c = mask_centroid(&m).unwrap();
        assert_eq!((c.u, c.v), (10.5, 20.5));
    }

    #[test]
    fn centroid_filled_block_symmetry() {
        let mut pixels = Vec::new();
        for r in 0..4 {
            for c in 0..4 {
                pixels.push((c, r));
            }
        }
        let m = mask_with(8, 8, &pixels);
        let c = mask_centroid(&m).unwrap();
        assert_eq!((c.u, c.v), (2.0, 2.0));
    }

    #[test]
    fn centroid_empty_mask_none() {
        let m = mask_with(4, 4, &[]);
        assert!(mask_centroid(&m).is_none());
    }

    #[test]
    fn backproject_principal_axis() {
        let cal = identity_calib();
        let ray = backproject_ray(&cal, Centroid2D { u: 320.0, v: 240.0 });
        assert_eq!(ray.origin, Vector3::zeros());
        assert!((ray.direction - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn backproject_forty_five_degrees() {
        let cal = identity_calib();
        let ray = backproject_ray(&cal, Centroid2D { u: 320.0 + 600.0, v: 240.0 });
        let expect = Vector3::new(1.0, 0.0, 1.0) / 2.0f64.sqrt();
        assert!((ray.direction - expect).norm() < 1e-12);
    }

    #[test]
    fn backproject_pure_translation_origin() {
        let t = Vector3::new(0.1, -0.2, 0.3);
        let cal =
            CameraCalibration::new(600.0, 600.0, 320.0, 240.0, Matrix3::identity(), t).unwrap();
        let ray = backproject_ray(&cal, Centroid2D { u: 320.0, v: 240.0 });
        assert!((ray.origin + t).norm() < 1e-12);
    }

    #[test]
    fn triangulate_intersecting_rays_exact() {
        let p = Vector3::new(0.4, -0.2, 1.3);
        let o1 = Vector3::new(0.0, 0.0, 0.0);
        let o2 = Vector3::new(1.0, 0.5, 0.0);
        let r1 = Ray { origin: o1, direction: (p - o1).normalize() };
        let r2 = Ray { origin: o2, direction: (p - o2).normalize() };
        let got = triangulate_midpoint(&r1, &r2).unwrap();
        assert!((got.x - p).norm() <= 1e-9);
    }

    #[test]
    fn triangulate_skew_rays_hand_case() {
        // line A along x at z = 0, line B along y at z = 1, both through
        // the z-axis: common perpendicular is the z-axis, midpoint z = 0.5
        let r1 = Ray { origin: Vector3::new(-2.0, 0.0, 0.0), direction: Vector3::x() };
        let r2 = Ray { origin: Vector3::new(0.0, -3.0, 1.0), direction: Vector3::y() };
        let got = triangulate_midpoint(&r1, &r2).unwrap();
        assert!((got.x - Vector3::new(0.0, 0.0, 0.5)).norm() < 1e-12);
    }

    #[test]
    fn triangulate_parallel_rays_error() {
        let r1 = Ray { origin: Vector3::zeros(), direction: Vector3::x() };
        let r2 = Ray { origin: Vector3::new(0.0, 1.0, 0.0), direction: Vector3::x() };
        assert!(matches!(triangulate_midpoint(&r1, &r2), Err(GeometryError::Degenerate(_))));
        let r3 = Ray { origin: Vector3::new(0.0, 1.0, 0.0), direction: -Vector3::x() };
        assert!(triangulate_midpoint(&r1, &r3).is_err());
    }

    /// Least-squares closest point to both lines: solve
    /// (sum_i (I - d_i d_i^T)) X = sum_i (I - d_i d_i^T) o_i.
    fn least_squares_point(rays: &[Ray]) -> Vector3<f64> {
        let mut a = Matrix3::zeros();
        let mut b = Vector3::zeros();
        for r in rays {
            let proj = Matrix3::identity() - r.direction * r.direction.transpose();
            a += proj;
            b += proj * r.origin;
        }
        a.lu().solve(&b).unwrap()
    }

    #[test]
    fn triangulate_matches_least_squares_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let r1 = Ray {
                origin: Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0),
                direction: Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.2..1.0),
                )
                .normalize(),
            };
            let r2 = Ray {
                origin: Vector3::new(rng.gen_range(1.5..2.5), rng.gen_range(-1.0..1.0), 0.0),
                direction: Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.2..1.0),
                )
                .normalize(),
            };
            if let Ok(mid) = triangulate_midpoint(&r1, &r2) {
                let oracle = least_squares_point(&[r1, r2]);
                assert!(
                    (mid.x - oracle).norm() < 1e-9,
                    "midpoint {:?} vs oracle {:?}",
                    mid.x,
                    oracle
                );
            }
        }
    }

    /// A camera at `eye` looking at `target`, +z of the world kept as
    /// close to image-up as the geometry allows.
    pub(crate) fn look_at_calib(eye: Vector3<f64>, target: Vector3<f64>) -> CameraCalibration {
        let fwd = (target - eye).normalize();
        let world_up = Vector3::new(0.0, 0.0, 1.0);
        let right = fwd.cross(&world_up).normalize();
        let down = fwd.cross(&right).normalize();
        // rows of R are the camera axes expressed in world coordinates
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
        let t = -rot * eye;
        CameraCalibration::new(600.0, 600.0, 320.0, 240.0, rot, t).unwrap()
    }

    #[test]
    fn triangulation_round_trip_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cal1 = look_at_calib(Vector3::new(1.0, 0.0, 0.15), Vector3::zeros());
        let cal2 = look_at_calib(Vector3::new(0.2, 1.0, 0.1), Vector3::zeros());
        for _ in 0..100 {
            let p = Vector3::new(
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.1..0.2),
            );
            let (u1, v1) = project_point(&cal1, p).unwrap();
            let (u2, v2) = project_point(&cal2, p).unwrap();
            let r1 = backproject_ray(&cal1, Centroid2D { u: u1, v: v1 });
            let r2 = backproject_ray(&cal2, Centroid2D { u: u2, v: v2 });
            let got = triangulate_midpoint(&r1, &r2).unwrap();
            assert!((got.x - p).norm() <= 1e-6, "err {}", (got.x - p).norm());
        }
    }

    #[test]
    fn capacity_examples() {
        let model = CylinderModel {
            axis_point: Vector3::zeros(),
            ring_z: vec![0.0, 0.005],
            ring_r: vec![0.01, 0.0],
        };
        // one ring of r = 0.01 over one 0.005 m slab... adjust to match
        // the worked example: r_bar 0.01, h 0.01 -> pi mL
        let model = CylinderModel {
            ring_z: vec![0.0, 0.005],
            ring_r: vec![0.01, 0.01],
            ..model
        };
        let (r_bar, h, cap) = capacity_from_cylinder(&model).unwrap();
        assert_eq!(r_bar, 0.01);
        assert!((h - 0.01).abs() < 1e-15);
        assert!((cap - std::f64::consts::PI).abs() < 1e-9);
    }

    #[test]
    fn capacity_mean_of_two_rings() {
        let model = CylinderModel {
            axis_point: Vector3::zeros(),
            ring_z: vec![0.0, 0.005],
            ring_r: vec![0.02, 0.04],
        };
        let (r_bar, h, _) = capacity_from_cylinder(&model).unwrap();
        assert!((r_bar - 0.03).abs() < 1e-15);
        assert!((h - 0.01).abs() < 1e-15);
    }

    #[test]
    fn capacity_empty_model_is_no_detection() {
        let model = CylinderModel {
            axis_point: Vector3::zeros(),
            ring_z: vec![0.0, 0.005, 0.01],
            ring_r: vec![0.0, 0.0, 0.0],
        };
        assert!(matches!(capacity_from_cylinder(&model), Err(GeometryError::NoDetection)));
    }

    #[test]
    fn select_frames_cases() {
        assert_eq!(select_frames(100), (0, 80));
        assert_eq!(select_frames(20), (0, 0));
        assert_eq!(select_frames(5), (0, 0));
    }

    #[test]
    fn trim_keeps_run_containing_center() {
        let mut r = vec![0.1, 0.0, 0.2, 0.3, 0.4, 0.0, 0.5];
        trim_to_center_run(&mut r, 3);
        assert_eq!(r, vec![0.0, 0.0, 0.2, 0.3, 0.4, 0.0, 0.0]);
        let mut r = vec![0.1, 0.0, 0.3];
        trim_to_center_run(&mut r, 1);
        assert_eq!(r, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn fit_all_foreground_saturates_at_r_max() {
        let w = 640;
        let h = 480;
        let full = MaskImage::new(w, h, vec![true; w * h]).unwrap();
        let cal1 = look_at_calib(Vector3::new(1.0, 0.0, 0.1), Vector3::zeros());
        let cal2 = look_at_calib(Vector3::new(0.0, 1.0, 0.1), Vector3::zeros());
        let cfg = FitConfig { n_angles: 16, ..FitConfig::default() };
        let model = fit_cylinder(
            (&full, &full),
            (&cal1, &cal2),
            &Centroid3D { x: Vector3::zeros() },
            &cfg,
        )
        .unwrap();
        assert!(model.ring_r.iter().all(|&r| r == cfg.r_max));
        assert_eq!(model.ring_r.len(), 61);
        // uniform spacing, strictly increasing
        for w in model.ring_z.windows(2) {
            assert!((w[1] - w[0] - cfg.ring_spacing).abs() < 1e-12);
        }
    }

    #[test]
    fn fit_rejects_empty_mask() {
        let w = 16;
        let full = MaskImage::new(w, w, vec![true; w * w]).unwrap();
        let empty = MaskImage::new(w, w, vec![false; w * w]).unwrap();
        let cal = identity_calib();
        let res = fit_cylinder(
            (&full, &empty),
            (&cal, &cal),
            &Centroid3D { x: Vector3::new(0.0, 0.0, 1.0) },
            &FitConfig::default(),
        );
        assert!(matches!(res, Err(GeometryError::Domain(_))));
    }

    #[test]
    fn estimate_sequence_prior_fallback_and_guard() {
        let w = 16;
        let empty = MaskImage::new(w, w, vec![false; w * w]).unwrap();
        let cal1 = look_at_calib(Vector3::new(1.0, 0.0, 0.1), Vector3::zeros());
        let cal2 = look_at_calib(Vector3::new(0.0, 1.0, 0.1), Vector3::zeros());
        let frames = [
            FrameMasks { cam1: &empty, cam2: &empty },
            FrameMasks { cam1: &empty, cam2: &empty },
        ];
        let est =
            estimate_capacity_sequence(&frames, (&cal1, &cal2), 321.5, &FitConfig::default())
                .unwrap();
        assert!(est.used_prior);
        assert_eq!(est.capacity_ml, 321.5);
        assert!(estimate_capacity_sequence(&frames, (&cal1, &cal2), 0.0, &FitConfig::default())
            .is_err());
    }
}
