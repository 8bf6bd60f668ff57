//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line. Run with `cargo test --test acceptance`.

use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fillmass::forest::{train_tree, TreeNode};
use fillmass::fusion::{filling_mass, mass_score, DensityTable, FillingLevel, FillingType};
use fillmass::geometry::{
    backproject_ray, capacity_from_cylinder, estimate_capacity_sequence, project_point,
    triangulate_midpoint, Centroid2D, CylinderModel, FitConfig, FrameMasks,
};
use fillmass::gru::{classify, loss_and_grads, ClassifierHead, GruStack};
use fillmass::media::DatasetManifest;
use fillmass::pipeline::{
    make_cv_splits, run_pipeline, ModelKind, ObjectRef, PipelineConfig, PipelineOutput,
};
use fillmass::synth::{generate_dataset, look_at_calibration, render_cylinder_masks, SceneSpec};

fn verdict(n: u32, name: &str, ok: bool) {
    println!("acceptance {n:02} {name}: {}", if ok { "PASS" } else { "FAIL" });
}

// ---------------------------------------------------------------------------
// 1. GRU gradient check
// ---------------------------------------------------------------------------

/// Every parameter tensor of the model, flattened in a fixed order.
fn tensor_lens(stack: &GruStack, head: &ClassifierHead) -> Vec<usize> {
    let mut out = Vec::new();
    for l in &stack.layers {
        out.extend([
            l.w_z.data.len(),
            l.w_r.data.len(),
            l.w_h.data.len(),
            l.u_z.data.len(),
            l.u_r.data.len(),
            l.u_h.data.len(),
            l.b_z.len(),
            l.b_r.len(),
            l.b_h.len(),
        ]);
    }
    out.push(head.w.data.len());
    out.push(head.b.len());
    out
}

fn with_entry<R>(
    stack: &mut GruStack,
    head: &mut ClassifierHead,
    tensor: usize,
    i: usize,
    f: impl FnOnce(&mut f64) -> R,
) -> R {
    let per_layer = 9;
    let n_layers = stack.layers.len();
    if tensor < per_layer * n_layers {
        let l = &mut stack.layers[tensor / per_layer];
        let slot: &mut Vec<f64> = match tensor % per_layer {
            0 => &mut l.w_z.data,
            1 => &mut l.w_r.data,
            2 => &mut l.w_h.data,
            3 => &mut l.u_z.data,
            4 => &mut l.u_r.data,
            5 => &mut l.u_h.data,
            6 => &mut l.b_z,
            7 => &mut l.b_r,
            _ => &mut l.b_h,
        };
        f(&mut slot[i])
    } else if tensor == per_layer * n_layers {
        f(&mut head.w.data[i])
    } else {
        f(&mut head.b[i])
    }
}

#[test]
fn criterion_01_gru_gradient_check() {
    let start = Instant::now();
    let (d, h, l, c, t) = (3, 4, 2, 3, 5);
    let mut stack = GruStack::init(d, h, l, 101);
    let mut head = ClassifierHead::init(c, h, 102);
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    // nonzero biases so all gradient paths are exercised
    for ti in 0..tensor_lens(&stack, &head).len() {
        let len = tensor_lens(&stack, &head)[ti];
        for i in 0..len {
            with_entry(&mut stack, &mut head, ti, i, |v| {
                if *v == 0.0 {
                    *v = rng.gen_range(-0.2..0.2);
                }
            });
        }
    }
    let xs: Vec<f64> = (0..d * t).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let label = 2;
    let (_, g_stack, g_head) = loss_and_grads(&stack, &head, &xs, d, t, label).unwrap();

    let step = 1e-5;
    let mut max_rel = 0.0f64;
    for (ti, &len) in tensor_lens(&stack, &head).clone().iter().enumerate() {
        for i in 0..len {
            let orig = with_entry(&mut stack, &mut head, ti, i, |v| *v);
            with_entry(&mut stack, &mut head, ti, i, |v| *v = orig + step);
            let (lp, _, _) = loss_and_grads(&stack, &head, &xs, d, t, label).unwrap();
            with_entry(&mut stack, &mut head, ti, i, |v| *v = orig - step);
            let (lm, _, _) = loss_and_grads(&stack, &head, &xs, d, t, label).unwrap();
            with_entry(&mut stack, &mut head, ti, i, |v| *v = orig);
            let numeric = (lp - lm) / (2.0 * step);
            let analytic = with_entry_grad(&g_stack, &g_head, ti, i);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max((analytic - numeric).abs() / denom);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let ok = max_rel <= 1e-4 && elapsed < 10.0;
    verdict(1, "gru gradient check", ok);
    assert!(ok, "max relative error {max_rel:.3e}, elapsed {elapsed:.2} s");
}

fn with_entry_grad(stack: &GruStack, head: &ClassifierHead, tensor: usize, i: usize) -> f64 {
    let per_layer = 9;
    let n_layers = stack.layers.len();
    if tensor < per_layer * n_layers {
        let l = &stack.layers[tensor / per_layer];
        match tensor % per_layer {
            0 => l.w_z.data[i],
            1 => l.w_r.data[i],
            2 => l.w_h.data[i],
            3 => l.u_z.data[i],
            4 => l.u_r.data[i],
            5 => l.u_h.data[i],
            6 => l.b_z[i],
            7 => l.b_r[i],
            _ => l.b_h[i],
        }
    } else if tensor == per_layer * n_layers {
        head.w.data[i]
    } else {
        head.b[i]
    }
}

// ---------------------------------------------------------------------------
// 2. Padding invariance
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_padding_invariance() {
    let d = 5;
    let stack = GruStack::init(d, 6, 2, 201);
    let head = ClassifierHead::init(3, 6, 202);
    let mut rng = ChaCha8Rng::seed_from_u64(203);
    let mut ok = true;
    for _ in 0..1000 {
        let len = rng.gen_range(1..12usize);
        let xs: Vec<f64> = (0..d * len).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let base = classify(&stack, &head, &xs, d, len, len).unwrap();
        let pad = rng.gen_range(0..9usize);
        let mut padded = xs.clone();
        padded.extend((0..d * pad).map(|_| rng.gen_range(-1e6..1e6)));
        let got = classify(&stack, &head, &padded, d, len + pad, len).unwrap();
        if base != got {
            ok = false;
            break;
        }
    }
    verdict(2, "padding invariance", ok);
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 3. Eq. 1 exactness
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_capacity_equation_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(301);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(2..80usize);
        let spacing = rng.gen_range(0.001..0.02);
        let z0 = rng.gen_range(-0.5..0.5);
        let ring_z: Vec<f64> = (0..n).map(|j| z0 + j as f64 * spacing).collect();
        let ring_r: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.005..0.2) })
            .collect();
        if ring_r.iter().all(|&r| r == 0.0) {
            continue;
        }
        let model = CylinderModel { axis_point: Vector3::zeros(), ring_z, ring_r };
        let (r_bar, h, cap) = capacity_from_cylinder(&model).unwrap();
        let expect = r_bar * r_bar * h * std::f64::consts::PI * 1e6;
        worst = worst.max((cap - expect).abs() / expect);
    }
    let ok = worst <= 1e-9;
    verdict(3, "capacity equation exactness", ok);
    assert!(ok, "worst relative deviation {worst:.3e}");
}

// ---------------------------------------------------------------------------
// 4. Geometry oracle loop
// ---------------------------------------------------------------------------

fn random_rig(rng: &mut ChaCha8Rng) -> (fillmass::media::CameraCalibration, fillmass::media::CameraCalibration) {
    let target = Vector3::new(0.0, 0.0, 0.08);
    let base = rng.gen_range(0.0..std::f64::consts::TAU);
    let sep = rng.gen_range(60.0..90.0f64).to_radians();
    let dist = rng.gen_range(0.9..1.1);
    let mut eye = |a: f64| Vector3::new(dist * a.cos(), dist * a.sin(), rng.gen_range(0.3..0.4));
    (look_at_calibration(eye(base), target), look_at_calibration(eye(base + sep), target))
}

#[test]
fn criterion_04_geometry_oracle_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(401);
    let mut within = 0usize;
    let mut times = Vec::with_capacity(50);
    for _ in 0..50 {
        let r = rng.gen_range(0.02..0.06);
        let h = rng.gen_range(0.06..0.20);
        let (cam1, cam2) = random_rig(&mut rng);
        let scene = SceneSpec {
            radius: r,
            height: h,
            center: Vector3::new(0.0, 0.0, h / 2.0),
            cam1,
            cam2,
            image_width: 640,
            image_height: 480,
            seed: 0,
        };
        let (m1, m2) = render_cylinder_masks(&scene).unwrap();
        let start = Instant::now();
        let frames = [FrameMasks { cam1: &m1, cam2: &m2 }];
        let est = estimate_capacity_sequence(
            &frames,
            (&scene.cam1, &scene.cam2),
            500.0,
            &FitConfig::default(),
        )
        .unwrap();
        times.push(start.elapsed().as_secs_f64());
        let truth = r * r * h * std::f64::consts::PI * 1e6;
        if !est.used_prior && (est.capacity_ml - truth).abs() / truth <= 0.15 {
            within += 1;
        }
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = times[times.len() / 2];
    let ok = within >= 45 && median < 2.0;
    verdict(4, "geometry oracle sweep", ok);
    assert!(ok, "{within}/50 within 15%, median {median:.3} s/scene");
}

// ---------------------------------------------------------------------------
// 5. Triangulation round trip
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_triangulation_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(501);
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    while checked < 1000 {
        let (cam1, cam2) = random_rig(&mut rng);
        let p = Vector3::new(
            rng.gen_range(-0.15..0.15),
            rng.gen_range(-0.15..0.15),
            rng.gen_range(0.0..0.25),
        );
        let (Some((u1, v1)), Some((u2, v2))) =
            (project_point(&cam1, p), project_point(&cam2, p))
        else {
            continue;
        };
        let r1 = backproject_ray(&cam1, Centroid2D { u: u1, v: v1 });
        let r2 = backproject_ray(&cam2, Centroid2D { u: u2, v: v2 });
        // near-parallel pairs are rejected by contract
        let Ok(got) = triangulate_midpoint(&r1, &r2) else { continue };
        worst = worst.max((got.x - p).norm());
        checked += 1;
    }
    let ok = worst <= 1e-6;
    verdict(5, "triangulation round trip", ok);
    assert!(ok, "worst error {worst:.3e} m");
}

// ---------------------------------------------------------------------------
// 6. Forest split vs exhaustive Gini oracle
// ---------------------------------------------------------------------------

/// Committed single-feature fixtures (value, label), each at most 8 points.
const SPLIT_FIXTURES: &[&[(f64, usize)]] = &[
    &[(0.0, 0), (1.0, 1)],
    &[(0.0, 0), (1.0, 0), (2.0, 1), (3.0, 1)],
    &[(0.0, 0), (1.0, 1), (2.0, 0), (3.0, 1)],
    &[(0.0, 1), (0.5, 1), (1.0, 0), (1.5, 0), (2.0, 1)],
    &[(1.0, 0), (1.0, 0), (2.0, 1), (2.0, 1)],          // duplicate values
    &[(1.0, 0), (1.0, 1), (2.0, 0), (2.0, 1)],          // no informative split
    &[(0.0, 0), (0.0, 0), (0.0, 1)],                    // constant feature
    &[(0.0, 0), (1.0, 0), (2.0, 0)],                    // pure node
    &[(-3.0, 2), (-1.0, 0), (0.0, 1), (2.0, 2), (4.0, 1), (5.0, 0), (6.0, 2), (7.0, 2)],
    &[(0.0, 0), (0.1, 1), (0.2, 2), (0.3, 0), (0.4, 1), (0.5, 2)],
    &[(10.0, 1), (20.0, 1), (30.0, 1), (40.0, 0), (50.0, 0), (60.0, 0), (70.0, 1), (80.0, 0)],
    &[(0.0, 0), (2.0, 1), (2.0, 1), (4.0, 0), (4.0, 0), (6.0, 1)],
];

fn gini_of(counts: &[u32]) -> f64 {
    let total: u32 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

/// Exhaustive search over midpoint thresholds; lowest threshold wins
/// Gini ties and the split must strictly beat the parent impurity.
fn oracle_split(points: &[(f64, usize)], n_classes: usize) -> Option<f64> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut total = vec![0u32; n_classes];
    for &(_, l) in &sorted {
        total[l] += 1;
    }
    let parent = gini_of(&total);
    let n = sorted.len() as f64;
    let mut best: Option<(f64, f64)> = None;
    let mut left = vec![0u32; n_classes];
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == v {
            left[sorted[i].1] += 1;
            i += 1;
        }
        if i == sorted.len() {
            break;
        }
        let threshold = (v + sorted[i].0) / 2.0;
        let right: Vec<u32> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
        let ln: u32 = left.iter().sum();
        let rn: u32 = right.iter().sum();
        let w = (ln as f64 * gini_of(&left) + rn as f64 * gini_of(&right)) / n;
        if best.map_or(true, |(_, bw)| w < bw - 1e-15) {
            best = Some((threshold, w));
        }
    }
    best.and_then(|(t, w)| if w < parent - 1e-15 { Some(t) } else { None })
}

#[test]
fn criterion_06_forest_split_oracle() {
    let mut ok = true;
    for (fi, fixture) in SPLIT_FIXTURES.iter().enumerate() {
        let n_classes = fixture.iter().map(|&(_, l)| l).max().unwrap() + 1;
        let x: Vec<Vec<f64>> = fixture.iter().map(|&(v, _)| vec![v]).collect();
        let y: Vec<usize> = fixture.iter().map(|&(_, l)| l).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(600 + fi as u64);
        let tree = train_tree(&x, &y, n_classes, 1, 1, 2, &mut rng).unwrap();
        let learned = match &tree.nodes[0] {
            TreeNode::Internal { threshold, .. } => Some(*threshold),
            TreeNode::Leaf { .. } => None,
        };
        let expect = oracle_split(fixture, n_classes);
        if learned != expect {
            eprintln!("fixture {fi}: learned {learned:?} vs oracle {expect:?}");
            ok = false;
        }
    }
    verdict(6, "forest split oracle equivalence", ok);
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 7/8/11. Shared synthetic end-to-end run
// ---------------------------------------------------------------------------

struct BigRun {
    manifest: DatasetManifest,
    fused: PipelineOutput,
    fused_config: PipelineConfig,
    // (label, type F1 or NaN, level F1 or NaN)
    singles: Vec<(&'static str, f64, f64)>,
    elapsed_sec: f64,
    _dir: tempfile::TempDir,
}

fn big_run() -> &'static BigRun {
    static RUN: OnceLock<BigRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_dataset(dir.path(), 50, 11).unwrap();
        let fused_config = PipelineConfig::desk_scale(0);
        let fused = run_pipeline(&manifest, &fused_config).unwrap();
        let elapsed_sec = start.elapsed().as_secs_f64();

        let single = |type_models: Vec<ModelKind>, level_models: Vec<ModelKind>| {
            let config = PipelineConfig { type_models, level_models, ..fused_config.clone() };
            let out = run_pipeline(&manifest, &config).unwrap();
            let report = out.report.unwrap();
            (report.type_weighted_f1, report.level_weighted_f1)
        };
        let (forest_type, forest_level) =
            single(vec![ModelKind::Forest], vec![ModelKind::Forest]);
        let (gru_type, gru_level) =
            single(vec![ModelKind::AudioGru], vec![ModelKind::AudioGru]);
        let (_, video_level) = single(vec![ModelKind::Forest], vec![ModelKind::VideoGru]);
        let singles = vec![
            ("forest", forest_type, forest_level),
            ("audio-gru", gru_type, gru_level),
            ("video-gru", f64::NAN, video_level),
        ];
        BigRun { manifest, fused, fused_config, singles, elapsed_sec, _dir: dir }
    })
}

#[test]
fn criterion_07_end_to_end_classification() {
    let run = big_run();
    let report = run.fused.report.as_ref().unwrap();
    let ok = report.type_weighted_f1 >= 0.90
        && report.level_weighted_f1 >= 0.75
        && run.elapsed_sec < 15.0 * 60.0;
    verdict(7, "synthetic end-to-end classification", ok);
    assert!(
        ok,
        "type F1 {:.3}, level F1 {:.3}, elapsed {:.1} s",
        report.type_weighted_f1, report.level_weighted_f1, run.elapsed_sec
    );
}

#[test]
fn criterion_08_fusion_improves_or_matches() {
    let run = big_run();
    let report = run.fused.report.as_ref().unwrap();
    let best_type = run
        .singles
        .iter()
        .map(|s| s.1)
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let best_level = run.singles.iter().map(|s| s.2).fold(f64::NEG_INFINITY, f64::max);
    let ok = report.type_weighted_f1 >= best_type - 0.02
        && report.level_weighted_f1 >= best_level - 0.02;
    verdict(8, "fusion improves or matches", ok);
    assert!(
        ok,
        "fused ({:.3}, {:.3}) vs best single ({best_type:.3}, {best_level:.3}); singles {:?}",
        report.type_weighted_f1, report.level_weighted_f1, run.singles
    );
}

// ---------------------------------------------------------------------------
// 9. Mass composition and occlusion direction
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_mass_composition_and_occlusion() {
    // oracle inputs: mass recomposed from true capacity/level/type must
    // score exactly 1.0 on every labeled sequence
    let run = big_run();
    let densities = DensityTable::default();
    let mut exact = true;
    for rec in &run.manifest.records {
        let l = rec.labels.as_ref().unwrap();
        let level = FillingLevel::from_index(l.filling_level as usize).unwrap();
        let ftype = FillingType::from_index(l.filling_type as usize).unwrap();
        let mass = filling_mass(l.capacity_ml, level, ftype, &densities);
        if mass != l.mass_g || mass_score(mass, l.mass_g) != 1.0 {
            exact = false;
        }
    }

    // occluding a rectangle in one view forces the silhouette fit to
    // shrink, under-estimating capacity
    let (cam1, cam2) = fillmass::synth::default_cameras();
    let (r, h) = (0.05, 0.15);
    let scene = SceneSpec {
        radius: r,
        height: h,
        center: Vector3::new(0.0, 0.0, h / 2.0),
        cam1,
        cam2,
        image_width: 640,
        image_height: 480,
        seed: 0,
    };
    let (mut m1, m2) = render_cylinder_masks(&scene).unwrap();
    // blank a vertical band through the middle of camera 1's silhouette
    let (u, _) = project_point(&scene.cam1, scene.center).unwrap();
    let mid = u as usize;
    for row in 0..m1.height() {
        for col in mid.saturating_sub(12)..(mid + 12).min(m1.width()) {
            m1.set(col, row, false);
        }
    }
    let frames = [FrameMasks { cam1: &m1, cam2: &m2 }];
    let est = estimate_capacity_sequence(
        &frames,
        (&scene.cam1, &scene.cam2),
        500.0,
        &FitConfig::default(),
    )
    .unwrap();
    let truth = r * r * h * std::f64::consts::PI * 1e6;
    let under = est.capacity_ml < truth;
    let ok = exact && under;
    verdict(9, "mass composition + occlusion direction", ok);
    assert!(ok, "exact mass: {exact}; occluded {:.1} mL vs truth {truth:.1} mL", est.capacity_ml);
}

// ---------------------------------------------------------------------------
// 10. CV split properties
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_cv_split_properties() {
    let types = [
        fillmass::media::ContainerType::Cup,
        fillmass::media::ContainerType::Glass,
        fillmass::media::ContainerType::Box,
    ];
    let objects: Vec<ObjectRef> = (0..9u32)
        .map(|i| ObjectRef { id: 100 + i, container_type: types[(i % 3) as usize] })
        .collect();
    let mut ok = true;
    for seed in 0..100u64 {
        let split = make_cv_splits(&objects, 3, seed).unwrap();
        if split.folds.len() != 3 {
            ok = false;
        }
        let mut validated: Vec<u32> = Vec::new();
        for fold in &split.folds {
            if fold.train_object_ids.len() != 6 || fold.val_object_ids.len() != 3 {
                ok = false;
            }
            validated.extend(&fold.val_object_ids);
        }
        validated.sort_unstable();
        if validated != (100..109).collect::<Vec<u32>>() {
            ok = false;
        }
    }
    verdict(10, "cv split properties", ok);
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 11. Determinism
// ---------------------------------------------------------------------------

#[test]
fn criterion_11_deterministic_submissions() {
    let run = big_run();
    let rerun = run_pipeline(&run.manifest, &run.fused_config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    fillmass::fusion::write_submission(&p1, &run.fused.rows).unwrap();
    fillmass::fusion::write_submission(&p2, &rerun.rows).unwrap();
    let ok = std::fs::read(&p1).unwrap() == std::fs::read(&p2).unwrap();
    verdict(11, "deterministic submissions", ok);
    assert!(ok);
}
