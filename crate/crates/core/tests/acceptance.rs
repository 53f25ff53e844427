//! End-to-end acceptance checks. Each test prints one `AC-n PASS|FAIL` line.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use face4d_core::anim::{adain_fuse, feature_moments, normalize_faces, sparsity_reg};
use face4d_core::fitting::losses::{loss_edge, loss_laplacian, loss_offset};
use face4d_core::fitting::{load_sequence, reconstruct_sequence, save_sequence, FitConfig, SequenceData};
use face4d_core::geometry::{bbox_diagonal, mean_vertex_error, vertex_normals, Vec3};
use face4d_core::gradcheck::{run_gradcheck, DEFAULT_SEEDS, DEFAULT_TOLERANCE};
use face4d_core::io::{read_gray16_png, read_rgb8_png, write_gray16_png, write_rgb8_png};
use face4d_core::metrics::{lip_metrics, region_correlation, vertex_velocity, Axis, VertexSequence};
use face4d_core::model::{assemble_face, load_model, save_model, synth_model, ModelDims, MorphableModel};
use face4d_core::rig::{icp_point_to_plane, IcpParams, PointCloud, RigidTransform};
use face4d_core::scene::{synth_scene, Scene, SynthSceneOptions};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Written straight to stdout so the line shows up without `--nocapture`.
fn emit(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn report(id: &str, pass: bool, detail: impl AsRef<str>) {
    emit(&format!("{id} {}: {}", if pass { "PASS" } else { "FAIL" }, detail.as_ref()));
    assert!(pass, "{id} failed: {}", detail.as_ref());
}

fn small_dims(k: usize) -> ModelDims {
    ModelDims { k_id: k, k_exp: k, k_tex: k }
}

fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> (Vec3, f64) {
    let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let axis = if axis.norm() < 1e-3 { Vec3::x() } else { axis.normalize() };
    (axis, rng.random_range(0.0..=max_angle))
}

fn random_frames(rng: &mut ChaCha8Rng, t: usize, n: usize, scale: f64) -> Vec<Vec<Vec3>> {
    (0..t)
        .map(|_| {
            (0..n)
                .map(|_| Vec3::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale), rng.random_range(-scale..scale)))
                .collect()
        })
        .collect()
}

#[test]
fn ac1_gradient_suite() {
    let start = Instant::now();
    let rep = run_gradcheck(&[], DEFAULT_SEEDS, DEFAULT_TOLERANCE).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let failing: Vec<String> = rep
        .per_suite()
        .into_iter()
        .filter(|(_, _, ok)| !ok)
        .map(|(s, e, _)| format!("{s}={e:.2e}"))
        .collect();
    report(
        "AC-1",
        rep.pass && secs < 120.0,
        format!(
            "{} suite runs, worst relative error {:.2e} (tol {:.0e}), {secs:.1}s, failing: {failing:?}",
            rep.results.len(),
            rep.worst_rel_err,
            DEFAULT_TOLERANCE
        ),
    );
}

fn stage_vertices(model: &MorphableModel, stage: &face4d_core::fitting::StageReport) -> Vec<Vec3> {
    assemble_face(model, &stage.final_params, &stage.final_offsets).unwrap().vertices
}

#[test]
fn ac2_synthetic_round_trip() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let model = synth_model(1, 642, small_dims(10)).unwrap();
    let opts = SynthSceneOptions { detail: 0.01, ..Default::default() };
    let synth = synth_scene(&model, &opts, &dir.path().join("scene")).unwrap();
    let gt = &synth.ground_truth.frames;
    let result = reconstruct_sequence(&synth.scene, &model, &FitConfig::default()).unwrap();

    let rel = |pred: &[Vec3], t: usize| mean_vertex_error(pred, &gt[t]) / bbox_diagonal(&gt[t]);
    let stages: Vec<f64> = result.reports[0].stages.iter().map(|s| rel(&stage_vertices(&model, s), 0)).collect();
    let monotone = stages.len() == 3 && stages.windows(2).all(|w| w[1] <= w[0]);
    let per_frame: Vec<f64> = result.vertices.iter().enumerate().map(|(t, v)| rel(v, t)).collect();
    let worst = per_frame.iter().cloned().fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    report(
        "AC-2",
        monotone && worst <= 0.01 && per_frame.len() == 10 && secs <= 600.0,
        format!(
            "frame-0 stage errors {:?}, worst frame error {worst:.5} of diagonal (bound 0.01), {secs:.1}s",
            stages.iter().map(|e| format!("{e:.5}")).collect::<Vec<_>>()
        ),
    );
}

/// Face-sized head surface with vertex normals.
fn head_cloud() -> PointCloud {
    let model = synth_model(0, 2562, small_dims(1)).unwrap();
    let scale = 0.25;
    let pts: Vec<Vec3> = model.mean_shape.iter().map(|p| p * scale).collect();
    let normals = vertex_normals(&model.topology, &pts);
    PointCloud { points: pts, normals }
}

#[test]
fn ac3_icp_exactness() {
    let source = head_cloud();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = IcpParams::default();
    let mut failures = Vec::new();
    let (mut worst_rot, mut worst_trans, mut max_iters) = (0.0f64, 0.0f64, 0);
    for seed in 0..100 {
        let (axis, angle) = random_rotation(&mut rng, 15f64.to_radians());
        let dir = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let t = if dir.norm() < 1e-3 { Vec3::zeros() } else { dir.normalize() * rng.random_range(0.0..=0.05) };
        let truth = RigidTransform::from_axis_angle(axis, angle, t);
        let target = source.transformed(&truth);
        match icp_point_to_plane(&source, &target, &RigidTransform::identity(), &params) {
            Ok(res) => {
                let rot = res.transform.rotation_angle_to(&truth);
                let trans = (res.transform.translation - truth.translation).norm();
                worst_rot = worst_rot.max(rot);
                worst_trans = worst_trans.max(trans);
                max_iters = max_iters.max(res.iterations);
                if rot > 1e-4 || trans > 1e-4 || res.iterations > 50 {
                    failures.push(seed);
                }
            }
            Err(_) => failures.push(seed),
        }
    }
    report(
        "AC-3",
        failures.is_empty(),
        format!(
            "{}/100 recovered, worst {worst_rot:.2e} rad / {worst_trans:.2e} m, max {max_iters} iterations, failing seeds {failures:?}",
            100 - failures.len()
        ),
    );
}

#[test]
fn ac4_regularizer_identities() {
    let model = synth_model(4, 642, small_dims(2)).unwrap();
    let topo = &model.topology;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let reference = model.mean_shape.clone();
    let verts: Vec<Vec3> = reference.iter().map(|p| p + Vec3::new(rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01), 0.0)).collect();

    let mut edge_dev = 0.0f64;
    let mut lap_dev = 0.0f64;
    let (base_edge, _) = loss_edge(&verts, &reference, topo).unwrap();
    let offsets: Vec<Vec3> = random_frames(&mut rng, 1, verts.len(), 0.01).remove(0);
    let (base_lap, _) = loss_laplacian(&offsets, topo).unwrap();
    for _ in 0..20 {
        let (axis, angle) = random_rotation(&mut rng, std::f64::consts::PI);
        let shift = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let rigid = RigidTransform::from_axis_angle(axis, angle, shift);
        let moved: Vec<Vec3> = verts.iter().map(|p| rigid.apply(p)).collect();
        edge_dev = edge_dev.max((loss_edge(&moved, &reference, topo).unwrap().0 - base_edge).abs());
        let shifted: Vec<Vec3> = offsets.iter().map(|r| r + shift).collect();
        lap_dev = lap_dev.max((loss_laplacian(&shifted, topo).unwrap().0 - base_lap).abs());
    }

    let zero = vec![Vec3::zeros(); verts.len()];
    let mut offset_ok = loss_offset(&zero).0 == 0.0;
    for _ in 0..100 {
        let mut r = zero.clone();
        let v = rng.random_range(0..r.len());
        r[v][rng.random_range(0..3)] = rng.random_range(1e-6..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        offset_ok &= loss_offset(&r).0 > 0.0;
    }

    let reg = |rows: &[f64]| sparsity_reg(&DMatrix::from_row_slice(2, 2, rows)).unwrap().0;
    let sparse = [reg(&[1.0, 0.0, 0.0, 1.0]), reg(&[0.3, -0.7, 0.3, -0.7]), reg(&[1.0, 0.0, 1.0, 1.0])];
    let expected = [0.0, 2.0, 2f64.sqrt()];
    let sparse_dev = sparse.iter().zip(expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    report(
        "AC-4",
        edge_dev <= 1e-10 && lap_dev <= 1e-12 && offset_ok && sparse_dev <= 1e-9,
        format!(
            "edge rigid dev {edge_dev:.1e}, laplacian shift dev {lap_dev:.1e}, offset zero-iff {offset_ok}, sparsity {sparse:?}"
        ),
    );
}

#[test]
fn ac5_adain_and_normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut adain_dev = 0.0f64;
    for _ in 0..20 {
        let z = DMatrix::from_fn(12, 6, |_, c| rng.random_range(-2.0..2.0) * (c + 1) as f64 + c as f64);
        let out = adain_fuse(&z, &feature_moments(&z)).unwrap();
        adain_dev = adain_dev.max((out - &z).abs().max());
    }

    let mut mean_dev = 0.0f64;
    let mut idem_dev = 0.0f64;
    for _ in 0..20 {
        let seq = random_frames(&mut rng, 5, 50, 1.0);
        let once = normalize_faces(&seq).unwrap();
        let twice = normalize_faces(&once).unwrap();
        for v in 0..50 {
            let m: Vec3 = once.iter().map(|f| f[v]).sum::<Vec3>() / once.len() as f64;
            mean_dev = mean_dev.max(m.abs().max());
        }
        for (a, b) in once.iter().zip(&twice) {
            for (p, q) in a.iter().zip(b) {
                idem_dev = idem_dev.max((p - q).abs().max());
            }
        }
    }
    report(
        "AC-5",
        adain_dev <= 1e-10 && mean_dev <= 1e-12 && idem_dev <= 1e-12,
        format!("identity modulation dev {adain_dev:.1e}, temporal mean {mean_dev:.1e}, idempotence dev {idem_dev:.1e}"),
    );
}

fn regions(n: usize) -> BTreeMap<String, Vec<usize>> {
    BTreeMap::from([
        ("lip".to_string(), (0..n / 4).collect()),
        ("upper".to_string(), (n / 4..n / 2).collect()),
        ("face".to_string(), (0..n).collect()),
    ])
}

#[test]
fn ac6_metric_semantics() {
    let n = 40;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let frames = random_frames(&mut rng, 4, n, 0.1);
    let gt = VertexSequence::new(frames.clone(), 30.0, regions(n)).unwrap();
    let same = lip_metrics(&gt, &gt).unwrap();
    let zeros = [same.l_max_lip, same.l_mean_lip, same.l_max_upper, same.l_max_face] == [0.0; 4];

    let mut moved = frames.clone();
    moved[2][3].y += 0.002;
    let one = lip_metrics(&VertexSequence::new(moved, 30.0, regions(n)).unwrap(), &gt).unwrap();
    let single_dev = (one.l_max_lip - 5e-4).abs();

    let mut ordered = true;
    for _ in 0..100 {
        let t = rng.random_range(1..6);
        let a = VertexSequence::new(random_frames(&mut rng, t, n, 0.1), 30.0, regions(n)).unwrap();
        let b = VertexSequence::new(random_frames(&mut rng, t, n, 0.1), 30.0, regions(n)).unwrap();
        let m = lip_metrics(&a, &b).unwrap();
        ordered &= m.l_mean_lip <= m.l_max_lip;
    }
    report(
        "AC-6",
        zeros && single_dev <= 1e-15 && ordered,
        format!("identical -> zeros {zeros}, single displacement l_max_lip {:.6e}, mean<=max on 100 pairs {ordered}", one.l_max_lip),
    );
}

#[test]
fn ac7_statistics() {
    let n = 30;
    let vel = Vec3::new(0.01, -0.02, 0.005);
    let base = random_frames(&mut ChaCha8Rng::seed_from_u64(7), 1, n, 0.1).remove(0);
    let frames: Vec<Vec<Vec3>> = (0..12).map(|t| base.iter().map(|p| p + vel * t as f64).collect()).collect();
    let seq = VertexSequence::new(frames, 30.0, regions(n)).unwrap();
    let got = [Axis::X, Axis::Y, Axis::Z, Axis::All].map(|a| vertex_velocity(&seq, "lip", a).unwrap());
    let want = [0.01, 0.02, 0.005, 0.035 / 3.0];
    let vel_dev = got.iter().zip(want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);

    // Three one-vertex regions whose displacement magnitudes have pairwise
    // correlations 0.9, 0.3 and 0.6: independent zero-mean signals mixed by a
    // Cholesky factor, each frame mirrored so the mean position is the rest
    // position.
    let target = nalgebra::Matrix3::new(1.0, 0.9, 0.3, 0.9, 1.0, 0.6, 0.3, 0.6, 1.0);
    let l = target.cholesky().unwrap().l();
    let half = 24;
    let w = 2.0 * std::f64::consts::PI / half as f64;
    let basis: Vec<Vec3> = (0..half)
        .map(|t| {
            let x = w * t as f64;
            Vec3::new(x.sin(), x.cos(), (2.0 * x).sin()) * 2f64.sqrt()
        })
        .collect();
    let rest = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
    let mut frames = Vec::new();
    for sign in [1.0, -1.0] {
        for b in &basis {
            let mixed = l * b;
            frames.push((0..3).map(|r| rest[r] + Vec3::z() * sign * (1.0 + 0.1 * mixed[r])).collect::<Vec<_>>());
        }
    }
    let names = ["a", "b", "c"].map(String::from);
    let region_map: BTreeMap<String, Vec<usize>> = names.iter().cloned().zip([vec![0], vec![1], vec![2]]).collect();
    let graph = region_correlation(&VertexSequence::new(frames, 30.0, region_map).unwrap(), &names, 0.5).unwrap();
    let mut edges: Vec<(String, String, f64)> = graph.edges.iter().map(|e| (e.a.clone(), e.b.clone(), e.weight)).collect();
    edges.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.cmp(&y.1)));
    let edges_ok = edges.len() == 2
        && edges[0].0 == "a" && edges[0].1 == "b" && (edges[0].2 - 0.9).abs() <= 1e-9
        && edges[1].0 == "b" && edges[1].1 == "c" && (edges[1].2 - 0.6).abs() <= 1e-9;
    report(
        "AC-7",
        vel_dev <= 1e-9 && edges_ok,
        format!("velocity dev {vel_dev:.1e}, retained edges {edges:?}"),
    );
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn ac8_determinism_and_formats() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let model = synth_model(8, 300, small_dims(6)).unwrap();
    save_model(&model, &d.join("m1")).unwrap();
    save_model(&load_model(&d.join("m1")).unwrap(), &d.join("m2")).unwrap();
    let model_ok = tree(&d.join("m1")) == tree(&d.join("m2"));

    let opts = SynthSceneOptions { frames: 3, image_size: 48, ..Default::default() };
    let synth = synth_scene(&model, &opts, &d.join("s")).unwrap();
    let mut scene = Scene::load(&d.join("s")).unwrap();
    let scene_json = std::fs::read(d.join("s/scene.json")).unwrap();
    scene.dir = d.join("s_copy");
    std::fs::create_dir_all(&scene.dir).unwrap();
    scene.save_manifest().unwrap();
    let mut scene_ok = std::fs::read(scene.dir.join("scene.json")).unwrap() == scene_json;
    for (name, bytes) in tree(&d.join("s")) {
        let src = d.join("s").join(&name);
        let copy = d.join("png_copy.png");
        if name.contains("color_") {
            let (w, h, px) = read_rgb8_png(&src).unwrap();
            write_rgb8_png(&copy, w, h, px).unwrap();
        } else if name.contains("depth_") {
            let (w, h, px) = read_gray16_png(&src).unwrap();
            write_gray16_png(&copy, w, h, px).unwrap();
        } else {
            continue;
        }
        scene_ok &= std::fs::read(&copy).unwrap() == bytes;
    }

    let gt_dir = d.join("gt_copy");
    save_sequence(&gt_dir, &load_sequence(&d.join("s/gt")).unwrap(), None).unwrap();
    let mut gt_src = tree(&d.join("s/gt"));
    gt_src.retain(|k, _| k.starts_with("seq."));
    let seq_ok = gt_src == tree(&gt_dir);

    let mut config = FitConfig::default();
    config.iters_landmark = 20;
    config.iters_stage2 = 40;
    config.iters_stage3 = 40;
    config.iters_seq = 20;
    let mut runs = Vec::new();
    for k in 0..2 {
        let res = reconstruct_sequence(&synth.scene, &model, &config).unwrap();
        let out = d.join(format!("run{k}"));
        let data = SequenceData { fps: res.fps, frames: res.vertices, params: res.params };
        save_sequence(&out, &data, Some(&model.topology)).unwrap();
        runs.push(tree(&out));
    }
    let pipeline_ok = runs[0] == runs[1] && runs[0].contains_key("seq.bin");
    report(
        "AC-8",
        model_ok && scene_ok && seq_ok && pipeline_ok,
        format!("model round trip {model_ok}, scene round trip {scene_ok}, sequence round trip {seq_ok}, repeated pipeline identical {pipeline_ok}"),
    );
}

#[test]
fn ac9_dataset_numbers_not_reproducible() {
    // Published table values need the captured dataset and trained models.
    let published = [("l_max_lip", 0.00152), ("l_mean_lip", 0.00054), ("l_max_upper", 0.00236), ("l_max_face", 0.00268), ("v(lip)", 0.0025)];
    emit(&format!(
        "AC-9 NOT REPRODUCIBLE: published values {published:?} require the original 4D capture dataset and trained animation models; metric and statistics code paths are covered by AC-6 and AC-7"
    ));
}
