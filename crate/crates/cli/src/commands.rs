use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use face4d_core::fitting::{reconstruct_sequence, save_sequence, load_sequence, FitConfig, SequenceData, FrameReport};
use face4d_core::geometry::{bbox_diagonal, mean_vertex_error};
use face4d_core::gradcheck::run_gradcheck;
use face4d_core::io::{read_json, write_json_pretty};
use face4d_core::metrics::{
    lip_metrics, region_correlation_multi, stats_svg, vertex_velocity, Axis, CorrelationGraph, LipMetrics,
    StatsPlotInput, VertexSequence,
};
use face4d_core::model::{self, load_model, save_model, ModelDims, MorphableModel};
use face4d_core::rig::{IcpParams, RigidTransform};
use face4d_core::scene::{self, calibrate_scene, CalibrationOptions, Scene, SynthSceneOptions};
use face4d_core::Error;

use crate::args::*;
use crate::manifest::RunManifest;
use crate::CliError;

type CliResult<T = ()> = Result<T, CliError>;

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e }.into())
}

/// Errors that can only come from flag values are usage errors.
fn usage_on_invalid(e: Error) -> CliError {
    match e {
        Error::InvalidArgument(m) => CliError::Usage(m),
        Error::VertexCountTooSmall(_) => CliError::Usage(e.to_string()),
        e => CliError::Core(e),
    }
}

pub fn synth_model(a: SynthModelArgs) -> CliResult {
    let start = Instant::now();
    let dims = ModelDims { k_id: a.k_id, k_exp: a.k_exp, k_tex: a.k_tex };
    if dims.k_id == 0 || dims.k_exp == 0 || dims.k_tex == 0 {
        return Err(CliError::Usage("basis sizes must be >= 1".into()));
    }
    let model = model::synth_model(a.seed, a.vertices, dims).map_err(usage_on_invalid)?;
    save_model(&model, &a.out)?;
    RunManifest::new("synth-model", &a).write(&a.out, start.elapsed().as_secs_f64())?;
    println!("wrote {} vertices, {} triangles to {}", model.vertex_count(), model.topology.triangles().len(), a.out.display());
    Ok(())
}

pub fn synth_scene(a: SynthSceneArgs) -> CliResult {
    let start = Instant::now();
    let model = load_model(&a.model)?;
    let opts = SynthSceneOptions {
        frames: a.frames,
        cameras: a.cameras,
        seed: a.seed,
        noise_mm: a.noise_mm,
        image_size: a.image_size,
        fps: a.fps,
        perturb: a.perturb_deg.zip(a.perturb_m),
        detail: a.detail,
    };
    if !(a.fps > 0.0 && a.fps.is_finite()) {
        return Err(CliError::Usage(format!("fps must be > 0, got {}", a.fps)));
    }
    create_dir(&a.out)?;
    let out = scene::synth_scene(&model, &opts, &a.out).map_err(usage_on_invalid)?;
    let mut m = RunManifest::new("synth-scene", &a);
    m.add_input("model", &a.model)?;
    m.write(&a.out, start.elapsed().as_secs_f64())?;
    println!("wrote {} frames from {} cameras to {}", out.scene.frame_count, out.scene.cameras.len(), a.out.display());
    Ok(())
}

pub fn calibrate(a: CalibrateArgs) -> CliResult {
    let start = Instant::now();
    if a.stride == 0 || a.max_iters == 0 {
        return Err(CliError::Usage("stride and max-iters must be >= 1".into()));
    }
    let scene = Scene::load(&a.scene)?;
    let opts = CalibrationOptions {
        every_frame: a.every_frame,
        icp: IcpParams { max_iters: a.max_iters, ..IcpParams::default() },
        stride: a.stride,
    };
    let result = calibrate_scene(&scene, &opts)?;
    create_dir(&a.out)?;
    write_json_pretty(&a.out.join("calibration.json"), &result)?;
    let mut m = RunManifest::new("calibrate", &a);
    m.add_input("scene", &a.scene)?;
    m.write(&a.out, start.elapsed().as_secs_f64())?;
    for c in &result.per_frame {
        println!(
            "camera {} frame {}: residual {:.3e} after {} iterations{}",
            c.camera_id,
            c.frame,
            c.residual,
            c.iterations,
            if c.converged { "" } else { " (not converged)" }
        );
    }
    Ok(())
}

#[derive(Deserialize)]
struct CalibrationFile {
    extrinsics: Vec<RigidTransform>,
}

#[derive(Serialize)]
struct ResolvedReconstruct<'a> {
    #[serde(flatten)]
    args: &'a ReconstructArgs,
    fit: FitConfig,
}

fn fit_config(a: &ReconstructArgs) -> CliResult<FitConfig> {
    let mut cfg = FitConfig::default();
    let floats = [
        ("lambda_d", a.lambda_d),
        ("lambda_lm", a.lambda_lm),
        ("lambda_p", a.lambda_p),
        ("lambda_e", a.lambda_e),
        ("lambda_lap", a.lambda_lap),
        ("lambda_op", a.lambda_op),
        ("lr_first", a.lr_first),
        ("lr_seq", a.lr_seq),
        ("lr_offset_scale", a.lr_offset_scale),
        ("depth_trunc_m", a.depth_trunc_m),
    ];
    for (key, v) in floats {
        if let Some(v) = v {
            cfg.set(key, &v.to_string()).map_err(usage_on_invalid)?;
        }
    }
    if let Some(iters) = &a.iters {
        cfg.set("iters", iters).map_err(usage_on_invalid)?;
    }
    cfg.validate().map_err(usage_on_invalid)?;
    Ok(cfg)
}

fn scene_out_dir(a: &ReconstructArgs, scene: &Path) -> PathBuf {
    if a.scene.len() == 1 {
        return a.out.clone();
    }
    let name = scene
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into());
    a.out.join(name)
}

fn reconstruct_one(
    a: &ReconstructArgs,
    model: &MorphableModel,
    cfg: &FitConfig,
    extrinsics: Option<&[RigidTransform]>,
    scene_dir: &Path,
) -> CliResult {
    let start = Instant::now();
    let mut scene = Scene::load(scene_dir)?;
    if let Some(ex) = extrinsics {
        if ex.len() != scene.cameras.len() {
            return Err(Error::InvalidArgument(format!(
                "calibration has {} cameras, scene has {}",
                ex.len(),
                scene.cameras.len()
            ))
            .into());
        }
        for (cam, e) in scene.cameras.iter_mut().zip(ex) {
            cam.extrinsic = *e;
        }
    }
    let seq = reconstruct_sequence(&scene, model, cfg)?;
    let out = scene_out_dir(a, scene_dir);
    create_dir(&out)?;
    let data = SequenceData { fps: seq.fps, frames: seq.vertices, params: seq.params };
    save_sequence(&out, &data, Some(&model.topology))?;
    write_json_pretty(&out.join("report.json"), &seq.reports)?;

    let mut m = RunManifest::new("reconstruct", ResolvedReconstruct { args: a, fit: *cfg });
    m.add_input("model", &a.model)?;
    m.add_input("scene", scene_dir)?;
    if let Some(p) = &a.extrinsics {
        m.add_input("extrinsics", p)?;
    }
    for FrameReport { frame, stages } in &seq.reports {
        for s in stages {
            m.timings_s.insert(format!("frame_{frame:06}/{}", s.stage.name()), s.wall_time_s);
        }
    }
    m.write(&out, start.elapsed().as_secs_f64())?;
    let last = seq.reports.last().and_then(|r| r.stages.last()).map(|s| s.final_loss.total);
    println!(
        "{}: {} frames -> {} (final loss {:.5})",
        scene_dir.display(),
        data.frames.len(),
        out.display(),
        last.unwrap_or(f64::NAN)
    );
    Ok(())
}

pub fn reconstruct(a: ReconstructArgs) -> CliResult {
    if a.jobs == 0 {
        return Err(CliError::Usage("jobs must be >= 1".into()));
    }
    if a.extrinsics.is_some() && a.scene.len() > 1 {
        return Err(CliError::Usage("--extrinsics applies to a single scene".into()));
    }
    let cfg = fit_config(&a)?;
    let model = load_model(&a.model)?;
    let extrinsics = match &a.extrinsics {
        Some(p) => Some(read_json::<CalibrationFile>(p)?.extrinsics),
        None => None,
    };
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<CliResult>>> = Mutex::new((0..a.scene.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..a.jobs.min(a.scene.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= a.scene.len() {
                    break;
                }
                let r = reconstruct_one(&a, &model, &cfg, extrinsics.as_deref(), &a.scene[i]);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    for r in results.into_inner().unwrap().into_iter().flatten() {
        r?;
    }
    Ok(())
}

fn load_vertex_sequence(dir: &Path, model: &MorphableModel) -> CliResult<VertexSequence> {
    let seq = load_sequence(dir)?;
    if seq.vertex_count() != model.vertex_count() {
        return Err(Error::InvalidArgument(format!(
            "{} has {} vertices, model has {}",
            dir.display(),
            seq.vertex_count(),
            model.vertex_count()
        ))
        .into());
    }
    Ok(VertexSequence::new(seq.frames, seq.fps, model.regions.clone())?)
}

#[derive(Serialize)]
struct MetricsReport {
    #[serde(flatten)]
    lip: LipMetrics,
    /// Mean vertex error over all frames and vertices.
    mean_vertex_error: f64,
    /// Mean vertex error relative to the ground truth's first-frame
    /// bounding-box diagonal.
    mean_vertex_error_rel: f64,
    frames: usize,
}

pub fn metrics(a: MetricsArgs) -> CliResult {
    let start = Instant::now();
    let model = load_model(&a.model)?;
    let pred = load_vertex_sequence(&a.pred, &model)?;
    let gt = load_vertex_sequence(&a.gt, &model)?;
    let lip = lip_metrics(&pred, &gt)?;
    let frames = gt.frame_count();
    let mean_vertex_error =
        pred.frames.iter().zip(&gt.frames).map(|(p, g)| mean_vertex_error(p, g)).sum::<f64>() / frames as f64;
    let diag = bbox_diagonal(&gt.frames[0]);
    let report = MetricsReport {
        lip,
        mean_vertex_error,
        mean_vertex_error_rel: if diag > 0.0 { mean_vertex_error / diag } else { 0.0 },
        frames,
    };
    create_dir(&a.out)?;
    write_json_pretty(&a.out.join("metrics.json"), &report)?;
    let mut m = RunManifest::new("metrics", &a);
    m.add_input("model", &a.model)?;
    m.add_input("pred", &a.pred)?;
    m.add_input("gt", &a.gt)?;
    m.write(&a.out, start.elapsed().as_secs_f64())?;
    println!(
        "l_max_lip {:.6e}  l_mean_lip {:.6e}  l_max_upper {:.6e}  l_max_face {:.6e}",
        lip.l_max_lip, lip.l_mean_lip, lip.l_max_upper, lip.l_max_face
    );
    Ok(())
}

#[derive(Serialize)]
struct SequenceStats {
    path: PathBuf,
    frames: usize,
    duration_s: f64,
    lip_velocity_x: f64,
    lip_velocity_y: f64,
    lip_velocity: f64,
}

#[derive(Serialize)]
struct StatsReport {
    sequences: Vec<SequenceStats>,
    mean_lip_velocity: f64,
    total_duration_s: f64,
    correlation: Option<CorrelationGraph>,
}

pub fn stats(a: StatsArgs) -> CliResult {
    let start = Instant::now();
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(CliError::Usage(format!("threshold must lie in [0, 1], got {}", a.threshold)));
    }
    let model = load_model(&a.model)?;
    let regions: Vec<String> = if a.regions.is_empty() {
        model.regions.keys().filter(|r| r.as_str() != "face").cloned().collect()
    } else {
        for r in &a.regions {
            if !model.regions.contains_key(r) {
                return Err(CliError::Usage(format!("unknown region {r:?}")));
            }
        }
        a.regions.clone()
    };
    let seqs = a
        .sequences
        .iter()
        .map(|d| load_vertex_sequence(d, &model))
        .collect::<CliResult<Vec<_>>>()?;
    let mut per_seq = Vec::with_capacity(seqs.len());
    for (path, s) in a.sequences.iter().zip(&seqs) {
        per_seq.push(SequenceStats {
            path: path.clone(),
            frames: s.frame_count(),
            duration_s: s.duration_s(),
            lip_velocity_x: vertex_velocity(s, "lip", Axis::X)?,
            lip_velocity_y: vertex_velocity(s, "lip", Axis::Y)?,
            lip_velocity: vertex_velocity(s, "lip", Axis::All)?,
        });
    }
    let graph = if regions.len() >= 2 {
        let refs: Vec<&VertexSequence> = seqs.iter().collect();
        Some(region_correlation_multi(&refs, &regions, a.threshold)?)
    } else {
        None
    };
    let report = StatsReport {
        mean_lip_velocity: per_seq.iter().map(|s| s.lip_velocity).sum::<f64>() / per_seq.len() as f64,
        total_duration_s: per_seq.iter().map(|s| s.duration_s).sum(),
        sequences: per_seq,
        correlation: graph,
    };
    create_dir(&a.out)?;
    write_json_pretty(&a.out.join("stats.json"), &report)?;
    if let Some(plot) = &a.plot {
        let velocity: Vec<(f64, f64)> = report.sequences.iter().map(|s| (s.lip_velocity_x, s.lip_velocity_y)).collect();
        let durations: Vec<f64> = report.sequences.iter().map(|s| s.duration_s).collect();
        let svg = stats_svg(&StatsPlotInput {
            lip_velocity: &velocity,
            durations: &durations,
            graph: report.correlation.as_ref(),
        });
        std::fs::write(plot, svg).map_err(|e| Error::Io { path: plot.clone(), source: e })?;
    }
    let mut m = RunManifest::new("stats", &a);
    m.add_input("model", &a.model)?;
    for (i, s) in a.sequences.iter().enumerate() {
        m.add_input(&format!("sequence{i}"), s)?;
    }
    m.write(&a.out, start.elapsed().as_secs_f64())?;
    println!(
        "{} sequences, {:.2} s total, mean lip velocity {:.4e} units/frame",
        report.sequences.len(),
        report.total_duration_s,
        report.mean_lip_velocity
    );
    if let Some(g) = &report.correlation {
        for e in &g.edges {
            println!("  {} -- {}: {:.3}", e.a, e.b, e.weight);
        }
    }
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> CliResult {
    if a.seeds == 0 || !(a.tolerance > 0.0) {
        return Err(CliError::Usage("seeds must be >= 1 and tolerance > 0".into()));
    }
    for s in &a.suite {
        if !face4d_core::gradcheck::SUITES.contains(&s.as_str()) {
            return Err(CliError::Usage(format!(
                "unknown suite {s:?}; known: {}",
                face4d_core::gradcheck::SUITES.join(", ")
            )));
        }
    }
    let report = run_gradcheck(&a.suite, a.seeds, a.tolerance)?;
    create_dir(&a.out)?;
    write_json_pretty(&a.out.join("gradcheck.json"), &report)?;
    let mut m = RunManifest::new("gradcheck", &a);
    m.timings_s.insert("suites".into(), report.wall_time_s);
    m.write(&a.out, report.wall_time_s)?;
    for (suite, err, pass) in report.per_suite() {
        println!("{:<16} max rel err {:.3e}  {}", suite, err, if pass { "PASS" } else { "FAIL" });
    }
    if report.pass {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "gradient check failed: worst relative error {:.3e} > {:.1e}",
            report.worst_rel_err, a.tolerance
        )))
    }
}
