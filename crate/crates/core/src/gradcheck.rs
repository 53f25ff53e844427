//! Central finite-difference checks of every analytic gradient in the crate,
//! run on small seeded synthetic instances.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::anim::{anim_total_loss, sparsity_reg};
use crate::error::{Error, Result};
use crate::fitting::losses::{
    loss_depth, loss_edge, loss_landmark2d, loss_landmark3d, loss_laplacian, loss_offset,
    loss_prior, loss_rgb,
};
use crate::fitting::{CameraView, FitConfig, FrameObservations, Objective, Stage, Visibility};
use crate::geometry::{vertex_normals, Vec3};
use crate::model::{assemble_face, face_albedo, face_albedo_unclamped, synth_model, FaceParams, ModelDims, MorphableModel, VertexOffsets};
use crate::render::{evaluate_fixed_visibility, render_backward, render_shaded, RenderOutput, ShadingParams};
use crate::rig::{CameraIntrinsics, ColorImage, DepthImage, RGBDFrame};
use crate::scene::synth::{camera_extrinsic, random_lighting};

pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_SEEDS: u64 = 20;

const H_GEOMETRY: f64 = 1e-5;
const H_LIGHTING: f64 = 1e-4;
const H_SPARSITY: f64 = 1e-6;
const VERTICES: usize = 200;
const IMAGE_SIZE: u32 = 64;
const CAMERAS: usize = 3;
/// Coordinates of large blocks (vertices, offsets) sampled per check.
const SAMPLED_COORDS: usize = 90;

pub const SUITES: [&str; 13] = [
    "rgb",
    "depth",
    "landmark2d",
    "landmark3d",
    "prior",
    "edge",
    "laplacian",
    "offset",
    "sparsity",
    "anim_total",
    "stage_landmark",
    "stage_dmm",
    "stage_vertex",
];

#[derive(Debug, Clone, Serialize)]
pub struct BlockCheck {
    pub block: String,
    pub coords: usize,
    /// Coordinates skipped because a probe crossed a kink.
    pub skipped: usize,
    pub max_abs_err: f64,
    pub scale: f64,
    /// `max_abs_err / scale`, zero when both gradients vanish.
    pub rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub suite: String,
    pub seed: u64,
    pub blocks: Vec<BlockCheck>,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub seeds: u64,
    pub results: Vec<SuiteResult>,
    pub worst_rel_err: f64,
    pub wall_time_s: f64,
    pub pass: bool,
}

impl GradCheckReport {
    /// Worst relative error per suite, in `SUITES` order.
    pub fn per_suite(&self) -> Vec<(String, f64, bool)> {
        let mut out: Vec<(String, f64, bool)> = Vec::new();
        for r in &self.results {
            match out.iter_mut().find(|e| e.0 == r.suite) {
                Some(e) => {
                    e.1 = e.1.max(r.max_rel_err);
                    e.2 &= r.pass;
                }
                None => out.push((r.suite.clone(), r.max_rel_err, r.pass)),
            }
        }
        out
    }
}

/// Compares `analytic` against central differences of a smooth `f` at the
/// given coordinates of `x0`.
fn check_block(
    block: &str,
    x0: &[f64],
    analytic: &[f64],
    coords: &[usize],
    h: f64,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<BlockCheck> {
    check_block_piecewise(block, x0, analytic, coords, h, |x| Ok((f(x)?, 0)))
}

/// Like `check_block` for piecewise-smooth `f`, which also returns a
/// signature of the branch it evaluated. Coordinates whose probes land on a
/// different branch than `x0` straddle a kink and are skipped.
fn check_block_piecewise(
    block: &str,
    x0: &[f64],
    analytic: &[f64],
    coords: &[usize],
    h: f64,
    mut f: impl FnMut(&[f64]) -> Result<(f64, u64)>,
) -> Result<BlockCheck> {
    if analytic.len() != x0.len() {
        return Err(Error::InvalidArgument(format!(
            "{block}: gradient has {} entries, expected {}",
            analytic.len(),
            x0.len()
        )));
    }
    let (_, sig0) = f(x0)?;
    let mut x = x0.to_vec();
    let (mut max_abs_err, mut scale) = (0.0f64, 0.0f64);
    let mut skipped = 0;
    for &i in coords {
        x[i] = x0[i] + h;
        let (fp, sp) = f(&x)?;
        x[i] = x0[i] - h;
        let (fm, sm) = f(&x)?;
        x[i] = x0[i];
        if sp != sig0 || sm != sig0 {
            skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        max_abs_err = max_abs_err.max((numeric - analytic[i]).abs());
        scale = scale.max(numeric.abs()).max(analytic[i].abs());
    }
    let rel_err = if scale > 0.0 { max_abs_err / scale } else { 0.0 };
    Ok(BlockCheck {
        block: block.to_string(),
        coords: coords.len(),
        skipped,
        max_abs_err,
        scale,
        rel_err,
    })
}

fn signature(bits: impl Iterator<Item = u8>) -> u64 {
    let mut h = DefaultHasher::new();
    for b in bits {
        b.hash(&mut h);
    }
    h.finish()
}

/// Branch of the truncated absolute depth residual at every valid pixel.
fn depth_branches<'a>(out: &'a RenderOutput, obs: &'a DepthImage, trunc: f64) -> impl Iterator<Item = u8> + 'a {
    out.frags.iter().enumerate().map(move |(i, f)| {
        if f.is_none() || obs.data[i] == 0 {
            return 0;
        }
        let e = out.depth[i] - obs.data[i] as f64 / 1000.0;
        if e.abs() >= trunc {
            1
        } else if e >= 0.0 {
            2
        } else {
            3
        }
    })
}

fn all_coords(len: usize) -> Vec<usize> {
    (0..len).collect()
}

fn sample_coords(rng: &mut ChaCha8Rng, len: usize) -> Vec<usize> {
    if len <= SAMPLED_COORDS {
        return all_coords(len);
    }
    rand::seq::index::sample(rng, len, SAMPLED_COORDS).into_vec()
}

fn flatten(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

fn unflatten(x: &[f64]) -> Vec<Vec3> {
    x.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

/// A seeded synthetic frame: observations rendered from true parameters and
/// an evaluation point perturbed away from them.
struct Instance {
    model: MorphableModel,
    observations: FrameObservations,
    params: FaceParams,
    offsets: VertexOffsets,
    reference: Vec<Vec3>,
    rng: ChaCha8Rng,
}

fn intrinsics() -> CameraIntrinsics {
    let s = IMAGE_SIZE as f64;
    CameraIntrinsics {
        fx: 2.0 * s,
        fy: 2.0 * s,
        cx: s / 2.0,
        cy: s / 2.0,
        width: IMAGE_SIZE,
        height: IMAGE_SIZE,
    }
}

fn gaussian(rng: &mut ChaCha8Rng, len: usize, std: f64) -> Vec<f64> {
    let n = Normal::new(0.0, std).unwrap();
    (0..len).map(|_| n.sample(rng)).collect()
}

fn instance(seed: u64) -> Result<Instance> {
    let dims = ModelDims { k_id: 10, k_exp: 10, k_tex: 10 };
    let model = synth_model(seed, VERTICES, dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    let k = intrinsics();
    let yaws = [0.0, 45.0, -45.0];

    let mut truth = FaceParams {
        alpha: gaussian(&mut rng, dims.k_id, 0.5),
        beta: gaussian(&mut rng, dims.k_exp, 0.5),
        delta: gaussian(&mut rng, dims.k_tex, 0.3),
        gamma: Default::default(),
    };
    for id in 0..CAMERAS as u32 {
        truth.gamma.insert(id, random_lighting(&mut rng));
    }
    let zero = VertexOffsets::zeros(VERTICES);
    let shape = assemble_face(&model, &truth, &zero)?.vertices;
    let normals = vertex_normals(&model.topology, &shape);
    let albedo = face_albedo(&model, &truth.delta)?;

    let mut views = Vec::with_capacity(CAMERAS);
    for (id, &yaw) in yaws.iter().enumerate().take(CAMERAS) {
        let ext = camera_extrinsic(yaw);
        let r = render_shaded(&shape, &normals, &model.topology, &albedo, &truth.gamma[&(id as u32)], &ext, &k)?;
        let landmarks2d = model
            .landmark_indices
            .iter()
            .map(|&v| k.project(&r.camera_vertices[v]))
            .collect();
        views.push(CameraView {
            id: id as u32,
            intrinsics: k,
            extrinsic: ext,
            frame: RGBDFrame {
                camera_id: id as u32,
                color: ColorImage { width: IMAGE_SIZE, height: IMAGE_SIZE, data: r.output.color_bytes() },
                depth: DepthImage { width: IMAGE_SIZE, height: IMAGE_SIZE, data: r.output.depth_mm() },
                landmarks2d,
                timestamp_index: 0,
            },
        });
    }
    let observations = FrameObservations::new(views)?;

    let mut params = truth.clone();
    let jitter = |v: &mut Vec<f64>, rng: &mut ChaCha8Rng, std: f64| {
        let noise = gaussian(rng, v.len(), std);
        for (x, d) in v.iter_mut().zip(noise) {
            *x += d;
        }
    };
    jitter(&mut params.alpha, &mut rng, 0.2);
    jitter(&mut params.beta, &mut rng, 0.2);
    jitter(&mut params.delta, &mut rng, 0.2);
    for g in params.gamma.values_mut() {
        for x in g.0.iter_mut() {
            *x += rng.random_range(-0.05..0.05);
        }
    }
    let reference = assemble_face(&model, &params, &zero)?.vertices;
    let offsets = VertexOffsets { offsets: unflatten(&gaussian(&mut rng, 3 * VERTICES, 0.003)) };
    Ok(Instance { model, observations, params, offsets, reference, rng })
}

struct CameraSetup {
    vertices: Vec<Vec3>,
    colors: Vec<Vec3>,
    output: RenderOutput,
    view: usize,
}

/// Camera-space vertices and shaded colors of the evaluation point, rendered
/// through the front camera.
fn camera_setup(inst: &Instance, view: usize) -> Result<CameraSetup> {
    let v = &inst.observations.views[view];
    let shape = assemble_face(&inst.model, &inst.params, &inst.offsets)?.vertices;
    let normals = vertex_normals(&inst.model.topology, &shape);
    let albedo = face_albedo(&inst.model, &inst.params.delta)?;
    let r = render_shaded(&shape, &normals, &inst.model.topology, &albedo, &inst.params.gamma[&v.id], &v.extrinsic, &v.intrinsics)?;
    Ok(CameraSetup { vertices: r.camera_vertices, colors: r.colors, output: r.output, view })
}

fn image_suite(
    inst: &mut Instance,
    loss: impl Fn(&RenderOutput, &CameraView) -> Result<(f64, Vec<Vec3>, Vec<f64>, u64)>,
    with_colors: bool,
) -> Result<Vec<BlockCheck>> {
    let setup = camera_setup(inst, 0)?;
    let view = &inst.observations.views[setup.view];
    let topo = &inst.model.topology;
    let frags = &setup.output.frags;
    let (_, gc, gd, _) = loss(&setup.output, view)?;
    let grads = render_backward(&setup.output, &gc, &gd, &setup.vertices, topo, &setup.colors, &view.intrinsics)?;
    let eval = |verts: &[Vec3], cols: &[Vec3]| -> Result<(f64, u64)> {
        let out = evaluate_fixed_visibility(frags, verts, topo, cols, &view.intrinsics)?;
        let (v, _, _, sig) = loss(&out, view)?;
        Ok((v, sig))
    };
    let xv = flatten(&setup.vertices);
    let coords = sample_coords(&mut inst.rng, xv.len());
    let mut blocks = vec![check_block_piecewise("vertices", &xv, &flatten(&grads.vertices), &coords, H_GEOMETRY, |x| {
        eval(&unflatten(x), &setup.colors)
    })?];
    if with_colors {
        let xc = flatten(&setup.colors);
        let coords = sample_coords(&mut inst.rng, xc.len());
        blocks.push(check_block_piecewise("colors", &xc, &flatten(&grads.colors), &coords, H_GEOMETRY, |x| {
            eval(&setup.vertices, &unflatten(x))
        })?);
    }
    Ok(blocks)
}

fn suite_rgb(inst: &mut Instance) -> Result<Vec<BlockCheck>> {
    let n = inst.observations.views[0].intrinsics.pixel_count();
    image_suite(
        inst,
        move |out, view| {
            let (v, g) = loss_rgb(out, &view.frame.color)?;
            Ok((v, g, vec![0.0; n], 0))
        },
        true,
    )
}

fn suite_depth(inst: &mut Instance) -> Result<Vec<BlockCheck>> {
    let n = inst.observations.views[0].intrinsics.pixel_count();
    let trunc = FitConfig::default().depth_trunc_m;
    image_suite(
        inst,
        move |out, view| {
            let (v, g) = loss_depth(out, &view.frame.depth, trunc)?;
            let sig = signature(depth_branches(out, &view.frame.depth, trunc));
            Ok((v, vec![Vec3::zeros(); n], g, sig))
        },
        false,
    )
}

fn suite_landmark2d(inst: &mut Instance) -> Result<Vec<BlockCheck>> {
    let setup = camera_setup(inst, 1)?;
    let view = &inst.observations.views[1];
    let idx = &inst.model.landmark_indices;
    let (_, g) = loss_landmark2d(&setup.vertices, idx, &view.frame.landmarks2d, &view.intrinsics)?;
    let x0 = flatten(&setup.vertices);
    let coords: Vec<usize> = idx.iter().flat_map(|&v| [3 * v, 3 * v + 1, 3 * v + 2]).collect();
    Ok(vec![check_block("vertices", &x0, &flatten(&g), &coords, H_GEOMETRY, |x| {
        Ok(loss_landmark2d(&unflatten(x), idx, &view.frame.landmarks2d, &view.intrinsics)?.0)
    })?])
}

fn suite_landmark3d(inst: &mut Instance) -> Result<Vec<BlockCheck>> {
    let shape = assemble_face(&inst.model, &inst.params, &inst.offsets)?.vertices;
    let idx = &inst.model.landmark_indices;
    let obs = &inst.observations.landmarks3d;
    let (_, g) = loss_landmark3d(&shape, idx, obs)?;
    let x0 = flatten(&shape);
    let coords: Vec<usize> = idx.iter().flat_map(|&v| [3 * v, 3 * v + 1, 3 * v + 2]).collect();
    Ok(vec![check_block("vertices", &x0, &flatten(&g), &coords, H_GEOMETRY, |x| {
        Ok(loss_landmark3d(&unflatten(x), idx, obs)?.0)
    })?])
}

fn suite_prior(inst: &mut Instance) -> Result<Vec<BlockCheck>> {
    let p = &inst.params;
    let x0: Vec<f64> = p.alpha.iter().chain(&p.beta).chain(&p.delta).copied().collect();
    let analytic: Vec<f64> = x0.iter().map(|x| 2.0 * x).collect();
    let (a, b) = (p.alpha.len(), p.beta.len());
    Ok(vec![check_block("alpha_beta_delta", &x0, &analytic, &all_coords(x0.len()), H_GEOMETRY, |x| {
        let mut q = p.clone();
        q.alpha = x[..a].to_vec();
        q.beta = x[a..a + b].to_vec();
        q.delta = x[a + b..].to_vec();
        Ok(loss_prior(&q))
    })?])
}

fn suite_edge(inst: &mut Instance) -> Result<Vec<BlockCheck>> {
    let shape = assemble_face(&inst.model, &inst.params, &inst.offsets)?.vertices;
    let topo = &inst.model.topology;
    let (_, g) = loss_edge(&shape, &inst.reference, topo)?;
    let x0 = flatten(&shape);
    let coords = sample_coords(&mut inst.rng, x0.len());
    Ok(vec![check_block("vertices", &x0, &flatten(&g), &coords, H_GEOMETRY, |x| {
        Ok(loss_edge(&unflatten(x), &inst.reference, topo)?.0)
    })?])
}

fn suite_laplacian(inst: &mut Instance) -> Result<Vec<BlockCheck>> {
    let topo = &inst.model.topology;
    let (_, g) = loss_laplacian(&inst.offsets.offsets, topo)?;
    let x0 = flatten(&inst.offsets.offsets);
    let coords = sample_coords(&mut inst.rng, x0.len());
    Ok(vec![check_block("offsets", &x0, &flatten(&g), &coords, H_GEOMETRY, |x| {
        Ok(loss_laplacian(&unflatten(x), topo)?.0)
    })?])
}

fn suite_offset(inst: &mut Instance) -> Result<Vec<BlockCheck>> {
    let (_, g) = loss_offset(&inst.offsets.offsets);
    let x0 = flatten(&inst.offsets.offsets);
    let coords = sample_coords(&mut inst.rng, x0.len());
    Ok(vec![check_block("offsets", &x0, &flatten(&g), &coords, H_GEOMETRY, |x| {
        Ok(loss_offset(&unflatten(x)).0)
    })?])
}

/// Random weight matrix with every entry bounded away from zero.
fn random_weights(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let m: f64 = rng.random_range(0.1..1.0);
        if rng.random::<bool>() { m } else { -m }
    })
}

fn suite_sparsity(inst: &mut Instance) -> Result<Vec<BlockCheck>> {
    let w = random_weights(&mut inst.rng, 6, 40);
    let (_, g) = sparsity_reg(&w)?;
    let (r, c) = w.shape();
    let x0 = w.as_slice().to_vec();
    Ok(vec![check_block("weights", &x0, g.as_slice(), &all_coords(x0.len()), H_SPARSITY, |x| {
        Ok(sparsity_reg(&DMatrix::from_column_slice(r, c, x))?.0)
    })?])
}

fn suite_anim_total(inst: &mut Instance) -> Result<Vec<BlockCheck>> {
    let rng = &mut inst.rng;
    let (frames, n) = (6, 50);
    let mut seq = || -> Vec<Vec<Vec3>> { (0..frames).map(|_| unflatten(&gaussian(rng, 3 * n, 0.1))).collect() };
    let pred = seq();
    let gt = seq();
    let w = random_weights(rng, 5, 30);
    let beta = 0.05;
    let mut blocks = Vec::new();
    for squared in [false, true] {
        let l = anim_total_loss(&pred, &gt, &w, beta, squared)?;
        let xp: Vec<f64> = pred.iter().flat_map(|f| flatten(f)).collect();
        let gp: Vec<f64> = l.grad_pred.iter().flat_map(|f| flatten(f)).collect();
        let coords = sample_coords(rng, xp.len());
        let name = if squared { "pred_squared" } else { "pred" };
        blocks.push(check_block(name, &xp, &gp, &coords, H_GEOMETRY, |x| {
            let p: Vec<Vec<Vec3>> = x.chunks_exact(3 * n).map(unflatten).collect();
            Ok(anim_total_loss(&p, &gt, &w, beta, squared)?.value)
        })?);
        let xw = w.as_slice().to_vec();
        let name = if squared { "weights_squared" } else { "weights" };
        blocks.push(check_block(name, &xw, l.grad_weights.as_slice(), &all_coords(xw.len()), H_SPARSITY, |x| {
            let w = DMatrix::from_column_slice(w.nrows(), w.ncols(), x);
            Ok(anim_total_loss(&pred, &gt, &w, beta, squared)?.value)
        })?);
    }
    Ok(blocks)
}

fn suite_stage(inst: &mut Instance, stage: Stage) -> Result<Vec<BlockCheck>> {
    let config = FitConfig::default();
    let obj = Objective { model: &inst.model, observations: &inst.observations, config: &config };
    let reference = inst.reference.as_slice();
    let base = obj.evaluate(stage, &inst.params, &inst.offsets, Some(reference), None)?;
    let vis: Visibility = base.visibility.clone();
    let fixed = if vis.is_empty() { None } else { Some(&vis) };
    let model = &inst.model;
    let views = &inst.observations.views;
    // Branches of the albedo clamp and of every depth residual.
    let branches = |p: &FaceParams, r: &VertexOffsets| -> Result<u64> {
        let Some(vis) = fixed else { return Ok(0) };
        let shape = assemble_face(model, p, r)?.vertices;
        let raw = face_albedo_unclamped(model, &p.delta)?;
        let mut bits: Vec<u8> = raw
            .iter()
            .flat_map(|c| c.iter().map(|&x| (x < 0.0) as u8 + 2 * (x > 1.0) as u8).collect::<Vec<_>>())
            .collect();
        let zeros = vec![Vec3::zeros(); shape.len()];
        for (view, frags) in views.iter().zip(vis) {
            let cam: Vec<Vec3> = shape.iter().map(|x| view.extrinsic.apply(x)).collect();
            let out = evaluate_fixed_visibility(frags, &cam, &model.topology, &zeros, &view.intrinsics)?;
            bits.extend(depth_branches(&out, &view.frame.depth, config.depth_trunc_m));
        }
        Ok(signature(bits.into_iter()))
    };
    let at = |p: &FaceParams, r: &VertexOffsets| -> Result<(f64, u64)> {
        let total = obj.evaluate(stage, p, r, Some(reference), fixed)?.terms.total;
        Ok((total, branches(p, r)?))
    };
    let active = stage.active();
    let p0 = &inst.params;
    let r0 = &inst.offsets;
    let g = &base.grads;
    let mut blocks = Vec::new();

    type Setter = fn(&mut FaceParams, &[f64]);
    let vector_blocks: [(&str, bool, &Vec<f64>, &Vec<f64>, Setter); 3] = [
        ("alpha", active.alpha, &p0.alpha, &g.alpha, |p, x| p.alpha = x.to_vec()),
        ("beta", active.beta, &p0.beta, &g.beta, |p, x| p.beta = x.to_vec()),
        ("delta", active.delta, &p0.delta, &g.delta, |p, x| p.delta = x.to_vec()),
    ];
    for (name, on, x0, grad, set) in vector_blocks {
        if !on {
            continue;
        }
        blocks.push(check_block_piecewise(name, x0, grad, &all_coords(x0.len()), H_GEOMETRY, |x| {
            let mut p = p0.clone();
            set(&mut p, x);
            at(&p, r0)
        })?);
    }
    if active.gamma {
        for (&id, gamma) in &p0.gamma {
            blocks.push(check_block_piecewise(&format!("gamma[{id}]"), &gamma.0, &g.gamma[&id], &all_coords(27), H_LIGHTING, |x| {
                let mut p = p0.clone();
                let mut s = ShadingParams::zeros();
                s.0.copy_from_slice(x);
                p.gamma.insert(id, s);
                at(&p, r0)
            })?);
        }
    }
    if active.offsets {
        let x0 = flatten(&r0.offsets);
        let coords = sample_coords(&mut inst.rng, x0.len());
        blocks.push(check_block_piecewise("offsets", &x0, &flatten(&g.offsets), &coords, H_GEOMETRY, |x| {
            at(p0, &VertexOffsets { offsets: unflatten(x) })
        })?);
    }
    Ok(blocks)
}

/// Runs one suite on one seeded instance.
pub fn run_suite(suite: &str, seed: u64, tolerance: f64) -> Result<SuiteResult> {
    let mut inst = instance(seed)?;
    let blocks = match suite {
        "rgb" => suite_rgb(&mut inst)?,
        "depth" => suite_depth(&mut inst)?,
        "landmark2d" => suite_landmark2d(&mut inst)?,
        "landmark3d" => suite_landmark3d(&mut inst)?,
        "prior" => suite_prior(&mut inst)?,
        "edge" => suite_edge(&mut inst)?,
        "laplacian" => suite_laplacian(&mut inst)?,
        "offset" => suite_offset(&mut inst)?,
        "sparsity" => suite_sparsity(&mut inst)?,
        "anim_total" => suite_anim_total(&mut inst)?,
        "stage_landmark" => suite_stage(&mut inst, Stage::Landmark)?,
        "stage_dmm" => suite_stage(&mut inst, Stage::Dmm)?,
        "stage_vertex" => suite_stage(&mut inst, Stage::Vertex)?,
        other => return Err(Error::InvalidArgument(format!("unknown gradcheck suite '{other}'"))),
    };
    let max_rel_err = blocks.iter().map(|b| b.rel_err).fold(0.0, f64::max);
    Ok(SuiteResult {
        suite: suite.to_string(),
        seed,
        // A block that is mostly kinks has not really been checked.
        pass: max_rel_err <= tolerance
            && max_rel_err.is_finite()
            && blocks.iter().all(|b| 2 * b.skipped <= b.coords),
        blocks,
        max_rel_err,
    })
}

/// Runs `suites` (all when empty) on seeds `0..seeds`.
pub fn run_gradcheck(suites: &[String], seeds: u64, tolerance: f64) -> Result<GradCheckReport> {
    let start = Instant::now();
    let names: Vec<String> = if suites.is_empty() {
        SUITES.iter().map(|s| s.to_string()).collect()
    } else {
        suites.to_vec()
    };
    let mut results = Vec::new();
    for name in &names {
        for seed in 0..seeds {
            results.push(run_suite(name, seed, tolerance)?);
        }
    }
    let worst_rel_err = results.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        tolerance,
        seeds,
        pass: results.iter().all(|r| r.pass),
        results,
        worst_rel_err,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_check_detects_wrong_gradient() {
        let f = |x: &[f64]| Ok(x[0] * x[0] + 3.0 * x[1]);
        let good = check_block("b", &[1.0, 2.0], &[2.0, 3.0], &[0, 1], 1e-5, f).unwrap();
        assert!(good.rel_err < 1e-9);
        let bad = check_block("b", &[1.0, 2.0], &[2.0, 3.3], &[0, 1], 1e-5, f).unwrap();
        assert!((bad.rel_err - 0.3 / 3.3).abs() < 1e-6);
    }

    #[test]
    fn zero_gradients_have_zero_error() {
        let c = check_block("b", &[0.5], &[0.0], &[0], 1e-5, |_| Ok(1.0)).unwrap();
        assert_eq!(c.rel_err, 0.0);
    }

    #[test]
    fn every_suite_passes_on_one_seed() {
        for s in SUITES {
            let r = run_suite(s, 3, DEFAULT_TOLERANCE).unwrap();
            assert!(r.pass, "{s}: {:?}", r.blocks);
        }
    }

    #[test]
    fn unknown_suite_is_rejected() {
        assert!(matches!(run_suite("nope", 0, 1e-4), Err(Error::InvalidArgument(_))));
    }
}
