//! Synthetic capture generator: renders a morphable-model face following a
//! smooth expression trajectory through a ring of RGB-D cameras.

use std::path::Path;

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use super::{color_path, depth_path, landmarks_path, Scene, SceneCamera};
use crate::error::{Error, Result};
use crate::fitting::{save_sequence, SequenceData};
use crate::geometry::{bbox_diagonal, vertex_normals, Vec3};
use crate::io::{write_gray16_png, write_json, write_json_pretty, write_rgb8_png};
use crate::model::{assemble_face, face_albedo, FaceParams, MorphableModel, VertexOffsets};
use crate::render::{render_shaded, ShadingParams, SH_C0};
use crate::rig::{CameraIntrinsics, RigidTransform};

/// Yaw of each camera about the vertical axis, in degrees.
const CAMERA_YAW_DEG: [f64; 5] = [0.0, 45.0, -45.0, 22.5, -22.5];
const CAMERA_DISTANCE: f64 = 2.0;
/// Frames per full period of the expression trajectory.
const EXPRESSION_PERIOD: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSceneOptions {
    pub frames: usize,
    pub cameras: usize,
    pub seed: u64,
    /// Standard deviation of additive depth noise, millimeters.
    pub noise_mm: f64,
    pub image_size: u32,
    pub fps: f64,
    /// Rotation (degrees) and translation (meters) applied to every
    /// non-master extrinsic written to `scene.json`.
    pub perturb: Option<(f64, f64)>,
    /// Peak amplitude (model units) of a fixed smooth deformation along the
    /// mean-shape normals that the linear bases cannot represent; 0 keeps
    /// every frame inside the model space.
    pub detail: f64,
}

impl Default for SynthSceneOptions {
    fn default() -> Self {
        Self {
            frames: 10,
            cameras: 3,
            seed: 0,
            noise_mm: 0.0,
            image_size: 96,
            fps: 30.0,
            perturb: None,
            detail: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSceneOutput {
    pub scene: Scene,
    /// Ground-truth vertices and parameters per frame.
    pub ground_truth: SequenceData,
    /// Unperturbed world-to-camera transforms.
    pub true_extrinsics: Vec<RigidTransform>,
}

/// Front camera looking down -z at the origin, image y pointing down.
pub(crate) fn camera_extrinsic(yaw_deg: f64) -> RigidTransform {
    let flip = Matrix3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0));
    let yaw = RigidTransform::from_axis_angle(Vec3::y(), -yaw_deg.to_radians(), Vec3::zeros());
    RigidTransform::new(flip * yaw.rotation, Vec3::new(0.0, 0.0, CAMERA_DISTANCE))
}

pub(crate) fn random_lighting(rng: &mut ChaCha8Rng) -> ShadingParams {
    let mut g = ShadingParams::ambient(rng.random_range(0.9..1.1));
    for c in 0..3 {
        for k in 1..9 {
            g.0[9 * c + k] = rng.random_range(-0.15..0.15) / SH_C0 * 0.5;
        }
    }
    g
}

const DETAIL_BUMPS: usize = 6;

/// Sum of signed Gaussian bumps centered on random vertices, displacing
/// along the mean-shape normals.
fn detail_field(model: &MorphableModel, amplitude: f64, seed: u64) -> Vec<Vec3> {
    let n = model.vertex_count();
    if amplitude == 0.0 {
        return vec![Vec3::zeros(); n];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6465_7461_696c);
    let mean = &model.mean_shape;
    let normals = vertex_normals(&model.topology, mean);
    let sigma = 0.12 * bbox_diagonal(mean);
    let bumps: Vec<(Vec3, f64)> = (0..DETAIL_BUMPS)
        .map(|_| {
            let c = mean[rng.random_range(0..n)];
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            (c, sign * rng.random_range(0.5..1.0))
        })
        .collect();
    mean.iter()
        .zip(&normals)
        .map(|(p, nrm)| {
            let h: f64 = bumps
                .iter()
                .map(|(c, w)| w * (-(p - c).norm_squared() / (2.0 * sigma * sigma)).exp())
                .sum();
            nrm * (amplitude * h)
        })
        .collect()
}

pub fn synth_scene(model: &MorphableModel, opts: &SynthSceneOptions, dir: &Path) -> Result<SynthSceneOutput> {
    if opts.frames == 0 {
        return Err(Error::InvalidArgument("frames must be >= 1".into()));
    }
    if opts.cameras == 0 || opts.cameras > CAMERA_YAW_DEG.len() {
        return Err(Error::InvalidArgument(format!(
            "cameras must be in 1..={}, got {}",
            CAMERA_YAW_DEG.len(),
            opts.cameras
        )));
    }
    if !(opts.noise_mm >= 0.0 && opts.noise_mm.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise must be >= 0, got {}", opts.noise_mm)));
    }
    if !(opts.detail >= 0.0 && opts.detail.is_finite()) {
        return Err(Error::InvalidArgument(format!("detail must be >= 0, got {}", opts.detail)));
    }
    if opts.image_size < 16 {
        return Err(Error::InvalidArgument("image size must be >= 16".into()));
    }
    model.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let dims = model.dims();
    let size = opts.image_size;
    let intrinsics = CameraIntrinsics {
        fx: 2.0 * size as f64,
        fy: 2.0 * size as f64,
        cx: size as f64 / 2.0,
        cy: size as f64 / 2.0,
        width: size,
        height: size,
    };

    let true_extrinsics: Vec<RigidTransform> = CAMERA_YAW_DEG[..opts.cameras]
        .iter()
        .map(|&yaw| camera_extrinsic(yaw))
        .collect();
    let mut cameras: Vec<SceneCamera> = true_extrinsics
        .iter()
        .enumerate()
        .map(|(i, e)| SceneCamera { id: i as u32, intrinsics, extrinsic: *e })
        .collect();
    if let Some((deg, meters)) = opts.perturb {
        for cam in cameras.iter_mut().skip(1) {
            let axis: [f64; 3] = UnitSphere.sample(&mut rng);
            let dir: [f64; 3] = UnitSphere.sample(&mut rng);
            let p = RigidTransform::from_axis_angle(
                Vec3::from(axis),
                deg.to_radians(),
                Vec3::from(dir) * meters,
            );
            cam.extrinsic = p.compose(&cam.extrinsic);
        }
    }

    // Identity and texture are fixed per subject; expression follows a
    // smooth periodic trajectory.
    let alpha: Vec<f64> = (0..dims.k_id).map(|_| std_normal.sample(&mut rng)).collect();
    let delta: Vec<f64> = (0..dims.k_tex).map(|_| 0.5 * std_normal.sample(&mut rng)).collect();
    let beta_base: Vec<f64> = (0..dims.k_exp).map(|_| 0.3 * std_normal.sample(&mut rng)).collect();
    let beta_amp: Vec<f64> = (0..dims.k_exp).map(|_| rng.random_range(0.3..0.8)).collect();
    let beta_phase: Vec<f64> = (0..dims.k_exp)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    let lighting: Vec<ShadingParams> = (0..opts.cameras).map(|_| random_lighting(&mut rng)).collect();

    let albedo = face_albedo(model, &delta)?;
    let detail = VertexOffsets { offsets: detail_field(model, opts.detail, opts.seed) };
    let depth_noise = Normal::new(0.0, opts.noise_mm.max(f64::MIN_POSITIVE)).unwrap();
    let mut gt = SequenceData { fps: opts.fps, frames: Vec::new(), params: Vec::new() };

    for t in 0..opts.frames {
        let omega = std::f64::consts::TAU * t as f64 / EXPRESSION_PERIOD;
        let beta: Vec<f64> = (0..dims.k_exp)
            .map(|j| beta_base[j] + beta_amp[j] * (omega + beta_phase[j]).sin())
            .collect();
        let mut params = FaceParams {
            alpha: alpha.clone(),
            beta,
            delta: delta.clone(),
            gamma: Default::default(),
        };
        for (cam, g) in cameras.iter().zip(&lighting) {
            params.gamma.insert(cam.id, *g);
        }
        let shape = assemble_face(model, &params, &detail)?.vertices;
        let normals = vertex_normals(&model.topology, &shape);

        for (ci, cam) in cameras.iter().enumerate() {
            let ext = &true_extrinsics[ci];
            let render = render_shaded(&shape, &normals, &model.topology, &albedo, &lighting[ci], ext, &intrinsics)?;
            let mut depth = render.output.depth_mm();
            if opts.noise_mm > 0.0 {
                for (d, z) in depth.iter_mut().zip(&render.output.depth) {
                    if *d > 0 {
                        let mm = (z * 1000.0 + depth_noise.sample(&mut rng)).round();
                        *d = mm.clamp(1.0, u16::MAX as f64) as u16;
                    }
                }
            }
            let landmarks: Vec<[f64; 2]> = model
                .landmark_indices
                .iter()
                .map(|&v| intrinsics.project(&render.camera_vertices[v]))
                .collect();
            write_rgb8_png(&color_path(dir, cam.id, t), size, size, render.output.color_bytes())?;
            write_gray16_png(&depth_path(dir, cam.id, t), size, size, depth)?;
            write_json(&landmarks_path(dir, cam.id, t), &landmarks)?;
        }
        gt.frames.push(shape);
        gt.params.push(params);
    }

    let scene = Scene {
        dir: dir.to_path_buf(),
        cameras,
        frame_count: opts.frames,
        fps: opts.fps,
        landmark_count: model.landmark_indices.len(),
    };
    scene.save_manifest()?;
    save_sequence(&dir.join("gt"), &gt, None)?;
    write_json_pretty(&dir.join("gt").join("extrinsics.json"), &true_extrinsics)?;
    Ok(SynthSceneOutput {
        scene,
        ground_truth: gt,
        true_extrinsics,
    })
}
