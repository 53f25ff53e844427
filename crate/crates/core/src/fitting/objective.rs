//! Stage objectives: the weighted sum of loss terms over all cameras and its
//! gradient with respect to every parameter block.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::losses::{
    loss_depth, loss_edge, loss_landmark2d, loss_landmark3d, loss_laplacian, loss_offset,
    loss_prior, loss_rgb,
};
use super::FitConfig;
use crate::error::{Error, Result};
use crate::geometry::{vertex_normals, vertex_normals_backward, Vec3};
use crate::model::{
    assemble_face, basis_transpose_times, face_albedo_unclamped, FaceParams, MorphableModel,
    VertexOffsets,
};
use crate::render::{
    evaluate_fixed_visibility, render_shaded, render_shaded_backward, sh_shade, Fragment,
    ShadedRender,
};
use crate::rig::{CameraIntrinsics, RGBDFrame, RigidTransform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Landmark,
    Dmm,
    Vertex,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Landmark => "landmark",
            Stage::Dmm => "dmm",
            Stage::Vertex => "vertex",
        }
    }

    /// Parameter blocks the optimizer updates in this stage.
    pub fn active(self) -> ActiveBlocks {
        match self {
            Stage::Landmark => ActiveBlocks { alpha: true, beta: true, delta: false, gamma: false, offsets: false },
            Stage::Dmm => ActiveBlocks { alpha: true, beta: true, delta: true, gamma: true, offsets: false },
            Stage::Vertex => ActiveBlocks { alpha: true, beta: true, delta: true, gamma: true, offsets: true },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveBlocks {
    pub alpha: bool,
    pub beta: bool,
    pub delta: bool,
    pub gamma: bool,
    pub offsets: bool,
}

/// One camera's calibrated view of a frame.
#[derive(Debug, Clone)]
pub struct CameraView {
    pub id: u32,
    pub intrinsics: CameraIntrinsics,
    /// World to camera.
    pub extrinsic: RigidTransform,
    pub frame: RGBDFrame,
}

#[derive(Debug, Clone)]
pub struct FrameObservations {
    /// Sorted by camera id; losses are accumulated in this order.
    pub views: Vec<CameraView>,
    /// World-space 3D landmarks fused over cameras.
    pub landmarks3d: Vec<Option<Vec3>>,
}

impl FrameObservations {
    pub fn new(mut views: Vec<CameraView>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::InvalidArgument("no camera views".into()));
        }
        views.sort_by_key(|v| v.id);
        let landmarks3d = fuse_landmarks(&views)?;
        Ok(Self { views, landmarks3d })
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

/// Back-projects every camera's 2D landmarks through its depth map into world
/// space and takes the per-landmark, per-axis median over the cameras that
/// have valid depth there.
pub fn fuse_landmarks(views: &[CameraView]) -> Result<Vec<Option<Vec3>>> {
    let count = views[0].frame.landmarks2d.len();
    let mut per_view = Vec::with_capacity(views.len());
    for v in views {
        if v.frame.landmarks2d.len() != count {
            return Err(Error::dims("landmarks2d", count, v.frame.landmarks2d.len()));
        }
        let to_world = v.extrinsic.inverse();
        per_view.push(
            v.frame
                .landmarks3d(&v.intrinsics)
                .into_iter()
                .map(|p| p.map(|p| to_world.apply(&p)))
                .collect::<Vec<_>>(),
        );
    }
    Ok((0..count)
        .map(|k| {
            let hits: Vec<Vec3> = per_view.iter().filter_map(|lm| lm[k]).collect();
            if hits.is_empty() {
                return None;
            }
            let mut out = Vec3::zeros();
            for c in 0..3 {
                let mut axis: Vec<f64> = hits.iter().map(|p| p[c]).collect();
                out[c] = median(&mut axis);
            }
            Some(out)
        })
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub landmark3d: f64,
    pub landmark2d: f64,
    pub rgb: f64,
    pub depth: f64,
    pub prior: f64,
    pub edge: f64,
    pub laplacian: f64,
    pub offset: f64,
}

impl LossTerms {
    pub fn is_finite(&self) -> bool {
        [
            self.total,
            self.landmark3d,
            self.landmark2d,
            self.rgb,
            self.depth,
            self.prior,
            self.edge,
            self.laplacian,
            self.offset,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub delta: Vec<f64>,
    pub gamma: BTreeMap<u32, [f64; 27]>,
    pub offsets: Vec<Vec3>,
}

impl ParamGrads {
    fn zeros(params: &FaceParams, n: usize) -> Self {
        Self {
            alpha: vec![0.0; params.alpha.len()],
            beta: vec![0.0; params.beta.len()],
            delta: vec![0.0; params.delta.len()],
            gamma: params.gamma.keys().map(|&k| (k, [0.0; 27])).collect(),
            offsets: vec![Vec3::zeros(); n],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.alpha
            .iter()
            .chain(&self.beta)
            .chain(&self.delta)
            .chain(self.gamma.values().flatten())
            .chain(self.offsets.iter().flat_map(|v| v.iter()))
            .all(|x| x.is_finite())
    }
}

/// Per-camera pixel ownership from a forward pass.
pub type Visibility = Vec<Vec<Option<Fragment>>>;

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub terms: LossTerms,
    pub grads: ParamGrads,
    /// Per-camera visibility used for this evaluation (empty for the
    /// landmark stage).
    pub visibility: Visibility,
}

/// The fitting problem for one frame.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub model: &'a MorphableModel,
    pub observations: &'a FrameObservations,
    pub config: &'a FitConfig,
}

impl Objective<'_> {
    /// Stage loss and gradients. `reference` is the edge-length reference
    /// mesh, required in the vertex stage. With `visibility` set, pixels keep
    /// the given triangles instead of being re-rasterized.
    pub fn evaluate(
        &self,
        stage: Stage,
        params: &FaceParams,
        offsets: &VertexOffsets,
        reference: Option<&[Vec3]>,
        visibility: Option<&Visibility>,
    ) -> Result<Evaluation> {
        let model = self.model;
        let cfg = self.config;
        let n = model.vertex_count();
        let topo = &*model.topology;
        let shape = assemble_face(model, params, offsets)?.vertices;

        let mut terms = LossTerms::default();
        let mut grads = ParamGrads::zeros(params, n);
        let mut grad_shape = vec![Vec3::zeros(); n];
        let mut vis_out = Vec::new();

        match stage {
            Stage::Landmark => {
                let (v, g) = loss_landmark3d(
                    &shape,
                    &model.landmark_indices,
                    &self.observations.landmarks3d,
                )?;
                terms.landmark3d = v;
                terms.total += v;
                grad_shape = g;
            }
            Stage::Dmm | Stage::Vertex => {
                let raw = face_albedo_unclamped(model, &params.delta)?;
                let albedo: Vec<Vec3> = raw.iter().map(|c| c.map(|x| x.clamp(0.0, 1.0))).collect();
                let normals = vertex_normals(topo, &shape);
                let mut grad_normals = vec![Vec3::zeros(); n];
                let mut grad_albedo = vec![Vec3::zeros(); n];

                if let Some(vis) = visibility {
                    if vis.len() != self.observations.views.len() {
                        return Err(Error::dims("visibility", self.observations.views.len(), vis.len()));
                    }
                }
                for (ci, view) in self.observations.views.iter().enumerate() {
                    let gamma = params.gamma.get(&view.id).ok_or_else(|| {
                        Error::InvalidArgument(format!("no lighting for camera {}", view.id))
                    })?;
                    let render = match visibility {
                        None => render_shaded(
                            &shape,
                            &normals,
                            topo,
                            &albedo,
                            gamma,
                            &view.extrinsic,
                            &view.intrinsics,
                        )?,
                        Some(vis) => {
                            let colors = sh_shade(&albedo, &normals, gamma)?;
                            let camera_vertices: Vec<Vec3> =
                                shape.iter().map(|p| view.extrinsic.apply(p)).collect();
                            let output = evaluate_fixed_visibility(
                                &vis[ci],
                                &camera_vertices,
                                topo,
                                &colors,
                                &view.intrinsics,
                            )?;
                            ShadedRender { output, camera_vertices, colors }
                        }
                    };

                    let (l_rgb, g_rgb) = loss_rgb(&render.output, &view.frame.color)?;
                    let (l_d, mut g_d) =
                        loss_depth(&render.output, &view.frame.depth, cfg.depth_trunc_m)?;
                    g_d.iter_mut().for_each(|g| *g *= cfg.lambda_d);
                    let (l_lm, g_lm) = loss_landmark2d(
                        &render.camera_vertices,
                        &model.landmark_indices,
                        &view.frame.landmarks2d,
                        &view.intrinsics,
                    )?;
                    terms.rgb += l_rgb;
                    terms.depth += l_d;
                    terms.landmark2d += l_lm;
                    terms.total += l_rgb + cfg.lambda_d * l_d + cfg.lambda_lm * l_lm;

                    let sg = render_shaded_backward(
                        &render,
                        &g_rgb,
                        &g_d,
                        &normals,
                        topo,
                        &albedo,
                        gamma,
                        &view.extrinsic,
                        &view.intrinsics,
                    )?;
                    let rt = view.extrinsic.rotation.transpose();
                    for v in 0..n {
                        grad_shape[v] += sg.vertices[v] + rt * g_lm[v] * cfg.lambda_lm;
                        grad_normals[v] += sg.normals[v];
                        grad_albedo[v] += sg.albedo[v];
                    }
                    grads.gamma.insert(view.id, sg.gamma);
                    vis_out.push(render.output.frags);
                }

                let gn = vertex_normals_backward(topo, &shape, &grad_normals);
                for v in 0..n {
                    grad_shape[v] += gn[v];
                    for c in 0..3 {
                        // Clamped channels pass no gradient.
                        if !(raw[v][c] > 0.0 && raw[v][c] < 1.0) {
                            grad_albedo[v][c] = 0.0;
                        }
                    }
                }
                grads.delta = basis_transpose_times(&model.texture_basis, &grad_albedo);
            }
        }

        terms.prior = loss_prior(params);
        terms.total += cfg.lambda_p * terms.prior;
        let prior_grad = |x: &[f64]| x.iter().map(|v| 2.0 * cfg.lambda_p * v).collect::<Vec<_>>();

        if stage == Stage::Vertex {
            let reference = reference.ok_or_else(|| {
                Error::InvalidArgument("vertex stage needs an edge reference mesh".into())
            })?;
            let (l_e, g_e) = loss_edge(&shape, reference, topo)?;
            let (l_lap, g_lap) = loss_laplacian(&offsets.offsets, topo)?;
            let (l_op, g_op) = loss_offset(&offsets.offsets);
            terms.edge = l_e;
            terms.laplacian = l_lap;
            terms.offset = l_op;
            terms.total += cfg.lambda_e * l_e + cfg.lambda_lap * l_lap + cfg.lambda_op * l_op;
            for v in 0..n {
                grad_shape[v] += g_e[v] * cfg.lambda_e;
                grads.offsets[v] = g_lap[v] * cfg.lambda_lap + g_op[v] * cfg.lambda_op;
            }
        }

        // The shape is linear in alpha, beta and the offsets.
        for v in 0..n {
            grads.offsets[v] += grad_shape[v];
        }
        grads.alpha = basis_transpose_times(&model.identity_basis, &grad_shape);
        grads.beta = basis_transpose_times(&model.expression_basis, &grad_shape);
        let pa = prior_grad(&params.alpha);
        let pb = prior_grad(&params.beta);
        let pd = prior_grad(&params.delta);
        grads.alpha.iter_mut().zip(pa).for_each(|(g, p)| *g += p);
        grads.beta.iter_mut().zip(pb).for_each(|(g, p)| *g += p);
        grads.delta.iter_mut().zip(pd).for_each(|(g, p)| *g += p);

        if !terms.is_finite() || !grads.is_finite() {
            return Err(Error::NonFinite(format!("{} stage loss", stage.name())));
        }
        Ok(Evaluation {
            terms,
            grads,
            visibility: vis_out,
        })
    }
}
