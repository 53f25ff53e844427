use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;

use super::adam::{AdamBlock, AdamHyper};
use super::objective::{ActiveBlocks, FrameObservations, LossTerms, Objective, ParamGrads, Stage};
use super::FitConfig;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::model::{assemble_face, FaceParams, MorphableModel, VertexOffsets};
use crate::render::ShadingParams;
use crate::scene::Scene;

/// Adam moments for every parameter block; reset at the start of each stage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamMoments {
    pub alpha: AdamBlock,
    pub beta: AdamBlock,
    pub delta: AdamBlock,
    pub gamma: BTreeMap<u32, AdamBlock>,
    pub offsets: AdamBlock,
    /// Steps taken since the last reset.
    pub t: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitState {
    pub params: FaceParams,
    pub offsets: VertexOffsets,
    pub moments: AdamMoments,
    /// Total optimizer steps over the state's lifetime.
    pub iteration: u64,
}

impl FitState {
    /// Zero shape/texture parameters, unit ambient light per camera.
    pub fn initial(model: &MorphableModel, camera_ids: impl IntoIterator<Item = u32>) -> Self {
        let mut params = model.zero_params();
        for id in camera_ids {
            params.gamma.insert(id, ShadingParams::ambient(1.0));
        }
        Self {
            params,
            offsets: VertexOffsets::zeros(model.vertex_count()),
            moments: AdamMoments::default(),
            iteration: 0,
        }
    }

    pub fn vertices(&self, model: &MorphableModel) -> Result<Vec<Vec3>> {
        Ok(assemble_face(model, &self.params, &self.offsets)?.vertices)
    }

    /// Vertices with the offsets dropped.
    pub fn base_vertices(&self, model: &MorphableModel) -> Result<Vec<Vec3>> {
        let zero = VertexOffsets::zeros(model.vertex_count());
        Ok(assemble_face(model, &self.params, &zero)?.vertices)
    }
}

/// One Adam update of the active blocks; offsets step with `lr_offsets`.
pub fn adam_step(
    state: &mut FitState,
    grads: &ParamGrads,
    lr: f64,
    lr_offsets: f64,
    active: ActiveBlocks,
    hyper: &AdamHyper,
) {
    let mo = &mut state.moments;
    mo.t += 1;
    let t = mo.t;
    let p = &mut state.params;
    if active.alpha {
        mo.alpha.step(&mut p.alpha, &grads.alpha, lr, hyper, t);
    }
    if active.beta {
        mo.beta.step(&mut p.beta, &grads.beta, lr, hyper, t);
    }
    if active.delta {
        mo.delta.step(&mut p.delta, &grads.delta, lr, hyper, t);
    }
    if active.gamma {
        for (id, g) in &grads.gamma {
            if let Some(gamma) = p.gamma.get_mut(id) {
                mo.gamma.entry(*id).or_default().step(&mut gamma.0, g, lr, hyper, t);
            }
        }
    }
    if active.offsets {
        let mut flat: Vec<f64> = state.offsets.offsets.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
        let g: Vec<f64> = grads.offsets.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
        mo.offsets.step(&mut flat, &g, lr_offsets, hyper, t);
        for (v, chunk) in state.offsets.offsets.iter_mut().zip(flat.chunks_exact(3)) {
            *v = Vec3::new(chunk[0], chunk[1], chunk[2]);
        }
    }
    state.iteration += 1;
}

#[derive(Debug, Clone, Serialize)]
pub struct StageReport {
    pub stage: Stage,
    pub lr: f64,
    pub iterations: usize,
    /// Loss before each update.
    pub losses: Vec<LossTerms>,
    /// Loss after the last update.
    pub final_loss: LossTerms,
    /// Kept out of serialized reports so they stay reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
    #[serde(skip)]
    pub final_params: FaceParams,
    #[serde(skip)]
    pub final_offsets: VertexOffsets,
}

fn run_stage(
    objective: &Objective,
    state: &mut FitState,
    stage: Stage,
    iters: usize,
    lr: f64,
    reference: Option<&[Vec3]>,
) -> Result<StageReport> {
    let start = Instant::now();
    let cfg = objective.config;
    let hyper = AdamHyper {
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
    };
    state.moments = AdamMoments::default();
    let wrap = |iteration: usize, e: Error| Error::Stage {
        stage: stage.name(),
        iteration,
        source: Box::new(e),
    };
    let mut losses = Vec::with_capacity(iters);
    for it in 0..iters {
        let eval = objective
            .evaluate(stage, &state.params, &state.offsets, reference, None)
            .map_err(|e| wrap(it, e))?;
        losses.push(eval.terms);
        adam_step(state, &eval.grads, lr, lr * cfg.lr_offset_scale, stage.active(), &hyper);
    }
    let final_loss = objective
        .evaluate(stage, &state.params, &state.offsets, reference, None)
        .map_err(|e| wrap(iters, e))?
        .terms;
    Ok(StageReport {
        stage,
        lr,
        iterations: iters,
        losses,
        final_loss,
        wall_time_s: start.elapsed().as_secs_f64(),
        final_params: state.params.clone(),
        final_offsets: state.offsets.clone(),
    })
}

/// Landmark, 3DMM and vertex stages on the first frame, each warm-started
/// from the previous one.
pub fn fit_first_frame(
    obs: &FrameObservations,
    model: &MorphableModel,
    config: &FitConfig,
) -> Result<(FitState, Vec<StageReport>)> {
    config.validate()?;
    let objective = Objective { model, observations: obs, config };
    let mut state = FitState::initial(model, obs.views.iter().map(|v| v.id));
    let lr = config.lr_first;
    let r1 = run_stage(&objective, &mut state, Stage::Landmark, config.iters_landmark, lr, None)?;
    let r2 = run_stage(&objective, &mut state, Stage::Dmm, config.iters_stage2, lr, None)?;
    let reference = state.base_vertices(model)?;
    let r3 = run_stage(&objective, &mut state, Stage::Vertex, config.iters_stage3, lr, Some(&reference))?;
    Ok((state, vec![r1, r2, r3]))
}

/// Vertex-stage fit warm-started from the previous frame's solution.
pub fn fit_next_frame(
    prev: &FitState,
    obs: &FrameObservations,
    model: &MorphableModel,
    config: &FitConfig,
) -> Result<(FitState, StageReport)> {
    config.validate()?;
    let objective = Objective { model, observations: obs, config };
    let mut state = prev.clone();
    for v in &obs.views {
        state.params.gamma.entry(v.id).or_default();
    }
    let reference = state.base_vertices(model)?;
    let report = run_stage(
        &objective,
        &mut state,
        Stage::Vertex,
        config.iters_seq,
        config.lr_seq,
        Some(&reference),
    )?;
    Ok((state, report))
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameReport {
    pub frame: usize,
    pub stages: Vec<StageReport>,
}

#[derive(Debug, Clone)]
pub struct SequenceResult {
    pub fps: f64,
    pub vertices: Vec<Vec<Vec3>>,
    pub params: Vec<FaceParams>,
    pub offsets: Vec<VertexOffsets>,
    pub reports: Vec<FrameReport>,
}

pub fn reconstruct_sequence(
    scene: &Scene,
    model: &MorphableModel,
    config: &FitConfig,
) -> Result<SequenceResult> {
    reconstruct_frames(scene.frame_count, scene.fps, |t| scene.observations(t), model, config)
}

/// Sequence reconstruction over any frame source.
pub fn reconstruct_frames(
    frame_count: usize,
    fps: f64,
    mut load: impl FnMut(usize) -> Result<FrameObservations>,
    model: &MorphableModel,
    config: &FitConfig,
) -> Result<SequenceResult> {
    if frame_count == 0 {
        return Err(Error::TooFewFrames { found: 0, needed: 1 });
    }
    let mut out = SequenceResult {
        fps,
        vertices: Vec::with_capacity(frame_count),
        params: Vec::with_capacity(frame_count),
        offsets: Vec::with_capacity(frame_count),
        reports: Vec::with_capacity(frame_count),
    };
    let mut state: Option<FitState> = None;
    for t in 0..frame_count {
        let obs = load(t)?;
        let (next, stages) = match &state {
            None => fit_first_frame(&obs, model, config)?,
            Some(prev) => {
                let (s, r) = fit_next_frame(prev, &obs, model, config)?;
                (s, vec![r])
            }
        };
        out.vertices.push(next.vertices(model)?);
        out.params.push(next.params.clone());
        out.offsets.push(next.offsets.clone());
        out.reports.push(FrameReport { frame: t, stages });
        state = Some(next);
    }
    Ok(out)
}
