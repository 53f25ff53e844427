use serde::Serialize;

use super::Scene;
use crate::error::{Error, Result};
use crate::rig::{backproject_depth, icp_point_to_plane, landmark_init_extrinsics, IcpParams, RigidTransform};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    /// Re-run ICP on every frame, warm-started from the previous frame's
    /// estimate. Otherwise only the first frame is used.
    pub every_frame: bool,
    pub icp: IcpParams,
    /// Pixel stride for the depth point clouds.
    pub stride: u32,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            every_frame: false,
            icp: IcpParams::default(),
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CameraCalibration {
    pub camera_id: u32,
    pub frame: usize,
    /// Camera-to-master transform from landmarks alone.
    pub landmark_init: RigidTransform,
    /// Camera-to-master transform after ICP.
    pub refined: RigidTransform,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationResult {
    /// New world-to-camera transforms; the master's is unchanged.
    pub extrinsics: Vec<RigidTransform>,
    pub per_frame: Vec<CameraCalibration>,
}

/// Estimates each subordinate camera's pose relative to the master (the
/// first camera) from landmarks, refines it with point-to-plane ICP on the
/// depth clouds, and re-expresses it in the master's world frame.
pub fn calibrate_scene(scene: &Scene, opts: &CalibrationOptions) -> Result<CalibrationResult> {
    let master = &scene.cameras[0];
    let frames = if opts.every_frame { scene.frame_count } else { 1 };
    let mut to_master: Vec<Option<RigidTransform>> = vec![None; scene.cameras.len()];
    let mut per_frame = Vec::new();

    for t in 0..frames {
        let views: Vec<_> = (0..scene.cameras.len())
            .map(|i| scene.load_frame(i, t))
            .collect::<Result<_>>()?;
        let landmarks: Vec<_> = views
            .iter()
            .zip(&scene.cameras)
            .map(|(f, c)| f.landmarks3d(&c.intrinsics))
            .collect();
        let init = landmark_init_extrinsics(&landmarks)?;
        let target = backproject_depth(&views[0].depth, &master.intrinsics, opts.stride)?;
        if target.is_empty() {
            return Err(Error::NoValidDepth);
        }
        for i in 1..scene.cameras.len() {
            let cam = &scene.cameras[i];
            let source = backproject_depth(&views[i].depth, &cam.intrinsics, opts.stride)?;
            if source.is_empty() {
                return Err(Error::NoValidDepth);
            }
            let start = to_master[i].unwrap_or(init[i]);
            let icp = icp_point_to_plane(&source, &target, &start, &opts.icp)?;
            per_frame.push(CameraCalibration {
                camera_id: cam.id,
                frame: t,
                landmark_init: init[i],
                refined: icp.transform,
                residual: icp.residual,
                iterations: icp.iterations,
                converged: icp.converged,
            });
            to_master[i] = Some(icp.transform);
        }
    }

    let extrinsics = scene
        .cameras
        .iter()
        .zip(&to_master)
        .map(|(c, t)| match t {
            None => c.extrinsic,
            Some(t) => t.inverse().compose(&master.extrinsic),
        })
        .collect();
    Ok(CalibrationResult { extrinsics, per_frame })
}
