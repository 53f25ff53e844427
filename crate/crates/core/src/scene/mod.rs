//! Multi-camera RGB-D capture directories: `scene.json` plus per-camera
//! color, depth and landmark files for every frame.

mod calibrate;
pub(crate) mod synth;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::{CameraView, FrameObservations};
use crate::io::{read_gray16_png, read_json, read_rgb8_png, write_json_pretty};
use crate::rig::{CameraIntrinsics, ColorImage, DepthImage, RGBDFrame, RigidTransform};

pub use calibrate::{calibrate_scene, CalibrationOptions, CalibrationResult};
pub use synth::{synth_scene, SynthSceneOptions, SynthSceneOutput};

pub const SCENE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneCamera {
    pub id: u32,
    pub intrinsics: CameraIntrinsics,
    /// World to camera, row-major 4x4 on disk.
    pub extrinsic: RigidTransform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SceneManifest {
    format_version: u32,
    frame_count: usize,
    fps: f64,
    landmark_count: usize,
    cameras: Vec<SceneCamera>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub dir: PathBuf,
    /// Sorted by id; the first camera is the calibration master.
    pub cameras: Vec<SceneCamera>,
    pub frame_count: usize,
    pub fps: f64,
    pub landmark_count: usize,
}

pub fn color_path(dir: &Path, camera: u32, frame: usize) -> PathBuf {
    dir.join(format!("cam{camera}")).join(format!("color_{frame:06}.png"))
}

pub fn depth_path(dir: &Path, camera: u32, frame: usize) -> PathBuf {
    dir.join(format!("cam{camera}")).join(format!("depth_{frame:06}.png"))
}

pub fn landmarks_path(dir: &Path, camera: u32, frame: usize) -> PathBuf {
    dir.join(format!("cam{camera}")).join(format!("landmarks_{frame:06}.json"))
}

impl Scene {
    pub fn load(dir: &Path) -> Result<Self> {
        let m: SceneManifest = read_json(&dir.join("scene.json"))?;
        if m.format_version != SCENE_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: m.format_version,
                supported: SCENE_FORMAT_VERSION,
            });
        }
        let scene = Scene {
            dir: dir.to_path_buf(),
            cameras: m.cameras,
            frame_count: m.frame_count,
            fps: m.fps,
            landmark_count: m.landmark_count,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras.is_empty() {
            return Err(Error::InvalidArgument("scene has no cameras".into()));
        }
        if self.frame_count == 0 {
            return Err(Error::TooFewFrames { found: 0, needed: 1 });
        }
        if !(self.fps > 0.0) {
            return Err(Error::InvalidArgument(format!("fps must be > 0, got {}", self.fps)));
        }
        for w in self.cameras.windows(2) {
            if w[0].id >= w[1].id {
                return Err(Error::InvalidArgument("camera ids must be unique and sorted".into()));
            }
        }
        for c in &self.cameras {
            c.intrinsics.validate()?;
        }
        Ok(())
    }

    /// Writes `scene.json` into `self.dir`.
    pub fn save_manifest(&self) -> Result<()> {
        self.validate()?;
        let m = SceneManifest {
            format_version: SCENE_FORMAT_VERSION,
            frame_count: self.frame_count,
            fps: self.fps,
            landmark_count: self.landmark_count,
            cameras: self.cameras.clone(),
        };
        write_json_pretty(&self.dir.join("scene.json"), &m)
    }

    pub fn load_frame(&self, camera_index: usize, frame: usize) -> Result<RGBDFrame> {
        let cam = &self.cameras[camera_index];
        let paths = [
            color_path(&self.dir, cam.id, frame),
            depth_path(&self.dir, cam.id, frame),
            landmarks_path(&self.dir, cam.id, frame),
        ];
        for p in &paths {
            if !p.is_file() {
                return Err(Error::MissingFrame {
                    camera: cam.id,
                    frame,
                    path: p.clone(),
                });
            }
        }
        let (w, h) = (cam.intrinsics.width, cam.intrinsics.height);
        let size_check = |path: &Path, pw: u32, ph: u32| {
            if (pw, ph) != (w, h) {
                return Err(Error::Image {
                    path: path.to_path_buf(),
                    message: format!("image is {pw}x{ph}, camera is {w}x{h}"),
                });
            }
            Ok(())
        };
        let (cw, ch, color) = read_rgb8_png(&paths[0])?;
        size_check(&paths[0], cw, ch)?;
        let (dw, dh, depth) = read_gray16_png(&paths[1])?;
        size_check(&paths[1], dw, dh)?;
        let landmarks2d: Vec<[f64; 2]> = read_json(&paths[2])?;
        if landmarks2d.len() != self.landmark_count {
            return Err(Error::dims("landmarks2d", self.landmark_count, landmarks2d.len()));
        }
        Ok(RGBDFrame {
            camera_id: cam.id,
            color: ColorImage { width: w, height: h, data: color },
            depth: DepthImage { width: w, height: h, data: depth },
            landmarks2d,
            timestamp_index: frame,
        })
    }

    pub fn observations(&self, frame: usize) -> Result<FrameObservations> {
        if frame >= self.frame_count {
            return Err(Error::InvalidArgument(format!(
                "frame {frame} out of range (scene has {})",
                self.frame_count
            )));
        }
        let views = (0..self.cameras.len())
            .map(|i| {
                let cam = &self.cameras[i];
                Ok(CameraView {
                    id: cam.id,
                    intrinsics: cam.intrinsics,
                    extrinsic: cam.extrinsic,
                    frame: self.load_frame(i, frame)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        FrameObservations::new(views)
    }
}
