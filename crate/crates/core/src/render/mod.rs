//! Differentiable rendering of per-vertex colored meshes into color and depth
//! images. Gradients hold visibility fixed: the triangle owning each pixel is
//! frozen at the forward pass, so there are no silhouette gradients.

mod raster;
mod sh;

use std::path::Path;

use crate::error::Result;
use crate::geometry::{Topology, Vec3};
use crate::io::{write_gray16_png, write_rgb8_png};
use crate::rig::{CameraIntrinsics, RigidTransform};

pub use raster::{
    evaluate_fixed_visibility, rasterize, rasterize_colors, render_backward, RasterGrads,
    NEAR_PLANE,
};
pub use sh::{
    sh_basis, sh_shade, sh_shade_backward, ShadeGrads, ShadingParams, SH_C0, SH_C1, SH_C2, SH_C3,
    SH_C4,
};

/// Triangle id and perspective-correct barycentric weights of a covered pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fragment {
    pub triangle: u32,
    pub bary: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: u32,
    pub height: u32,
    /// Linear radiance, row-major; zero where uncovered.
    pub color: Vec<Vec3>,
    /// Camera-space z in meters; `+inf` where uncovered.
    pub depth: Vec<f64>,
    pub frags: Vec<Option<Fragment>>,
}

impl RenderOutput {
    pub fn empty(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            color: vec![Vec3::zeros(); n],
            depth: vec![f64::INFINITY; n],
            frags: vec![None; n],
        }
    }

    pub fn coverage(&self) -> Vec<bool> {
        self.frags.iter().map(Option::is_some).collect()
    }

    pub fn covered_count(&self) -> usize {
        self.frags.iter().filter(|f| f.is_some()).count()
    }

    /// 8-bit color after clamping to `[0, 1]`.
    pub fn color_bytes(&self) -> Vec<u8> {
        self.color
            .iter()
            .flat_map(|c| [c.x, c.y, c.z])
            .map(|x| (x.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Depth in whole millimeters, zero where uncovered or out of range.
    pub fn depth_mm(&self) -> Vec<u16> {
        self.depth
            .iter()
            .map(|&z| {
                if z.is_finite() {
                    let mm = (z * 1000.0).round();
                    if mm >= 1.0 && mm <= u16::MAX as f64 {
                        return mm as u16;
                    }
                }
                0
            })
            .collect()
    }

    pub fn save_debug_pngs(&self, color_path: &Path, depth_path: &Path) -> Result<()> {
        write_rgb8_png(color_path, self.width, self.height, self.color_bytes())?;
        write_gray16_png(depth_path, self.width, self.height, self.depth_mm())
    }
}

/// One camera's render of a world-space mesh, with the intermediates the
/// backward pass needs.
#[derive(Debug, Clone)]
pub struct ShadedRender {
    pub output: RenderOutput,
    pub camera_vertices: Vec<Vec3>,
    pub colors: Vec<Vec3>,
}

/// Shades world-space vertices with world-space `normals` and renders them
/// through `extrinsic` (world to camera).
pub fn render_shaded(
    world_vertices: &[Vec3],
    normals: &[Vec3],
    topology: &Topology,
    albedo: &[Vec3],
    gamma: &ShadingParams,
    extrinsic: &RigidTransform,
    intrinsics: &CameraIntrinsics,
) -> Result<ShadedRender> {
    let colors = sh_shade(albedo, normals, gamma)?;
    let camera_vertices: Vec<Vec3> = world_vertices.iter().map(|p| extrinsic.apply(p)).collect();
    let output = rasterize_colors(&camera_vertices, topology, &colors, intrinsics)?;
    Ok(ShadedRender {
        output,
        camera_vertices,
        colors,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShadedGrads {
    /// World-space vertex gradient through projection only; the normal path
    /// is returned separately in `normals`.
    pub vertices: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub albedo: Vec<Vec3>,
    pub gamma: [f64; 27],
}

#[allow(clippy::too_many_arguments)]
pub fn render_shaded_backward(
    render: &ShadedRender,
    grad_color: &[Vec3],
    grad_depth: &[f64],
    normals: &[Vec3],
    topology: &Topology,
    albedo: &[Vec3],
    gamma: &ShadingParams,
    extrinsic: &RigidTransform,
    intrinsics: &CameraIntrinsics,
) -> Result<ShadedGrads> {
    let raster = render_backward(
        &render.output,
        grad_color,
        grad_depth,
        &render.camera_vertices,
        topology,
        &render.colors,
        intrinsics,
    )?;
    let shade = sh_shade_backward(albedo, normals, gamma, &raster.colors);
    let rt = extrinsic.rotation.transpose();
    Ok(ShadedGrads {
        vertices: raster.vertices.iter().map(|g| rt * g).collect(),
        normals: shade.normals,
        albedo: shade.albedo,
        gamma: shade.gamma,
    })
}
