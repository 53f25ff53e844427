//! Individual loss terms, each returning its value and the gradient with
//! respect to its direct input.

use crate::error::{Error, Result};
use crate::geometry::{Topology, Vec3};
use crate::model::FaceParams;
use crate::render::{RenderOutput, NEAR_PLANE};
use crate::rig::{CameraIntrinsics, ColorImage, DepthImage};

/// Mean squared distance between model landmarks and observed 3D landmarks;
/// observations marked `None` are skipped. Gradient is over all vertices.
pub fn loss_landmark3d(
    vertices: &[Vec3],
    landmark_indices: &[usize],
    observed: &[Option<Vec3>],
) -> Result<(f64, Vec<Vec3>)> {
    if observed.len() != landmark_indices.len() {
        return Err(Error::dims("landmarks", landmark_indices.len(), observed.len()));
    }
    let valid = observed.iter().filter(|o| o.is_some()).count();
    if valid == 0 {
        return Err(Error::NoValidLandmarks);
    }
    let scale = 1.0 / valid as f64;
    let mut grad = vec![Vec3::zeros(); vertices.len()];
    let mut value = 0.0;
    for (&v, obs) in landmark_indices.iter().zip(observed) {
        let Some(q) = obs else { continue };
        let d = vertices[v] - q;
        value += d.norm_squared() * scale;
        grad[v] += d * (2.0 * scale);
    }
    Ok((value, grad))
}

/// Mean squared reprojection error of camera-space landmarks, in units of
/// the image diagonal squared.
pub fn loss_landmark2d(
    camera_vertices: &[Vec3],
    landmark_indices: &[usize],
    observed: &[[f64; 2]],
    intrinsics: &CameraIntrinsics,
) -> Result<(f64, Vec<Vec3>)> {
    if observed.len() != landmark_indices.len() {
        return Err(Error::dims("landmarks2d", landmark_indices.len(), observed.len()));
    }
    if observed.is_empty() {
        return Err(Error::NoValidLandmarks);
    }
    let scale = 1.0 / (observed.len() as f64 * intrinsics.diagonal().powi(2));
    let mut grad = vec![Vec3::zeros(); camera_vertices.len()];
    let mut value = 0.0;
    for (k, (&v, obs)) in landmark_indices.iter().zip(observed).enumerate() {
        let p = camera_vertices[v];
        if p.z <= NEAR_PLANE {
            return Err(Error::LandmarkBehindCamera(k));
        }
        let [u, w] = intrinsics.project(&p);
        let (du, dv) = (u - obs[0], w - obs[1]);
        value += (du * du + dv * dv) * scale;
        let (gu, gv) = (2.0 * du * scale, 2.0 * dv * scale);
        let (fx, fy) = (intrinsics.fx, intrinsics.fy);
        grad[v] += Vec3::new(
            gu * fx / p.z,
            gv * fy / p.z,
            -(gu * fx * p.x + gv * fy * p.y) / (p.z * p.z),
        );
    }
    Ok((value, grad))
}

/// Mean over covered pixels of the Euclidean norm of the RGB residual, with
/// the observation mapped to `[0, 1]`. Gradient is per pixel.
pub fn loss_rgb(render: &RenderOutput, observed: &ColorImage) -> Result<(f64, Vec<Vec3>)> {
    if observed.width != render.width || observed.height != render.height {
        return Err(Error::dims(
            "color image",
            format!("{}x{}", render.width, render.height),
            format!("{}x{}", observed.width, observed.height),
        ));
    }
    let covered = render.covered_count();
    if covered == 0 {
        return Err(Error::NoCoveredPixels);
    }
    let scale = 1.0 / covered as f64;
    let mut grad = vec![Vec3::zeros(); render.color.len()];
    let mut value = 0.0;
    for (i, frag) in render.frags.iter().enumerate() {
        if frag.is_none() {
            continue;
        }
        let obs = Vec3::new(
            observed.data[3 * i] as f64,
            observed.data[3 * i + 1] as f64,
            observed.data[3 * i + 2] as f64,
        ) / 255.0;
        let r = render.color[i] - obs;
        let norm = r.norm();
        value += norm * scale;
        if norm > 0.0 {
            grad[i] = r * (scale / norm);
        }
    }
    Ok((value, grad))
}

/// Mean truncated absolute depth error (meters) over pixels that are both
/// covered and valid in the observation.
pub fn loss_depth(
    render: &RenderOutput,
    observed: &DepthImage,
    trunc_m: f64,
) -> Result<(f64, Vec<f64>)> {
    if observed.width != render.width || observed.height != render.height {
        return Err(Error::dims(
            "depth image",
            format!("{}x{}", render.width, render.height),
            format!("{}x{}", observed.width, observed.height),
        ));
    }
    let valid = |i: usize| render.frags[i].is_some() && observed.data[i] > 0;
    let count = (0..render.depth.len()).filter(|&i| valid(i)).count();
    if count == 0 {
        return Err(Error::NoValidDepth);
    }
    let scale = 1.0 / count as f64;
    let mut grad = vec![0.0; render.depth.len()];
    let mut value = 0.0;
    for i in (0..render.depth.len()).filter(|&i| valid(i)) {
        let e = render.depth[i] - observed.data[i] as f64 / 1000.0;
        if e.abs() < trunc_m {
            value += e.abs() * scale;
            if e != 0.0 {
                grad[i] = e.signum() * scale;
            }
        } else {
            value += trunc_m * scale;
        }
    }
    Ok((value, grad))
}

/// `|alpha|^2 + |beta|^2 + |delta|^2`; lighting is not regularized.
pub fn loss_prior(params: &FaceParams) -> f64 {
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    sq(&params.alpha) + sq(&params.beta) + sq(&params.delta)
}

/// Mean over unique edges of the squared change in edge length relative to
/// `reference`.
pub fn loss_edge(vertices: &[Vec3], reference: &[Vec3], topology: &Topology) -> Result<(f64, Vec<Vec3>)> {
    if vertices.len() != topology.vertex_count() || reference.len() != vertices.len() {
        return Err(Error::dims("reference", vertices.len(), reference.len()));
    }
    let edges = topology.edges();
    let mut grad = vec![Vec3::zeros(); vertices.len()];
    if edges.is_empty() {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / edges.len() as f64;
    let mut value = 0.0;
    for &[a, b] in edges {
        let e = vertices[a] - vertices[b];
        let len = e.norm();
        let diff = len - (reference[a] - reference[b]).norm();
        value += diff * diff * scale;
        if len > 0.0 {
            let g = e * (2.0 * diff * scale / len);
            grad[a] += g;
            grad[b] -= g;
        }
    }
    Ok((value, grad))
}

/// Uniform umbrella Laplacian of the offset field: `R_v - mean(R_u, u ~ v)`.
/// Isolated vertices contribute zero.
pub fn umbrella_laplacian(offsets: &[Vec3], topology: &Topology) -> Vec<Vec3> {
    (0..offsets.len())
        .map(|v| {
            let nb = topology.neighbors(v);
            if nb.is_empty() {
                return Vec3::zeros();
            }
            offsets[v] - nb.iter().map(|&u| offsets[u]).sum::<Vec3>() / nb.len() as f64
        })
        .collect()
}

/// Mean squared norm of the umbrella Laplacian of the offsets.
pub fn loss_laplacian(offsets: &[Vec3], topology: &Topology) -> Result<(f64, Vec<Vec3>)> {
    let n = topology.vertex_count();
    if offsets.len() != n {
        return Err(Error::dims("offsets", n, offsets.len()));
    }
    if n == 0 {
        return Ok((0.0, Vec::new()));
    }
    let lap = umbrella_laplacian(offsets, topology);
    let scale = 1.0 / n as f64;
    let value = lap.iter().map(|l| l.norm_squared()).sum::<f64>() * scale;
    let mut grad = vec![Vec3::zeros(); n];
    for (v, l) in lap.iter().enumerate() {
        let nb = topology.neighbors(v);
        if nb.is_empty() {
            continue;
        }
        let g = l * (2.0 * scale);
        grad[v] += g;
        let share = g / nb.len() as f64;
        for &u in nb {
            grad[u] -= share;
        }
    }
    Ok((value, grad))
}

/// Mean squared offset norm.
pub fn loss_offset(offsets: &[Vec3]) -> (f64, Vec<Vec3>) {
    if offsets.is_empty() {
        return (0.0, Vec::new());
    }
    let scale = 1.0 / offsets.len() as f64;
    let value = offsets.iter().map(|r| r.norm_squared()).sum::<f64>() * scale;
    let grad = offsets.iter().map(|r| r * (2.0 * scale)).collect();
    (value, grad)
}
