//! Z-buffered triangle rasterization with perspective-correct interpolation
//! and its fixed-visibility backward pass.

use nalgebra::Matrix3;

use super::{Fragment, RenderOutput};
use crate::error::{Error, Result};
use crate::geometry::{Topology, Vec3};
use crate::model::Mesh;
use crate::rig::CameraIntrinsics;

/// Triangles with any vertex at or in front of this depth are culled.
pub const NEAR_PLANE: f64 = 1e-3;

const MIN_SCREEN_AREA: f64 = 1e-12;

fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Top-left rule for a positively oriented triangle in y-down image space.
fn is_top_left(a: [f64; 2], b: [f64; 2]) -> bool {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

fn inside(e: f64, top_left: bool) -> bool {
    e > 0.0 || (e == 0.0 && top_left)
}

/// Rasterizes a camera-space mesh; per-vertex albedo (when present) is the
/// interpolated color attribute.
pub fn rasterize(mesh: &Mesh, intrinsics: &CameraIntrinsics) -> Result<RenderOutput> {
    let colors = match &mesh.albedo {
        Some(a) => a.clone(),
        None => vec![Vec3::zeros(); mesh.vertices.len()],
    };
    rasterize_colors(&mesh.vertices, &mesh.topology, &colors, intrinsics)
}

pub fn rasterize_colors(
    vertices: &[Vec3],
    topology: &Topology,
    colors: &[Vec3],
    intrinsics: &CameraIntrinsics,
) -> Result<RenderOutput> {
    if vertices.is_empty() || topology.triangles().is_empty() {
        return Err(Error::EmptyMesh);
    }
    if vertices.len() != topology.vertex_count() {
        return Err(Error::dims("vertices", topology.vertex_count(), vertices.len()));
    }
    if colors.len() != vertices.len() {
        return Err(Error::dims("colors", vertices.len(), colors.len()));
    }
    if vertices.iter().any(|v| !v.iter().all(|x| x.is_finite())) {
        return Err(Error::NonFinite("mesh vertices".into()));
    }
    let (w, h) = (intrinsics.width as usize, intrinsics.height as usize);
    let mut out = RenderOutput::empty(intrinsics.width, intrinsics.height);

    for (t, tri) in topology.triangles().iter().enumerate() {
        let p = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
        if p.iter().any(|v| v.z <= NEAR_PLANE) {
            continue;
        }
        let s = p.map(|v| intrinsics.project(&v));
        let area = edge(s[0], s[1], s[2]);
        if area.abs() < MIN_SCREEN_AREA {
            continue;
        }
        // Visit vertices in positive orientation; `order` maps back to the
        // triangle's own slots.
        let order = if area > 0.0 { [0, 1, 2] } else { [0, 2, 1] };
        let (a, b, c) = (s[order[0]], s[order[1]], s[order[2]]);
        let area = area.abs();
        let tl = [is_top_left(b, c), is_top_left(c, a), is_top_left(a, b)];

        let min_x = a[0].min(b[0]).min(c[0]).ceil().max(0.0);
        let max_x = a[0].max(b[0]).max(c[0]).floor().min(w as f64 - 1.0);
        let min_y = a[1].min(b[1]).min(c[1]).ceil().max(0.0);
        let max_y = a[1].max(b[1]).max(c[1]).floor().min(h as f64 - 1.0);
        if min_x > max_x || min_y > max_y {
            continue;
        }
        for py in min_y as usize..=max_y as usize {
            for px in min_x as usize..=max_x as usize {
                let q = [px as f64, py as f64];
                let e = [edge(b, c, q), edge(c, a, q), edge(a, b, q)];
                if !(0..3).all(|k| inside(e[k], tl[k])) {
                    continue;
                }
                let mut screen = [0.0; 3];
                for k in 0..3 {
                    screen[order[k]] = e[k] / area;
                }
                let inv: [f64; 3] = std::array::from_fn(|k| screen[k] / p[k].z);
                let s_inv = inv[0] + inv[1] + inv[2];
                let z = 1.0 / s_inv;
                let idx = py * w + px;
                if z < out.depth[idx] {
                    out.depth[idx] = z;
                    out.frags[idx] = Some(Fragment {
                        triangle: t as u32,
                        bary: inv.map(|x| x / s_inv),
                    });
                }
            }
        }
    }

    for (idx, frag) in out.frags.iter().enumerate() {
        if let Some(f) = frag {
            let tri = topology.triangles()[f.triangle as usize];
            out.color[idx] = (0..3).map(|k| colors[tri[k]] * f.bary[k]).sum();
        }
    }
    Ok(out)
}

/// Ray/plane intersection of pixel `(u, v)` with triangle `p`:
/// returns `(A, [z, l1, l2])` where `A = [ray | -e1 | -e2]`.
fn intersect(intrinsics: &CameraIntrinsics, u: f64, v: f64, p: &[Vec3; 3]) -> Option<(Matrix3<f64>, Vec3)> {
    let d = intrinsics.ray(u, v);
    let e1 = p[1] - p[0];
    let e2 = p[2] - p[0];
    let a = Matrix3::from_columns(&[d, -e1, -e2]);
    let x = a.lu().solve(&p[0])?;
    Some((a, x))
}

/// Re-evaluates color and depth with every pixel's triangle held fixed, using
/// exact ray/triangle-plane intersection.
pub fn evaluate_fixed_visibility(
    frags: &[Option<Fragment>],
    vertices: &[Vec3],
    topology: &Topology,
    colors: &[Vec3],
    intrinsics: &CameraIntrinsics,
) -> Result<RenderOutput> {
    if frags.len() != intrinsics.pixel_count() {
        return Err(Error::dims("frags", intrinsics.pixel_count(), frags.len()));
    }
    let mut out = RenderOutput::empty(intrinsics.width, intrinsics.height);
    let w = intrinsics.width as usize;
    for (idx, frag) in frags.iter().enumerate() {
        let Some(f) = frag else { continue };
        let tri = topology.triangles()[f.triangle as usize];
        let p = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
        let (u, v) = ((idx % w) as f64, (idx / w) as f64);
        let (_, x) = intersect(intrinsics, u, v, &p)
            .ok_or_else(|| Error::Degenerate(format!("triangle {} is edge-on", f.triangle)))?;
        let bary = [1.0 - x[1] - x[2], x[1], x[2]];
        out.depth[idx] = x[0];
        out.color[idx] = (0..3).map(|k| colors[tri[k]] * bary[k]).sum();
        out.frags[idx] = Some(Fragment {
            triangle: f.triangle,
            bary,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrads {
    pub vertices: Vec<Vec3>,
    pub colors: Vec<Vec3>,
}

/// Gradients of a scalar loss with respect to camera-space vertex positions
/// and per-vertex colors, given its gradients on the rendered color and depth
/// images. Visibility is frozen at the forward pass.
pub fn render_backward(
    output: &RenderOutput,
    grad_color: &[Vec3],
    grad_depth: &[f64],
    vertices: &[Vec3],
    topology: &Topology,
    colors: &[Vec3],
    intrinsics: &CameraIntrinsics,
) -> Result<RasterGrads> {
    let pixels = intrinsics.pixel_count();
    if output.frags.len() != pixels || grad_color.len() != pixels || grad_depth.len() != pixels {
        return Err(Error::dims(
            "image gradients",
            pixels,
            format!("{}/{}/{}", output.frags.len(), grad_color.len(), grad_depth.len()),
        ));
    }
    if vertices.len() != topology.vertex_count() || colors.len() != vertices.len() {
        return Err(Error::dims("vertices", topology.vertex_count(), vertices.len()));
    }
    let mut grads = RasterGrads {
        vertices: vec![Vec3::zeros(); vertices.len()],
        colors: vec![Vec3::zeros(); vertices.len()],
    };
    let w = intrinsics.width as usize;
    for (idx, frag) in output.frags.iter().enumerate() {
        let Some(f) = frag else { continue };
        let (gc, gz) = (grad_color[idx], grad_depth[idx]);
        if gc == Vec3::zeros() && gz == 0.0 {
            continue;
        }
        let tri = topology.triangles()[f.triangle as usize];
        let p = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
        let (u, v) = ((idx % w) as f64, (idx / w) as f64);
        let (a, x) = intersect(intrinsics, u, v, &p)
            .ok_or_else(|| Error::Degenerate(format!("triangle {} is edge-on", f.triangle)))?;
        let bary = [1.0 - x[1] - x[2], x[1], x[2]];
        let c = [colors[tri[0]], colors[tri[1]], colors[tri[2]]];
        let gx = Vec3::new(gz, gc.dot(&(c[1] - c[0])), gc.dot(&(c[2] - c[0])));
        // A dx = sum_k bary_k dP_k, so dL/dP_k = bary_k A^{-T} gx.
        let wv = a
            .transpose()
            .lu()
            .solve(&gx)
            .ok_or_else(|| Error::Degenerate(format!("triangle {} is edge-on", f.triangle)))?;
        for k in 0..3 {
            grads.vertices[tri[k]] += wv * bary[k];
            grads.colors[tri[k]] += gc * bary[k];
        }
    }
    Ok(grads)
}
