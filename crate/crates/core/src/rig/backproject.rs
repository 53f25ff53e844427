use super::{CameraIntrinsics, DepthImage, PointCloud};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Camera-space point at pixel `(u, v)` with depth `mm` millimeters.
fn pixel_point(intrinsics: &CameraIntrinsics, u: u32, v: u32, mm: u16) -> Vec3 {
    intrinsics.unproject(u as f64, v as f64, mm as f64 / 1000.0)
}

/// Back-projects the depth at the pixel nearest `(u, v)`, keeping the
/// sub-pixel ray direction.
pub fn backproject_pixel(
    depth: &DepthImage,
    intrinsics: &CameraIntrinsics,
    u: f64,
    v: f64,
) -> Option<Vec3> {
    let (pu, pv) = (u.round(), v.round());
    if pu < 0.0 || pv < 0.0 || pu >= depth.width as f64 || pv >= depth.height as f64 {
        return None;
    }
    let mm = depth.at(pu as u32, pv as u32);
    (mm > 0).then(|| intrinsics.unproject(u, v, mm as f64 / 1000.0))
}

/// Point cloud over every `stride`-th pixel with valid depth. Normals come
/// from central differences over the full-resolution grid and face the
/// camera; a pixel with any invalid (or off-image) neighbor is dropped.
pub fn backproject_depth(
    depth: &DepthImage,
    intrinsics: &CameraIntrinsics,
    stride: u32,
) -> Result<PointCloud> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    if depth.width != intrinsics.width || depth.height != intrinsics.height {
        return Err(Error::dims(
            "depth",
            format!("{}x{}", intrinsics.width, intrinsics.height),
            format!("{}x{}", depth.width, depth.height),
        ));
    }
    let mut cloud = PointCloud::default();
    for v in (1..depth.height.saturating_sub(1)).step_by(stride as usize) {
        for u in (1..depth.width.saturating_sub(1)).step_by(stride as usize) {
            let d = depth.at(u, v);
            let (l, r, t, b) = (
                depth.at(u - 1, v),
                depth.at(u + 1, v),
                depth.at(u, v - 1),
                depth.at(u, v + 1),
            );
            if d == 0 || l == 0 || r == 0 || t == 0 || b == 0 {
                continue;
            }
            let du = pixel_point(intrinsics, u + 1, v, r) - pixel_point(intrinsics, u - 1, v, l);
            let dv = pixel_point(intrinsics, u, v + 1, b) - pixel_point(intrinsics, u, v - 1, t);
            let normal = dv.cross(&du);
            let len = normal.norm();
            if !(len > 0.0) {
                continue;
            }
            cloud.points.push(pixel_point(intrinsics, u, v, d));
            cloud.normals.push(normal / len);
        }
    }
    Ok(cloud)
}
