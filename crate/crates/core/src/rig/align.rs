use nalgebra::Matrix3;

use super::{orthonormalize, RigidTransform};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Relative spread below which a landmark set counts as collinear.
const COLLINEAR_RATIO: f64 = 1e-6;

/// Least-squares rigid transform taking `src[i]` onto `dst[i]`
/// (cross-covariance SVD with reflection guard).
pub fn rigid_align(src: &[Vec3], dst: &[Vec3]) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::dims("landmarks", src.len(), dst.len()));
    }
    if src.len() < 3 {
        return Err(Error::Degenerate(format!(
            "{} shared landmarks, need at least 3",
            src.len()
        )));
    }
    let m = src.len() as f64;
    let cs = src.iter().sum::<Vec3>() / m;
    let cd = dst.iter().sum::<Vec3>() / m;

    let mut scatter = Matrix3::zeros();
    let mut cov = Matrix3::zeros();
    for (p, q) in src.iter().zip(dst) {
        let (a, b) = (p - cs, q - cd);
        scatter += a * a.transpose();
        cov += a * b.transpose();
    }
    let sv = scatter.symmetric_eigenvalues();
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(f64::total_cmp);
    if sorted[2] <= 0.0 || sorted[1] <= COLLINEAR_RATIO * COLLINEAR_RATIO * sorted[2] {
        return Err(Error::Degenerate("landmarks are collinear".into()));
    }

    // R = V diag(1, 1, det(V U^T)) U^T for cov = U S V^T.
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = orthonormalize(&(v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose()));
    Ok(RigidTransform::new(rotation, cd - rotation * cs))
}

/// Per-camera transforms mapping each camera's landmark points into the
/// master camera (index 0) frame; the master gets the identity.
///
/// `landmarks[c][i]` is landmark `i` as seen by camera `c`, or `None` when
/// its depth was invalid.
pub fn landmark_init_extrinsics(landmarks: &[Vec<Option<Vec3>>]) -> Result<Vec<RigidTransform>> {
    let Some(master) = landmarks.first() else {
        return Ok(Vec::new());
    };
    let mut out = vec![RigidTransform::identity()];
    for (cam, points) in landmarks.iter().enumerate().skip(1) {
        if points.len() != master.len() {
            return Err(Error::dims("landmarks", master.len(), points.len()));
        }
        let (src, dst): (Vec<Vec3>, Vec<Vec3>) = points
            .iter()
            .zip(master)
            .filter_map(|(p, q)| Some((p.as_ref()?.to_owned(), q.as_ref()?.to_owned())))
            .unzip();
        let t = rigid_align(&src, &dst).map_err(|e| match e {
            Error::Degenerate(msg) => Error::Degenerate(format!("camera index {cam}: {msg}")),
            other => other,
        })?;
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn landmark_set() -> Vec<Vec3> {
        vec![
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.1, 0.05, 1.02),
            Vec3::new(-0.08, 0.04, 0.98),
            Vec3::new(0.02, -0.1, 1.05),
            Vec3::new(0.05, 0.09, 0.95),
        ]
    }

    #[test]
    fn identical_sets_give_identity() {
        let pts: Vec<Option<Vec3>> = landmark_set().into_iter().map(Some).collect();
        let ts = landmark_init_extrinsics(&[pts.clone(), pts]).unwrap();
        assert_eq!(ts[0], RigidTransform::identity());
        let err = (ts[1].rotation - Matrix3::identity()).abs().max();
        assert!(err <= 1e-10 && ts[1].translation.norm() <= 1e-10);
    }

    #[test]
    fn recovers_known_transform() {
        let truth = RigidTransform::from_axis_angle(
            Vec3::z(),
            10f64.to_radians(),
            Vec3::new(0.1, 0.0, 0.0),
        );
        let master: Vec<Vec3> = landmark_set();
        // The subordinate sees the points in its own frame: sub = truth^-1(master).
        let sub: Vec<Option<Vec3>> = master
            .iter()
            .map(|p| Some(truth.inverse().apply(p)))
            .collect();
        let master: Vec<Option<Vec3>> = master.into_iter().map(Some).collect();
        let ts = landmark_init_extrinsics(&[master, sub]).unwrap();
        assert!((ts[1].rotation - truth.rotation).abs().max() <= 1e-8);
        assert!((ts[1].translation - truth.translation).norm() <= 1e-8);
        assert!(ts[1].is_orthonormal(1e-9));
    }

    #[test]
    fn two_landmarks_are_degenerate() {
        let pts = vec![Some(Vec3::x()), Some(Vec3::y())];
        let err = landmark_init_extrinsics(&[pts.clone(), pts]).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)), "{err}");
    }

    #[test]
    fn invalid_landmarks_are_skipped_and_collinear_rejected() {
        let line: Vec<Option<Vec3>> = (0..5).map(|i| Some(Vec3::new(i as f64, 0.0, 1.0))).collect();
        assert!(matches!(
            landmark_init_extrinsics(&[line.clone(), line]),
            Err(Error::Degenerate(_))
        ));
        let mut pts: Vec<Option<Vec3>> = landmark_set().into_iter().map(Some).collect();
        let master = pts.clone();
        pts[0] = None;
        pts[1] = None;
        pts[2] = None;
        assert!(landmark_init_extrinsics(&[master, pts]).is_err());
    }

    #[test]
    fn reflection_is_guarded() {
        let src = landmark_set();
        let dst: Vec<Vec3> = src.iter().map(|p| Vec3::new(-p.x, p.y, p.z)).collect();
        let t = rigid_align(&src, &dst).unwrap();
        assert!((t.rotation.determinant() - 1.0).abs() < 1e-9);
    }
}
