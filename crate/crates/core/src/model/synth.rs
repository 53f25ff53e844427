//! Procedural stand-in for a licensed face model: a head-shaped closed
//! surface with smooth, orthogonal random bases.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ModelDims, MorphableModel};
use crate::error::{Error, Result};
use crate::geometry::{bbox_diagonal, Topology, Vec3};

/// Position of the nose-bridge landmark in `landmark_indices`.
pub const LANDMARK_NOSE_BRIDGE: usize = 0;

const SMOOTHING_PASSES: usize = 20;

/// Landmark directions on the unit sphere (the face looks down +z, +y is up).
const LANDMARK_TARGETS: [[f64; 3]; 15] = [
    [0.0, 0.25, 0.97],    // nose bridge
    [0.0, 0.0, 1.0],      // nose tip
    [-0.45, 0.25, 0.86],  // right eye outer
    [-0.15, 0.25, 0.96],  // right eye inner
    [0.15, 0.25, 0.96],   // left eye inner
    [0.45, 0.25, 0.86],   // left eye outer
    [-0.35, 0.45, 0.82],  // right brow
    [0.35, 0.45, 0.82],   // left brow
    [-0.25, -0.35, 0.90], // right mouth corner
    [0.25, -0.35, 0.90],  // left mouth corner
    [0.0, -0.28, 0.96],   // upper lip
    [0.0, -0.45, 0.89],   // lower lip
    [0.0, -0.70, 0.71],   // chin
    [-0.70, -0.10, 0.70], // right cheek
    [0.70, -0.10, 0.70],  // left cheek
];

const MOUTH_DIR: [f64; 3] = [0.0, -0.38, 0.92];

/// Optional regions beyond the mandatory three: name, center direction,
/// angular radius in radians.
const EXTRA_REGIONS: [(&str, [f64; 3], f64); 7] = [
    ("jaw", [0.0, -0.75, 0.66], 0.35),
    ("nose", [0.0, 0.0, 1.0], 0.25),
    ("forehead", [0.0, 0.6, 0.8], 0.35),
    ("left_eye", [0.3, 0.25, 0.92], 0.2),
    ("right_eye", [-0.3, 0.25, 0.92], 0.2),
    ("left_cheek", [0.6, -0.15, 0.78], 0.3),
    ("right_cheek", [-0.6, -0.15, 0.78], 0.3),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthModelOptions {
    pub vertex_count: usize,
    pub dims: ModelDims,
}

fn dir(v: [f64; 3]) -> Vec3 {
    Vec3::new(v[0], v[1], v[2]).normalize()
}

fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - (2 * i + 1) as f64 / n as f64;
            let r = (1.0 - y * y).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), y, r * phi.sin())
        })
        .collect()
}

/// Incremental convex hull of points that all lie on a sphere; every point is
/// a hull vertex, so the result triangulates the whole set with outward
/// counter-clockwise faces.
pub(crate) fn sphere_hull(points: &[Vec3]) -> Result<Vec<[usize; 3]>> {
    let n = points.len();
    let seed = [0, n / 3, 2 * n / 3, n - 1];
    let volume = (points[seed[1]] - points[seed[0]])
        .cross(&(points[seed[2]] - points[seed[0]]))
        .dot(&(points[seed[3]] - points[seed[0]]));
    if volume.abs() < 1e-12 {
        return Err(Error::Degenerate("initial hull tetrahedron is flat".into()));
    }
    let centroid = seed.iter().map(|&i| points[i]).sum::<Vec3>() / 4.0;
    let normal_of = |f: &[usize; 3]| {
        (points[f[1]] - points[f[0]]).cross(&(points[f[2]] - points[f[0]]))
    };
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for f in [
        [seed[0], seed[1], seed[2]],
        [seed[0], seed[1], seed[3]],
        [seed[0], seed[2], seed[3]],
        [seed[1], seed[2], seed[3]],
    ] {
        let oriented = if normal_of(&f).dot(&(centroid - points[f[0]])) > 0.0 {
            [f[0], f[2], f[1]]
        } else {
            f
        };
        faces.push(oriented);
    }

    for p in (0..n).filter(|i| !seed.contains(i)) {
        let visible: Vec<bool> = faces
            .iter()
            .map(|f| normal_of(f).dot(&(points[p] - points[f[0]])) > 0.0)
            .collect();
        if !visible.iter().any(|&v| v) {
            return Err(Error::Degenerate(format!("point {p} is not outside the hull")));
        }
        let mut directed = HashSet::new();
        for (f, _) in faces.iter().zip(&visible).filter(|(_, &v)| v) {
            for k in 0..3 {
                directed.insert((f[k], f[(k + 1) % 3]));
            }
        }
        let mut horizon = Vec::new();
        for (f, _) in faces.iter().zip(&visible).filter(|(_, &v)| v) {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if !directed.contains(&(b, a)) {
                    horizon.push([a, b, p]);
                }
            }
        }
        let mut kept: Vec<[usize; 3]> = faces
            .iter()
            .zip(&visible)
            .filter(|(_, &v)| !v)
            .map(|(f, _)| *f)
            .collect();
        kept.extend(horizon);
        faces = kept;
    }
    Ok(faces)
}

fn head_position(u: &Vec3) -> Vec3 {
    let bump = |center: [f64; 3], sigma: f64, height: f64| {
        let d2 = (u - dir(center)).norm_squared();
        height * (-d2 / (2.0 * sigma * sigma)).exp()
    };
    let radial = 1.0
        + bump([0.0, 0.0, 1.0], 0.15, 0.16)
        + bump([0.0, -0.7, 0.7], 0.25, 0.05)
        + bump([-0.35, 0.42, 0.84], 0.18, 0.04)
        + bump([0.35, 0.42, 0.84], 0.18, 0.04);
    Vec3::new(0.36 * u.x, 0.47 * u.y, 0.40 * u.z) * radial
}

fn smooth_field(topology: &Topology, field: &mut [Vec3], passes: usize) {
    for _ in 0..passes {
        let prev = field.to_vec();
        for (v, out) in field.iter_mut().enumerate() {
            let nb = topology.neighbors(v);
            if nb.is_empty() {
                continue;
            }
            let mean = nb.iter().map(|&u| prev[u]).sum::<Vec3>() / nb.len() as f64;
            *out = prev[v] * 0.5 + mean * 0.5;
        }
    }
}

/// Draws `k` smooth random fields, orthogonalizes them and scales column `j`
/// to a per-vertex RMS magnitude of `scale * decay^j`.
fn smooth_basis(
    rng: &mut ChaCha8Rng,
    topology: &Topology,
    weights: &[f64],
    k: usize,
    scale: f64,
    decay: f64,
) -> Result<DMatrix<f64>> {
    let n = topology.vertex_count();
    if k > 3 * n {
        return Err(Error::InvalidArgument(format!(
            "basis size {k} exceeds 3n = {}",
            3 * n
        )));
    }
    let mut basis = DMatrix::zeros(3 * n, k);
    for j in 0..k {
        let mut field: Vec<Vec3> = (0..n)
            .map(|v| {
                let g: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
                Vec3::from(g) * weights[v]
            })
            .collect();
        smooth_field(topology, &mut field, SMOOTHING_PASSES);
        for (v, f) in field.iter().enumerate() {
            for c in 0..3 {
                basis[(3 * v + c, j)] = f[c];
            }
        }
    }
    // Modified Gram-Schmidt, applied twice.
    for j in 0..k {
        for _ in 0..2 {
            for i in 0..j {
                let proj = basis.column(i).dot(&basis.column(j));
                let qi = basis.column(i).clone_owned();
                basis.column_mut(j).axpy(-proj, &qi, 1.0);
            }
        }
        let norm = basis.column(j).norm();
        if norm < 1e-12 {
            return Err(Error::Degenerate(format!("basis column {j} collapsed")));
        }
        basis.column_mut(j).scale_mut(1.0 / norm);
    }
    for j in 0..k {
        let target = scale * decay.powi(j as i32) * (n as f64).sqrt();
        basis.column_mut(j).scale_mut(target);
    }
    Ok(basis)
}

fn nearest_unused(dirs: &[Vec3], target: &Vec3, used: &[usize]) -> Option<usize> {
    dirs.iter()
        .enumerate()
        .filter(|(i, _)| !used.contains(i))
        .max_by(|(_, a), (_, b)| a.dot(target).total_cmp(&b.dot(target)))
        .map(|(i, _)| i)
}

fn cap_region(dirs: &[Vec3], center: &Vec3, radius: f64) -> Vec<usize> {
    let cos_r = radius.cos();
    let mut idx: Vec<usize> = dirs
        .iter()
        .enumerate()
        .filter(|(_, d)| d.dot(center) >= cos_r)
        .map(|(i, _)| i)
        .collect();
    if idx.is_empty() {
        idx.extend(nearest_unused(dirs, center, &[]));
    }
    idx
}

/// Generates a deterministic head-shaped morphable model with `n` vertices.
pub fn synth_model(seed: u64, n: usize, dims: ModelDims) -> Result<MorphableModel> {
    if n < 12 {
        return Err(Error::VertexCountTooSmall(n));
    }
    let dirs = fibonacci_sphere(n);
    let triangles = sphere_hull(&dirs)?;
    let topology = Arc::new(Topology::new(n, triangles)?);

    let raw: Vec<Vec3> = dirs.iter().map(head_position).collect();
    let diag = bbox_diagonal(&raw);
    let (lo, hi) = raw.iter().fold((raw[0], raw[0]), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
    let center = (lo + hi) / 2.0;
    let mean_shape: Vec<Vec3> = raw.iter().map(|p| (p - center) / diag).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mouth = dir(MOUTH_DIR);
    let uniform = vec![1.0; n];
    let mouth_weights: Vec<f64> = dirs
        .iter()
        .map(|d| 0.25 + (-(d - mouth).norm_squared() / (2.0 * 0.3 * 0.3)).exp())
        .collect();
    let identity_basis = smooth_basis(&mut rng, &topology, &uniform, dims.k_id, 0.03, 0.8)?;
    let expression_basis =
        smooth_basis(&mut rng, &topology, &mouth_weights, dims.k_exp, 0.025, 0.8)?;
    let texture_basis = smooth_basis(&mut rng, &topology, &uniform, dims.k_tex, 0.05, 0.8)?;

    let mut tint: Vec<Vec3> = (0..n)
        .map(|_| Vec3::from(std::array::from_fn::<f64, 3, _>(|_| StandardNormal.sample(&mut rng))))
        .collect();
    smooth_field(&topology, &mut tint, SMOOTHING_PASSES);
    let tint_rms = (tint.iter().map(|t| t.norm_squared()).sum::<f64>() / n as f64).sqrt();
    let skin = Vec3::new(0.78, 0.58, 0.48);
    let lips = Vec3::new(0.62, 0.28, 0.30);
    let brow = Vec3::new(0.35, 0.25, 0.20);
    let texture_mean: Vec<Vec3> = dirs
        .iter()
        .zip(&tint)
        .map(|(d, t)| {
            let w_lip = (-(d - mouth).norm_squared() / (2.0 * 0.1 * 0.1)).exp();
            let w_brow = [[-0.35, 0.45, 0.82], [0.35, 0.45, 0.82]]
                .iter()
                .map(|c| (-(d - dir(*c)).norm_squared() / (2.0 * 0.08 * 0.08)).exp())
                .sum::<f64>()
                .min(1.0);
            let base = skin * (1.0 - w_lip - w_brow).max(0.0) + lips * w_lip + brow * w_brow;
            (base + t * (0.05 / tint_rms.max(1e-12))).map(|x| x.clamp(0.05, 0.95))
        })
        .collect();

    let mut landmark_indices = Vec::new();
    for target in LANDMARK_TARGETS {
        if let Some(i) = nearest_unused(&dirs, &dir(target), &landmark_indices) {
            landmark_indices.push(i);
        }
    }

    let bridge_y = mean_shape[landmark_indices[LANDMARK_NOSE_BRIDGE]].y;
    let mut regions = BTreeMap::new();
    regions.insert("lip".to_string(), cap_region(&dirs, &mouth, 0.22));
    let mut upper: Vec<usize> = (0..n).filter(|&v| mean_shape[v].y > bridge_y).collect();
    if upper.is_empty() {
        upper.push(landmark_indices[LANDMARK_NOSE_BRIDGE]);
    }
    regions.insert("upper".to_string(), upper);
    regions.insert(
        "face".to_string(),
        cap_region(&dirs, &Vec3::z(), std::f64::consts::FRAC_PI_2 * 0.8),
    );
    for (name, center, radius) in EXTRA_REGIONS {
        regions.insert(name.to_string(), cap_region(&dirs, &dir(center), radius));
    }

    let model = MorphableModel {
        mean_shape,
        identity_basis,
        expression_basis,
        texture_mean,
        texture_basis,
        topology,
        landmark_indices,
        regions,
    };
    model.validate()?;
    Ok(model)
}
