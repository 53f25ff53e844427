use std::collections::HashMap;

use nalgebra::{Matrix3, Matrix6, Vector6};

use super::{orthonormalize, PointCloud, RigidTransform};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Pairs farther apart than this multiple of the median distance are dropped.
const MEDIAN_REJECTION: f64 = 3.0;
/// Accepted steps may not raise the mean residual by more than this.
const MONOTONE_SLACK: f64 = 1e-12;
const MAX_STEP_HALVINGS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpParams {
    pub max_iters: usize,
    /// Stop once the norm of the 6-parameter update falls below this.
    pub tol: f64,
    /// Nearest neighbors farther than this are not matched at all.
    pub max_correspondence_distance: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-10,
            max_correspondence_distance: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub transform: RigidTransform,
    /// Mean absolute point-to-plane residual at the returned transform.
    pub residual: f64,
    /// Residual at the initial transform followed by one entry per accepted step.
    pub residual_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Uniform hash grid over the target points for exact nearest-neighbor
/// queries within a bounded radius.
struct Grid<'a> {
    points: &'a [Vec3],
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> Grid<'a> {
    fn new(points: &'a [Vec3]) -> Self {
        let (lo, hi) = points
            .iter()
            .fold((points[0], points[0]), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        let extent = (hi - lo).max().max(1e-9);
        // About two points per occupied cell for surface-like clouds.
        let cell = (extent / (points.len() as f64 / 2.0).sqrt()).max(1e-9);
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        let mut grid = Self {
            points,
            cell,
            cells: HashMap::new(),
        };
        for (i, p) in points.iter().enumerate() {
            cells.entry(grid.key(p)).or_default().push(i);
        }
        grid.cells = cells;
        grid
    }

    fn key(&self, p: &Vec3) -> [i64; 3] {
        [
            (p.x / self.cell).floor() as i64,
            (p.y / self.cell).floor() as i64,
            (p.z / self.cell).floor() as i64,
        ]
    }

    /// Nearest point within `radius`; ties go to the lowest index.
    fn nearest(&self, q: &Vec3, radius: f64) -> Option<(usize, f64)> {
        let center = self.key(q);
        let max_ring = (radius / self.cell).ceil() as i64 + 1;
        let mut best: Option<(usize, f64)> = None;
        for ring in 0..=max_ring {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        let key = [center[0] + dx, center[1] + dy, center[2] + dz];
                        let Some(list) = self.cells.get(&key) else {
                            continue;
                        };
                        for &i in list {
                            let d = (self.points[i] - q).norm();
                            let better = match best {
                                None => true,
                                Some((bi, bd)) => d < bd || (d == bd && i < bi),
                            };
                            if better {
                                best = Some((i, d));
                            }
                        }
                    }
                }
            }
            // Anything in a farther ring is at least `ring * cell` away.
            if let Some((_, d)) = best {
                if d <= ring as f64 * self.cell {
                    break;
                }
            }
        }
        best.filter(|&(_, d)| d <= radius)
    }
}

struct Matches {
    pairs: Vec<(usize, usize)>,
    residual: f64,
}

fn correspond(
    source: &PointCloud,
    target: &PointCloud,
    grid: &Grid<'_>,
    t: &RigidTransform,
    max_dist: f64,
) -> Result<Matches> {
    let mut found: Vec<(usize, usize, f64)> = source
        .points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            grid.nearest(&t.apply(p), max_dist)
                .map(|(j, d)| (i, j, d))
        })
        .collect();
    if found.is_empty() {
        return Err(Error::NoCorrespondences);
    }
    let mut dists: Vec<f64> = found.iter().map(|m| m.2).collect();
    dists.sort_by(f64::total_cmp);
    let median = dists[dists.len() / 2];
    found.retain(|m| m.2 <= MEDIAN_REJECTION * median);
    if found.is_empty() {
        return Err(Error::NoCorrespondences);
    }
    let residual = found
        .iter()
        .map(|&(i, j, _)| (t.apply(&source.points[i]) - target.points[j]).dot(&target.normals[j]).abs())
        .sum::<f64>()
        / found.len() as f64;
    Ok(Matches {
        pairs: found.into_iter().map(|(i, j, _)| (i, j)).collect(),
        residual,
    })
}

fn skew(w: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Small-angle update applied on the left of the current transform.
fn step(t: &RigidTransform, x: &Vector6<f64>) -> RigidTransform {
    let w = Vec3::new(x[0], x[1], x[2]);
    let tau = Vec3::new(x[3], x[4], x[5]);
    let dr = orthonormalize(&(Matrix3::identity() + skew(&w)));
    RigidTransform::new(orthonormalize(&(dr * t.rotation)), dr * t.translation + tau)
}

/// Point-to-plane ICP aligning `source` onto `target`.
pub fn icp_point_to_plane(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidTransform,
    params: &IcpParams,
) -> Result<IcpResult> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::InvalidArgument("ICP needs non-empty clouds".into()));
    }
    if source.normals.len() != source.len() || target.normals.len() != target.len() {
        return Err(Error::InvalidArgument("ICP clouds need normals".into()));
    }
    let grid = Grid::new(&target.points);
    let max_dist = params.max_correspondence_distance;

    let mut current = *init;
    let mut matches = correspond(source, target, &grid, &current, max_dist)?;
    let mut history = vec![matches.residual];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < params.max_iters {
        iterations += 1;
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for &(i, j) in &matches.pairs {
            let p = current.apply(&source.points[i]);
            let n = target.normals[j];
            let r = (p - target.points[j]).dot(&n);
            let pxn = p.cross(&n);
            let jac = Vector6::new(pxn.x, pxn.y, pxn.z, n.x, n.y, n.z);
            jtj += jac * jac.transpose();
            jtr += jac * r;
        }
        let Some(chol) = jtj.cholesky() else {
            return Err(Error::Degenerate("point-to-plane system is singular".into()));
        };
        let full = -chol.solve(&jtr);

        let mut accepted = None;
        let mut scale = 1.0;
        for _ in 0..=MAX_STEP_HALVINGS {
            let candidate = step(&current, &(full * scale));
            if let Ok(m) = correspond(source, target, &grid, &candidate, max_dist) {
                if m.residual <= matches.residual + MONOTONE_SLACK {
                    accepted = Some((candidate, m, scale));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((candidate, m, scale)) = accepted else {
            converged = true;
            break;
        };
        current = candidate;
        matches = m;
        history.push(matches.residual);
        if (full * scale).norm() < params.tol {
            converged = true;
            break;
        }
    }

    Ok(IcpResult {
        transform: current,
        residual: matches.residual,
        residual_history: history,
        iterations,
        converged,
    })
}
