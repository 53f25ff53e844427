//! Closed-form operators of the animation model: mean-face normalization,
//! AdaIN-style modulation, the decoding-matrix sparsity penalty and the
//! combined training objective, each with an analytic gradient.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Lower bound on per-channel standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Weight of the sparsity term in the combined objective.
pub const DEFAULT_SPARSITY_WEIGHT: f64 = 1e-6;

/// Per-channel mean and (population) standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleMoments {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Subtracts the temporal mean face from every frame.
pub fn normalize_faces(seq: &[Vec<Vec3>]) -> Result<Vec<Vec<Vec3>>> {
    let Some(first) = seq.first() else {
        return Err(Error::InvalidArgument("empty face sequence".into()));
    };
    let n = first.len();
    if let Some(bad) = seq.iter().find(|f| f.len() != n) {
        return Err(Error::dims("frame vertices", n, bad.len()));
    }
    let mut mean = vec![Vec3::zeros(); n];
    for frame in seq {
        for (m, p) in mean.iter_mut().zip(frame) {
            *m += p;
        }
    }
    let inv = 1.0 / seq.len() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    Ok(seq
        .iter()
        .map(|f| f.iter().zip(&mean).map(|(p, m)| p - m).collect())
        .collect())
}

/// Column means and population standard deviations of a `T x C` sequence.
pub fn feature_moments(z: &DMatrix<f64>) -> StyleMoments {
    let t = z.nrows() as f64;
    let mut mu = Vec::with_capacity(z.ncols());
    let mut sigma = Vec::with_capacity(z.ncols());
    for col in z.column_iter() {
        let m = col.sum() / t;
        let var = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / t;
        mu.push(m);
        sigma.push(var.sqrt());
    }
    StyleMoments { mu, sigma }
}

fn check_style(z: &DMatrix<f64>, style: &StyleMoments) -> Result<()> {
    if z.nrows() == 0 || z.ncols() == 0 {
        return Err(Error::InvalidArgument("empty feature sequence".into()));
    }
    if style.mu.len() != z.ncols() || style.sigma.len() != z.ncols() {
        return Err(Error::dims(
            "style moments",
            z.ncols(),
            format!("{}/{}", style.mu.len(), style.sigma.len()),
        ));
    }
    Ok(())
}

/// Re-standardizes each channel of `z` to the requested moments. Channels
/// whose own spread is below the floor are only re-centered.
pub fn adain_fuse(z: &DMatrix<f64>, style: &StyleMoments) -> Result<DMatrix<f64>> {
    check_style(z, style)?;
    let own = feature_moments(z);
    let mut out = z.clone();
    for c in 0..z.ncols() {
        let target_sigma = style.sigma[c].max(SIGMA_FLOOR);
        let scale = if own.sigma[c] < SIGMA_FLOOR { 1.0 } else { target_sigma / own.sigma[c] };
        for t in 0..z.nrows() {
            out[(t, c)] = scale * (z[(t, c)] - own.mu[c]) + style.mu[c];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdainGrads {
    pub z: DMatrix<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

pub fn adain_fuse_backward(
    z: &DMatrix<f64>,
    style: &StyleMoments,
    grad_out: &DMatrix<f64>,
) -> Result<AdainGrads> {
    check_style(z, style)?;
    if grad_out.shape() != z.shape() {
        return Err(Error::dims("grad_out", format!("{:?}", z.shape()), format!("{:?}", grad_out.shape())));
    }
    let own = feature_moments(z);
    let t = z.nrows() as f64;
    let mut gz = DMatrix::zeros(z.nrows(), z.ncols());
    let mut gmu = vec![0.0; z.ncols()];
    let mut gsigma = vec![0.0; z.ncols()];
    for c in 0..z.ncols() {
        let g = grad_out.column(c);
        gmu[c] = g.sum();
        let gsum = g.sum();
        if own.sigma[c] < SIGMA_FLOOR {
            // out = z - mean(z) + mu
            for r in 0..z.nrows() {
                gz[(r, c)] = g[r] - gsum / t;
            }
            continue;
        }
        let s = own.sigma[c];
        let xhat: Vec<f64> = (0..z.nrows()).map(|r| (z[(r, c)] - own.mu[c]) / s).collect();
        let gx: f64 = g.iter().zip(&xhat).map(|(a, b)| a * b).sum();
        if style.sigma[c] > SIGMA_FLOOR {
            gsigma[c] = gx;
        }
        let target = style.sigma[c].max(SIGMA_FLOOR);
        // Standard normalization backward: (target/s)(g - mean(g) - xhat mean(g xhat)).
        for r in 0..z.nrows() {
            gz[(r, c)] = target / s * (g[r] - gsum / t - xhat[r] * gx / t);
        }
    }
    Ok(AdainGrads { z: gz, mu: gmu, sigma: gsigma })
}

/// Overlap penalty on the decoding matrix rows: with `a_i = |w_i| / |w_i|`,
/// `L = sum_i sum_{j != i} a_i . a_j` over ordered pairs. Returns the value
/// and its gradient (zero at exactly-zero entries).
pub fn sparsity_reg(w: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let (m, n) = w.shape();
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("empty decoding matrix".into()));
    }
    let mut norms = Vec::with_capacity(m);
    let mut a = DMatrix::zeros(m, n);
    for i in 0..m {
        let row = w.row(i);
        let norm = row.norm();
        if !(norm > 0.0) {
            return Err(Error::ZeroRow(i));
        }
        norms.push(norm);
        for j in 0..n {
            a[(i, j)] = row[j].abs() / norm;
        }
    }
    // Column sums over the other rows, accumulated directly so that
    // disjoint supports give exactly zero.
    let others = |i: usize| -> DVector<f64> {
        DVector::from_fn(n, |j, _| (0..m).filter(|&k| k != i).map(|k| a[(k, j)]).sum())
    };
    let mut value = 0.0;
    let mut grad = DMatrix::zeros(m, n);
    for i in 0..m {
        let ai = a.row(i).transpose();
        let rest = others(i);
        value += ai.dot(&rest);
        // dL/da_i = 2 * rest; project out the radial direction of the
        // normalization, then undo the absolute value.
        let g = rest * 2.0;
        let proj = (&g - &ai * ai.dot(&g)) / norms[i];
        for j in 0..n {
            grad[(i, j)] = proj[j] * w[(i, j)].signum() * f64::from(w[(i, j)] != 0.0);
        }
    }
    Ok((value, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnimLoss {
    pub value: f64,
    pub grad_pred: Vec<Vec<Vec3>>,
    pub grad_weights: DMatrix<f64>,
}

/// `sum_t |pred_t - gt_t|_F + beta * sparsity_reg(W)`; with `squared` the
/// per-frame norms are squared.
pub fn anim_total_loss(
    pred: &[Vec<Vec3>],
    gt: &[Vec<Vec3>],
    w: &DMatrix<f64>,
    beta: f64,
    squared: bool,
) -> Result<AnimLoss> {
    if pred.len() != gt.len() {
        return Err(Error::dims("frames", gt.len(), pred.len()));
    }
    let mut value = 0.0;
    let mut grad_pred = Vec::with_capacity(pred.len());
    for (p, g) in pred.iter().zip(gt) {
        if p.len() != g.len() {
            return Err(Error::dims("frame vertices", g.len(), p.len()));
        }
        let diff: Vec<Vec3> = p.iter().zip(g).map(|(a, b)| a - b).collect();
        let sq: f64 = diff.iter().map(|d| d.norm_squared()).sum();
        if squared {
            value += sq;
            grad_pred.push(diff.iter().map(|d| d * 2.0).collect());
        } else {
            let norm = sq.sqrt();
            value += norm;
            let inv = if norm > 0.0 { 1.0 / norm } else { 0.0 };
            grad_pred.push(diff.iter().map(|d| d * inv).collect());
        }
    }
    let (sparse, mut grad_weights) = sparsity_reg(w)?;
    value += beta * sparse;
    grad_weights *= beta;
    Ok(AnimLoss { value, grad_pred, grad_weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_seq(rng: &mut ChaCha8Rng, t: usize, n: usize) -> Vec<Vec<Vec3>> {
        (0..t)
            .map(|_| (0..n).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect())
            .collect()
    }

    #[test]
    fn normalize_faces_examples() {
        let c = vec![vec![Vec3::new(1.0, 2.0, 3.0); 4]; 3];
        assert!(normalize_faces(&c).unwrap().iter().flatten().all(|p| *p == Vec3::zeros()));
        let s1 = vec![Vec3::new(1.0, 0.0, 2.0)];
        let s2 = vec![Vec3::new(3.0, -2.0, 2.0)];
        let out = normalize_faces(&[s1.clone(), s2.clone()]).unwrap();
        assert_eq!(out[0][0], (s1[0] - s2[0]) / 2.0);
        assert_eq!(out[1][0], (s2[0] - s1[0]) / 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let seq = random_seq(&mut rng, 5, 30);
        let out = normalize_faces(&seq).unwrap();
        for v in 0..30 {
            let m: Vec3 = out.iter().map(|f| f[v]).sum::<Vec3>() / 5.0;
            assert!(m.amax() <= 1e-12);
        }
        let twice = normalize_faces(&out).unwrap();
        for (a, b) in twice.iter().flatten().zip(out.iter().flatten()) {
            assert!((a - b).amax() <= 1e-12);
        }
        assert!(normalize_faces(&[]).is_err());
    }

    #[test]
    fn adain_examples() {
        let z = DMatrix::from_row_slice(2, 1, &[1.0, 3.0]);
        let out = adain_fuse(&z, &StyleMoments { mu: vec![10.0], sigma: vec![2.0] }).unwrap();
        assert_eq!(out, DMatrix::from_row_slice(2, 1, &[8.0, 12.0]));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = DMatrix::from_fn(7, 4, |_, _| rng.random_range(-2.0..2.0));
        let same = adain_fuse(&z, &feature_moments(&z)).unwrap();
        assert!((same - &z).amax() <= 1e-10);
        let unit = adain_fuse(&z, &StyleMoments { mu: vec![0.0; 4], sigma: vec![1.0; 4] }).unwrap();
        let m = feature_moments(&unit);
        for c in 0..4 {
            assert!(m.mu[c].abs() <= 1e-12 && (m.sigma[c] - 1.0).abs() <= 1e-12);
        }
        let mut constant = z.clone();
        constant.column_mut(2).fill(5.0);
        let out = adain_fuse(&constant, &StyleMoments { mu: vec![1.0; 4], sigma: vec![3.0; 4] }).unwrap();
        assert!(out.column(2).iter().all(|&x| x == 1.0));
        assert!(adain_fuse(&z, &StyleMoments { mu: vec![0.0; 3], sigma: vec![1.0; 3] }).is_err());
    }

    #[test]
    fn adain_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-2.0..2.0));
        let style = StyleMoments { mu: vec![0.5, -1.0, 2.0], sigma: vec![1.5, 0.3, 2.0] };
        let w = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let f = |z: &DMatrix<f64>, s: &StyleMoments| adain_fuse(z, s).unwrap().component_mul(&w).sum();
        let g = adain_fuse_backward(&z, &style, &w).unwrap();
        let h = 1e-6;
        for i in 0..z.len() {
            let (mut p, mut m) = (z.clone(), z.clone());
            p[i] += h;
            m[i] -= h;
            let fd = (f(&p, &style) - f(&m, &style)) / (2.0 * h);
            assert!((fd - g.z[i]).abs() <= 1e-7, "{i}: {fd} vs {}", g.z[i]);
        }
        for c in 0..3 {
            let (mut p, mut m) = (style.clone(), style.clone());
            p.sigma[c] += h;
            m.sigma[c] -= h;
            assert!(((f(&z, &p) - f(&z, &m)) / (2.0 * h) - g.sigma[c]).abs() <= 1e-7);
            let (mut p, mut m) = (style.clone(), style.clone());
            p.mu[c] += h;
            m.mu[c] -= h;
            assert!(((f(&z, &p) - f(&z, &m)) / (2.0 * h) - g.mu[c]).abs() <= 1e-7);
        }
    }

    #[test]
    fn sparsity_examples() {
        let disjoint = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(sparsity_reg(&disjoint).unwrap().0.abs() <= 1e-12);
        let same = DMatrix::from_row_slice(2, 2, &[0.3, -0.4, 0.3, -0.4]);
        assert!((sparsity_reg(&same).unwrap().0 - 2.0).abs() <= 1e-12);
        let half = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        assert!((sparsity_reg(&half).unwrap().0 - 2f64.sqrt()).abs() <= 1e-12);
        let zero = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(sparsity_reg(&zero), Err(Error::ZeroRow(1))));
    }

    #[test]
    fn sparsity_is_row_scale_invariant_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let m = rng.random_range(2..6);
            let w = DMatrix::from_fn(m, 8, |_, _| rng.random_range(-1.0..1.0));
            let (l, _) = sparsity_reg(&w).unwrap();
            assert!(l >= 0.0 && l <= (m * (m - 1)) as f64 + 1e-12);
            let mut scaled = w.clone();
            let c = rng.random_range(0.1..10.0);
            scaled.row_mut(0).scale_mut(c);
            assert!((sparsity_reg(&scaled).unwrap().0 - l).abs() <= 1e-10);
        }
    }

    #[test]
    fn sparsity_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = DMatrix::from_fn(4, 6, |_, _| {
            let x: f64 = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) { x } else { -x }
        });
        let (_, g) = sparsity_reg(&w).unwrap();
        let h = 1e-6;
        let scale = g.amax();
        for i in 0..w.len() {
            let (mut p, mut m) = (w.clone(), w.clone());
            p[i] += h;
            m[i] -= h;
            let fd = (sparsity_reg(&p).unwrap().0 - sparsity_reg(&m).unwrap().0) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-4 * scale, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn total_loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let gt = random_seq(&mut rng, 3, 5);
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(anim_total_loss(&gt, &gt, &w, 1e-6, false).unwrap().value, 0.0);
        let mut pred = gt.clone();
        pred[1][2].x += 0.3;
        pred[1][4].y -= 0.4;
        let l = anim_total_loss(&pred, &gt, &w, 0.0, false).unwrap().value;
        assert!((l - 0.5).abs() <= 1e-12);

        let pred = random_seq(&mut rng, 3, 5);
        let wr = DMatrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0));
        let direct: f64 = pred
            .iter()
            .zip(&gt)
            .map(|(p, g)| p.iter().zip(g).map(|(a, b)| (a - b).norm_squared()).sum::<f64>().sqrt())
            .sum::<f64>()
            + 0.1 * sparsity_reg(&wr).unwrap().0;
        assert!((anim_total_loss(&pred, &gt, &wr, 0.1, false).unwrap().value - direct).abs() <= 1e-10);
        assert!(anim_total_loss(&pred[..2], &gt, &wr, 0.1, false).is_err());
    }
}
