//! Second-order real spherical harmonics (no Condon-Shortley phase).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// `1 / (2 sqrt(pi))`
pub const SH_C0: f64 = 0.282094791773878;
/// `sqrt(3) / (2 sqrt(pi))`
pub const SH_C1: f64 = 0.488602511902920;
/// `sqrt(15) / (2 sqrt(pi))`
pub const SH_C2: f64 = 1.092548430592079;
/// `sqrt(5) / (4 sqrt(pi))`
pub const SH_C3: f64 = 0.315391565252520;
/// `sqrt(15) / (4 sqrt(pi))`
pub const SH_C4: f64 = 0.546274215296040;

const NORMAL_TOLERANCE: f64 = 1e-3;

/// Lighting coefficients: 9 per color channel, channel-major
/// (`gamma[9 * c + k]`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadingParams(pub [f64; 27]);

impl Default for ShadingParams {
    fn default() -> Self {
        Self::ambient(1.0)
    }
}

impl ShadingParams {
    pub fn zeros() -> Self {
        Self([0.0; 27])
    }

    /// Constant irradiance `level` in every channel.
    pub fn ambient(level: f64) -> Self {
        let mut g = [0.0; 27];
        for c in 0..3 {
            g[9 * c] = level / SH_C0;
        }
        Self(g)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl Serialize for ShadingParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.as_slice().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ShadingParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        let arr: [f64; 27] = v
            .try_into()
            .map_err(|v: Vec<f64>| serde::de::Error::invalid_length(v.len(), &"27 coefficients"))?;
        Ok(Self(arr))
    }
}

/// The nine basis functions at unit direction `n`.
pub fn sh_basis(n: &Vec3) -> [f64; 9] {
    let (x, y, z) = (n.x, n.y, n.z);
    [
        SH_C0,
        SH_C1 * y,
        SH_C1 * z,
        SH_C1 * x,
        SH_C2 * x * y,
        SH_C2 * y * z,
        SH_C3 * (3.0 * z * z - 1.0),
        SH_C2 * x * z,
        SH_C4 * (x * x - y * y),
    ]
}

/// Jacobian rows `d Y_k / d n`.
fn sh_basis_grad(n: &Vec3) -> [Vec3; 9] {
    let (x, y, z) = (n.x, n.y, n.z);
    [
        Vec3::zeros(),
        Vec3::new(0.0, SH_C1, 0.0),
        Vec3::new(0.0, 0.0, SH_C1),
        Vec3::new(SH_C1, 0.0, 0.0),
        Vec3::new(SH_C2 * y, SH_C2 * x, 0.0),
        Vec3::new(0.0, SH_C2 * z, SH_C2 * y),
        Vec3::new(0.0, 0.0, SH_C3 * 6.0 * z),
        Vec3::new(SH_C2 * z, 0.0, SH_C2 * x),
        Vec3::new(SH_C4 * 2.0 * x, -SH_C4 * 2.0 * y, 0.0),
    ]
}

fn irradiance(basis: &[f64; 9], gamma: &ShadingParams, channel: usize) -> f64 {
    basis
        .iter()
        .zip(&gamma.0[9 * channel..9 * channel + 9])
        .map(|(y, g)| y * g)
        .sum()
}

/// Per-vertex `albedo * sum_k gamma_k Y_k(normal)` for each channel.
pub fn sh_shade(albedo: &[Vec3], normals: &[Vec3], gamma: &ShadingParams) -> Result<Vec<Vec3>> {
    if albedo.len() != normals.len() {
        return Err(Error::dims("normals", albedo.len(), normals.len()));
    }
    albedo
        .iter()
        .zip(normals)
        .enumerate()
        .map(|(v, (a, n))| {
            let norm = n.norm();
            if (norm - 1.0).abs() > NORMAL_TOLERANCE {
                return Err(Error::NonUnitNormal { vertex: v, norm });
            }
            let basis = sh_basis(n);
            Ok(Vec3::new(
                a.x * irradiance(&basis, gamma, 0),
                a.y * irradiance(&basis, gamma, 1),
                a.z * irradiance(&basis, gamma, 2),
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShadeGrads {
    pub albedo: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub gamma: [f64; 27],
}

pub fn sh_shade_backward(
    albedo: &[Vec3],
    normals: &[Vec3],
    gamma: &ShadingParams,
    grad_colors: &[Vec3],
) -> ShadeGrads {
    let mut out = ShadeGrads {
        albedo: vec![Vec3::zeros(); albedo.len()],
        normals: vec![Vec3::zeros(); albedo.len()],
        gamma: [0.0; 27],
    };
    for v in 0..albedo.len() {
        let g = grad_colors[v];
        if g == Vec3::zeros() {
            continue;
        }
        let basis = sh_basis(&normals[v]);
        let dbasis = sh_basis_grad(&normals[v]);
        for c in 0..3 {
            let ga = g[c] * albedo[v][c];
            out.albedo[v][c] = g[c] * irradiance(&basis, gamma, c);
            for k in 0..9 {
                out.gamma[9 * c + k] += ga * basis[k];
                out.normals[v] += dbasis[k] * (ga * gamma.0[9 * c + k]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
        loop {
            let v = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if v.norm() > 0.1 && v.norm() < 1.0 {
                return v.normalize();
            }
        }
    }

    #[test]
    fn constants_match_closed_forms() {
        let pi = std::f64::consts::PI;
        assert!((SH_C0 - 0.5 / pi.sqrt()).abs() < 1e-14);
        assert!((SH_C1 - 3f64.sqrt() / (2.0 * pi.sqrt())).abs() < 1e-14);
        assert!((SH_C2 - 15f64.sqrt() / (2.0 * pi.sqrt())).abs() < 1e-14);
        assert!((SH_C3 - 5f64.sqrt() / (4.0 * pi.sqrt())).abs() < 1e-14);
        assert!((SH_C4 - 15f64.sqrt() / (4.0 * pi.sqrt())).abs() < 1e-14);
    }

    #[test]
    fn band_zero_only_gives_constant() {
        let mut g = ShadingParams::zeros();
        for c in 0..3 {
            g.0[9 * c] = 1.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let normals: Vec<Vec3> = (0..20).map(|_| random_unit(&mut rng)).collect();
        let albedo = vec![Vec3::new(1.0, 1.0, 1.0); 20];
        for s in sh_shade(&albedo, &normals, &g).unwrap() {
            for c in 0..3 {
                assert!((s[c] - 0.2820948).abs() < 1e-7);
            }
        }
        let zero = sh_shade(&albedo, &normals, &ShadingParams::zeros()).unwrap();
        assert!(zero.iter().all(|s| *s == Vec3::zeros()));
    }

    #[test]
    fn matches_direct_polynomial() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = ShadingParams::zeros();
        g.0.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        let normals: Vec<Vec3> = (0..50).map(|_| random_unit(&mut rng)).collect();
        let albedo: Vec<Vec3> = (0..50)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let shaded = sh_shade(&albedo, &normals, &g).unwrap();
        let pi = std::f64::consts::PI;
        for v in 0..50 {
            let (x, y, z) = (normals[v].x, normals[v].y, normals[v].z);
            let basis = [
                1.0 / (2.0 * pi.sqrt()),
                (3.0 / (4.0 * pi)).sqrt() * y,
                (3.0 / (4.0 * pi)).sqrt() * z,
                (3.0 / (4.0 * pi)).sqrt() * x,
                0.5 * (15.0 / pi).sqrt() * x * y,
                0.5 * (15.0 / pi).sqrt() * y * z,
                0.25 * (5.0 / pi).sqrt() * (3.0 * z * z - 1.0),
                0.5 * (15.0 / pi).sqrt() * x * z,
                0.25 * (15.0 / pi).sqrt() * (x * x - y * y),
            ];
            for c in 0..3 {
                let e: f64 = (0..9).map(|k| g.0[9 * c + k] * basis[k]).sum::<f64>() * albedo[v][c];
                assert!((shaded[v][c] - e).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn rejects_non_unit_normal() {
        let err = sh_shade(&[Vec3::zeros()], &[Vec3::new(0.0, 0.0, 1.01)], &ShadingParams::zeros())
            .unwrap_err();
        assert!(matches!(err, Error::NonUnitNormal { vertex: 0, .. }));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = ShadingParams::zeros();
        g.0.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        let normals: Vec<Vec3> = (0..4).map(|_| random_unit(&mut rng)).collect();
        let albedo: Vec<Vec3> = (0..4).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let w: Vec<Vec3> = (0..4).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        // Normals are perturbed off the unit sphere here; evaluate the
        // polynomial directly so the tolerance check does not interfere.
        let f = |a: &[Vec3], n: &[Vec3], g: &ShadingParams| -> f64 {
            (0..4)
                .map(|v| {
                    let b = sh_basis(&n[v]);
                    (0..3).map(|c| w[v][c] * a[v][c] * irradiance(&b, g, c)).sum::<f64>()
                })
                .sum()
        };
        let grads = sh_shade_backward(&albedo, &normals, &g, &w);
        let h = 1e-6;
        for k in 0..27 {
            let (mut gp, mut gm) = (g, g);
            gp.0[k] += h;
            gm.0[k] -= h;
            let fd = (f(&albedo, &normals, &gp) - f(&albedo, &normals, &gm)) / (2.0 * h);
            assert!((fd - grads.gamma[k]).abs() < 1e-8);
        }
        for v in 0..4 {
            for c in 0..3 {
                let (mut np, mut nm) = (normals.clone(), normals.clone());
                np[v][c] += h;
                nm[v][c] -= h;
                let fd = (f(&albedo, &np, &g) - f(&albedo, &nm, &g)) / (2.0 * h);
                assert!((fd - grads.normals[v][c]).abs() < 1e-8);
                let (mut ap, mut am) = (albedo.clone(), albedo.clone());
                ap[v][c] += h;
                am[v][c] -= h;
                let fd = (f(&ap, &normals, &g) - f(&am, &normals, &g)) / (2.0 * h);
                assert!((fd - grads.albedo[v][c]).abs() < 1e-8);
            }
        }
    }
}
