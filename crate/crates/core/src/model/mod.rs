//! Linear face space: mean shape plus identity and expression bases, a
//! per-vertex texture model, and the free per-vertex offset field.

mod container;
mod synth;

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Topology, Vec3};
use crate::render::ShadingParams;

pub use container::{load_model, save_model, MODEL_FORMAT_VERSION};
pub use synth::{synth_model, SynthModelOptions, LANDMARK_NOSE_BRIDGE};

/// Regions every model must define.
pub const MANDATORY_REGIONS: [&str; 3] = ["lip", "upper", "face"];

/// Model dimensions used by the reference face model; desk-scale runs use
/// much smaller bases.
pub const REFERENCE_DIMS: ModelDims = ModelDims {
    k_id: 80,
    k_exp: 64,
    k_tex: 80,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub k_id: usize,
    pub k_exp: usize,
    pub k_tex: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MorphableModel {
    pub mean_shape: Vec<Vec3>,
    /// `(3n) x k_id`; row `3v + c` is coordinate `c` of vertex `v`.
    pub identity_basis: DMatrix<f64>,
    pub expression_basis: DMatrix<f64>,
    pub texture_mean: Vec<Vec3>,
    pub texture_basis: DMatrix<f64>,
    pub topology: Arc<Topology>,
    pub landmark_indices: Vec<usize>,
    pub regions: BTreeMap<String, Vec<usize>>,
}

impl MorphableModel {
    pub fn vertex_count(&self) -> usize {
        self.mean_shape.len()
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            k_id: self.identity_basis.ncols(),
            k_exp: self.expression_basis.ncols(),
            k_tex: self.texture_basis.ncols(),
        }
    }

    pub fn region(&self, name: &str) -> Result<&[usize]> {
        self.regions
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownRegion(name.to_string()))
    }

    /// Checks every structural invariant of the model.
    pub fn validate(&self) -> Result<()> {
        let n = self.vertex_count();
        if self.topology.vertex_count() != n {
            return Err(Error::dims("triangles", n, self.topology.vertex_count()));
        }
        let rows = 3 * n;
        for (name, basis) in [
            ("identity_basis", &self.identity_basis),
            ("expression_basis", &self.expression_basis),
            ("texture_basis", &self.texture_basis),
        ] {
            if basis.nrows() != rows {
                return Err(Error::dims(name, format!("{rows} rows"), basis.nrows()));
            }
        }
        if self.texture_mean.len() != n {
            return Err(Error::dims("texture_mean", n, self.texture_mean.len()));
        }
        let finite = |vs: &[Vec3]| vs.iter().all(|v| v.iter().all(|x| x.is_finite()));
        if !finite(&self.mean_shape) || !finite(&self.texture_mean) {
            return Err(Error::NonFinite("model arrays".into()));
        }
        if let Some(&bad) = self.landmark_indices.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidModel(format!("landmark index {bad} >= {n}")));
        }
        for region in MANDATORY_REGIONS {
            if !self.regions.contains_key(region) {
                return Err(Error::InvalidModel(format!("missing region {region:?}")));
            }
        }
        for (name, idx) in &self.regions {
            if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
                return Err(Error::InvalidModel(format!(
                    "region {name:?} index {bad} >= {n}"
                )));
            }
        }
        Ok(())
    }

    pub fn zero_params(&self) -> FaceParams {
        let dims = self.dims();
        FaceParams::zeros(dims)
    }
}

/// Coefficients of the linear face space plus per-camera lighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub delta: Vec<f64>,
    /// Lighting per camera id.
    pub gamma: BTreeMap<u32, ShadingParams>,
}

impl FaceParams {
    pub fn zeros(dims: ModelDims) -> Self {
        Self {
            alpha: vec![0.0; dims.k_id],
            beta: vec![0.0; dims.k_exp],
            delta: vec![0.0; dims.k_tex],
            gamma: BTreeMap::new(),
        }
    }

    pub fn check_dims(&self, dims: ModelDims) -> Result<()> {
        if self.alpha.len() != dims.k_id {
            return Err(Error::dims("alpha", dims.k_id, self.alpha.len()));
        }
        if self.beta.len() != dims.k_exp {
            return Err(Error::dims("beta", dims.k_exp, self.beta.len()));
        }
        if self.delta.len() != dims.k_tex {
            return Err(Error::dims("delta", dims.k_tex, self.delta.len()));
        }
        Ok(())
    }
}

/// Free per-vertex displacement added on top of the linear face space.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexOffsets {
    pub offsets: Vec<Vec3>,
}

impl VertexOffsets {
    pub fn zeros(n: usize) -> Self {
        Self {
            offsets: vec![Vec3::zeros(); n],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.offsets.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub topology: Arc<Topology>,
    pub albedo: Option<Vec<Vec3>>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, topology: Arc<Topology>) -> Self {
        Self {
            vertices,
            topology,
            albedo: None,
        }
    }

    pub fn with_albedo(mut self, albedo: Vec<Vec3>) -> Self {
        self.albedo = Some(albedo);
        self
    }
}

fn basis_times(basis: &DMatrix<f64>, coeffs: &[f64]) -> DVector<f64> {
    basis * DVector::from_column_slice(coeffs)
}

fn add_reshaped(into: &mut [Vec3], flat: &DVector<f64>) {
    for (v, p) in into.iter_mut().enumerate() {
        p.x += flat[3 * v];
        p.y += flat[3 * v + 1];
        p.z += flat[3 * v + 2];
    }
}

/// `mean + B_id·alpha + B_exp·beta + offsets`.
pub fn assemble_face(
    model: &MorphableModel,
    params: &FaceParams,
    offsets: &VertexOffsets,
) -> Result<Mesh> {
    params.check_dims(model.dims())?;
    let n = model.vertex_count();
    if offsets.offsets.len() != n {
        return Err(Error::dims("offsets", n, offsets.offsets.len()));
    }
    let mut vertices = model.mean_shape.clone();
    // Skipped when all-zero so the mean shape is reproduced bitwise.
    if params.alpha.iter().any(|&a| a != 0.0) {
        add_reshaped(&mut vertices, &basis_times(&model.identity_basis, &params.alpha));
    }
    if params.beta.iter().any(|&b| b != 0.0) {
        add_reshaped(
            &mut vertices,
            &basis_times(&model.expression_basis, &params.beta),
        );
    }
    for (p, r) in vertices.iter_mut().zip(&offsets.offsets) {
        if *r != Vec3::zeros() {
            *p += r;
        }
    }
    Ok(Mesh::new(vertices, model.topology.clone()))
}

/// Texture mean plus `B_tex·delta`, clamped to `[0, 1]` per channel.
pub fn face_albedo(model: &MorphableModel, delta: &[f64]) -> Result<Vec<Vec3>> {
    let raw = face_albedo_unclamped(model, delta)?;
    Ok(raw
        .into_iter()
        .map(|c| c.map(|x| x.clamp(0.0, 1.0)))
        .collect())
}

/// The affine texture map before clamping.
pub fn face_albedo_unclamped(model: &MorphableModel, delta: &[f64]) -> Result<Vec<Vec3>> {
    let k = model.texture_basis.ncols();
    if delta.len() != k {
        return Err(Error::dims("delta", k, delta.len()));
    }
    let mut albedo = model.texture_mean.clone();
    if delta.iter().any(|&d| d != 0.0) {
        add_reshaped(&mut albedo, &basis_times(&model.texture_basis, delta));
    }
    Ok(albedo)
}

/// Pulls a gradient on the `n x 3` vertex field back onto basis coefficients:
/// `B^T · vec(grad)`.
pub fn basis_transpose_times(basis: &DMatrix<f64>, grad: &[Vec3]) -> Vec<f64> {
    let flat = DVector::from_iterator(grad.len() * 3, grad.iter().flat_map(|g| [g.x, g.y, g.z]));
    (basis.transpose() * flat).iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(n: usize, dims: ModelDims, seed: u64) -> MorphableModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rv = |len: usize| -> Vec<Vec3> {
            (0..len)
                .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
                .collect()
        };
        let mean_shape = rv(n);
        let texture_mean = rv(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let mut rm = |k: usize| DMatrix::from_fn(3 * n, k, |_, _| rng.random_range(-1.0..1.0));
        let identity_basis = rm(dims.k_id);
        let expression_basis = rm(dims.k_exp);
        let texture_basis = rm(dims.k_tex);
        let tris = (0..n - 2).map(|i| [i, i + 1, i + 2]).collect();
        let mut regions = BTreeMap::new();
        for r in MANDATORY_REGIONS {
            regions.insert(r.to_string(), vec![0, 1]);
        }
        MorphableModel {
            mean_shape,
            identity_basis,
            expression_basis,
            texture_mean,
            texture_basis,
            topology: Arc::new(Topology::new(n, tris).unwrap()),
            landmark_indices: vec![0, 1, 2],
            regions,
        }
    }

    fn random_vec(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
        (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    const DIMS: ModelDims = ModelDims {
        k_id: 5,
        k_exp: 4,
        k_tex: 3,
    };

    #[test]
    fn zero_params_reproduce_mean_bitwise() {
        let model = random_model(30, DIMS, 3);
        let mesh = assemble_face(&model, &model.zero_params(), &VertexOffsets::zeros(30)).unwrap();
        assert_eq!(mesh.vertices, model.mean_shape);
    }

    #[test]
    fn unit_alpha_adds_first_column() {
        let model = random_model(20, DIMS, 4);
        let mut params = model.zero_params();
        params.alpha[0] = 1.0;
        let mesh = assemble_face(&model, &params, &VertexOffsets::zeros(20)).unwrap();
        for v in 0..20 {
            for c in 0..3 {
                let expected = model.mean_shape[v][c] + model.identity_basis[(3 * v + c, 0)];
                assert_eq!(mesh.vertices[v][c], expected);
            }
        }
    }

    #[test]
    fn assemble_matches_dense_triple_loop() {
        let n = 100;
        let model = random_model(n, DIMS, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut params = model.zero_params();
        params.alpha = random_vec(&mut rng, DIMS.k_id);
        params.beta = random_vec(&mut rng, DIMS.k_exp);
        let offsets = VertexOffsets {
            offsets: (0..n)
                .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
                .collect(),
        };
        let mesh = assemble_face(&model, &params, &offsets).unwrap();
        for v in 0..n {
            for c in 0..3 {
                let mut expected = model.mean_shape[v][c] + offsets.offsets[v][c];
                for j in 0..DIMS.k_id {
                    expected += model.identity_basis[(3 * v + c, j)] * params.alpha[j];
                }
                for j in 0..DIMS.k_exp {
                    expected += model.expression_basis[(3 * v + c, j)] * params.beta[j];
                }
                let got = mesh.vertices[v][c];
                assert!((got - expected).abs() <= 1e-12 * expected.abs().max(1.0));
            }
        }
    }

    #[test]
    fn albedo_matches_oracle_and_clamps() {
        let n = 50;
        let model = random_model(n, DIMS, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let delta = random_vec(&mut rng, DIMS.k_tex);
        let raw = face_albedo_unclamped(&model, &delta).unwrap();
        let clamped = face_albedo(&model, &delta).unwrap();
        for v in 0..n {
            for c in 0..3 {
                let mut expected = model.texture_mean[v][c];
                for j in 0..DIMS.k_tex {
                    expected += model.texture_basis[(3 * v + c, j)] * delta[j];
                }
                assert!((raw[v][c] - expected).abs() <= 1e-12);
                assert_eq!(clamped[v][c], raw[v][c].clamp(0.0, 1.0));
            }
        }
        assert_eq!(
            face_albedo(&model, &[0.0; 3]).unwrap(),
            model.texture_mean
        );
    }

    #[test]
    fn albedo_channel_above_one_clamps_to_exactly_one() {
        let mut model = random_model(10, DIMS, 8);
        model.texture_basis.fill(0.0);
        model.texture_basis[(0, 0)] = 5.0;
        let albedo = face_albedo(&model, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(albedo[0].x, 1.0);
    }

    #[test]
    fn dimension_mismatch_names_field() {
        let model = random_model(10, DIMS, 9);
        let mut params = model.zero_params();
        params.beta.push(0.0);
        let err = assemble_face(&model, &params, &VertexOffsets::zeros(10)).unwrap_err();
        assert!(err.to_string().contains("beta"), "{err}");
        let err = assemble_face(&model, &model.zero_params(), &VertexOffsets::zeros(9)).unwrap_err();
        assert!(err.to_string().contains("offsets"), "{err}");
        assert!(face_albedo(&model, &[0.0; 2]).unwrap_err().to_string().contains("delta"));
    }

    mod props {
        use super::*;
        use proptest::prelude::{prop_assert, proptest, ProptestConfig};

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn assemble_is_linear(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
                let n = 40;
                let mut model = random_model(n, DIMS, 11);
                model.mean_shape = vec![Vec3::zeros(); n];
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let draw = |rng: &mut ChaCha8Rng| {
                    let mut p = model.zero_params();
                    p.alpha = random_vec(rng, DIMS.k_id);
                    p.beta = random_vec(rng, DIMS.k_exp);
                    let r = VertexOffsets {
                        offsets: (0..n).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect(),
                    };
                    (p, r)
                };
                let (p1, r1) = draw(&mut rng);
                let (p2, r2) = draw(&mut rng);
                let mut pc = model.zero_params();
                pc.alpha = p1.alpha.iter().zip(&p2.alpha).map(|(x, y)| a * x + b * y).collect();
                pc.beta = p1.beta.iter().zip(&p2.beta).map(|(x, y)| a * x + b * y).collect();
                let rc = VertexOffsets {
                    offsets: r1.offsets.iter().zip(&r2.offsets).map(|(x, y)| x * a + y * b).collect(),
                };
                let m1 = assemble_face(&model, &p1, &r1).unwrap();
                let m2 = assemble_face(&model, &p2, &r2).unwrap();
                let mc = assemble_face(&model, &pc, &rc).unwrap();
                for v in 0..n {
                    let expected = m1.vertices[v] * a + m2.vertices[v] * b;
                    let scale = expected.norm().max(1.0);
                    prop_assert!((mc.vertices[v] - expected).norm() <= 1e-12 * scale);
                }
            }
        }
    }
}
