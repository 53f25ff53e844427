//! On-disk model container: `model.json` manifest plus `model.bin` holding
//! row-major little-endian f32 arrays.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ModelDims, MorphableModel};
use crate::error::{Error, Result};
use crate::geometry::{Topology, Vec3};
use crate::io::{f32le_bytes, read_f32le, read_json, write_bytes, write_json};

pub const MODEL_FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "model.json";
const BLOB: &str = "model.bin";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub byte_offset: u64,
    pub byte_length: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    n: usize,
    dims: ModelDims,
    arrays: BTreeMap<String, ArrayEntry>,
    triangles: Vec<[usize; 3]>,
    landmark_indices: Vec<usize>,
    regions: BTreeMap<String, Vec<usize>>,
}

fn flatten_rows(vs: &[Vec3]) -> Vec<f64> {
    vs.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
}

fn flatten_matrix(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

pub fn save_model(model: &MorphableModel, dir: &Path) -> Result<()> {
    model.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = model.vertex_count();
    let dims = model.dims();
    let arrays: [(&str, Vec<usize>, Vec<f64>); 5] = [
        ("mean_shape", vec![n, 3], flatten_rows(&model.mean_shape)),
        (
            "identity_basis",
            vec![3 * n, dims.k_id],
            flatten_matrix(&model.identity_basis),
        ),
        (
            "expression_basis",
            vec![3 * n, dims.k_exp],
            flatten_matrix(&model.expression_basis),
        ),
        ("texture_mean", vec![n, 3], flatten_rows(&model.texture_mean)),
        (
            "texture_basis",
            vec![3 * n, dims.k_tex],
            flatten_matrix(&model.texture_basis),
        ),
    ];
    let mut blob = Vec::new();
    let mut table = BTreeMap::new();
    for (name, shape, values) in arrays {
        let bytes = f32le_bytes(&values);
        table.insert(
            name.to_string(),
            ArrayEntry {
                dtype: "f32le".into(),
                shape,
                byte_offset: blob.len() as u64,
                byte_length: bytes.len() as u64,
            },
        );
        blob.extend_from_slice(&bytes);
    }
    let manifest = Manifest {
        format_version: MODEL_FORMAT_VERSION,
        n,
        dims,
        arrays: table,
        triangles: model.topology.triangles().to_vec(),
        landmark_indices: model.landmark_indices.clone(),
        regions: model.regions.clone(),
    };
    write_bytes(&dir.join(BLOB), &blob)?;
    write_json(&dir.join(MANIFEST), &manifest)
}

fn array<'a>(
    manifest: &'a Manifest,
    blob: &'a [u8],
    name: &'static str,
    shape: [usize; 2],
) -> Result<Vec<f64>> {
    let entry = manifest
        .arrays
        .get(name)
        .ok_or_else(|| Error::MissingBlob(name.to_string()))?;
    if entry.dtype != "f32le" {
        return Err(Error::InvalidModel(format!(
            "{name}: unsupported dtype {:?}",
            entry.dtype
        )));
    }
    if entry.shape != shape {
        return Err(Error::dims(
            name,
            format!("{shape:?}"),
            format!("{:?}", entry.shape),
        ));
    }
    let expected = (shape[0] * shape[1] * 4) as u64;
    if entry.byte_length != expected {
        return Err(Error::BlobLengthMismatch {
            array: name.to_string(),
            detail: format!(
                "declared {} bytes, shape needs {expected}",
                entry.byte_length
            ),
        });
    }
    let start = entry.byte_offset as usize;
    let end = start + entry.byte_length as usize;
    if end > blob.len() {
        return Err(Error::BlobLengthMismatch {
            array: name.to_string(),
            detail: format!("needs bytes {start}..{end}, blob holds {}", blob.len()),
        });
    }
    Ok(read_f32le(&blob[start..end]))
}

fn rows(values: Vec<f64>) -> Vec<Vec3> {
    values
        .chunks_exact(3)
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect()
}

pub fn load_model(dir: &Path) -> Result<MorphableModel> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST))?;
    if manifest.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: manifest.format_version,
            supported: MODEL_FORMAT_VERSION,
        });
    }
    let blob_path = dir.join(BLOB);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let n = manifest.n;
    let d = manifest.dims;
    let mean_shape = rows(array(&manifest, &blob, "mean_shape", [n, 3])?);
    let texture_mean = rows(array(&manifest, &blob, "texture_mean", [n, 3])?);
    let matrix = |name, k| -> Result<DMatrix<f64>> {
        let values = array(&manifest, &blob, name, [3 * n, k])?;
        Ok(DMatrix::from_row_slice(3 * n, k, &values))
    };
    let model = MorphableModel {
        mean_shape,
        identity_basis: matrix("identity_basis", d.k_id)?,
        expression_basis: matrix("expression_basis", d.k_exp)?,
        texture_mean,
        texture_basis: matrix("texture_basis", d.k_tex)?,
        topology: Arc::new(Topology::new(n, manifest.triangles)?),
        landmark_indices: manifest.landmark_indices,
        regions: manifest.regions,
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::synth_model;

    const DIMS: ModelDims = ModelDims {
        k_id: 8,
        k_exp: 8,
        k_tex: 8,
    };

    fn read(dir: &Path, file: &str) -> Vec<u8> {
        fs::read(dir.join(file)).unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let a = tmp.path().join("a");
        let b = tmp.path().join("b");
        let model = synth_model(1, 642, DIMS).unwrap();
        save_model(&model, &a).unwrap();
        let loaded = load_model(&a).unwrap();
        save_model(&loaded, &b).unwrap();
        assert_eq!(read(&a, BLOB), read(&b, BLOB));
        assert_eq!(read(&a, MANIFEST), read(&b, MANIFEST));
        // A loaded model is a fixed point of save/load in memory too.
        assert_eq!(load_model(&b).unwrap(), loaded);
    }

    #[test]
    fn truncated_blob_is_reported() {
        let tmp = tempfile::tempdir().unwrap();
        let model = synth_model(1, 42, DIMS).unwrap();
        save_model(&model, tmp.path()).unwrap();
        let mut blob = read(tmp.path(), BLOB);
        blob.truncate(blob.len() - 10);
        fs::write(tmp.path().join(BLOB), blob).unwrap();
        let err = load_model(tmp.path()).unwrap_err();
        assert!(err.to_string().contains("blob length mismatch"), "{err}");
    }

    #[test]
    fn column_count_mismatch_names_identity_basis() {
        let tmp = tempfile::tempdir().unwrap();
        let model = synth_model(1, 42, DIMS).unwrap();
        save_model(&model, tmp.path()).unwrap();
        let path = tmp.path().join(MANIFEST);
        let mut json: serde_json::Value =
            serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        json["dims"]["k_id"] = 80.into();
        json["arrays"]["identity_basis"]["shape"] = serde_json::json!([126, 79]);
        fs::write(&path, serde_json::to_vec(&json).unwrap()).unwrap();
        let err = load_model(tmp.path()).unwrap_err();
        assert!(err.to_string().contains("identity_basis"), "{err}");
    }

    #[test]
    fn unknown_version_and_missing_blob() {
        let tmp = tempfile::tempdir().unwrap();
        let model = synth_model(2, 42, DIMS).unwrap();
        save_model(&model, tmp.path()).unwrap();
        let path = tmp.path().join(MANIFEST);
        let original = fs::read(&path).unwrap();
        let mut json: serde_json::Value = serde_json::from_slice(&original).unwrap();
        json["format_version"] = 9.into();
        fs::write(&path, serde_json::to_vec(&json).unwrap()).unwrap();
        assert!(matches!(
            load_model(tmp.path()),
            Err(Error::UnsupportedVersion { found: 9, .. })
        ));

        let mut json: serde_json::Value = serde_json::from_slice(&original).unwrap();
        json["arrays"].as_object_mut().unwrap().remove("texture_mean");
        fs::write(&path, serde_json::to_vec(&json).unwrap()).unwrap();
        assert!(matches!(load_model(tmp.path()), Err(Error::MissingBlob(_))));
    }
}
