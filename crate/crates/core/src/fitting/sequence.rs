//! Reconstructed-sequence container: `seq.json` (manifest and per-frame
//! parameters) next to `seq.bin` (frame-major f32le vertex positions).

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Topology, Vec3};
use crate::io::{f32le_bytes, read_f32le, read_json, write_bytes, write_json_pretty};
use crate::model::FaceParams;

pub const SEQUENCE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub format_version: u32,
    pub frame_count: usize,
    pub n: usize,
    pub fps: f64,
    pub dtype: String,
    /// Per-frame fitted parameters; empty for ground-truth sequences that
    /// only carry vertices.
    pub frames: Vec<FaceParams>,
}

/// Vertex positions over time plus optional per-frame parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceData {
    pub fps: f64,
    pub frames: Vec<Vec<Vec3>>,
    pub params: Vec<FaceParams>,
}

impl SequenceData {
    pub fn vertex_count(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }
}

/// Writes the container; with `topology` given, frame 0 is also exported as
/// `frame_000000.obj`.
pub fn save_sequence(dir: &Path, seq: &SequenceData, topology: Option<&Topology>) -> Result<()> {
    let n = seq.vertex_count();
    if seq.frames.iter().any(|f| f.len() != n) {
        return Err(Error::InvalidArgument("frames differ in vertex count".into()));
    }
    if !seq.params.is_empty() && seq.params.len() != seq.frames.len() {
        return Err(Error::dims("frames", seq.frames.len(), seq.params.len()));
    }
    let manifest = SequenceManifest {
        format_version: SEQUENCE_FORMAT_VERSION,
        frame_count: seq.frames.len(),
        n,
        fps: seq.fps,
        dtype: "f32le".into(),
        frames: seq.params.clone(),
    };
    let flat: Vec<f64> = seq
        .frames
        .iter()
        .flat_map(|f| f.iter().flat_map(|v| [v.x, v.y, v.z]))
        .collect();
    write_bytes(&dir.join("seq.bin"), &f32le_bytes(&flat))?;
    write_json_pretty(&dir.join("seq.json"), &manifest)?;
    if let (Some(topo), Some(first)) = (topology, seq.frames.first()) {
        write_obj(&dir.join("frame_000000.obj"), first, topo)?;
    }
    Ok(())
}

pub fn load_sequence(dir: &Path) -> Result<SequenceData> {
    let manifest: SequenceManifest = read_json(&dir.join("seq.json"))?;
    if manifest.format_version != SEQUENCE_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: manifest.format_version,
            supported: SEQUENCE_FORMAT_VERSION,
        });
    }
    if manifest.dtype != "f32le" {
        return Err(Error::InvalidArgument(format!("unsupported dtype {:?}", manifest.dtype)));
    }
    if !manifest.frames.is_empty() && manifest.frames.len() != manifest.frame_count {
        return Err(Error::dims("frames", manifest.frame_count, manifest.frames.len()));
    }
    let path = dir.join("seq.bin");
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let expected = manifest.frame_count * manifest.n * 3 * 4;
    if bytes.len() != expected {
        return Err(Error::BlobLengthMismatch {
            array: "seq.bin".into(),
            detail: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    let values = read_f32le(&bytes);
    let frames = values
        .chunks_exact((manifest.n * 3).max(1))
        .take(manifest.frame_count)
        .map(|f| f.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
        .collect();
    Ok(SequenceData {
        fps: manifest.fps,
        frames,
        params: manifest.frames,
    })
}

pub fn write_obj(path: &Path, vertices: &[Vec3], topology: &Topology) -> Result<()> {
    let mut s = String::new();
    for v in vertices {
        let _ = writeln!(s, "v {} {} {}", v.x as f32, v.y as f32, v.z as f32);
    }
    for t in topology.triangles() {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    write_bytes(path, s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;
    use crate::render::ShadingParams;

    fn sample() -> SequenceData {
        let dims = ModelDims { k_id: 2, k_exp: 2, k_tex: 1 };
        let mut p = FaceParams::zeros(dims);
        p.alpha = vec![0.1, -1.0 / 3.0];
        p.gamma.insert(2, ShadingParams::ambient(0.7));
        SequenceData {
            fps: 30.0,
            frames: (0..3)
                .map(|t| (0..4).map(|i| Vec3::new(t as f64 * 0.1, i as f64 / 3.0, 0.5)).collect())
                .collect(),
            params: vec![p; 3],
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        let topo = Topology::new(4, vec![[0, 1, 2], [0, 2, 3]]).unwrap();
        save_sequence(&a, &sample(), Some(&topo)).unwrap();
        let loaded = load_sequence(&a).unwrap();
        assert_eq!(loaded.params, sample().params);
        save_sequence(&b, &loaded, Some(&topo)).unwrap();
        for f in ["seq.json", "seq.bin", "frame_000000.obj"] {
            assert_eq!(
                std::fs::read(a.join(f)).unwrap(),
                std::fs::read(b.join(f)).unwrap(),
                "{f}"
            );
        }
        let obj = std::fs::read_to_string(a.join("frame_000000.obj")).unwrap();
        assert_eq!(obj.lines().filter(|l| l.starts_with("f ")).count(), 2);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_sequence(dir.path(), &sample(), None).unwrap();
        let bin = dir.path().join("seq.bin");
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 4]).unwrap();
        let err = load_sequence(dir.path()).unwrap_err();
        assert!(err.to_string().contains("blob length mismatch"), "{err}");
    }
}
