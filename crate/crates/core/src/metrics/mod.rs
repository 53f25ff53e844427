//! Motion statistics over reconstructed sequences and region-restricted
//! vertex-error metrics.

mod svg;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub use svg::{stats_svg, StatsPlotInput};

pub const DEFAULT_CORRELATION_THRESHOLD: f64 = 0.5;

/// Positions over time with named vertex regions.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexSequence {
    pub frames: Vec<Vec<Vec3>>,
    pub fps: f64,
    pub regions: BTreeMap<String, Vec<usize>>,
}

impl VertexSequence {
    pub fn new(frames: Vec<Vec<Vec3>>, fps: f64, regions: BTreeMap<String, Vec<usize>>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::TooFewFrames { found: 0, needed: 1 });
        };
        let n = first.len();
        if let Some(bad) = frames.iter().find(|f| f.len() != n) {
            return Err(Error::dims("frame vertices", n, bad.len()));
        }
        for (name, idx) in &regions {
            if let Some(&v) = idx.iter().find(|&&v| v >= n) {
                return Err(Error::InvalidArgument(format!(
                    "region {name:?} references vertex {v} of {n}"
                )));
            }
        }
        Ok(Self { frames, fps, regions })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.frames[0].len()
    }

    pub fn duration_s(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    pub fn region(&self, name: &str) -> Result<&[usize]> {
        self.regions
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownRegion(name.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
    All,
}

impl std::str::FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            "all" => Ok(Axis::All),
            _ => Err(Error::InvalidArgument(format!("axis must be x, y, z or all, got {s:?}"))),
        }
    }
}

/// Mean absolute per-frame displacement along `axis` over the region, in
/// model units per frame. `All` averages the three axes.
pub fn vertex_velocity(seq: &VertexSequence, region: &str, axis: Axis) -> Result<f64> {
    let idx = seq.region(region)?;
    let t = seq.frame_count();
    if t < 2 {
        return Err(Error::TooFewFrames { found: t, needed: 2 });
    }
    if idx.is_empty() {
        return Err(Error::InvalidArgument(format!("region {region:?} is empty")));
    }
    let per_axis = |c: usize| {
        let mut sum = 0.0;
        for w in seq.frames.windows(2) {
            for &v in idx {
                sum += (w[1][v][c] - w[0][v][c]).abs();
            }
        }
        sum / ((t - 1) * idx.len()) as f64
    };
    Ok(match axis {
        Axis::X => per_axis(0),
        Axis::Y => per_axis(1),
        Axis::Z => per_axis(2),
        Axis::All => (per_axis(0) + per_axis(1) + per_axis(2)) / 3.0,
    })
}

/// Pearson correlation; `None` when either series has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    if n < 2 {
        return None;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (da, db) = (a[i] - ma, b[i] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    // Relative floor so that round-off on a constant series reads as zero.
    let scale = |m: f64| (m * m * n as f64).max(f64::MIN_POSITIVE) * 1e-24;
    if saa <= scale(ma) || sbb <= scale(mb) {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Per-vertex distance from the vertex's temporal mean, per frame.
fn displacement_series(seq: &VertexSequence, idx: &[usize]) -> Vec<Vec<f64>> {
    let t = seq.frame_count() as f64;
    idx.iter()
        .map(|&v| {
            let mean = seq.frames.iter().map(|f| f[v]).sum::<Vec3>() / t;
            seq.frames.iter().map(|f| (f[v] - mean).norm()).collect()
        })
        .collect()
}

/// Region signal: mean over the region's vertices of the distance from the
/// sequence-mean face, per frame.
pub fn region_signal(seq: &VertexSequence, region: &str) -> Result<Vec<f64>> {
    let idx = seq.region(region)?;
    if idx.is_empty() {
        return Err(Error::InvalidArgument(format!("region {region:?} is empty")));
    }
    let series = displacement_series(seq, idx);
    Ok((0..seq.frame_count())
        .map(|t| series.iter().map(|s| s[t]).sum::<f64>() / idx.len() as f64)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEdge {
    pub a: String,
    pub b: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationGraph {
    pub regions: Vec<String>,
    /// Mean pairwise correlation of vertex motion inside each region; `None`
    /// when fewer than two vertices move.
    pub self_corr: Vec<Option<f64>>,
    /// Regions whose signal has zero variance; they carry no edges.
    pub degenerate: Vec<String>,
    pub threshold: f64,
    pub edges: Vec<CorrelationEdge>,
}

/// Edges between named signals whose Pearson correlation reaches
/// `threshold`; zero-variance signals are reported as degenerate.
pub fn pearson_graph(
    names: &[String],
    signals: &[Vec<f64>],
    threshold: f64,
) -> (Vec<CorrelationEdge>, Vec<String>) {
    let degenerate: Vec<bool> = signals.iter().map(|s| pearson(s, s).is_none()).collect();
    let mut edges = Vec::new();
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            if degenerate[i] || degenerate[j] {
                continue;
            }
            if let Some(r) = pearson(&signals[i], &signals[j]) {
                if r >= threshold {
                    edges.push(CorrelationEdge { a: names[i].clone(), b: names[j].clone(), weight: r });
                }
            }
        }
    }
    let names_deg = names
        .iter()
        .zip(&degenerate)
        .filter(|(_, d)| **d)
        .map(|(n, _)| n.clone())
        .collect();
    (edges, names_deg)
}

fn self_correlation(series: &[Vec<f64>]) -> Option<f64> {
    let moving: Vec<&Vec<f64>> = series.iter().filter(|s| pearson(s, s).is_some()).collect();
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..moving.len() {
        for j in i + 1..moving.len() {
            if let Some(r) = pearson(moving[i], moving[j]) {
                sum += r;
                count += 1;
            }
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Correlation graph over several sequences: per-sequence region signals
/// are concatenated in time before correlating.
pub fn region_correlation_multi(
    seqs: &[&VertexSequence],
    regions: &[String],
    threshold: f64,
) -> Result<CorrelationGraph> {
    if regions.len() < 2 {
        return Err(Error::InvalidArgument("need at least two regions".into()));
    }
    let total: usize = seqs.iter().map(|s| s.frame_count()).sum();
    if seqs.is_empty() {
        return Err(Error::TooFewFrames { found: 0, needed: 3 });
    }
    if let Some(s) = seqs.iter().find(|s| s.frame_count() < 3) {
        return Err(Error::TooFewFrames { found: s.frame_count(), needed: 3 });
    }
    let mut signals = vec![Vec::with_capacity(total); regions.len()];
    let mut vertex_series = vec![Vec::new(); regions.len()];
    for seq in seqs {
        for (r, name) in regions.iter().enumerate() {
            signals[r].extend(region_signal(seq, name)?);
            let series = displacement_series(seq, seq.region(name)?);
            if vertex_series[r].is_empty() {
                vertex_series[r] = series;
            } else {
                for (acc, s) in vertex_series[r].iter_mut().zip(series) {
                    acc.extend(s);
                }
            }
        }
    }
    let (edges, degenerate) = pearson_graph(regions, &signals, threshold);
    Ok(CorrelationGraph {
        regions: regions.to_vec(),
        self_corr: vertex_series.iter().map(|s| self_correlation(s)).collect(),
        degenerate,
        threshold,
        edges,
    })
}

pub fn region_correlation(seq: &VertexSequence, regions: &[String], threshold: f64) -> Result<CorrelationGraph> {
    region_correlation_multi(&[seq], regions, threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipMetrics {
    pub l_max_lip: f64,
    pub l_mean_lip: f64,
    pub l_max_upper: f64,
    pub l_max_face: f64,
}

fn check_pair(pred: &VertexSequence, gt: &VertexSequence) -> Result<()> {
    if pred.frame_count() != gt.frame_count() {
        return Err(Error::dims("frames", gt.frame_count(), pred.frame_count()));
    }
    if pred.vertex_count() != gt.vertex_count() {
        return Err(Error::dims("vertices", gt.vertex_count(), pred.vertex_count()));
    }
    Ok(())
}

/// Mean over frames of the per-frame maximum vertex error within `region`.
pub fn max_region_error(pred: &VertexSequence, gt: &VertexSequence, region: &str) -> Result<f64> {
    check_pair(pred, gt)?;
    let idx = gt.region(region)?;
    if idx.is_empty() {
        return Err(Error::InvalidArgument(format!("region {region:?} is empty")));
    }
    let sum: f64 = pred
        .frames
        .iter()
        .zip(&gt.frames)
        .map(|(p, g)| idx.iter().map(|&v| (p[v] - g[v]).norm()).fold(0.0, f64::max))
        .sum();
    Ok(sum / pred.frame_count() as f64)
}

/// Mean over frames and region vertices of the vertex error.
pub fn mean_region_error(pred: &VertexSequence, gt: &VertexSequence, region: &str) -> Result<f64> {
    check_pair(pred, gt)?;
    let idx = gt.region(region)?;
    if idx.is_empty() {
        return Err(Error::InvalidArgument(format!("region {region:?} is empty")));
    }
    let sum: f64 = pred
        .frames
        .iter()
        .zip(&gt.frames)
        .map(|(p, g)| idx.iter().map(|&v| (p[v] - g[v]).norm()).sum::<f64>())
        .sum();
    Ok(sum / (pred.frame_count() * idx.len()) as f64)
}

/// Region errors using the ground truth's `lip`, `upper` and `face` regions.
pub fn lip_metrics(pred: &VertexSequence, gt: &VertexSequence) -> Result<LipMetrics> {
    Ok(LipMetrics {
        l_max_lip: max_region_error(pred, gt, "lip")?,
        l_mean_lip: mean_region_error(pred, gt, "lip")?,
        l_max_upper: max_region_error(pred, gt, "upper")?,
        l_max_face: max_region_error(pred, gt, "face")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn regions(n: usize) -> BTreeMap<String, Vec<usize>> {
        let mut r = BTreeMap::new();
        r.insert("lip".to_string(), (0..n / 2).collect());
        r.insert("upper".to_string(), (n / 2..n).collect());
        r.insert("face".to_string(), (0..n).collect());
        r
    }

    fn random_seq(rng: &mut ChaCha8Rng, t: usize, n: usize) -> VertexSequence {
        let frames = (0..t)
            .map(|_| (0..n).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect())
            .collect();
        VertexSequence::new(frames, 30.0, regions(n)).unwrap()
    }

    #[test]
    fn velocity_examples() {
        let n = 6;
        let still = VertexSequence::new(vec![vec![Vec3::new(1.0, 2.0, 3.0); n]; 5], 30.0, regions(n)).unwrap();
        assert_eq!(vertex_velocity(&still, "lip", Axis::All).unwrap(), 0.0);
        let moving = VertexSequence::new(
            (0..8).map(|t| vec![Vec3::new(0.01 * t as f64, 0.0, 0.0); n]).collect(),
            30.0,
            regions(n),
        )
        .unwrap();
        assert!((vertex_velocity(&moving, "lip", Axis::X).unwrap() - 0.01).abs() <= 1e-12);
        assert!((vertex_velocity(&moving, "lip", Axis::All).unwrap() - 0.01 / 3.0).abs() <= 1e-12);
        assert!(matches!(vertex_velocity(&moving, "ear", Axis::X), Err(Error::UnknownRegion(_))));
        let one = VertexSequence::new(vec![vec![Vec3::zeros(); n]], 30.0, regions(n)).unwrap();
        assert!(matches!(vertex_velocity(&one, "lip", Axis::X), Err(Error::TooFewFrames { .. })));
    }

    #[test]
    fn pearson_properties() {
        let t: Vec<f64> = (0..64).map(|i| i as f64 * std::f64::consts::TAU / 64.0).collect();
        let s: Vec<f64> = t.iter().map(|x| x.sin()).collect();
        let c: Vec<f64> = t.iter().map(|x| x.cos()).collect();
        assert!((pearson(&s, &s).unwrap() - 1.0).abs() <= 1e-9);
        assert!(pearson(&s, &c).unwrap().abs() <= 0.05);
        let affine: Vec<f64> = s.iter().map(|x| 3.0 * x + 7.0).collect();
        let r = pearson(&c, &affine).unwrap();
        assert!((r - pearson(&c, &s).unwrap()).abs() <= 1e-9);
        assert!(pearson(&s, &vec![2.0; 64]).is_none());
    }

    #[test]
    fn constructed_correlations_keep_two_edges() {
        let t = 120;
        let wave = |k: f64| -> Vec<f64> {
            (0..t).map(|i| (std::f64::consts::TAU * k * i as f64 / t as f64).cos() * 2f64.sqrt()).collect()
        };
        let (u, v, w) = (wave(2.0), wave(3.0), wave(5.0));
        let b2 = (1.0f64 - 0.81).sqrt();
        // corr(s1,s3) = 0.6; corr(s2,s3) = 0.9*0.6 + b2*b3 = 0.3.
        let b3 = (0.3 - 0.54) / b2;
        let c3 = (1.0 - 0.36 - b3 * b3).sqrt();
        let s1 = u.clone();
        let s2: Vec<f64> = (0..t).map(|i| 0.9 * u[i] + b2 * v[i]).collect();
        let s3: Vec<f64> = (0..t).map(|i| 0.6 * u[i] + b3 * v[i] + c3 * w[i]).collect();
        assert!((pearson(&s1, &s2).unwrap() - 0.9).abs() < 1e-9);
        assert!((pearson(&s2, &s3).unwrap() - 0.3).abs() < 1e-9);
        assert!((pearson(&s1, &s3).unwrap() - 0.6).abs() < 1e-9);
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let (edges, deg) = pearson_graph(&names, &[s1, s2, s3], 0.5);
        assert!(deg.is_empty());
        let pairs: Vec<(&str, &str)> = edges.iter().map(|e| (e.a.as_str(), e.b.as_str())).collect();
        assert_eq!(pairs, vec![("a", "b"), ("a", "c")]);
    }

    #[test]
    fn same_driver_regions_fully_correlated() {
        let t = 40;
        let n = 8;
        let frames: Vec<Vec<Vec3>> = (0..t)
            .map(|i| {
                let phase = std::f64::consts::TAU * i as f64 / t as f64;
                let amp = 1.0 + 0.5 * (2.0 * phase).sin();
                (0..n)
                    .map(|v| Vec3::new(v as f64, 0.0, 0.0) + Vec3::new(phase.cos(), phase.sin(), 0.0) * amp * (1.0 + v as f64 * 0.1))
                    .collect()
            })
            .collect();
        let mut r = regions(n);
        r.insert("still".into(), vec![]);
        let seq = VertexSequence::new(frames, 30.0, r).unwrap();
        let names = vec!["lip".to_string(), "upper".to_string()];
        let g = region_correlation(&seq, &names, 0.5).unwrap();
        assert_eq!(g.edges.len(), 1);
        assert!((g.edges[0].weight - 1.0).abs() <= 1e-9);
        assert!((g.self_corr[0].unwrap() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn static_region_is_degenerate() {
        let n = 4;
        let frames: Vec<Vec<Vec3>> = (0..6)
            .map(|t| {
                let mut f = vec![Vec3::zeros(); n];
                f[0].x = (t as f64).sin();
                f[1].x = (t as f64 * 0.7).cos();
                f
            })
            .collect();
        let mut r = BTreeMap::new();
        r.insert("moving".to_string(), vec![0, 1]);
        r.insert("still".to_string(), vec![2, 3]);
        let seq = VertexSequence::new(frames, 30.0, r).unwrap();
        let g = region_correlation(&seq, &["moving".into(), "still".into()], 0.5).unwrap();
        assert_eq!(g.degenerate, vec!["still".to_string()]);
        assert!(g.edges.is_empty());
        assert_eq!(g.self_corr[1], None);
    }

    #[test]
    fn lip_metric_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = random_seq(&mut rng, 4, 10);
        let m = lip_metrics(&gt, &gt).unwrap();
        assert_eq!(m, LipMetrics { l_max_lip: 0.0, l_mean_lip: 0.0, l_max_upper: 0.0, l_max_face: 0.0 });
        let mut pred = gt.clone();
        pred.frames[2][1].y += 0.002;
        let m = lip_metrics(&pred, &gt).unwrap();
        assert!((m.l_max_lip - 5e-4).abs() <= 1e-12);
        assert_eq!(m.l_max_upper, 0.0);
        for _ in 0..100 {
            let p = random_seq(&mut rng, 4, 10);
            let m = lip_metrics(&p, &gt).unwrap();
            assert!(m.l_mean_lip <= m.l_max_lip);
        }
        let short = random_seq(&mut rng, 3, 10);
        assert!(lip_metrics(&short, &gt).is_err());
    }
}
