//! Surface comparison metrics on sampled point sets.
//!
//! `X` is the reference (ground truth) and `Y` the reconstruction throughout.
//! Nearest neighbours come from [`NeighborIndex`], whose results equal a
//! brute-force scan, so every metric equals its double-loop definition.

use std::fmt::Write as _;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, TriangleMesh};
use crate::isosurface::Polyline;
use crate::spatial::NeighborIndex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceSource {
    Mesh,
    Cloud,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledSurface {
    pub points: Vec<Point3>,
    pub normals: Option<Vec<Point3>>,
    pub source: SurfaceSource,
}

impl SampledSurface {
    pub fn from_points(points: Vec<Point3>, normals: Option<Vec<Point3>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("sampled surface without points"));
        }
        if let Some(n) = &normals {
            if n.len() != points.len() {
                return Err(Error::Shape("normal count differs from point count".into()));
            }
            if let Some(i) = n.iter().position(|v| (v.norm() - 1.0).abs() > 1e-9) {
                return Err(Error::Input(format!("normal {i} is not unit length")));
            }
        }
        Ok(Self {
            points,
            normals,
            source: SurfaceSource::Cloud,
        })
    }

    pub fn from_cloud(cloud: &PointCloud) -> Self {
        Self {
            points: cloud.points().to_vec(),
            normals: cloud.normals().map(<[Point3]>::to_vec),
            source: SurfaceSource::Cloud,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Area-weighted uniform samples on `mesh`, each carrying its triangle's normal.
pub fn sample_surface(mesh: &TriangleMesh, count: usize, seed: u64) -> Result<SampledSurface> {
    if mesh.is_empty() {
        return Err(Error::EmptyInput("cannot sample an empty mesh"));
    }
    if count == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    let areas: Vec<f64> = (0..mesh.triangles.len()).map(|t| mesh.area(t)).collect();
    let total: f64 = areas.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateMesh);
    }
    let pick = WeightedIndex::new(&areas).map_err(|_| Error::DegenerateMesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    for _ in 0..count {
        let t = pick.sample(&mut rng);
        let [a, b, c] = mesh.triangles[t];
        let (a, b, c) = (mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]);
        let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        points.push(a + (b - a) * u + (c - a) * v);
        normals.push(mesh.face_normal(t));
    }
    Ok(SampledSurface {
        points,
        normals: Some(normals),
        source: SurfaceSource::Mesh,
    })
}

/// Length-weighted uniform samples on 2D contours. Normals are the segment
/// directions rotated clockwise, so for counter-clockwise loops they point out.
pub fn sample_polylines(lines: &[Polyline], count: usize, seed: u64) -> Result<SampledSurface> {
    if count == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    let mut segments = Vec::new();
    for line in lines {
        let n = line.points.len();
        let segs = if line.closed { n } else { n.saturating_sub(1) };
        for i in 0..segs {
            segments.push((line.points[i], line.points[(i + 1) % n]));
        }
    }
    let lengths: Vec<f64> = segments.iter().map(|(a, b)| (b - a).norm()).collect();
    let pick = WeightedIndex::new(&lengths).map_err(|_| Error::DegenerateMesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (points, normals) = (0..count)
        .map(|_| {
            let s = pick.sample(&mut rng);
            let (a, b) = segments[s];
            let t: f64 = rng.random();
            let d = (b - a) / lengths[s];
            (a + (b - a) * t, Point3::new(d.y, -d.x, 0.0))
        })
        .unzip();
    Ok(SampledSurface {
        points,
        normals: Some(normals),
        source: SurfaceSource::Mesh,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChamferConvention {
    /// Half the sum of the two mean distances.
    MeanL2,
    /// Sum of all nearest distances in both directions, unnormalized.
    SumL2,
    /// Half the sum of the two mean squared distances.
    MeanSq,
}

impl ChamferConvention {
    pub fn name(self) -> &'static str {
        match self {
            ChamferConvention::MeanL2 => "mean_l2",
            ChamferConvention::SumL2 => "sum_l2",
            ChamferConvention::MeanSq => "mean_sq",
        }
    }
}

impl std::str::FromStr for ChamferConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_l2" => Ok(Self::MeanL2),
            "sum_l2" => Ok(Self::SumL2),
            "mean_sq" => Ok(Self::MeanSq),
            other => Err(Error::Config(format!("unknown chamfer convention '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub sample_count: usize,
    pub fscore_threshold: f64,
    pub chamfer_convention: ChamferConvention,
    pub seed: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsPreset::ShapeNet.config()
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_count == 0 {
            return Err(Error::Config("sample_count must be at least 1".into()));
        }
        if !(self.fscore_threshold > 0.0) {
            return Err(Error::Config("fscore_threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Evaluation protocols by benchmark family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricsPreset {
    Srb,
    ShapeNet,
    Indoor,
    Abc,
    RealScan,
}

impl MetricsPreset {
    pub fn config(self) -> MetricsConfig {
        let (sample_count, fscore_threshold, chamfer_convention) = match self {
            MetricsPreset::Srb => (1_000_000, 0.01, ChamferConvention::MeanL2),
            MetricsPreset::ShapeNet => (100_000, 0.01, ChamferConvention::MeanL2),
            MetricsPreset::Indoor => (100_000, 0.02, ChamferConvention::MeanL2),
            MetricsPreset::Abc => (10_000, 0.01, ChamferConvention::SumL2),
            MetricsPreset::RealScan => (200_000, 0.5, ChamferConvention::MeanL2),
        };
        MetricsConfig {
            sample_count,
            fscore_threshold,
            chamfer_convention,
            seed: 0,
        }
    }
}

impl std::str::FromStr for MetricsPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "srb" => Ok(Self::Srb),
            "shapenet" => Ok(Self::ShapeNet),
            "indoor" => Ok(Self::Indoor),
            "abc" => Ok(Self::Abc),
            "real_scan" | "real-scan" => Ok(Self::RealScan),
            other => Err(Error::Config(format!("unknown metrics preset '{other}'"))),
        }
    }
}

/// Index of the nearest point of `to` for every point of `from`, with its distance.
fn nearest_all(from: &[Point3], to: &NeighborIndex) -> Vec<(usize, f64)> {
    from.iter()
        .map(|p| {
            let n = to.nearest(p);
            (n.index, n.distance)
        })
        .collect()
}

/// Nearest-neighbour matches in both directions, reusable across metrics.
pub struct Correspondence {
    /// For each point of X: nearest point of Y.
    pub g2p: Vec<(usize, f64)>,
    /// For each point of Y: nearest point of X.
    pub p2g: Vec<(usize, f64)>,
}

impl Correspondence {
    pub fn new(x: &SampledSurface, y: &SampledSurface) -> Result<Self> {
        let ix = NeighborIndex::build(&x.points)?;
        let iy = NeighborIndex::build(&y.points)?;
        Ok(Self {
            g2p: nearest_all(&x.points, &iy),
            p2g: nearest_all(&y.points, &ix),
        })
    }

    fn one_sided(matches: &[(usize, f64)], convention: ChamferConvention) -> f64 {
        let n = matches.len() as f64;
        match convention {
            ChamferConvention::MeanL2 => matches.iter().map(|m| m.1).sum::<f64>() / n,
            ChamferConvention::SumL2 => matches.iter().map(|m| m.1).sum::<f64>(),
            ChamferConvention::MeanSq => matches.iter().map(|m| m.1 * m.1).sum::<f64>() / n,
        }
    }

    /// `(cd, g2p term, p2g term)` where the terms are the directional mean
    /// (or sum) before the halving of the mean conventions.
    pub fn chamfer(&self, convention: ChamferConvention) -> (f64, f64, f64) {
        let g = Self::one_sided(&self.g2p, convention);
        let p = Self::one_sided(&self.p2g, convention);
        let cd = match convention {
            ChamferConvention::SumL2 => g + p,
            _ => 0.5 * g + 0.5 * p,
        };
        (cd, g, p)
    }

    pub fn hausdorff(&self) -> (f64, f64, f64) {
        let g = self.g2p.iter().fold(0.0f64, |m, v| m.max(v.1));
        let p = self.p2g.iter().fold(0.0f64, |m, v| m.max(v.1));
        (g.max(p), g, p)
    }

    pub fn normal_consistency(&self, x: &SampledSurface, y: &SampledSurface) -> Result<f64> {
        let (Some(nx), Some(ny)) = (&x.normals, &y.normals) else {
            return Err(Error::Config("normal consistency needs normals on both surfaces".into()));
        };
        let g: f64 = self.g2p.iter().enumerate().map(|(i, m)| nx[i].dot(&ny[m.0]).abs()).sum();
        let p: f64 = self.p2g.iter().enumerate().map(|(i, m)| ny[i].dot(&nx[m.0]).abs()).sum();
        Ok(g / (2.0 * self.g2p.len() as f64) + p / (2.0 * self.p2g.len() as f64))
    }

    /// `(fs, precision, recall)` at threshold `tau` (inclusive).
    pub fn f_score(&self, tau: f64) -> (f64, f64, f64) {
        let within = |m: &[(usize, f64)]| m.iter().filter(|v| v.1 <= tau).count() as f64 / m.len() as f64;
        let precision = within(&self.p2g);
        let recall = within(&self.g2p);
        let fs = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        (fs, precision, recall)
    }
}

pub fn chamfer(x: &SampledSurface, y: &SampledSurface, convention: ChamferConvention) -> Result<f64> {
    Ok(Correspondence::new(x, y)?.chamfer(convention).0)
}

/// `(hd, hd_g2p, hd_p2g)`.
pub fn hausdorff(x: &SampledSurface, y: &SampledSurface) -> Result<(f64, f64, f64)> {
    Ok(Correspondence::new(x, y)?.hausdorff())
}

pub fn normal_consistency(x: &SampledSurface, y: &SampledSurface) -> Result<f64> {
    Correspondence::new(x, y)?.normal_consistency(x, y)
}

/// `(fs, precision, recall)`.
pub fn f_score(x: &SampledSurface, y: &SampledSurface, tau: f64) -> Result<(f64, f64, f64)> {
    if !(tau > 0.0) {
        return Err(Error::Config("F-score threshold must be positive".into()));
    }
    Ok(Correspondence::new(x, y)?.f_score(tau))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cd: f64,
    pub cd_one_sided_g2p: f64,
    pub cd_one_sided_p2g: f64,
    pub hd: f64,
    pub hd_one_sided_g2p: f64,
    pub hd_one_sided_p2g: f64,
    /// Absent when either surface lacks normals.
    pub nc: Option<f64>,
    pub fs: f64,
    pub precision: f64,
    pub recall: f64,
    pub chamfer_convention: ChamferConvention,
    pub sample_count_reference: usize,
    pub sample_count_reconstruction: usize,
    pub tau: f64,
    pub seed: u64,
}

pub fn evaluate(x: &SampledSurface, y: &SampledSurface, config: &MetricsConfig) -> Result<MetricsReport> {
    config.validate()?;
    report(&Correspondence::new(x, y)?, x, y, config)
}

/// One report per F-score threshold, sharing a single correspondence pass.
pub fn evaluate_thresholds(
    x: &SampledSurface,
    y: &SampledSurface,
    config: &MetricsConfig,
    thresholds: &[f64],
) -> Result<Vec<MetricsReport>> {
    let c = Correspondence::new(x, y)?;
    thresholds
        .iter()
        .map(|&tau| {
            let cfg = MetricsConfig { fscore_threshold: tau, ..*config };
            cfg.validate()?;
            report(&c, x, y, &cfg)
        })
        .collect()
}

fn report(c: &Correspondence, x: &SampledSurface, y: &SampledSurface, config: &MetricsConfig) -> Result<MetricsReport> {
    let (cd, cd_g, cd_p) = c.chamfer(config.chamfer_convention);
    let (hd, hd_g, hd_p) = c.hausdorff();
    let nc = match (&x.normals, &y.normals) {
        (Some(_), Some(_)) => Some(c.normal_consistency(x, y)?),
        _ => None,
    };
    let (fs, precision, recall) = c.f_score(config.fscore_threshold);
    Ok(MetricsReport {
        cd,
        cd_one_sided_g2p: cd_g,
        cd_one_sided_p2g: cd_p,
        hd,
        hd_one_sided_g2p: hd_g,
        hd_one_sided_p2g: hd_p,
        nc,
        fs,
        precision,
        recall,
        chamfer_convention: config.chamfer_convention,
        sample_count_reference: x.len(),
        sample_count_reconstruction: y.len(),
        tau: config.fscore_threshold,
        seed: config.seed,
    })
}

/// Samples both meshes with `config` and compares them.
pub fn evaluate_meshes(reference: &TriangleMesh, reconstruction: &TriangleMesh, config: &MetricsConfig) -> Result<MetricsReport> {
    let x = sample_surface(reference, config.sample_count, config.seed)?;
    let y = sample_surface(reconstruction, config.sample_count, config.seed)?;
    evaluate(&x, &y, config)
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per metric: `metric,value,convention,sample_count,tau,seed`.
    pub fn to_csv(&self) -> String {
        let conv = self.chamfer_convention.name();
        let n = self.sample_count_reference;
        let mut s = String::from("metric,value,convention,sample_count,tau,seed\n");
        let mut row = |name: &str, value: f64, convention: &str| {
            let _ = writeln!(s, "{name},{value:e},{convention},{n},{},{}", self.tau, self.seed);
        };
        row("cd", self.cd, conv);
        row("cd_g2p", self.cd_one_sided_g2p, conv);
        row("cd_p2g", self.cd_one_sided_p2g, conv);
        row("hd", self.hd, "");
        row("hd_g2p", self.hd_one_sided_g2p, "");
        row("hd_p2g", self.hd_one_sided_p2g, "");
        if let Some(nc) = self.nc {
            row("nc", nc, "");
        }
        row("fs", self.fs, "");
        row("precision", self.precision, "");
        row("recall", self.recall, "");
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let body = if path.extension().is_some_and(|e| e == "csv") {
            self.to_csv()
        } else {
            self.to_json()
        };
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }
}

/// Closest-point distance from `p` to the triangle `abc`.
pub fn point_triangle_distance(p: &Point3, a: &Point3, b: &Point3, c: &Point3) -> f64 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm();
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (p - (a + ab * v)).norm();
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (p - (a + ac * w)).norm();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + (c - b) * w)).norm();
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (p - (a + ab * v + ac * w)).norm()
}

/// Closest-point distance from `p` to the segment `ab`.
pub fn point_segment_distance(p: &Point3, a: &Point3, b: &Point3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * t)).norm()
}

/// Elements (triangles or segments) given by vertex indices, searched through
/// a kd-tree over their vertices. The nearest vertex bounds the answer, and
/// any element within that bound has a vertex within the bound plus the
/// longest element edge.
fn element_distances<const N: usize>(
    points: &[Point3],
    vertices: &[Point3],
    elements: &[[usize; N]],
    distance: impl Fn(&Point3, &[usize; N]) -> f64 + Sync,
) -> Result<Vec<f64>> {
    if elements.is_empty() {
        return Err(Error::EmptyInput("no elements to measure against"));
    }
    let mut used: Vec<usize> = elements.iter().flatten().copied().collect();
    used.sort_unstable();
    used.dedup();
    let local: Vec<Point3> = used.iter().map(|&v| vertices[v]).collect();
    let index = NeighborIndex::build(&local)?;
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); used.len()];
    let mut reach = 0.0f64;
    for (e, el) in elements.iter().enumerate() {
        for &v in el {
            incident[used.binary_search(&v).expect("vertex is used")].push(e);
        }
        for i in 0..N {
            for j in i + 1..N {
                reach = reach.max((vertices[el[i]] - vertices[el[j]]).norm());
            }
        }
    }
    Ok(points
        .par_iter()
        .map(|p| {
            let bound = index.nearest(p).distance;
            let mut best = f64::INFINITY;
            for n in index.radius_query(p, bound + reach) {
                for &e in &incident[n.index] {
                    best = best.min(distance(p, &elements[e]));
                }
            }
            best
        })
        .collect())
}

/// Exact distance from every point to the nearest triangle of `mesh`.
pub fn point_mesh_distances(points: &[Point3], mesh: &TriangleMesh) -> Result<Vec<f64>> {
    let v = &mesh.vertices;
    element_distances(points, v, &mesh.triangles, |p, t| point_triangle_distance(p, &v[t[0]], &v[t[1]], &v[t[2]]))
}

/// Exact distance from every point to the nearest segment of `lines`.
pub fn point_polyline_distances(points: &[Point3], lines: &[Polyline]) -> Result<Vec<f64>> {
    let mut vertices = Vec::new();
    let mut segments = Vec::new();
    for line in lines {
        let base = vertices.len();
        let n = line.points.len();
        vertices.extend_from_slice(&line.points);
        segments.extend((1..n).map(|i| [base + i - 1, base + i]));
        if line.closed && n > 2 {
            segments.push([base + n - 1, base]);
        }
    }
    element_distances(points, &vertices, &segments, |p, s| point_segment_distance(p, &vertices[s[0]], &vertices[s[1]]))
}

/// Chamfer distance from precomputed directional distances: `g2p` from the
/// reference to the reconstruction and `p2g` back.
pub fn chamfer_from_distances(g2p: &[f64], p2g: &[f64], convention: ChamferConvention) -> Result<f64> {
    if g2p.is_empty() || p2g.is_empty() {
        return Err(Error::EmptyInput("chamfer distance needs points on both sides"));
    }
    let matches = |d: &[f64]| d.iter().map(|&x| (0, x)).collect::<Vec<_>>();
    let c = Correspondence {
        g2p: matches(g2p),
        p2g: matches(p2g),
    };
    Ok(c.chamfer(convention).0)
}
