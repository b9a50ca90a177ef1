//! Point clouds, triangle meshes, normalization, and file I/O.
//!
//! Coordinates are `f64` throughout. Two-dimensional data is represented with
//! `z = 0`, so the same types carry the planar demo and the volumetric case.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::{debug, warn};
use nalgebra::Vector3;
use ply_rs::parser::Parser;
use ply_rs::ply::{DefaultElement, Property};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = Vector3<f64>;

/// Side length of the longest bounding-box edge after [`normalize`].
pub const NORMALIZED_EXTENT: f64 = 1.8;

const NORMAL_TOLERANCE: f64 = 1e-6;

/// Axis-aligned bounds `(min, max)` of a non-empty point list.
pub fn bounding_box(points: &[Point3]) -> (Point3, Point3) {
    let mut lo = Point3::repeat(f64::INFINITY);
    let mut hi = Point3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    normals: Option<Vec<Point3>>,
    bbox_min: Point3,
    bbox_max: Point3,
    diagonal: f64,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, normals: Option<Vec<Point3>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("point cloud has no points"));
        }
        if let Some(p) = points.iter().find(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::Input(format!("non-finite point {p:?}")));
        }
        if let Some(n) = &normals {
            if n.len() != points.len() {
                return Err(Error::Shape(format!(
                    "{} normals for {} points",
                    n.len(),
                    points.len()
                )));
            }
            if let Some((i, bad)) = n
                .iter()
                .enumerate()
                .find(|(_, v)| (v.norm() - 1.0).abs() > NORMAL_TOLERANCE)
            {
                return Err(Error::Input(format!(
                    "normal {i} has length {} (expected unit)",
                    bad.norm()
                )));
            }
        }
        let (bbox_min, bbox_max) = bounding_box(&points);
        Ok(Self {
            diagonal: (bbox_max - bbox_min).norm(),
            points,
            normals,
            bbox_min,
            bbox_max,
        })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Point3]> {
        self.normals.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bbox_min(&self) -> Point3 {
        self.bbox_min
    }

    pub fn bbox_max(&self) -> Point3 {
        self.bbox_max
    }

    /// Bounding-box diagonal length, the length unit for radii and noise levels.
    pub fn diagonal(&self) -> f64 {
        self.diagonal
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationTransform {
    pub center: Point3,
    pub scale: f64,
}

impl NormalizationTransform {
    pub fn identity() -> Self {
        Self {
            center: Point3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        (p - self.center) * self.scale
    }

    pub fn invert(&self, p: &Point3) -> Point3 {
        p / self.scale + self.center
    }

    /// Converts a normalized-space length back to world units.
    pub fn invert_length(&self, length: f64) -> f64 {
        length / self.scale
    }
}

/// Centers the cloud at its bounding-box center and scales it so the longest
/// side equals [`NORMALIZED_EXTENT`].
pub fn normalize(cloud: &PointCloud) -> Result<(PointCloud, NormalizationTransform)> {
    let extent = cloud.bbox_max - cloud.bbox_min;
    let longest = extent.max();
    if !(longest > 0.0) {
        return Err(Error::DegenerateExtent);
    }
    let transform = NormalizationTransform {
        center: (cloud.bbox_min + cloud.bbox_max) * 0.5,
        scale: NORMALIZED_EXTENT / longest,
    };
    let points = cloud.points.iter().map(|p| transform.apply(p)).collect();
    let out = PointCloud::new(points, cloud.normals.clone())?;
    Ok((out, transform))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::Shape(format!(
                "triangle {t:?} references a vertex beyond {n}"
            )));
        }
        Ok(Self {
            vertices,
            triangles,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Twice the area vector of a triangle (unnormalized normal).
    pub fn cross(&self, t: usize) -> Point3 {
        let [a, b, c] = self.triangles[t];
        let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        (b - a).cross(&(c - a))
    }

    pub fn area(&self, t: usize) -> f64 {
        0.5 * self.cross(t).norm()
    }

    pub fn face_normal(&self, t: usize) -> Point3 {
        self.cross(t).normalize()
    }

    pub fn face_normals(&self) -> Vec<Point3> {
        (0..self.triangles.len()).map(|t| self.face_normal(t)).collect()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.area(t)).sum()
    }

    /// Drops zero-area triangles and returns how many were removed.
    pub fn remove_degenerate(&mut self) -> usize {
        let before = self.triangles.len();
        let verts = &self.vertices;
        self.triangles.retain(|&[a, b, c]| {
            a != b && b != c && a != c && {
                let n = (verts[b] - verts[a]).cross(&(verts[c] - verts[a]));
                n.norm() > 0.0
            }
        });
        before - self.triangles.len()
    }

    /// Removes vertices no triangle references, compacting indices.
    pub fn remove_unreferenced_vertices(&mut self) {
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut kept = Vec::new();
        for t in &mut self.triangles {
            for i in t.iter_mut() {
                if remap[*i] == usize::MAX {
                    remap[*i] = kept.len();
                    kept.push(self.vertices[*i]);
                }
                *i = remap[*i];
            }
        }
        self.vertices = kept;
    }

    /// Number of distinct undirected edges, and the same count for edges used
    /// by exactly two triangles.
    pub fn edge_incidence(&self) -> std::collections::HashMap<(usize, usize), usize> {
        let mut edges = std::collections::HashMap::new();
        for &[a, b, c] in &self.triangles {
            for (u, v) in [(a, b), (b, c), (c, a)] {
                *edges.entry((u.min(v), u.max(v))).or_insert(0) += 1;
            }
        }
        edges
    }

    /// True when every edge is shared by exactly two triangles.
    pub fn is_closed_manifold(&self) -> bool {
        !self.triangles.is_empty() && self.edge_incidence().values().all(|&c| c == 2)
    }

    /// V − E + F over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let edges = self.edge_incidence().len() as i64;
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &i in t {
                used[i] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - edges + self.triangles.len() as i64
    }

    pub fn transformed(&self, f: impl Fn(&Point3) -> Point3) -> Self {
        Self {
            vertices: self.vertices.iter().map(f).collect(),
            triangles: self.triangles.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointFormat {
    Xyz,
    Ply,
    ObjPoints,
}

impl PointFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "xyz" | "txt" | "pts" => Some(Self::Xyz),
            "ply" => Some(Self::Ply),
            "obj" => Some(Self::ObjPoints),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "obj" => Some(Self::Obj),
            "ply" => Some(Self::Ply),
            _ => None,
        }
    }
}

fn parse_err(path: &Path, record: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        record,
        message: message.into(),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn unit_normals(path: &Path, normals: Vec<Point3>) -> Result<Vec<Point3>> {
    normals
        .into_iter()
        .enumerate()
        .map(|(i, n)| {
            let len = n.norm();
            if len > 0.0 && len.is_finite() {
                Ok(n / len)
            } else {
                Err(parse_err(path, i + 1, "zero-length normal"))
            }
        })
        .collect()
}

pub fn load_point_cloud(path: &Path, format: PointFormat) -> Result<PointCloud> {
    let (points, normals) = match format {
        PointFormat::Xyz => read_xyz(path)?,
        PointFormat::ObjPoints => (read_obj(path)?.0, None),
        PointFormat::Ply => {
            let ply = read_ply(path)?;
            (ply.points, ply.normals)
        }
    };
    if points.is_empty() {
        return Err(Error::EmptyInput("file contains no points"));
    }
    let normals = normals.map(|n| unit_normals(path, n)).transpose()?;
    PointCloud::new(points, normals)
}

fn parse_numbers(path: &Path, line_no: usize, fields: &[&str]) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| parse_err(path, line_no, format!("invalid number '{s}'")))
        })
        .collect()
}

fn read_xyz(path: &Path) -> Result<(Vec<Point3>, Option<Vec<Point3>>)> {
    let reader = open(path)?;
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut with_normals = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let has_normal = match fields.len() {
            3 => false,
            6 => true,
            n => return Err(parse_err(path, line_no, format!("expected 3 or 6 values, found {n}"))),
        };
        match with_normals {
            None => with_normals = Some(has_normal),
            Some(w) if w != has_normal => {
                return Err(parse_err(path, line_no, "inconsistent column count"))
            }
            _ => {}
        }
        let v = parse_numbers(path, line_no, &fields)?;
        points.push(Point3::new(v[0], v[1], v[2]));
        if has_normal {
            normals.push(Point3::new(v[3], v[4], v[5]));
        }
    }
    let normals = (with_normals == Some(true)).then_some(normals);
    Ok((points, normals))
}

/// Reads `v` and `f` records. Polygonal faces are fan-triangulated.
fn read_obj(path: &Path) -> Result<(Vec<Point3>, Vec<[usize; 3]>)> {
    let reader = open(path)?;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let content = line.split('#').next().unwrap_or("").trim();
        let mut fields = content.split_whitespace();
        match fields.next() {
            Some("v") => {
                let rest: Vec<&str> = fields.collect();
                if rest.len() < 3 {
                    return Err(parse_err(path, line_no, "vertex needs 3 coordinates"));
                }
                let v = parse_numbers(path, line_no, &rest[..3])?;
                vertices.push(Point3::new(v[0], v[1], v[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for f in fields {
                    let head = f.split('/').next().unwrap_or("");
                    let raw: i64 = head
                        .parse()
                        .map_err(|_| parse_err(path, line_no, format!("invalid face index '{f}'")))?;
                    let resolved = if raw > 0 {
                        raw - 1
                    } else {
                        vertices.len() as i64 + raw
                    };
                    if resolved < 0 {
                        return Err(parse_err(path, line_no, format!("face index {raw} out of range")));
                    }
                    idx.push(resolved as usize);
                }
                if idx.len() < 3 {
                    return Err(parse_err(path, line_no, "face needs at least 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok((vertices, triangles))
}

struct PlyData {
    points: Vec<Point3>,
    normals: Option<Vec<Point3>>,
    triangles: Vec<[usize; 3]>,
}

fn scalar(p: &Property) -> Option<f64> {
    Some(match *p {
        Property::Char(v) => v as f64,
        Property::UChar(v) => v as f64,
        Property::Short(v) => v as f64,
        Property::UShort(v) => v as f64,
        Property::Int(v) => v as f64,
        Property::UInt(v) => v as f64,
        Property::Float(v) => v as f64,
        Property::Double(v) => v,
        _ => return None,
    })
}

fn index_list(p: &Property) -> Option<Vec<usize>> {
    Some(match p {
        Property::ListChar(v) => v.iter().map(|&i| i as usize).collect(),
        Property::ListUChar(v) => v.iter().map(|&i| i as usize).collect(),
        Property::ListShort(v) => v.iter().map(|&i| i as usize).collect(),
        Property::ListUShort(v) => v.iter().map(|&i| i as usize).collect(),
        Property::ListInt(v) => v.iter().map(|&i| i as usize).collect(),
        Property::ListUInt(v) => v.iter().map(|&i| i as usize).collect(),
        _ => return None,
    })
}

fn read_ply(path: &Path) -> Result<PlyData> {
    let mut reader = open(path)?;
    let parser = Parser::<DefaultElement>::new();
    let ply = parser
        .read_ply(&mut reader)
        .map_err(|e| parse_err(path, 0, e.to_string()))?;
    let vertices = ply.payload.get("vertex").map(Vec::as_slice).unwrap_or(&[]);
    let mut points = Vec::with_capacity(vertices.len());
    let mut normals = Vec::new();
    let with_normals = ply
        .header
        .elements
        .get("vertex")
        .is_some_and(|e| ["nx", "ny", "nz"].iter().all(|k| e.properties.contains_key(*k)));
    let get = |el: &DefaultElement, key: &str, i: usize| -> Result<f64> {
        el.get(key)
            .and_then(scalar)
            .ok_or_else(|| parse_err(path, i + 1, format!("vertex {i} missing scalar property '{key}'")))
    };
    for (i, el) in vertices.iter().enumerate() {
        points.push(Point3::new(get(el, "x", i)?, get(el, "y", i)?, get(el, "z", i)?));
        if with_normals {
            normals.push(Point3::new(get(el, "nx", i)?, get(el, "ny", i)?, get(el, "nz", i)?));
        }
    }
    let mut triangles = Vec::new();
    if let Some(faces) = ply.payload.get("face") {
        for (i, el) in faces.iter().enumerate() {
            let idx = el
                .get("vertex_indices")
                .or_else(|| el.get("vertex_index"))
                .and_then(index_list)
                .ok_or_else(|| parse_err(path, i + 1, "face without vertex index list"))?;
            if idx.len() < 3 {
                return Err(parse_err(path, i + 1, "face needs at least 3 vertices"));
            }
            for k in 1..idx.len() - 1 {
                triangles.push([idx[0], idx[k], idx[k + 1]]);
            }
        }
    }
    Ok(PlyData {
        points,
        normals: with_normals.then_some(normals),
        triangles,
    })
}

/// Loads a triangle mesh. Zero-area faces are dropped.
pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TriangleMesh> {
    let (vertices, triangles) = match format {
        MeshFormat::Obj => read_obj(path)?,
        MeshFormat::Ply => {
            let ply = read_ply(path)?;
            (ply.points, ply.triangles)
        }
    };
    let mut mesh = TriangleMesh::new(vertices, triangles)?;
    let dropped = mesh.remove_degenerate();
    if dropped > 0 {
        debug!("{}: dropped {dropped} degenerate faces", path.display());
    }
    Ok(mesh)
}

/// Writes the mesh in world coordinates (the inverse of `transform` is applied).
pub fn save_mesh(
    mesh: &TriangleMesh,
    transform: &NormalizationTransform,
    path: &Path,
    format: MeshFormat,
) -> Result<()> {
    if mesh.is_empty() {
        warn!("{}: writing a mesh with zero faces", path.display());
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let world = mesh.vertices.iter().map(|v| transform.invert(v));
    let res: std::io::Result<()> = (|| {
        match format {
            MeshFormat::Obj => {
                for v in world {
                    writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
                }
                for t in &mesh.triangles {
                    writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
                }
            }
            MeshFormat::Ply => {
                writeln!(w, "ply\nformat ascii 1.0")?;
                writeln!(w, "element vertex {}", mesh.vertices.len())?;
                writeln!(w, "property double x\nproperty double y\nproperty double z")?;
                writeln!(w, "element face {}", mesh.triangles.len())?;
                writeln!(w, "property list uchar int vertex_indices\nend_header")?;
                for v in world {
                    writeln!(w, "{} {} {}", v.x, v.y, v.z)?;
                }
                for t in &mesh.triangles {
                    writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
                }
            }
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

/// Writes a point cloud as XYZ text (with normals when present).
pub fn save_xyz(cloud: &PointCloud, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        for (i, p) in cloud.points().iter().enumerate() {
            match cloud.normals() {
                Some(n) => writeln!(w, "{} {} {} {} {} {}", p.x, p.y, p.z, n[i].x, n[i].y, n[i].z)?,
                None => writeln!(w, "{} {} {}", p.x, p.y, p.z)?,
            }
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(dir: &tempfile::TempDir, name: &str, body: &[u8]) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body).unwrap();
        p
    }

    #[test]
    fn two_point_xyz() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "a.xyz", b"0 0 0\n1 0 0\n");
        let c = load_point_cloud(&p, PointFormat::Xyz).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.diagonal(), 1.0);
        assert!(c.normals().is_none());
    }

    #[test]
    fn xyz_comments_and_normals() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "a.xyz", b"# header\n0 0 0 0 0 2\n\n1 1 1 1 0 0 # trailing\n");
        let c = load_point_cloud(&p, PointFormat::Xyz).unwrap();
        assert_eq!(c.normals().unwrap()[0], Point3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn xyz_errors_carry_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "a.xyz", b"0 0 0\n1 x 0\n");
        match load_point_cloud(&p, PointFormat::Xyz) {
            Err(Error::Parse { record, .. }) => assert_eq!(record, 2),
            other => panic!("unexpected {other:?}"),
        }
        let p = write_tmp(&dir, "b.xyz", b"0 0\n");
        assert!(matches!(load_point_cloud(&p, PointFormat::Xyz), Err(Error::Parse { record: 1, .. })));
    }

    #[test]
    fn empty_file_is_empty_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "e.xyz", b"");
        assert!(matches!(load_point_cloud(&p, PointFormat::Xyz), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        let r = load_point_cloud(Path::new("/nonexistent/cloud.xyz"), PointFormat::Xyz);
        assert!(matches!(r, Err(Error::Io { .. })));
    }

    #[test]
    fn ascii_ply_with_normals() {
        let dir = tempfile::tempdir().unwrap();
        let body = b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty float nx\nproperty float ny\nproperty float nz\nend_header\n0 0 0 0 0 1\n1 2 3 1 0 0\n";
        let p = write_tmp(&dir, "a.ply", body);
        let c = load_point_cloud(&p, PointFormat::Ply).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.normals().unwrap()[1], Point3::new(1.0, 0.0, 0.0));
        assert_eq!(c.points()[1], Point3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn binary_ply_without_normals() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nend_header\n".to_vec();
        for v in [0.5f64, -1.0, 2.0, 3.0, 4.0, 5.0] {
            body.extend_from_slice(&v.to_le_bytes());
        }
        let p = write_tmp(&dir, "b.ply", &body);
        let c = load_point_cloud(&p, PointFormat::Ply).unwrap();
        assert!(c.normals().is_none());
        assert_eq!(c.points()[0], Point3::new(0.5, -1.0, 2.0));
    }

    #[test]
    fn obj_points_ignore_faces() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "a.obj", b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
        let c = load_point_cloud(&p, PointFormat::ObjPoints).unwrap();
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn normalize_cube_and_idempotence() {
        let pts = vec![Point3::zeros(), Point3::repeat(10.0), Point3::new(5.0, 2.0, 7.0)];
        let c = PointCloud::new(pts, None).unwrap();
        let (n, t) = normalize(&c).unwrap();
        assert!((n.diagonal() - 1.8 * 3f64.sqrt()).abs() < 1e-12);
        assert!((n.bbox_min() + Point3::repeat(0.9)).norm() < 1e-12);
        assert_eq!(t.center, Point3::repeat(5.0));
        let (_, t2) = normalize(&n).unwrap();
        assert!((t2.scale - 1.0).abs() < 1e-9);
        for (a, b) in c.points().iter().zip(n.points()) {
            let back = t.invert(b);
            assert!((back - a).norm() <= 1e-9 * a.norm().max(1.0));
        }
    }

    #[test]
    fn normalize_coincident_points_fails() {
        let c = PointCloud::new(vec![Point3::repeat(1.0); 4], None).unwrap();
        assert!(matches!(normalize(&c), Err(Error::DegenerateExtent)));
    }

    fn tetrahedron() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Point3::zeros(),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn tetrahedron_obj_layout_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.obj");
        let mesh = tetrahedron();
        assert!(mesh.is_closed_manifold());
        assert_eq!(mesh.euler_characteristic(), 2);
        save_mesh(&mesh, &NormalizationTransform::identity(), &p, MeshFormat::Obj).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 4);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 4);
        let back = load_mesh(&p, MeshFormat::Obj).unwrap();
        assert_eq!(back.triangles, mesh.triangles);
        for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn ply_round_trip_with_transform() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ply");
        let mesh = tetrahedron();
        let t = NormalizationTransform {
            center: Point3::new(1.0, -2.0, 3.0),
            scale: 0.25,
        };
        save_mesh(&mesh, &t, &p, MeshFormat::Ply).unwrap();
        let back = load_mesh(&p, MeshFormat::Ply).unwrap();
        assert_eq!(back.triangles, mesh.triangles);
        for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
            assert!((a - t.invert(b)).norm() < 1e-6);
        }
    }

    #[test]
    fn empty_mesh_writes_valid_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.obj");
        save_mesh(&TriangleMesh::default(), &NormalizationTransform::identity(), &p, MeshFormat::Obj).unwrap();
        let back = load_mesh(&p, MeshFormat::Obj).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let r = save_mesh(
            &tetrahedron(),
            &NormalizationTransform::identity(),
            Path::new("/nonexistent/dir/m.obj"),
            MeshFormat::Obj,
        );
        assert!(matches!(r, Err(Error::Io { .. })));
    }

    #[test]
    fn degenerate_triangles_removed() {
        let mut m = TriangleMesh::new(
            vec![Point3::zeros(), Point3::new(1.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)],
            vec![[0, 1, 2], [0, 0, 1]],
        )
        .unwrap();
        assert_eq!(m.remove_degenerate(), 2);
        assert!(TriangleMesh::new(vec![Point3::zeros()], vec![[0, 0, 1]]).is_err());
    }
}
