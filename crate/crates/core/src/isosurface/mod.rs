//! Level-set extraction from regularly sampled fields: marching cubes in 3D
//! and marching squares in 2D.
//!
//! Grid vertices are stored x-fastest. A vertex counts as inside when its
//! value is below the iso-value. Triangles are wound so that their normals
//! point towards larger field values.

mod tables;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, TriangleMesh};
use crate::mlp::Field;
use tables::TRI_TABLE;

pub const MIN_RESOLUTION: usize = 8;
pub const RESOLUTION_PRESETS: [usize; 3] = [128, 256, 512];
/// Default margin added on each side of the bounding box, as a fraction of its extent.
pub const DEFAULT_MARGIN: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Vertices per axis. A 2D grid has `resolution[2] == 1` and lies in `z = min.z`.
    pub resolution: [usize; 3],
    pub min: Point3,
    pub max: Point3,
    pub iso_value: f64,
}

impl GridSpec {
    pub fn cube(resolution: usize, min: Point3, max: Point3) -> Self {
        Self {
            resolution: [resolution; 3],
            min,
            max,
            iso_value: 0.0,
        }
    }

    pub fn square(resolution: usize, min: Point3, max: Point3) -> Self {
        Self {
            resolution: [resolution, resolution, 1],
            min: Point3::new(min.x, min.y, 0.0),
            max: Point3::new(max.x, max.y, 0.0),
            iso_value: 0.0,
        }
    }

    /// Grid over a bounding box grown by `margin · extent` on every side.
    /// `dim == 2` gives a planar grid.
    pub fn around(lo: &Point3, hi: &Point3, resolution: usize, margin: f64, dim: usize) -> Self {
        let pad = (hi - lo) * margin;
        if dim == 2 {
            Self::square(resolution, lo - pad, hi + pad)
        } else {
            Self::cube(resolution, lo - pad, hi + pad)
        }
    }

    pub fn is_planar(&self) -> bool {
        self.resolution[2] == 1
    }

    pub fn validate(&self) -> Result<()> {
        let axes = if self.is_planar() { 2 } else { 3 };
        for a in 0..axes {
            if self.resolution[a] < MIN_RESOLUTION {
                return Err(Error::Config(format!(
                    "grid resolution {} below the minimum {MIN_RESOLUTION}",
                    self.resolution[a]
                )));
            }
            if !(self.max[a] > self.min[a]) || !(self.max[a] - self.min[a]).is_finite() {
                return Err(Error::Config("grid bounds are degenerate".into()));
            }
        }
        if !self.iso_value.is_finite() {
            return Err(Error::Config("iso value must be finite".into()));
        }
        Ok(())
    }

    /// Spacing along each axis (zero along the flat axis of a planar grid).
    pub fn cell_size(&self) -> Point3 {
        Point3::from_fn(|a, _| {
            if self.resolution[a] > 1 {
                (self.max[a] - self.min[a]) / (self.resolution[a] - 1) as f64
            } else {
                0.0
            }
        })
    }

    pub fn vertex(&self, i: usize, j: usize, k: usize) -> Point3 {
        let h = self.cell_size();
        Point3::new(
            self.min.x + i as f64 * h.x,
            self.min.y + j as f64 * h.y,
            self.min.z + k as f64 * h.z,
        )
    }

    pub fn vertex_count(&self) -> usize {
        self.resolution.iter().product()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarGrid {
    pub spec: GridSpec,
    /// x-fastest: index `i + nx·(j + ny·k)`.
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.vertex_count() {
            return Err(Error::Shape(format!(
                "{} values for a grid of {} vertices",
                values.len(),
                spec.vertex_count()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            let p = vertex_of(&spec, i);
            return Err(Error::NonFiniteField {
                value: values[i],
                x: p.x,
                y: p.y,
                z: p.z,
            });
        }
        Ok(Self { spec, values })
    }

    /// Samples an analytic function at every vertex.
    pub fn from_fn(spec: GridSpec, f: impl Fn(&Point3) -> f64) -> Result<Self> {
        spec.validate()?;
        let values = (0..spec.vertex_count()).map(|i| f(&vertex_of(&spec, i))).collect();
        Self::new(spec, values)
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        let [nx, ny, _] = self.spec.resolution;
        self.values[i + nx * (j + ny * k)]
    }
}

fn vertex_of(spec: &GridSpec, index: usize) -> Point3 {
    let [nx, ny, _] = spec.resolution;
    spec.vertex(index % nx, (index / nx) % ny, index / (nx * ny))
}

/// Evaluates `field` at every grid vertex, one z-slice per batch.
pub fn sample_grid<F: Field + ?Sized>(field: &F, spec: &GridSpec) -> Result<ScalarGrid> {
    spec.validate()?;
    let [nx, ny, nz] = spec.resolution;
    let mut values = Vec::with_capacity(spec.vertex_count());
    let mut slice = Vec::with_capacity(nx * ny);
    for k in 0..nz {
        slice.clear();
        for j in 0..ny {
            for i in 0..nx {
                slice.push(spec.vertex(i, j, k));
            }
        }
        let v = field.values(&slice)?;
        if let Some(bad) = v.iter().position(|x| !x.is_finite()) {
            let p = slice[bad];
            return Err(Error::NonFiniteField {
                value: v[bad],
                x: p.x,
                y: p.y,
                z: p.z,
            });
        }
        values.extend(v);
    }
    ScalarGrid::new(spec.clone(), values)
}

/// Cube corner offsets, `v0 … v7`.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Corner pairs joined by each of the twelve cube edges.
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [3, 2],
    [0, 3],
    [4, 5],
    [5, 6],
    [7, 6],
    [4, 7],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Point on the segment `a → b` where the linear interpolant of `fa → fb`
/// equals `iso`.
#[inline]
fn interpolate(a: &Point3, b: &Point3, fa: f64, fb: f64, iso: f64) -> Point3 {
    let t = (iso - fa) / (fb - fa);
    a + (b - a) * t
}

/// Marching cubes at `iso_value`. Vertices on shared cell edges are welded by
/// edge identity, so neighbouring cells reuse the same vertex.
pub fn marching_cubes(grid: &ScalarGrid, iso_value: f64) -> TriangleMesh {
    let spec = &grid.spec;
    if spec.is_planar() {
        return TriangleMesh::default();
    }
    let [nx, ny, nz] = spec.resolution;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    // Key: (lower grid vertex index, axis).
    let mut welded: HashMap<(usize, u8), usize> = HashMap::new();
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut vals = [0.0; 8];
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    vals[c] = grid.value(i + off[0], j + off[1], k + off[2]);
                    if vals[c] < iso_value {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRI_TABLE[case];
                let mut edge_vertex = |e: usize| -> usize {
                    let [ca, cb] = EDGES[e];
                    let (oa, ob) = (CORNERS[ca], CORNERS[cb]);
                    let axis = (0..3).find(|&a| oa[a] != ob[a]).expect("edge spans one axis");
                    let (gi, gj, gk) = (i + oa[0], j + oa[1], k + oa[2]);
                    let key = (gi + nx * (gj + ny * gk), axis as u8);
                    *welded.entry(key).or_insert_with(|| {
                        let pa = spec.vertex(gi, gj, gk);
                        let pb = spec.vertex(i + ob[0], j + ob[1], k + ob[2]);
                        vertices.push(interpolate(&pa, &pb, vals[ca], vals[cb], iso_value));
                        vertices.len() - 1
                    })
                };
                for tri in row.chunks_exact(3).take_while(|t| t[0] >= 0) {
                    let a = edge_vertex(tri[0] as usize);
                    let b = edge_vertex(tri[1] as usize);
                    let c = edge_vertex(tri[2] as usize);
                    // The table winds towards the inside; flip to face outwards.
                    triangles.push([a, c, b]);
                }
            }
        }
    }
    let mut mesh = TriangleMesh { vertices, triangles };
    mesh.remove_degenerate();
    mesh.remove_unreferenced_vertices();
    mesh
}

#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    pub points: Vec<Point3>,
    /// The last point connects back to the first (not repeated in `points`).
    pub closed: bool,
}

/// Marching squares at `iso_value` on a planar grid. Saddle cells are
/// resolved by the sign of the average of their four corners.
pub fn marching_squares(grid: &ScalarGrid, iso_value: f64) -> Vec<Polyline> {
    let spec = &grid.spec;
    let [nx, ny, _] = spec.resolution;
    // Edge key: (lower grid vertex index, axis), axis 0 = +x, 1 = +y.
    let mut points: Vec<Point3> = Vec::new();
    let mut key_to_point: HashMap<(usize, u8), usize> = HashMap::new();
    let mut segments: Vec<[usize; 2]> = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            // Corners counter-clockwise from the lower left.
            let corner = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let vals = corner.map(|(a, b)| grid.value(a, b, 0));
            let mut case = 0;
            for (c, v) in vals.iter().enumerate() {
                if *v < iso_value {
                    case |= 1 << c;
                }
            }
            if case == 0 || case == 15 {
                continue;
            }
            // Cell edges: 0 bottom, 1 right, 2 top, 3 left.
            let mut edge_point = |e: usize| -> usize {
                let (ca, cb, axis) = match e {
                    0 => (0, 1, 0u8),
                    1 => (1, 2, 1),
                    2 => (3, 2, 0),
                    _ => (0, 3, 1),
                };
                let (gi, gj) = corner[ca];
                let key = (gi + nx * gj, axis);
                *key_to_point.entry(key).or_insert_with(|| {
                    let pa = spec.vertex(gi, gj, 0);
                    let (hi, hj) = corner[cb];
                    let pb = spec.vertex(hi, hj, 0);
                    points.push(interpolate(&pa, &pb, vals[ca], vals[cb], iso_value));
                    points.len() - 1
                })
            };
            let centre_inside = vals.iter().sum::<f64>() / 4.0 < iso_value;
            let pairs: &[[usize; 2]] = match case {
                1 | 14 => &[[3, 0]],
                2 | 13 => &[[0, 1]],
                3 | 12 => &[[3, 1]],
                4 | 11 => &[[1, 2]],
                6 | 9 => &[[0, 2]],
                7 | 8 => &[[3, 2]],
                // Corners 0 and 2 inside.
                5 if centre_inside => &[[3, 2], [0, 1]],
                5 => &[[3, 0], [1, 2]],
                // Corners 1 and 3 inside.
                10 if centre_inside => &[[3, 0], [1, 2]],
                10 => &[[0, 1], [3, 2]],
                _ => unreachable!("cases 0 and 15 are skipped"),
            };
            for &[a, b] in pairs {
                let (pa, pb) = (edge_point(a), edge_point(b));
                if pa != pb {
                    segments.push([pa, pb]);
                }
            }
        }
    }
    link_segments(&points, &segments)
}

fn link_segments(points: &[Point3], segments: &[[usize; 2]]) -> Vec<Polyline> {
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); points.len()];
    for (s, seg) in segments.iter().enumerate() {
        incident[seg[0]].push(s);
        incident[seg[1]].push(s);
    }
    let mut used = vec![false; segments.len()];
    let mut out = Vec::new();
    let walk = |start_point: usize, used: &mut Vec<bool>| -> Option<Polyline> {
        let first = *incident[start_point].iter().find(|&&s| !used[s])?;
        let mut chain = vec![start_point];
        let mut current = start_point;
        let mut seg = first;
        loop {
            used[seg] = true;
            let [a, b] = segments[seg];
            let next = if a == current { b } else { a };
            if next == start_point {
                return Some(Polyline {
                    points: chain.iter().map(|&i| points[i]).collect(),
                    closed: true,
                });
            }
            chain.push(next);
            current = next;
            match incident[current].iter().find(|&&s| !used[s]) {
                Some(&s) => seg = s,
                None => {
                    return Some(Polyline {
                        points: chain.iter().map(|&i| points[i]).collect(),
                        closed: false,
                    })
                }
            }
        }
    };
    // Open chains first, starting from their loose ends.
    for p in 0..points.len() {
        if incident[p].len() == 1 {
            if let Some(line) = walk(p, &mut used) {
                out.push(line);
            }
        }
    }
    for p in 0..points.len() {
        while let Some(line) = walk(p, &mut used) {
            out.push(line);
        }
    }
    out
}

/// Writes polylines as SVG paths in a unit view box (y pointing up in the
/// input is flipped to SVG's downward y).
pub fn write_contours_svg(lines: &[Polyline], spec: &GridSpec, path: &Path) -> Result<()> {
    let ext = spec.max - spec.min;
    let scale = ext.x.max(ext.y);
    let map = |p: &Point3| ((p.x - spec.min.x) / scale, 1.0 - (p.y - spec.min.y) / scale);
    let mut s = String::from(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 1 1\">\n",
    );
    for line in lines {
        let mut d = String::new();
        for (n, p) in line.points.iter().enumerate() {
            let (x, y) = map(p);
            let _ = write!(d, "{}{x:.6},{y:.6} ", if n == 0 { "M" } else { "L" });
        }
        if line.closed {
            d.push('Z');
        }
        let _ = writeln!(
            s,
            "  <path d=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"0.002\"/>",
            d.trim_end()
        );
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Writes polylines as CSV rows `polyline,closed,x,y`.
pub fn write_contours_csv(lines: &[Polyline], path: &Path) -> Result<()> {
    let mut s = String::from("polyline,closed,x,y\n");
    for (n, line) in lines.iter().enumerate() {
        for p in &line.points {
            let _ = writeln!(s, "{n},{},{:e},{:e}", line.closed as u8, p.x, p.y);
        }
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
