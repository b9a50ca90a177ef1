//! Seeded samplers for analytic test shapes.
//!
//! 2D shapes live in the z = 0 plane. Every sampler returns points with their
//! exact outward unit normals. Noise is added separately so the clean samples
//! stay available as a reference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

/// Uniform samples on a centred circle of `radius`.
pub fn circle(n: usize, radius: f64, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (points, normals) = (0..n)
        .map(|_| {
            let t = rng.random_range(0.0..std::f64::consts::TAU);
            let d = Point3::new(t.cos(), t.sin(), 0.0);
            (d * radius, d)
        })
        .unzip();
    PointCloud::new(points, Some(normals)).expect("circle samples are finite")
}

/// Deterministic, evenly spaced samples on a circle.
pub fn circle_even(n: usize, radius: f64) -> PointCloud {
    let (points, normals) = (0..n)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / n as f64;
            let d = Point3::new(t.cos(), t.sin(), 0.0);
            (d * radius, d)
        })
        .unzip();
    PointCloud::new(points, Some(normals)).expect("circle samples are finite")
}

/// Uniform samples on a counter-clockwise polygon boundary, by arc length.
pub fn polygon(vertices: &[[f64; 2]], n: usize, seed: u64) -> Result<PointCloud> {
    if vertices.len() < 3 {
        return Err(Error::Input("a polygon needs at least 3 vertices".into()));
    }
    let edges: Vec<(Point3, Point3)> = (0..vertices.len())
        .map(|i| {
            let a = vertices[i];
            let b = vertices[(i + 1) % vertices.len()];
            (Point3::new(a[0], a[1], 0.0), Point3::new(b[0], b[1], 0.0))
        })
        .collect();
    let lengths: Vec<f64> = edges.iter().map(|(a, b)| (b - a).norm()).collect();
    let total: f64 = lengths.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateExtent);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (points, normals) = (0..n)
        .map(|_| {
            let mut s = rng.random_range(0.0..total);
            let mut e = 0;
            while e + 1 < edges.len() && s >= lengths[e] {
                s -= lengths[e];
                e += 1;
            }
            let (a, b) = edges[e];
            let d = (b - a) / lengths[e];
            (a + d * s.min(lengths[e]), Point3::new(d.y, -d.x, 0.0))
        })
        .unzip();
    PointCloud::new(points, Some(normals))
}

/// Axis-aligned square of side `side`, centred at the origin.
pub fn square(n: usize, side: f64, seed: u64) -> PointCloud {
    let h = side / 2.0;
    polygon(&[[-h, -h], [h, -h], [h, h], [-h, h]], n, seed).expect("square is valid")
}

/// L-shaped region inside `[-1, 1]²` with the upper-right quadrant removed.
pub fn l_shape(n: usize, seed: u64) -> PointCloud {
    polygon(&[[-1.0, -1.0], [1.0, -1.0], [1.0, 0.0], [0.0, 0.0], [0.0, 1.0], [-1.0, 1.0]], n, seed)
        .expect("L shape is valid")
}

/// Uniform samples on a centred sphere.
pub fn sphere(n: usize, radius: f64, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (points, normals) = (0..n)
        .map(|_| loop {
            let d = Point3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
            let len = d.norm();
            if len > 1e-12 {
                let d = d / len;
                break (d * radius, d);
            }
        })
        .unzip();
    PointCloud::new(points, Some(normals)).expect("sphere samples are finite")
}

/// Uniform samples on the surface of a centred cube of side `side`.
pub fn cube(n: usize, side: f64, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = side / 2.0;
    let (points, normals) = (0..n)
        .map(|_| {
            let face = rng.random_range(0..6usize);
            let axis = face / 2;
            let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
            let mut p = Point3::zeros();
            for (k, c) in p.iter_mut().enumerate() {
                *c = if k == axis { sign * h } else { rng.random_range(-h..h) };
            }
            let mut nrm = Point3::zeros();
            nrm[axis] = sign;
            (p, nrm)
        })
        .unzip();
    PointCloud::new(points, Some(normals)).expect("cube samples are finite")
}

/// Adds isotropic Gaussian noise of standard deviation `sigma` to every point.
/// Planar clouds (all z = 0) stay planar. Normals are kept unchanged.
pub fn add_noise(cloud: &PointCloud, sigma: f64, seed: u64) -> Result<PointCloud> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("noise sigma must be non-negative, got {sigma}")));
    }
    let planar = cloud.points().iter().all(|p| p.z == 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let points = cloud
        .points()
        .iter()
        .map(|p| {
            let mut e = Point3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
            if planar {
                e.z = 0.0;
            }
            p + e * sigma
        })
        .collect();
    PointCloud::new(points, cloud.normals().map(<[Point3]>::to_vec))
}
