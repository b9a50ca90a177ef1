//! Implicit moving least squares fields over a local neighbourhood.
//!
//! The value at a query `q` is a weighted average of the point-plane distances
//! `⟨q − pᵢ, nᵢ⟩`. The weight of each neighbour is the distance kernel `θ`
//! times, optionally, the orientation kernel `ψ` comparing the unit gradient at
//! `q` with the one at `pᵢ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bounding_box, Point3};
use crate::mlp::Field;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImlsConfig {
    /// Search radius as a fraction of the cloud diagonal.
    pub radius_fraction: f64,
    pub target_neighbor_count: usize,
    pub sigma_coherence: f64,
    /// Lower bound on the per-query kernel width, as a fraction of the cloud diagonal.
    pub sigma_imls_floor: f64,
    pub use_theta: bool,
    pub use_psi: bool,
}

impl Default for ImlsConfig {
    fn default() -> Self {
        Self {
            radius_fraction: 0.01,
            target_neighbor_count: 50,
            sigma_coherence: 0.3,
            sigma_imls_floor: 1e-4,
            use_theta: true,
            use_psi: true,
        }
    }
}

impl ImlsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius_fraction > 0.0 && self.radius_fraction.is_finite()) {
            return Err(Error::Config(format!("radius_fraction must be positive, got {}", self.radius_fraction)));
        }
        if self.target_neighbor_count == 0 {
            return Err(Error::Config("target_neighbor_count must be at least 1".into()));
        }
        if !(self.sigma_coherence > 0.0) {
            return Err(Error::Config(format!("sigma_coherence must be positive, got {}", self.sigma_coherence)));
        }
        if !(self.sigma_imls_floor > 0.0 && self.sigma_imls_floor.is_finite()) {
            return Err(Error::Config(format!("sigma_imls_floor must be positive, got {}", self.sigma_imls_floor)));
        }
        Ok(())
    }
}

/// Neighbourhood of one query, padded to a fixed length. Entries with a false
/// mask are padding and never contribute.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSet {
    positions: Vec<Point3>,
    normals: Option<Vec<Point3>>,
    indices: Vec<usize>,
    mask: Vec<bool>,
    sigma_imls: f64,
}

const UNIT_TOLERANCE: f64 = 1e-9;

impl NeighborSet {
    /// `indices` are the source-cloud indices of the entries; padding entries
    /// may hold any index.
    pub fn new(
        positions: Vec<Point3>,
        normals: Option<Vec<Point3>>,
        indices: Vec<usize>,
        mask: Vec<bool>,
        sigma_imls: f64,
    ) -> Result<Self> {
        let k = positions.len();
        if mask.len() != k || indices.len() != k || normals.as_ref().is_some_and(|n| n.len() != k) {
            return Err(Error::Shape("neighbour set arrays differ in length".into()));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Input("neighbour set has no valid entry".into()));
        }
        if !(sigma_imls > 0.0 && sigma_imls.is_finite()) {
            return Err(Error::Input(format!("sigma_imls must be positive, got {sigma_imls}")));
        }
        if let Some(n) = &normals {
            for (i, (v, &m)) in n.iter().zip(&mask).enumerate() {
                if m && (v.norm() - 1.0).abs() > UNIT_TOLERANCE {
                    return Err(Error::Input(format!("normal {i} is not unit length")));
                }
            }
        }
        Ok(Self {
            positions,
            normals,
            indices,
            mask,
            sigma_imls,
        })
    }

    /// Builds a set from cloud indices, padding to `target` entries and
    /// computing the kernel width from the retained points.
    pub fn from_cloud(
        points: &[Point3],
        normals: Option<&[Point3]>,
        picked: &[usize],
        target: usize,
        diagonal: f64,
        floor_fraction: f64,
    ) -> Result<Self> {
        if picked.is_empty() {
            return Err(Error::Input("neighbour set has no valid entry".into()));
        }
        let len = target.max(picked.len());
        let mut positions: Vec<Point3> = picked.iter().map(|&i| points[i]).collect();
        let valid = positions.clone();
        let mut indices = picked.to_vec();
        let mut mask = vec![true; picked.len()];
        let mut nrm = normals.map(|n| picked.iter().map(|&i| n[i]).collect::<Vec<_>>());
        let pad = len - picked.len();
        positions.extend(std::iter::repeat(positions[0]).take(pad));
        indices.extend(std::iter::repeat(picked[0]).take(pad));
        mask.extend(std::iter::repeat(false).take(pad));
        if let Some(n) = nrm.as_mut() {
            let first = n[0];
            n.extend(std::iter::repeat(first).take(pad));
        }
        let sigma = sigma_imls_for(&valid, diagonal, floor_fraction);
        Self::new(positions, nrm, indices, mask, sigma)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn positions(&self) -> &[Point3] {
        &self.positions
    }

    pub fn normals(&self) -> Option<&[Point3]> {
        self.normals.as_deref()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn sigma_imls(&self) -> f64 {
        self.sigma_imls
    }

    /// Source indices of the valid entries.
    pub fn valid_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().zip(&self.mask).filter(|(_, &m)| m).map(|(&i, _)| i)
    }
}

pub fn theta(distance: f64, sigma_imls: f64) -> f64 {
    (-(distance * distance) / (sigma_imls * sigma_imls)).exp()
}

/// `√(diag / count)` of the neighbours' bounding box, floored at `floor_fraction · diagonal`.
pub fn sigma_imls_for(neighbors: &[Point3], diagonal: f64, floor_fraction: f64) -> f64 {
    let floor = floor_fraction * diagonal;
    if neighbors.is_empty() {
        return floor;
    }
    let (lo, hi) = bounding_box(neighbors);
    let sigma = ((hi - lo).norm() / neighbors.len() as f64).sqrt();
    sigma.max(floor)
}

pub fn psi(grad_q: &Point3, grad_p: &Point3, sigma_coherence: f64) -> f64 {
    (-(grad_q - grad_p).norm_squared() / (sigma_coherence * sigma_coherence)).exp()
}

fn blend(q: &Point3, set: &NeighborSet, normals: &[Point3], weight: impl Fn(usize, f64) -> f64) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..set.len() {
        if !set.mask[k] {
            continue;
        }
        let diff = q - set.positions[k];
        let w = weight(k, diff.norm());
        num += w * diff.dot(&normals[k]);
        den += w;
    }
    let value = num / den;
    if den > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::DegenerateWeights)
    }
}

/// θ-weighted average of plane distances with the set's stored normals.
pub fn imls_value_oracle_normals(q: &Point3, set: &NeighborSet) -> Result<f64> {
    let normals = set
        .normals
        .as_deref()
        .ok_or_else(|| Error::Input("neighbour set carries no normals".into()))?;
    let sigma = set.sigma_imls;
    blend(q, set, normals, |_, d| theta(d, sigma))
}

/// The full weighted field given unit gradients at `q` and at every entry of
/// the set (`point_grads[k]` belongs to entry `k`).
pub fn imls_value_with_gradients(
    q: &Point3,
    grad_q: &Point3,
    set: &NeighborSet,
    point_grads: &[Point3],
    config: &ImlsConfig,
) -> Result<f64> {
    if point_grads.len() != set.len() {
        return Err(Error::Shape(format!(
            "{} gradients for {} neighbour entries",
            point_grads.len(),
            set.len()
        )));
    }
    let sigma = set.sigma_imls;
    blend(q, set, point_grads, |k, d| {
        let t = if config.use_theta { theta(d, sigma) } else { 1.0 };
        let p = if config.use_psi {
            psi(grad_q, &point_grads[k], config.sigma_coherence)
        } else {
            1.0
        };
        t * p
    })
}

/// Plane distance to the nearest valid entry, the fallback when every weight underflows.
pub fn nearest_plane_distance(q: &Point3, set: &NeighborSet, normals: &[Point3]) -> f64 {
    let mut best: Option<(f64, usize)> = None;
    for k in 0..set.len() {
        if !set.mask[k] {
            continue;
        }
        let d = (q - set.positions[k]).norm();
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, k));
        }
    }
    let (_, k) = best.expect("neighbour set has a valid entry");
    (q - set.positions[k]).dot(&normals[k])
}

/// Same as [`imls_value_with_gradients`] but falls back to
/// [`nearest_plane_distance`] on degenerate weights.
pub fn imls_value_or_nearest(
    q: &Point3,
    grad_q: &Point3,
    set: &NeighborSet,
    point_grads: &[Point3],
    config: &ImlsConfig,
) -> Result<f64> {
    match imls_value_with_gradients(q, grad_q, set, point_grads, config) {
        Err(Error::DegenerateWeights) => Ok(nearest_plane_distance(q, set, point_grads)),
        other => other,
    }
}

/// Evaluates the weighted field with normals taken from `field`'s normalized
/// gradients. The result is a plain number: nothing about the field's
/// parameters is retained.
pub fn imls_value_mlp_normals<F: Field + ?Sized>(
    q: &Point3,
    set: &NeighborSet,
    field: &F,
    config: &ImlsConfig,
) -> Result<f64> {
    let mut pts = Vec::with_capacity(set.len() + 1);
    pts.push(*q);
    pts.extend_from_slice(&set.positions);
    let grads: Vec<Point3> = field.unit_gradients(&pts)?.into_iter().map(|u| u.direction).collect();
    imls_value_with_gradients(q, &grads[0], set, &grads[1..], config)
}

/// θ-weighted field over an entire cloud with no radius cutoff. Quadratic
/// cost; kept as a reference for the local form.
pub fn imls_full_cloud(q: &Point3, points: &[Point3], normals: &[Point3], sigma: f64) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, n) in points.iter().zip(normals) {
        let w = theta((q - p).norm(), sigma);
        num += w * (q - p).dot(n);
        den += w;
    }
    if den > 0.0 {
        Ok(num / den)
    } else {
        Err(Error::DegenerateWeights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{UnitGradient, GRADIENT_NORM_FLOOR};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Unit sphere SDF with analytic gradients.
    struct Sphere;

    impl Field for Sphere {
        fn dim(&self) -> usize {
            3
        }
        fn values(&self, points: &[Point3]) -> Result<Vec<f64>> {
            Ok(points.iter().map(|p| p.norm() - 1.0).collect())
        }
        fn gradients(&self, points: &[Point3]) -> Result<Vec<Point3>> {
            Ok(points.iter().map(|p| p / p.norm().max(GRADIENT_NORM_FLOOR)).collect())
        }
    }

    fn single(p: Point3, n: Point3) -> NeighborSet {
        NeighborSet::new(vec![p], Some(vec![n]), vec![0], vec![true], 0.1).unwrap()
    }

    fn random_unit(rng: &mut impl Rng) -> Point3 {
        loop {
            let v = Point3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 0.1 && n < 1.0 {
                return v / n;
            }
        }
    }

    #[test]
    fn theta_values() {
        assert_eq!(theta(0.0, 0.3), 1.0);
        assert!((theta(0.3, 0.3) - (-1.0f64).exp()).abs() < 1e-15);
        let mut prev = 1.0;
        for i in 1..100 {
            let t = theta(i as f64 * 0.01, 0.2);
            assert!(t < prev);
            prev = t;
        }
    }

    #[test]
    fn sigma_rule() {
        let sq = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(1.0, 1.0, 0.0),
        ];
        let s = sigma_imls_for(&sq, 1.0, 1e-4);
        assert!((s - (2f64.sqrt() / 4.0).sqrt()).abs() < 1e-12);
        assert!((s - 0.5946).abs() < 1e-4);
        assert_eq!(sigma_imls_for(&sq[..1], 2.0, 1e-4), 2e-4);
        let shifted: Vec<Point3> = sq.iter().map(|p| p + Point3::new(3.0, -7.0, 11.0)).collect();
        assert!((sigma_imls_for(&shifted, 1.0, 1e-4) - s).abs() < 1e-12);
    }

    #[test]
    fn psi_values() {
        let a = Point3::z();
        assert_eq!(psi(&a, &a, 0.3), 1.0);
        let opposite = psi(&a, &-a, 0.3);
        assert!((opposite - (-4.0f64 / 0.09).exp()).abs() < 1e-30);
        assert!((opposite / 5.1e-20 - 1.0).abs() < 0.05);
        assert!((psi(&a, &-a, 1e12) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_neighbor_is_plane_distance() {
        let s = single(Point3::zeros(), Point3::z());
        assert_eq!(imls_value_oracle_normals(&Point3::new(0.0, 0.0, 0.5), &s).unwrap(), 0.5);
        assert_eq!(imls_value_oracle_normals(&Point3::zeros(), &s).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_pair_gives_mean() {
        let q = Point3::zeros();
        let set = NeighborSet::new(
            vec![Point3::new(-0.1, 0.0, 0.0), Point3::new(0.1, 0.0, 0.0)],
            Some(vec![Point3::x(), Point3::new(0.6, 0.8, 0.0)]),
            vec![0, 1],
            vec![true, true],
            0.2,
        )
        .unwrap();
        // Plane distances 0.1 and −0.06 with equal weights.
        let v = imls_value_oracle_normals(&q, &set).unwrap();
        assert!((v - 0.02).abs() < 1e-15);
    }

    #[test]
    fn invalid_sets_rejected() {
        assert!(NeighborSet::new(vec![Point3::zeros()], None, vec![0], vec![false], 0.1).is_err());
        assert!(NeighborSet::new(vec![Point3::zeros()], None, vec![0], vec![true], 0.0).is_err());
        assert!(NeighborSet::new(vec![Point3::zeros()], Some(vec![Point3::new(0.0, 0.0, 2.0)]), vec![0], vec![true], 0.1).is_err());
        let s = NeighborSet::new(vec![Point3::zeros()], None, vec![0], vec![true], 0.1).unwrap();
        assert!(imls_value_oracle_normals(&Point3::zeros(), &s).is_err());
    }

    #[test]
    fn underflow_falls_back_to_nearest_plane() {
        let set = NeighborSet::new(
            vec![Point3::zeros(), Point3::new(0.0, 0.0, 0.01)],
            Some(vec![Point3::z(), Point3::x()]),
            vec![0, 1],
            vec![true, true],
            1e-4,
        )
        .unwrap();
        let q = Point3::new(0.0, 0.0, -5.0);
        assert!(matches!(imls_value_oracle_normals(&q, &set), Err(Error::DegenerateWeights)));
        let grads = set.normals().unwrap().to_vec();
        let cfg = ImlsConfig {
            use_psi: false,
            ..ImlsConfig::default()
        };
        assert_eq!(imls_value_or_nearest(&q, &Point3::z(), &set, &grads, &cfg).unwrap(), -5.0);
    }

    #[test]
    fn stub_sphere_field_matches_oracle_normals() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Point3> = (0..30).map(|_| random_unit(&mut rng)).collect();
        let q = pts[0] * 1.02;
        let normals = pts.clone();
        let set = NeighborSet::from_cloud(&pts, Some(&normals), &(0..30).collect::<Vec<_>>(), 50, 2.0, 1e-4).unwrap();
        let cfg = ImlsConfig {
            use_psi: false,
            ..ImlsConfig::default()
        };
        let a = imls_value_mlp_normals(&q, &set, &Sphere, &cfg).unwrap();
        let b = imls_value_oracle_normals(&q, &set).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn huge_coherence_width_matches_no_psi() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let pts: Vec<Point3> = (0..40).map(|_| random_unit(&mut rng)).collect();
        let set = NeighborSet::from_cloud(&pts, None, &(0..40).collect::<Vec<_>>(), 50, 2.0, 1e-4).unwrap();
        let q = Point3::new(0.3, -0.2, 0.9);
        let no_psi = ImlsConfig {
            use_psi: false,
            ..ImlsConfig::default()
        };
        let wide = ImlsConfig {
            sigma_coherence: 1e6,
            ..ImlsConfig::default()
        };
        let a = imls_value_mlp_normals(&q, &set, &Sphere, &no_psi).unwrap();
        let b = imls_value_mlp_normals(&q, &set, &Sphere, &wide).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn full_cloud_reference_and_local_form_agree_when_all_points_are_local() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Point3> = (0..20).map(|_| random_unit(&mut rng)).collect();
        let set = NeighborSet::from_cloud(&pts, Some(&pts), &(0..20).collect::<Vec<_>>(), 20, 2.0, 1e-4).unwrap();
        let q = Point3::new(0.1, 0.2, 0.3);
        let a = imls_full_cloud(&q, &pts, &pts, set.sigma_imls()).unwrap();
        let b = imls_value_oracle_normals(&q, &set).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    /// Direct transcription of the weighted average over valid entries.
    fn naive(q: &Point3, gq: &Point3, pos: &[Point3], grads: &[Point3], sigma: f64, cfg: &ImlsConfig) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (p, g) in pos.iter().zip(grads) {
            let d2 = (q - p).norm_squared();
            let t = if cfg.use_theta { (-d2 / (sigma * sigma)).exp() } else { 1.0 };
            let dg = (gq - g).norm_squared();
            let s = if cfg.use_psi {
                (-dg / (cfg.sigma_coherence * cfg.sigma_coherence)).exp()
            } else {
                1.0
            };
            num += t * s * (q - p).dot(g);
            den += t * s;
        }
        num / den
    }

    fn random_instance(seed: u64, n: usize, pad: usize) -> (Point3, Point3, NeighborSet, Vec<Point3>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gq = random_unit(&mut rng);
        let pts: Vec<Point3> = (0..n)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()) * 0.1)
            .collect();
        // Close to the first point so that at least one weight stays well above underflow.
        let q = pts[0] + random_unit(&mut rng) * 1e-3;
        let mut grads: Vec<Point3> = (0..n).map(|_| random_unit(&mut rng)).collect();
        let set = NeighborSet::from_cloud(&pts, None, &(0..n).collect::<Vec<_>>(), n + pad, 10.0, 1e-4).unwrap();
        grads.extend(std::iter::repeat(Point3::x()).take(pad));
        (q, gq, set, grads)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn matches_naive_sum(seed in 0u64..100_000, n in 1usize..=50, pad in 0usize..20, theta_on: bool, psi_on: bool) {
            let (q, gq, set, grads) = random_instance(seed, n, pad);
            let cfg = ImlsConfig { use_theta: theta_on, use_psi: psi_on, ..ImlsConfig::default() };
            let got = imls_value_with_gradients(&q, &gq, &set, &grads, &cfg).unwrap();
            let want = naive(&q, &gq, &set.positions()[..n], &grads[..n], set.sigma_imls(), &cfg);
            prop_assert!((got - want).abs() <= 1e-12, "{} vs {}", got, want);
        }

        #[test]
        fn padding_is_bit_neutral(seed in 0u64..100_000, n in 1usize..=50, pad in 1usize..30) {
            let (q, gq, padded, grads) = random_instance(seed, n, pad);
            let (_, _, bare, bare_grads) = random_instance(seed, n, 0);
            let cfg = ImlsConfig::default();
            let a = imls_value_with_gradients(&q, &gq, &padded, &grads, &cfg).unwrap();
            let b = imls_value_with_gradients(&q, &gq, &bare, &bare_grads, &cfg).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }

        #[test]
        fn blend_is_convex(seed in 0u64..100_000, n in 1usize..=50) {
            let (q, gq, set, grads) = random_instance(seed, n, 0);
            let v = imls_value_with_gradients(&q, &gq, &set, &grads, &ImlsConfig::default()).unwrap();
            let d: Vec<f64> = (0..n).map(|k| (q - set.positions()[k]).dot(&grads[k])).collect();
            let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }

        #[test]
        fn translation_invariant(seed in 0u64..100_000, n in 1usize..=50, t in prop::array::uniform3(-5.0f64..5.0)) {
            let (q, gq, set, grads) = random_instance(seed, n, 0);
            let t = Point3::from(t);
            let moved: Vec<Point3> = set.positions().iter().map(|p| p + t).collect();
            let mset = NeighborSet::new(moved, None, set.indices().to_vec(), set.mask().to_vec(), set.sigma_imls()).unwrap();
            let cfg = ImlsConfig::default();
            let a = imls_value_with_gradients(&q, &gq, &set, &grads, &cfg).unwrap();
            let b = imls_value_with_gradients(&(q + t), &gq, &mset, &grads, &cfg).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_gradient_fallback_flows_through() {
        let u: UnitGradient = crate::mlp::normalize_gradient(&Point3::zeros(), 3);
        assert_eq!(psi(&u.direction, &Point3::z(), 0.3), 1.0);
    }
}
