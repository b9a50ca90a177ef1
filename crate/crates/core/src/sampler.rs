//! Training queries and their fixed-size neighbourhoods.
//!
//! Queries are drawn once around every input point and never resampled. Each
//! query's neighbourhood is gathered once as well; training only refreshes the
//! gradients evaluated at those fixed positions.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::imls::{ImlsConfig, NeighborSet};
use crate::spatial::NeighborIndex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoisePreset {
    Clean,
    Medium,
    Heavy,
}

impl NoisePreset {
    /// `(radius_fraction, target_neighbor_count)`.
    pub fn parameters(self) -> (f64, usize) {
        match self {
            NoisePreset::Clean => (0.01, 50),
            NoisePreset::Medium => (0.03, 100),
            NoisePreset::Heavy => (0.1, 200),
        }
    }

    pub fn apply(self, imls: &mut ImlsConfig) {
        let (r, k) = self.parameters();
        imls.radius_fraction = r;
        imls.target_neighbor_count = k;
    }
}

impl std::str::FromStr for NoisePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Self::Clean),
            "medium" => Ok(Self::Medium),
            "heavy" => Ok(Self::Heavy),
            other => Err(Error::Config(format!("unknown noise preset '{other}'"))),
        }
    }
}

/// How a query's neighbours are gathered.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighborhoodMode {
    /// Points within the IMLS radius, padded or downsampled to the target count.
    Radius,
    /// The `k` nearest points regardless of distance.
    Knn(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub queries_per_point: usize,
    pub std_nn_rank: usize,
    pub seed: u64,
    pub noise_preset: Option<NoisePreset>,
    pub mode: NeighborhoodMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            queries_per_point: 25,
            std_nn_rank: 50,
            seed: 0,
            noise_preset: None,
            mode: NeighborhoodMode::Radius,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.queries_per_point == 0 {
            return Err(Error::Config("queries_per_point must be at least 1".into()));
        }
        if self.std_nn_rank == 0 {
            return Err(Error::Config("std_nn_rank must be at least 1".into()));
        }
        if self.mode == NeighborhoodMode::Knn(0) {
            return Err(Error::Config("knn neighbourhood needs k ≥ 1".into()));
        }
        Ok(())
    }

    /// The IMLS settings with the noise preset, if any, applied.
    pub fn resolve(&self, imls: &ImlsConfig) -> ImlsConfig {
        let mut out = *imls;
        if let Some(p) = self.noise_preset {
            p.apply(&mut out);
        }
        out
    }
}

/// Independent seed for one `(domain, index)` stream, so that results do not
/// depend on evaluation order or thread count.
pub(crate) fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    let mut z = seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const DOMAIN_QUERIES: u64 = 1;
const DOMAIN_DOWNSAMPLE: u64 = 2;
const DOMAIN_BATCHES: u64 = 3;

/// A query with its neighbourhood. `source` is the input point it was drawn around.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryNeighborhood {
    pub query: Point3,
    pub neighbors: NeighborSet,
    pub source: usize,
}

/// Standard deviation for the queries around every point: the distance to its
/// `rank`-th nearest neighbour, not counting the point itself.
pub fn query_std_devs(cloud: &PointCloud, index: &NeighborIndex, rank: usize) -> Vec<f64> {
    let mut rank = rank;
    if rank + 1 > cloud.len() {
        warn!(
            "std_nn_rank {} needs {} points but the cloud has {}; using rank {}",
            rank,
            rank + 1,
            cloud.len(),
            cloud.len().saturating_sub(1)
        );
        rank = cloud.len().saturating_sub(1);
    }
    if rank == 0 {
        return vec![0.0; cloud.len()];
    }
    cloud
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let knn = index.knn_query(p, rank + 1).neighbors;
            let mut others = knn.iter().filter(|n| n.index != i);
            others.nth(rank - 1).map_or(knn[rank].distance, |n| n.distance)
        })
        .collect()
}

/// Gaussian queries around every point, `queries_per_point` each, in the
/// first `dim` coordinates. Returns the queries and their source indices.
pub fn generate_queries(
    cloud: &PointCloud,
    index: &NeighborIndex,
    config: &SamplerConfig,
    dim: usize,
) -> (Vec<Point3>, Vec<usize>) {
    let stds = query_std_devs(cloud, index, config.std_nn_rank);
    let mut queries = Vec::with_capacity(cloud.len() * config.queries_per_point);
    let mut sources = Vec::with_capacity(queries.capacity());
    for (i, (p, &std)) in cloud.points().iter().zip(&stds).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, DOMAIN_QUERIES, i as u64));
        for _ in 0..config.queries_per_point {
            let mut q = *p;
            for a in 0..dim {
                let z: f64 = rng.sample(StandardNormal);
                q[a] += std * z;
            }
            queries.push(q);
            sources.push(i);
        }
    }
    (queries, sources)
}

/// Neighbourhood of one query within `imls.radius_fraction · d_P`, or `None`
/// when that ball is empty. `query_id` selects the downsampling stream.
pub fn assemble_neighborhood(
    q: &Point3,
    cloud: &PointCloud,
    index: &NeighborIndex,
    imls: &ImlsConfig,
    seed: u64,
    query_id: usize,
) -> Option<NeighborSet> {
    let diagonal = cloud.diagonal();
    let hits = index.radius_query(q, imls.radius_fraction * diagonal);
    if hits.is_empty() {
        return None;
    }
    let target = imls.target_neighbor_count;
    let mut picked: Vec<usize> = hits.iter().map(|n| n.index).collect();
    if picked.len() > target {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, DOMAIN_DOWNSAMPLE, query_id as u64));
        let mut keep = rand::seq::index::sample(&mut rng, picked.len(), target).into_vec();
        keep.sort_unstable();
        picked = keep.into_iter().map(|k| picked[k]).collect();
    }
    let set = NeighborSet::from_cloud(cloud.points(), None, &picked, target, diagonal, imls.sigma_imls_floor);
    Some(set.expect("picked indices are non-empty and in range"))
}

/// All valid neighbourhoods for `queries`, plus the count of invalid ones.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighborhoods {
    pub valid: Vec<QueryNeighborhood>,
    pub invalid: usize,
}

pub fn assemble_all(
    cloud: &PointCloud,
    index: &NeighborIndex,
    queries: &[Point3],
    sources: &[usize],
    imls: &ImlsConfig,
    sampler: &SamplerConfig,
) -> Result<Neighborhoods> {
    let diagonal = cloud.diagonal();
    let mut valid = Vec::with_capacity(queries.len());
    let mut invalid = 0;
    for (j, (q, &source)) in queries.iter().zip(sources).enumerate() {
        let set = match sampler.mode {
            NeighborhoodMode::Radius => match assemble_neighborhood(q, cloud, index, imls, sampler.seed, j) {
                Some(set) => set,
                None => {
                    invalid += 1;
                    continue;
                }
            },
            NeighborhoodMode::Knn(k) => {
                let knn = index.knn_query(q, k);
                let picked: Vec<usize> = knn.neighbors.iter().map(|n| n.index).collect();
                NeighborSet::from_cloud(cloud.points(), None, &picked, k, diagonal, imls.sigma_imls_floor)?
            }
        };
        valid.push(QueryNeighborhood {
            query: *q,
            neighbors: set,
            source,
        });
    }
    Ok(Neighborhoods { valid, invalid })
}

/// Seeded per-epoch permutation of `0..count`, chunked into batches.
pub fn make_batches(count: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if count == 0 {
        return Err(Error::Config(
            "no valid query neighbourhoods; the search radius is too small for this cloud".into(),
        ));
    }
    let mut order: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, DOMAIN_BATCHES, epoch as u64));
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

const CACHE_MAGIC: &[u8; 8] = b"IMLSNBHD";
const CACHE_VERSION: u32 = 1;

/// Identifies the inputs a neighbourhood cache was built from.
pub fn cache_key(cloud: &PointCloud, queries: &[Point3], imls: &ImlsConfig, sampler: &SamplerConfig) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in cloud.points().iter().chain(queries) {
        for v in p.iter() {
            h.update(v.to_le_bytes());
        }
    }
    h.update(imls.radius_fraction.to_le_bytes());
    h.update((imls.target_neighbor_count as u64).to_le_bytes());
    h.update(imls.sigma_imls_floor.to_le_bytes());
    h.update(sampler.seed.to_le_bytes());
    match sampler.mode {
        NeighborhoodMode::Radius => h.update([0u8]),
        NeighborhoodMode::Knn(k) => {
            h.update([1u8]);
            h.update((k as u64).to_le_bytes());
        }
    }
    h.finalize().into()
}

pub fn write_cache(path: &Path, key: &[u8; 32], hoods: &Neighborhoods) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(key)?;
        w.write_all(&(hoods.invalid as u64).to_le_bytes())?;
        w.write_all(&(hoods.valid.len() as u64).to_le_bytes())?;
        for h in &hoods.valid {
            for v in h.query.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&(h.source as u64).to_le_bytes())?;
            w.write_all(&h.neighbors.sigma_imls().to_le_bytes())?;
            w.write_all(&(h.neighbors.len() as u64).to_le_bytes())?;
            let valid: Vec<usize> = h.neighbors.valid_indices().collect();
            w.write_all(&(valid.len() as u64).to_le_bytes())?;
            for i in valid {
                w.write_all(&(i as u64).to_le_bytes())?;
            }
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

/// Loads a cache written for the same `key`. Returns `Ok(None)` for a missing
/// file or a cache built from different inputs or by another format version.
pub fn read_cache(path: &Path, key: &[u8; 32], cloud: &PointCloud) -> Result<Option<Neighborhoods>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    let mut version = [0u8; 4];
    r.read_exact(&mut version).map_err(io)?;
    let mut stored = [0u8; 32];
    r.read_exact(&mut stored).map_err(io)?;
    if &magic != CACHE_MAGIC || u32::from_le_bytes(version) != CACHE_VERSION || &stored != key {
        return Ok(None);
    }
    let mut u64_buf = [0u8; 8];
    let mut next = |r: &mut BufReader<File>| -> Result<u64> {
        r.read_exact(&mut u64_buf).map_err(io)?;
        Ok(u64::from_le_bytes(u64_buf))
    };
    let invalid = next(&mut r)? as usize;
    let count = next(&mut r)? as usize;
    let mut valid = Vec::with_capacity(count);
    for _ in 0..count {
        let mut q = Point3::zeros();
        for a in 0..3 {
            q[a] = f64::from_bits(next(&mut r)?);
        }
        let source = next(&mut r)? as usize;
        let sigma = f64::from_bits(next(&mut r)?);
        let len = next(&mut r)? as usize;
        let n = next(&mut r)? as usize;
        let mut picked = Vec::with_capacity(n);
        for _ in 0..n {
            let i = next(&mut r)? as usize;
            if i >= cloud.len() {
                return Err(Error::Checkpoint(format!("cache index {i} out of range")));
            }
            picked.push(i);
        }
        if picked.is_empty() || len < n {
            return Err(Error::Checkpoint("corrupt neighbourhood record".into()));
        }
        let mut positions: Vec<Point3> = picked.iter().map(|&i| cloud.points()[i]).collect();
        let mut mask = vec![true; n];
        positions.resize(len, positions[0]);
        mask.resize(len, false);
        let first = picked[0];
        picked.resize(len, first);
        valid.push(QueryNeighborhood {
            query: q,
            neighbors: NeighborSet::new(positions, None, picked, mask, sigma)?,
            source,
        });
    }
    Ok(Some(Neighborhoods { valid, invalid }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imls::imls_value_with_gradients;

    fn uniform_sphere(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| loop {
                let v = Point3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                );
                if v.norm() > 1e-6 {
                    break v.normalize();
                }
            })
            .collect();
        PointCloud::new(pts, None).unwrap()
    }

    #[test]
    fn presets() {
        assert_eq!(NoisePreset::Clean.parameters(), (0.01, 50));
        assert_eq!(NoisePreset::Medium.parameters(), (0.03, 100));
        assert_eq!(NoisePreset::Heavy.parameters(), (0.1, 200));
        let cfg = SamplerConfig {
            noise_preset: Some(NoisePreset::Heavy),
            ..SamplerConfig::default()
        };
        let r = cfg.resolve(&ImlsConfig::default());
        assert_eq!((r.radius_fraction, r.target_neighbor_count), (0.1, 200));
        assert!("rough".parse::<NoisePreset>().is_err());
    }

    #[test]
    fn query_count_and_determinism() {
        let cloud = uniform_sphere(1000, 1);
        let index = NeighborIndex::build(cloud.points()).unwrap();
        let cfg = SamplerConfig::default();
        let (q, s) = generate_queries(&cloud, &index, &cfg, 3);
        assert_eq!(q.len(), 25_000);
        assert_eq!(s.len(), 25_000);
        let (q2, _) = generate_queries(&cloud, &index, &cfg, 3);
        assert_eq!(q, q2);
        let (q3, _) = generate_queries(&cloud, &index, &SamplerConfig { seed: 1, ..cfg }, 3);
        assert_ne!(q, q3);
    }

    #[test]
    fn std_excludes_self() {
        let row: Vec<Point3> = (0..10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let cloud = PointCloud::new(row, None).unwrap();
        let index = NeighborIndex::build(cloud.points()).unwrap();
        let stds = query_std_devs(&cloud, &index, 2);
        assert_eq!(stds[0], 2.0);
        assert_eq!(stds[5], 1.0);
        // Rank larger than the cloud is capped to the farthest other point.
        let capped = query_std_devs(&cloud, &index, 50);
        assert_eq!(capped[0], 9.0);
    }

    #[test]
    fn two_dimensional_queries_stay_in_plane() {
        let pts: Vec<Point3> = (0..100)
            .map(|i| {
                let t = i as f64 * 0.0628;
                Point3::new(t.cos(), t.sin(), 0.0)
            })
            .collect();
        let cloud = PointCloud::new(pts, None).unwrap();
        let index = NeighborIndex::build(cloud.points()).unwrap();
        let (q, _) = generate_queries(&cloud, &index, &SamplerConfig::default(), 2);
        assert!(q.iter().all(|p| p.z == 0.0));
    }

    #[test]
    fn cluster_sample_mean_near_centroid() {
        // A tight cluster far from anything else: 60 points within 0.01 of (5,5,5).
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point3> = (0..60)
            .map(|_| Point3::new(5.0, 5.0, 5.0) + Point3::new(rng.random(), rng.random(), rng.random()) * 0.01)
            .collect();
        let centroid = pts.iter().sum::<Point3>() / pts.len() as f64;
        let cloud = PointCloud::new(pts, None).unwrap();
        let index = NeighborIndex::build(cloud.points()).unwrap();
        let stds = query_std_devs(&cloud, &index, 50);
        let (q, _) = generate_queries(&cloud, &index, &SamplerConfig::default(), 3);
        let mean = q.iter().sum::<Point3>() / q.len() as f64;
        let max_std = stds.iter().cloned().fold(0.0, f64::max);
        let spread = 0.005 * 3f64.sqrt();
        let bound = 3.0 * (max_std + spread) / (q.len() as f64).sqrt() + spread / (60f64).sqrt() * 3.0;
        for a in 0..3 {
            assert!((mean[a] - centroid[a]).abs() < bound, "axis {a}");
        }
    }

    #[test]
    fn padding_and_downsampling() {
        let row: Vec<Point3> = (0..200).map(|i| Point3::new(i as f64 * 0.01, 0.0, 0.0)).collect();
        let cloud = PointCloud::new(row, None).unwrap();
        let index = NeighborIndex::build(cloud.points()).unwrap();
        let q = Point3::new(1.0, 0.0, 0.0);
        let with_radius = |r: f64| ImlsConfig {
            radius_fraction: r / cloud.diagonal(),
            ..ImlsConfig::default()
        };
        // 0.145 reaches 14 neighbours on either side plus the centre.
        let small = assemble_neighborhood(&q, &cloud, &index, &with_radius(0.145), 0, 0).unwrap();
        assert_eq!(small.len(), 50);
        assert_eq!(small.valid_count(), 29);
        let big = assemble_neighborhood(&q, &cloud, &index, &with_radius(0.595), 0, 0).unwrap();
        assert_eq!(big.valid_count(), 50);
        assert_eq!(big.len(), 50);
        let mut seen: Vec<usize> = big.valid_indices().collect();
        seen.dedup();
        assert_eq!(seen.len(), 50);
        for i in big.valid_indices() {
            assert!((cloud.points()[i] - q).norm() <= 0.595);
        }
        assert!(assemble_neighborhood(&Point3::new(0.0, 5.0, 0.0), &cloud, &index, &with_radius(0.1), 0, 0).is_none());

        // Padded and unpadded copies give the same field value, bit for bit.
        let picked: Vec<usize> = small.valid_indices().collect();
        let bare = NeighborSet::from_cloud(cloud.points(), None, &picked, 0, cloud.diagonal(), 1e-4).unwrap();
        let grads = vec![Point3::y(); 50];
        let cfg = ImlsConfig::default();
        let qq = q + Point3::new(0.001, 0.002, 0.0);
        let a = imls_value_with_gradients(&qq, &Point3::y(), &small, &grads, &cfg).unwrap();
        let b = imls_value_with_gradients(&qq, &Point3::y(), &bare, &grads[..bare.len()], &cfg).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn batches_are_seeded_permutations() {
        let b = make_batches(250, 100, 7, 0).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![100, 100, 50]);
        assert_eq!(b, make_batches(250, 100, 7, 0).unwrap());
        assert_ne!(b, make_batches(250, 100, 7, 1).unwrap());
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..250).collect::<Vec<_>>());
        assert!(matches!(make_batches(0, 100, 7, 0), Err(Error::Config(_))));
    }

    #[test]
    fn sphere_neighbourhoods_are_within_radius() {
        let cloud = uniform_sphere(10_000, 5);
        let index = NeighborIndex::build(cloud.points()).unwrap();
        let sampler = SamplerConfig {
            queries_per_point: 2,
            ..SamplerConfig::default()
        };
        let imls = ImlsConfig::default();
        let (q, s) = generate_queries(&cloud, &index, &sampler, 3);
        let hoods = assemble_all(&cloud, &index, &q, &s, &imls, &sampler).unwrap();
        let r = imls.radius_fraction * cloud.diagonal();
        for h in &hoods.valid {
            assert!(h.neighbors.valid_count() >= 1);
            for i in h.neighbors.valid_indices() {
                assert!((cloud.points()[i] - h.query).norm() <= r);
            }
        }
        // A query farther than r from the sphere cannot have a neighbour, so
        // that fraction is a hard lower bound; sampling gaps add only a little.
        let off = q.iter().filter(|p| (p.norm() - 1.0).abs() > r).count() as f64 / q.len() as f64;
        let frac = hoods.invalid as f64 / q.len() as f64;
        assert!(frac >= off && frac < off + 0.1, "invalid {frac}, off-surface {off}");
    }

    #[test]
    fn wide_radius_leaves_few_invalid_queries() {
        let cloud = uniform_sphere(10_000, 5);
        let index = NeighborIndex::build(cloud.points()).unwrap();
        let sampler = SamplerConfig {
            queries_per_point: 2,
            noise_preset: Some(NoisePreset::Heavy),
            ..SamplerConfig::default()
        };
        let imls = sampler.resolve(&ImlsConfig::default());
        let (q, s) = generate_queries(&cloud, &index, &sampler, 3);
        let hoods = assemble_all(&cloud, &index, &q, &s, &imls, &sampler).unwrap();
        let frac = hoods.invalid as f64 / q.len() as f64;
        assert!(frac < 0.05, "invalid fraction {frac}");
    }

    #[test]
    fn knn_mode_has_exactly_k() {
        let cloud = uniform_sphere(500, 6);
        let index = NeighborIndex::build(cloud.points()).unwrap();
        let sampler = SamplerConfig {
            queries_per_point: 1,
            mode: NeighborhoodMode::Knn(100),
            ..SamplerConfig::default()
        };
        let (q, s) = generate_queries(&cloud, &index, &sampler, 3);
        let hoods = assemble_all(&cloud, &index, &q, &s, &ImlsConfig::default(), &sampler).unwrap();
        assert_eq!(hoods.invalid, 0);
        assert!(hoods.valid.iter().all(|h| h.neighbors.valid_count() == 100));
    }

    #[test]
    fn cache_round_trip_and_invalidation() {
        let cloud = uniform_sphere(300, 8);
        let index = NeighborIndex::build(cloud.points()).unwrap();
        let sampler = SamplerConfig {
            queries_per_point: 3,
            ..SamplerConfig::default()
        };
        let imls = ImlsConfig {
            radius_fraction: 0.05,
            ..ImlsConfig::default()
        };
        let (q, s) = generate_queries(&cloud, &index, &sampler, 3);
        let hoods = assemble_all(&cloud, &index, &q, &s, &imls, &sampler).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.cache");
        let key = cache_key(&cloud, &q, &imls, &sampler);
        assert_eq!(read_cache(&path, &key, &cloud).unwrap(), None);
        write_cache(&path, &key, &hoods).unwrap();
        assert_eq!(read_cache(&path, &key, &cloud).unwrap(), Some(hoods));
        let other = cache_key(&cloud, &q, &ImlsConfig::default(), &sampler);
        assert_ne!(other, key);
        assert_eq!(read_cache(&path, &other, &cloud).unwrap(), None);
        let reseeded = cache_key(&cloud, &q, &imls, &SamplerConfig { seed: 9, ..sampler });
        assert_ne!(reseeded, key);
    }
}
