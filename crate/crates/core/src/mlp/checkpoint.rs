//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header describing the configuration and tensor sizes, then every tensor as
//! little-endian `f64` (parameters, first moments, second moments). Floats are
//! stored as raw bits, so a round trip is exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::network::{MlpConfig, MlpParams};
use crate::error::{Error, Result};
use crate::geometry::NormalizationTransform;

const MAGIC: &[u8; 8] = b"IMLSCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: MlpParams,
    pub adam: AdamState,
    pub seed: u64,
    pub epoch: usize,
    pub transform: Option<NormalizationTransform>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    mlp: MlpConfig,
    adam: AdamConfig,
    adam_step: u64,
    seed: u64,
    epoch: usize,
    transform: Option<NormalizationTransform>,
    tensor_lengths: Vec<usize>,
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let header = Header {
        mlp: ckpt.params.config().clone(),
        adam: ckpt.adam.config,
        adam_step: ckpt.adam.step,
        seed: ckpt.seed,
        epoch: ckpt.epoch,
        transform: ckpt.transform,
        tensor_lengths: ckpt.params.tensor_lengths(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let tensors = ckpt
            .params
            .tensors()
            .into_iter()
            .chain(ckpt.adam.first_moments().iter().map(Vec::as_slice))
            .chain(ckpt.adam.second_moments().iter().map(Vec::as_slice));
        for t in tensors {
            for v in t {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

fn read_tensors(r: &mut impl Read, lengths: &[usize]) -> std::io::Result<Vec<Vec<f64>>> {
    let mut buf = [0u8; 8];
    lengths
        .iter()
        .map(|&n| {
            (0..n)
                .map(|_| {
                    r.read_exact(&mut buf)?;
                    Ok(f64::from_le_bytes(buf))
                })
                .collect()
        })
        .collect()
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(io)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(io)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json).map_err(io)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let params_t = read_tensors(&mut r, &header.tensor_lengths).map_err(io)?;
    let first = read_tensors(&mut r, &header.tensor_lengths).map_err(io)?;
    let second = read_tensors(&mut r, &header.tensor_lengths).map_err(io)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(io)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    let params = MlpParams::from_tensors(&header.mlp, params_t)?;
    Ok(Checkpoint {
        params,
        adam: AdamState::from_parts(header.adam, header.adam_step, first, second),
        seed: header.seed,
        epoch: header.epoch,
        transform: header.transform,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;

    #[test]
    fn round_trip_is_exact() {
        let config = MlpConfig {
            depth: 3,
            width: 8,
            skip_layer: 2,
            ..MlpConfig::default()
        };
        let mut params = MlpParams::init(&config, 11).unwrap();
        let mut adam = AdamState::new(&params, AdamConfig::default());
        let q = [(Point3::new(0.1, 0.2, 0.3), 0.5)];
        let (_, g) = params.loss_and_param_gradients(&q).unwrap();
        adam.step(&mut params, &g).unwrap();
        let ckpt = Checkpoint {
            params,
            adam,
            seed: 11,
            epoch: 3,
            transform: Some(NormalizationTransform {
                center: Point3::new(1.0, 2.0, 3.0),
                scale: 0.123456789,
            }),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        write_checkpoint(&path, &ckpt).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn rejects_foreign_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}
