use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{NamedTensors, Tensor};

const MAGIC: &[u8; 4] = b"SDI1";
const VERSION: u32 = 1;

/// Parameters at one point of training, with the learning rate in effect when
/// they were saved.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub eta: f64,
    pub params: NamedTensors,
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    put_u32(&mut w, VERSION)?;
    put_u32(&mut w, to_u32(ck.params.len(), "tensor count")?)?;
    for (name, t) in ck.params.iter() {
        put_u32(&mut w, to_u32(name.len(), "name length")?)?;
        w.write_all(name.as_bytes())?;
        put_u32(&mut w, to_u32(t.rank(), "rank")?)?;
        for &d in &t.shape {
            put_u32(&mut w, to_u32(d, "dimension")?)?;
        }
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.write_all(&ck.eta.to_le_bytes())?;
    w.write_all(&ck.step.to_le_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("{}: bad magic", path.display())));
    }
    let version = get_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = get_u32(&mut r)?;
    let mut params = NamedTensors::new();
    for _ in 0..count {
        let len = get_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = get_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| get_u32(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| get_u64(&mut r).map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        params.push(name, Tensor::from_vec(&shape, data)?);
    }
    let eta = f64::from_bits(get_u64(&mut r)?);
    let step = get_u64(&mut r)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after footer", rest.len())));
    }
    Ok(Checkpoint { step, eta, params })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the manifest's directory.
    pub file: String,
    pub step: u64,
    pub eta: f64,
}

/// Checkpoint files in training order plus the model configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config: ModelConfig,
    pub checkpoints: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(config: ModelConfig) -> Self {
        Self {
            schema_version: 1,
            config,
            checkpoints: Vec::new(),
        }
    }

    pub fn paths(&self, dir: &Path) -> Vec<PathBuf> {
        self.checkpoints.iter().map(|e| dir.join(&e.file)).collect()
    }
}

/// Writes `checkpoints` as `ckpt_<step>.sdi` plus `manifest.json` into `dir`.
pub fn save_manifest(dir: &Path, config: &ModelConfig, checkpoints: &[Checkpoint]) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut m = Manifest::new(config.clone());
    for ck in checkpoints {
        let file = format!("ckpt_{:08}.sdi", ck.step);
        write_checkpoint(&dir.join(&file), ck)?;
        m.checkpoints.push(ManifestEntry {
            file,
            step: ck.step,
            eta: ck.eta,
        });
    }
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m)?)?;
    Ok(m)
}

/// Reads a manifest and every checkpoint it lists.
pub fn load_manifest(path: &Path) -> Result<(Manifest, Vec<Checkpoint>)> {
    let m: Manifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let cks = m
        .paths(dir)
        .iter()
        .map(|p| read_checkpoint(p))
        .collect::<Result<Vec<_>>>()?;
    Ok((m, cks))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut params = NamedTensors::new();
        params.push("w", Tensor::from_vec(&[2, 2], vec![1.5, -0.0, f64::MIN_POSITIVE, 3.0]).unwrap());
        params.push("b", Tensor::vector(vec![0.1]));
        let ck = Checkpoint {
            step: 7,
            eta: 0.05,
            params,
        };
        let path = dir.path().join("c.sdi");
        write_checkpoint(&path, &ck).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back, ck);
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"SDI1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
    }

    #[test]
    fn bad_magic_and_truncation_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.sdi");
        fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Format(_))));
        fs::write(&path, b"SDI1\x01\x00\x00\x00\x01\x00").unwrap();
        assert!(read_checkpoint(&path).is_err());
    }
}
