//! Learning-path persistence.
//!
//! Binary layout (little-endian): magic `NTKPATH1` (8 bytes), `u32` version
//! (currently 1), `u64` parameter count `d`, `u64` snapshot count, `u64`
//! stride, then per snapshot `u64 k`, `f64 eta_k`, and `d` doubles of
//! parameters. A JSON manifest sidecar at `<file>.manifest.json` carries the
//! model spec, the training config, the seed, and the per-step loss curve —
//! everything the binary itself cannot describe. Loading requires the
//! sidecar, since the spec is needed to interpret the parameters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::{ModelSpec, ParamVector};
use crate::train::{LearningPath, Snapshot, TrainConfig};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"NTKPATH1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PathManifest {
    spec: ModelSpec,
    config: Option<TrainConfig>,
    seed: u64,
    losses: Vec<f64>,
}

pub fn manifest_path(file: &Path) -> PathBuf {
    let mut s = file.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Writes the binary path file and its JSON manifest sidecar.
pub fn save_path(path: &LearningPath, config: Option<&TrainConfig>, file: &Path) -> Result<()> {
    let d = path.spec.param_count();
    let mut w = BufWriter::new(File::create(file)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(d as u64).to_le_bytes())?;
    w.write_all(&(path.snapshot_count() as u64).to_le_bytes())?;
    w.write_all(&(path.stride() as u64).to_le_bytes())?;
    for s in path.snapshots() {
        w.write_all(&(s.k as u64).to_le_bytes())?;
        w.write_all(&s.eta.to_le_bytes())?;
        for v in s.w.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;

    let manifest = PathManifest {
        spec: path.spec.clone(),
        config: config.cloned(),
        seed: config.map(|c| c.seed).unwrap_or(0),
        losses: path.losses.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(manifest_path(file), json + "\n")?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Loads a path written by [`save_path`], returning it together with the
/// training config recorded in the manifest (when one was recorded).
pub fn load_path(file: &Path) -> Result<(LearningPath, Option<TrainConfig>)> {
    let manifest_file = manifest_path(file);
    let manifest_text = std::fs::read_to_string(&manifest_file).map_err(|e| {
        Error::BadPathFile(format!(
            "missing manifest sidecar {}: {e}",
            manifest_file.display()
        ))
    })?;
    let manifest: PathManifest = serde_json::from_str(&manifest_text)?;

    let mut r = BufReader::new(File::open(file)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|e| Error::BadPathFile(format!("{}: {e}", file.display())))?;
    if &magic != MAGIC {
        return Err(Error::BadPathFile(format!(
            "{}: bad magic {magic:?}",
            file.display()
        )));
    }
    let version = read_u32(&mut r).map_err(|e| Error::BadPathFile(e.to_string()))?;
    if version != VERSION {
        return Err(Error::PathVersion(version));
    }
    let d = read_u64(&mut r).map_err(|e| Error::BadPathFile(e.to_string()))? as usize;
    if d != manifest.spec.param_count() {
        return Err(Error::ShapeMismatch {
            expected: manifest.spec.param_count(),
            got: d,
            context: "path file parameter count vs manifest spec",
        });
    }
    let count = read_u64(&mut r).map_err(|e| Error::BadPathFile(e.to_string()))? as usize;
    let stride = read_u64(&mut r).map_err(|e| Error::BadPathFile(e.to_string()))? as usize;
    let mut snapshots = Vec::with_capacity(count);
    for i in 0..count {
        let mut read_snapshot = || -> std::io::Result<Snapshot> {
            let k = read_u64(&mut r)? as usize;
            let eta = read_f64(&mut r)?;
            let mut data = vec![0.0; d];
            for v in &mut data {
                *v = read_f64(&mut r)?;
            }
            Ok(Snapshot {
                k,
                eta,
                w: ParamVector::new(&manifest.spec, data).expect("length checked"),
            })
        };
        snapshots.push(read_snapshot().map_err(|_| Error::TruncatedPathFile { snapshot: i })?);
    }
    let path = LearningPath::new(manifest.spec, snapshots, manifest.losses, stride)?;
    Ok((path, manifest.config))
}
