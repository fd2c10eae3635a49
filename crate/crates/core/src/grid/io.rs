//! Snapshot files: `<stem>.bin` holds little-endian f64 `(re, im)` pairs in
//! storage order (component-major, then row-major lattice order), and
//! `<stem>.json` is the sidecar `{d, lambda, n_axis, kind, time, seed}`.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{FieldKind, SpectralField, WaveGrid};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotMeta {
    pub d: usize,
    pub lambda: f64,
    pub n_axis: usize,
    pub kind: FieldKind,
    pub time: f64,
    pub seed: u64,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

pub fn write_snapshot(stem: &Path, field: &SpectralField, time: f64, seed: u64) -> Result<()> {
    let (bin, json) = paths(stem);
    let mut bytes = Vec::with_capacity(field.data().len() * 16);
    for c in field.data() {
        bytes.extend_from_slice(&c.re.to_le_bytes());
        bytes.extend_from_slice(&c.im.to_le_bytes());
    }
    fs::write(bin, bytes)?;
    let g = field.grid();
    let meta = SnapshotMeta {
        d: g.dim(),
        lambda: g.lambda(),
        n_axis: g.n_axis(),
        kind: field.kind(),
        time,
        seed,
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(json, text + "\n")?;
    Ok(())
}

pub fn read_snapshot(stem: &Path) -> Result<(SpectralField, SnapshotMeta)> {
    let (bin, json) = paths(stem);
    let text = fs::read_to_string(&json)?;
    let meta: SnapshotMeta = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", json.display())))?;
    let grid = WaveGrid::new(meta.d, meta.lambda, meta.n_axis)?;
    let bytes = fs::read(&bin)?;
    if bytes.len() % 16 != 0 {
        return Err(Error::Format(format!("{}: length is not a multiple of 16", bin.display())));
    }
    let data: Vec<Complex64> = bytes
        .chunks_exact(16)
        .map(|ch| {
            let re = f64::from_le_bytes(ch[..8].try_into().unwrap());
            let im = f64::from_le_bytes(ch[8..].try_into().unwrap());
            Complex64::new(re, im)
        })
        .collect();
    let field = SpectralField::from_data(grid, meta.kind, data)
        .map_err(|_| Error::Format(format!("{}: coefficient count does not match sidecar", bin.display())))?;
    Ok((field, meta))
}

/// Snapshot stems (sorted) in a directory, found via their `.json` sidecars.
pub fn list_snapshots(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut stems = Vec::new();
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e == "json") && p.with_extension("bin").exists() {
            stems.push(p.with_extension(""));
        }
    }
    stems.sort();
    Ok(stems)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::synthetic_field;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bit_exact_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = WaveGrid::new(2, 0.1 + std::f64::consts::PI, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = synthetic_field(g, FieldKind::Velocity, 3, |k| 1.0 / (0.3 + k), &mut rng);
        let stem = dir.path().join("snap_000001");
        write_snapshot(&stem, &f, 1.0 / 3.0, 42).unwrap();
        let (back, meta) = read_snapshot(&stem).unwrap();
        assert_eq!(meta.time.to_bits(), (1.0f64 / 3.0).to_bits());
        assert_eq!(meta.lambda.to_bits(), g.lambda().to_bits());
        for (a, b) in back.data().iter().zip(f.data()) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
        assert_eq!(list_snapshots(dir.path()).unwrap(), vec![stem]);
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let g = WaveGrid::new(2, 1.0, 4).unwrap();
        let f = SpectralField::zeros(g, FieldKind::Scalar);
        let stem = dir.path().join("s");
        write_snapshot(&stem, &f, 0.0, 0).unwrap();
        fs::write(stem.with_extension("bin"), [0u8; 24]).unwrap();
        assert!(read_snapshot(&stem).is_err());
    }
}
