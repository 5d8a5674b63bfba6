//! Dataset directories: `manifest.json` plus `NNNNN.ppm` / `NNNNN.dmap`
//! pairs, each listed with its SHA-256.

use super::io::{decode_dmap, decode_ppm, encode_dmap, encode_ppm};
use super::synth::{render, SyntheticWorldConfig};
use super::SceneSample;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub rgb: String,
    pub depth: String,
    pub rgb_sha256: String,
    pub depth_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SyntheticWorldConfig,
    pub samples: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Renders all configured scenes in memory.
pub fn generate_samples(cfg: &SyntheticWorldConfig) -> Result<Vec<SceneSample>> {
    cfg.validate()?;
    (0..cfg.n_samples as u64).map(|i| render(cfg, i)).collect()
}

/// Renders the configured scenes into `dir` and writes the manifest.
pub fn generate_dataset(cfg: &SyntheticWorldConfig, dir: impl AsRef<Path>) -> Result<Manifest> {
    cfg.validate()?;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut samples = Vec::with_capacity(cfg.n_samples);
    for index in 0..cfg.n_samples {
        let s = render(cfg, index as u64)?;
        let rgb_bytes = encode_ppm(s.height, s.width, &s.rgb)?;
        let depth_bytes = encode_dmap(s.height, s.width, &s.depth, &s.mask)?;
        let entry = ManifestEntry {
            index,
            rgb: format!("{index:05}.ppm"),
            depth: format!("{index:05}.dmap"),
            rgb_sha256: sha256_hex(&rgb_bytes),
            depth_sha256: sha256_hex(&depth_bytes),
        };
        for (name, bytes) in [(&entry.rgb, &rgb_bytes), (&entry.depth, &depth_bytes)] {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| Error::io(path, e))?;
        }
        samples.push(entry);
    }
    let manifest = Manifest {
        config: cfg.clone(),
        samples,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest)?;
    std::fs::write(&path, json).map_err(|e| Error::io(path, e))?;
    Ok(manifest)
}

/// Reads a dataset directory, verifying every file against its hash.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(Manifest, Vec<SceneSample>)> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_slice(&bytes)?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let read = |name: &str, hash: &str| -> Result<Vec<u8>> {
            let path = dir.join(name);
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let got = sha256_hex(&bytes);
            if got != hash {
                return Err(Error::Config(format!("{} hash {got} does not match manifest {hash}", path.display())));
            }
            Ok(bytes)
        };
        let (h, w, rgb) = decode_ppm(&read(&entry.rgb, &entry.rgb_sha256)?)?;
        let (dh, dw, depth, mask) = decode_dmap(&read(&entry.depth, &entry.depth_sha256)?)?;
        if (h, w) != (dh, dw) {
            return Err(Error::shape("load_dataset", format!("sample {}: image {h}×{w}, depth {dh}×{dw}", entry.index)));
        }
        samples.push(SceneSample::new(h, w, rgb, depth, mask)?);
    }
    Ok((manifest, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn disk_round_trip_matches_memory() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SyntheticWorldConfig {
            n_samples: 3,
            height: 24,
            width: 32,
            ..Default::default()
        };
        let m = generate_dataset(&cfg, dir.path()).unwrap();
        let (m2, samples) = load_dataset(dir.path()).unwrap();
        assert_eq!(m, m2);
        assert_eq!(samples, generate_samples(&cfg).unwrap());
        let again = tempfile::tempdir().unwrap();
        assert_eq!(generate_dataset(&cfg, again.path()).unwrap(), m);
    }

    #[test]
    fn tampered_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SyntheticWorldConfig {
            n_samples: 1,
            height: 16,
            width: 16,
            ..Default::default()
        };
        generate_dataset(&cfg, dir.path()).unwrap();
        let path = dir.path().join("00000.dmap");
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[20] ^= 1;
        std::fs::write(&path, bytes).unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }
}
