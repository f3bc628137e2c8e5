//! On-disk dataset: `chips/<chip>/qubits/<qb>/cooldown_<k>/` directories of
//! spectra and sidecars, plus a manifest of SHA-256 content hashes covering
//! every file the pipeline writes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::specgen::SwapSpectrum;

pub const MANIFEST: &str = "manifest.json";
pub const EXPANDED_CONFIG: &str = "config.expanded.json";

/// Top-level entries owned by the pipeline; cleared before a fresh simulation.
const MANAGED: [&str; 5] = ["chips", "analysis", "report", EXPANDED_CONFIG, MANIFEST];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    /// Relative path (`/`-separated) to lowercase hex SHA-256.
    pub files: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn spectrum_dir(chip: &str, qubit: &str, cooldown: u32) -> String {
    format!("chips/{chip}/qubits/{qubit}/cooldown_{cooldown}")
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s.into_bytes()
}

/// Sidecar written next to every `spectrum.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumMeta {
    pub tau_ns: f64,
    pub shots: Option<u32>,
    pub seed: u64,
    pub chip_id: String,
    pub qubit_id: String,
    pub cooldown_index: u32,
    /// Flux bias per grid point (Φ₀).
    pub pulse_amplitude_phi0: Option<Vec<f64>>,
}

impl SpectrumMeta {
    pub fn of(s: &SwapSpectrum) -> Self {
        SpectrumMeta {
            tau_ns: s.tau_s * 1e9,
            shots: s.shots,
            seed: s.rng_seed,
            chip_id: s.chip_id.clone(),
            qubit_id: s.qubit_id.clone(),
            cooldown_index: s.cooldown_index,
            pulse_amplitude_phi0: s.pulse_amplitude.clone(),
        }
    }
}

pub fn spectrum_csv(s: &SwapSpectrum) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["freq_ghz", "p_loss"])
        .expect("in-memory write");
    for (f, p) in s.freqs_ghz.iter().zip(&s.p_loss) {
        w.write_record([f.to_string(), p.to_string()])
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn parse_spectrum_csv(path: &Path, bytes: &[u8]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| Error::format(path, e))?;
    if header.iter().collect::<Vec<_>>() != ["freq_ghz", "p_loss"] {
        return Err(Error::format(path, "expected header `freq_ghz,p_loss`"));
    }
    let (mut freqs, mut losses) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e))?;
        let field = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::format(path, format!("row {}: bad number", i + 2)))
        };
        freqs.push(field(0)?);
        losses.push(field(1)?);
    }
    Ok((freqs, losses))
}

/// Renders rows as CSV with a mandatory header.
pub fn csv_bytes<I, R>(header: &[&str], rows: I) -> Vec<u8>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Dataset handle. Every write goes through [`Dataset::write`], which records
/// the content hash; [`Dataset::commit`] persists the manifest.
#[derive(Debug)]
pub struct Dataset {
    root: PathBuf,
    manifest: Manifest,
}

impl Dataset {
    /// Prepares `root` for a fresh simulation, removing pipeline-owned
    /// entries of an earlier run. Refuses a non-empty directory that is not a
    /// dataset.
    pub fn create(root: &Path) -> Result<Self> {
        if root.exists() {
            let mut entries = fs::read_dir(root)
                .map_err(|e| Error::io(root, e))?
                .peekable();
            let has_manifest = root.join(MANIFEST).is_file();
            if entries.peek().is_some() && !has_manifest {
                return Err(Error::Config(format!(
                    "{} exists, is not empty and has no {MANIFEST}; refusing to overwrite",
                    root.display()
                )));
            }
            for name in MANAGED {
                let p = root.join(name);
                if p.is_dir() {
                    fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
                } else if p.exists() {
                    fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
                }
            }
        }
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Dataset {
            root: root.to_path_buf(),
            manifest: Manifest::default(),
        })
    }

    /// Opens an existing dataset and verifies every manifest entry.
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e))?;
        let ds = Dataset {
            root: root.to_path_buf(),
            manifest,
        };
        ds.verify()?;
        Ok(ds)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Files whose content no longer matches the manifest (or are missing).
    pub fn verify(&self) -> Result<()> {
        let bad: Vec<String> = self
            .manifest
            .files
            .iter()
            .filter(|(rel, hash)| match fs::read(self.root.join(rel.as_str())) {
                Ok(b) => sha256_hex(&b) != **hash,
                Err(_) => true,
            })
            .map(|(rel, _)| rel.clone())
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Integrity(bad))
        }
    }

    /// Reads a manifest-listed file.
    pub fn read(&self, rel: &str) -> Result<Vec<u8>> {
        if !self.manifest.files.contains_key(rel) {
            return Err(Error::io(
                self.root.join(rel),
                std::io::Error::new(std::io::ErrorKind::NotFound, "not listed in the manifest"),
            ));
        }
        let p = self.root.join(rel);
        fs::read(&p).map_err(|e| Error::io(&p, e))
    }

    pub fn read_json<T: DeserializeOwned>(&self, rel: &str) -> Result<T> {
        let bytes = self.read(rel)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format(self.root.join(rel), e))
    }

    pub fn contains(&self, rel: &str) -> bool {
        self.manifest.files.contains_key(rel)
    }

    /// Manifest paths under `prefix` ending with `suffix`, in sorted order.
    pub fn list(&self, prefix: &str, suffix: &str) -> Vec<String> {
        self.manifest
            .files
            .keys()
            .filter(|k| k.starts_with(prefix) && k.ends_with(suffix))
            .cloned()
            .collect()
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let p = self.root.join(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        self.manifest
            .files
            .insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        self.write(rel, &to_json_bytes(value))
    }

    /// Removes every file under `prefix` (both on disk and in the manifest),
    /// so a command can regenerate its outputs without leaving orphans.
    pub fn clear(&mut self, prefix: &str) -> Result<()> {
        let stale = self.list(prefix, "");
        for rel in stale {
            let p = self.root.join(&rel);
            if p.exists() {
                fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
            self.manifest.files.remove(&rel);
        }
        Ok(())
    }

    pub fn commit(&self) -> Result<()> {
        let p = self.root.join(MANIFEST);
        fs::write(&p, to_json_bytes(&self.manifest)).map_err(|e| Error::io(&p, e))
    }
}
