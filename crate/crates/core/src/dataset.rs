//! On-disk dataset layout.
//!
//! A dataset directory holds `manifest.toml` and one data file per split.
//! CSV rows are `label,v1,...,vN`; binary files start with the magic
//! `OSDBIN01`, a little-endian `u32` header length and a TOML header, followed
//! by rows of `N + 1` little-endian `f32` values (label first, `-1` for
//! unlabeled). A `?` label in CSV marks an unlabeled record.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::signal::RawSignal;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MANIFEST_VERSION: u32 = 1;
const BIN_MAGIC: &[u8; 8] = b"OSDBIN01";

/// Category names in label order.
pub const CLASS_NAMES: [&str; 6] = [
    "Noise",
    "Spike",
    "Jam",
    "Impact",
    "Hydraulic fluctuation",
    "Self-check",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Bin,
}

impl DataFormat {
    pub fn extension(self) -> &'static str {
        match self {
            DataFormat::Csv => "csv",
            DataFormat::Bin => "bin",
        }
    }
}

impl fmt::Display for DataFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "bin" => Ok(DataFormat::Bin),
            other => Err(Error::Config(format!(
                "unknown data format '{other}' (expected csv or bin)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub name: String,
    pub file: String,
    pub records: usize,
    /// SHA-256 of the data file, hex.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub record_length: usize,
    pub sample_rate: f64,
    pub format: DataFormat,
    pub classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub splits: Vec<SplitEntry>,
    /// Free-form provenance (generator parameters and the like).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<toml::Table>,
}

impl Manifest {
    pub fn new(
        record_length: usize,
        sample_rate: f64,
        format: DataFormat,
        classes: Vec<String>,
    ) -> Self {
        Manifest {
            format_version: MANIFEST_VERSION,
            record_length,
            sample_rate,
            format,
            classes,
            seed: None,
            splits: Vec::new(),
            provenance: None,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn split(&self, name: &str) -> Option<&SplitEntry> {
        self.splits.iter().find(|s| s.name == name)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("manifest serialization: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Manifest =
            toml::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "unsupported manifest version {} (expected {MANIFEST_VERSION})",
                m.format_version
            )));
        }
        if m.record_length == 0 || !(m.sample_rate > 0.0) || m.classes.is_empty() {
            return Err(Error::Format(
                "manifest needs record_length > 0, sample_rate > 0 and classes".into(),
            ));
        }
        Ok(m)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_toml(&text)
    }

    /// Writes the manifest and returns the SHA-256 of its bytes.
    pub fn write(&self, dir: &Path) -> Result<String> {
        let path = dir.join(MANIFEST_FILE);
        let text = self.to_toml()?;
        fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
        Ok(sha256_hex(text.as_bytes()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Serialize, Deserialize)]
struct BinHeader {
    split: String,
    record_length: usize,
    records: usize,
    sample_rate: f64,
    classes: usize,
}

/// Serializes records into the bytes of one split file.
pub fn encode_records(
    records: &[RawSignal],
    format: DataFormat,
    manifest: &Manifest,
    split: &str,
) -> Result<Vec<u8>> {
    for (i, r) in records.iter().enumerate() {
        if r.len() != manifest.record_length {
            return Err(Error::DataIntegrity(format!(
                "record {i} has {} samples, manifest says {}",
                r.len(),
                manifest.record_length
            )));
        }
        if let Some(l) = r.label {
            if l as usize >= manifest.n_classes() {
                return Err(Error::DataIntegrity(format!(
                    "record {i} has unknown label {l}"
                )));
            }
        }
    }
    match format {
        DataFormat::Csv => {
            let mut out = String::with_capacity(records.len() * manifest.record_length * 12);
            for r in records {
                match r.label {
                    Some(l) => out.push_str(&l.to_string()),
                    None => out.push('?'),
                }
                for v in &r.samples {
                    out.push(',');
                    out.push_str(&v.to_string());
                }
                out.push('\n');
            }
            Ok(out.into_bytes())
        }
        DataFormat::Bin => {
            let header = toml::to_string(&BinHeader {
                split: split.to_string(),
                record_length: manifest.record_length,
                records: records.len(),
                sample_rate: manifest.sample_rate,
                classes: manifest.n_classes(),
            })
            .map_err(|e| Error::Format(e.to_string()))?;
            let mut out = Vec::with_capacity(
                16 + header.len() + records.len() * (manifest.record_length + 1) * 4,
            );
            out.extend_from_slice(BIN_MAGIC);
            out.extend_from_slice(&(header.len() as u32).to_le_bytes());
            out.extend_from_slice(header.as_bytes());
            for r in records {
                let label = r.label.map_or(-1.0f32, |l| l as f32);
                out.extend_from_slice(&label.to_le_bytes());
                for &v in &r.samples {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
            Ok(out)
        }
    }
}

/// Writes one split file and returns its entry for the manifest.
pub fn write_split(
    dir: &Path,
    split: &str,
    records: &[RawSignal],
    manifest: &Manifest,
) -> Result<SplitEntry> {
    let bytes = encode_records(records, manifest.format, manifest, split)?;
    let file = format!("{split}.{}", manifest.format.extension());
    let path = dir.join(&file);
    let mut w = BufWriter::new(fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
    w.write_all(&bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&path, e))?;
    Ok(SplitEntry {
        name: split.to_string(),
        file,
        records: records.len(),
        checksum: sha256_hex(&bytes),
    })
}

fn parse_label(field: &str, n_classes: usize, path: &str, row: usize) -> Result<Option<u32>> {
    let field = field.trim();
    if field == "?" {
        return Ok(None);
    }
    let label: u32 = field.parse().map_err(|_| Error::Parse {
        path: path.to_string(),
        row,
        message: format!("bad label '{field}'"),
    })?;
    if label as usize >= n_classes {
        return Err(Error::Parse {
            path: path.to_string(),
            row,
            message: format!("unknown label {label} (manifest has {n_classes} classes)"),
        });
    }
    Ok(Some(label))
}

/// Parses the bytes of one split file. Rows are numbered from 0.
pub fn decode_records(
    bytes: &[u8],
    format: DataFormat,
    manifest: &Manifest,
    path: &str,
) -> Result<Vec<RawSignal>> {
    let n = manifest.record_length;
    let n_classes = manifest.n_classes();
    let perr = |row: usize, message: String| Error::Parse {
        path: path.to_string(),
        row,
        message,
    };
    match format {
        DataFormat::Csv => {
            let text =
                std::str::from_utf8(bytes).map_err(|e| perr(0, format!("not UTF-8: {e}")))?;
            let mut out = Vec::new();
            for (row, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let mut fields = line.split(',');
                let label = parse_label(fields.next().unwrap_or(""), n_classes, path, row)?;
                let samples = fields
                    .map(|f| {
                        f.trim()
                            .parse::<f64>()
                            .map_err(|_| perr(row, format!("bad value '{f}'")))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                if samples.len() != n {
                    return Err(perr(
                        row,
                        format!("expected {n} values, found {}", samples.len()),
                    ));
                }
                let signal = RawSignal::new(samples, manifest.sample_rate, label)
                    .map_err(|e| perr(row, e.to_string()))?;
                out.push(signal);
            }
            Ok(out)
        }
        DataFormat::Bin => {
            if bytes.len() < 12 || &bytes[..8] != BIN_MAGIC {
                return Err(perr(0, "missing binary magic".into()));
            }
            let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
            let body_start = 12 + hlen;
            let header_bytes = bytes
                .get(12..body_start)
                .ok_or_else(|| perr(0, "truncated header".into()))?;
            let header: BinHeader = std::str::from_utf8(header_bytes)
                .ok()
                .and_then(|t| toml::from_str(t).ok())
                .ok_or_else(|| perr(0, "unreadable binary header".into()))?;
            if header.record_length != n {
                return Err(perr(
                    0,
                    format!(
                        "header record_length {} disagrees with manifest {n}",
                        header.record_length
                    ),
                ));
            }
            let row_bytes = (n + 1) * 4;
            let body = &bytes[body_start..];
            let mut out = Vec::with_capacity(header.records);
            for row in 0..header.records {
                let chunk = body
                    .get(row * row_bytes..(row + 1) * row_bytes)
                    .ok_or_else(|| perr(row, format!("truncated row (expected {n} values)")))?;
                let mut vals = chunk
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64);
                let label_raw = vals.next().unwrap();
                let label = if label_raw == -1.0 {
                    None
                } else if label_raw >= 0.0
                    && label_raw.fract() == 0.0
                    && (label_raw as usize) < n_classes
                {
                    Some(label_raw as u32)
                } else {
                    return Err(perr(row, format!("unknown label {label_raw}")));
                };
                let signal = RawSignal::new(vals.collect(), manifest.sample_rate, label)
                    .map_err(|e| perr(row, e.to_string()))?;
                out.push(signal);
            }
            if body.len() != header.records * row_bytes {
                return Err(perr(header.records, "trailing bytes after last row".into()));
            }
            Ok(out)
        }
    }
}

/// Loads every record of a data file. The manifest is read from the same directory.
pub fn load_dataset(path: &Path, format: DataFormat) -> Result<Vec<RawSignal>> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let manifest = Manifest::read(dir)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_records(&bytes, format, &manifest, &path.display().to_string())
}

/// A dataset directory with its three splits loaded.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub train: Vec<RawSignal>,
    pub val: Vec<RawSignal>,
    pub test: Vec<RawSignal>,
}

impl Dataset {
    /// Loads all splits and verifies their checksums against the manifest.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = Manifest::read(dir)?;
        let load = |name: &str| -> Result<Vec<RawSignal>> {
            let entry = manifest
                .split(name)
                .ok_or_else(|| Error::Format(format!("manifest has no '{name}' split")))?;
            let path = dir.join(&entry.file);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let sum = sha256_hex(&bytes);
            if sum != entry.checksum {
                return Err(Error::Format(format!(
                    "checksum mismatch for {}: manifest {}, file {sum}",
                    path.display(),
                    entry.checksum
                )));
            }
            let records = decode_records(
                &bytes,
                manifest.format,
                &manifest,
                &path.display().to_string(),
            )?;
            if records.len() != entry.records {
                return Err(Error::Format(format!(
                    "{} holds {} records, manifest says {}",
                    path.display(),
                    records.len(),
                    entry.records
                )));
            }
            Ok(records)
        };
        Ok(Dataset {
            train: load("train")?,
            val: load("val")?,
            test: load("test")?,
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    /// Content hash over the manifest checksums of all splits.
    pub fn content_hash(&self) -> String {
        let joined: Vec<&str> = self
            .manifest
            .splits
            .iter()
            .map(|s| s.checksum.as_str())
            .collect();
        sha256_hex(joined.join(":").as_bytes())
    }
}

/// Keeps only records whose label is in `classes`.
pub fn filter_classes(records: &[RawSignal], classes: &[u32]) -> Vec<RawSignal> {
    records
        .iter()
        .filter(|r| r.label.is_some_and(|l| classes.contains(&l)))
        .cloned()
        .collect()
}
