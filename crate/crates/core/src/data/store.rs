//! On-disk forms of an encoded dataset.
//!
//! Binary layout (little endian):
//!
//! ```text
//! "DNETDATA" | u32 version | u32 meta_len | meta JSON
//! | F columns of N f64 | N u32 labels | 32-byte SHA-256 of all preceding bytes
//! ```
//!
//! `meta` holds the row count, feature names, groups and class names. The
//! CSV form has a header of feature names plus `label` (a class index).
//! Either form may sit next to a `<file>.prep.json` sidecar holding the
//! fitted preprocessor.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::preprocess::{EncodedDataset, FeatureGroup, Preprocessor};
use crate::digest::sha256;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATA_MAGIC: &[u8; 8] = b"DNETDATA";
pub const DATA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Binary,
}

impl DataFormat {
    /// `.csv` files are CSV; anything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Binary,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Meta {
    rows: usize,
    feature_names: Vec<String>,
    groups: Vec<FeatureGroup>,
    classes: Vec<String>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".prep.json");
    PathBuf::from(s)
}

impl EncodedDataset {
    pub fn save(&self, path: &Path, format: DataFormat, prep: Option<&Preprocessor>) -> Result<()> {
        let bytes = match format {
            DataFormat::Binary => self.to_binary()?,
            DataFormat::Csv => self.to_csv()?,
        };
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        if let Some(p) = prep {
            let side = sidecar_path(path);
            std::fs::write(&side, p.to_json()?).map_err(|e| Error::io(&side, e))?;
        }
        Ok(())
    }

    /// Load either form, picking the format from the extension. Class names
    /// for CSV come from the sidecar when present.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        match DataFormat::from_path(path) {
            DataFormat::Binary => Self::from_binary(&bytes),
            DataFormat::Csv => {
                let side = sidecar_path(path);
                let classes = if side.exists() {
                    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
                    Some(Preprocessor::from_json(&text)?.labels.classes)
                } else {
                    None
                };
                Self::from_csv(&bytes, classes)
            }
        }
    }

    pub fn to_binary(&self) -> Result<Vec<u8>> {
        let (n, f) = (self.len(), self.width());
        let meta = serde_json::to_vec(&Meta {
            rows: n,
            feature_names: self.feature_names.clone(),
            groups: self.groups.clone(),
            classes: self.classes.clone(),
        })?;
        let mut out = Vec::with_capacity(16 + meta.len() + n * f * 8 + n * 4 + 32);
        out.extend_from_slice(DATA_MAGIC);
        out.extend_from_slice(&DATA_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        let data = self.features.data();
        for j in 0..f {
            for i in 0..n {
                out.extend_from_slice(&data[i * f + j].to_le_bytes());
            }
        }
        for &l in &self.labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
        let digest = sha256(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Data(format!("encoded dataset: {m}"));
        if bytes.len() < 16 + 32 || &bytes[..8] != DATA_MAGIC {
            return Err(bad("not a DNETDATA file"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if version != DATA_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "encoded dataset",
                found: version,
                supported: DATA_VERSION,
            });
        }
        if sha256(body) != digest {
            return Err(bad("checksum mismatch"));
        }
        let meta_len = u32::from_le_bytes(body[12..16].try_into().unwrap()) as usize;
        let meta_end = 16usize
            .checked_add(meta_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| bad("truncated metadata"))?;
        let meta: Meta = serde_json::from_slice(&body[16..meta_end])?;
        let (n, f) = (meta.rows, meta.feature_names.len());
        let payload = &body[meta_end..];
        if payload.len() != n * f * 8 + n * 4 {
            return Err(bad("payload length does not match metadata"));
        }
        let mut data = vec![0.0; n * f];
        for (k, chunk) in payload[..n * f * 8].chunks_exact(8).enumerate() {
            let (j, i) = (k / n, k % n);
            data[i * f + j] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        let labels: Vec<usize> = payload[n * f * 8..]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        if labels.iter().any(|&l| l >= meta.classes.len()) {
            return Err(bad("label outside the class list"));
        }
        Ok(EncodedDataset {
            features: Tensor::new(vec![n, f], data)?,
            labels,
            feature_names: meta.feature_names,
            groups: meta.groups,
            classes: meta.classes,
        })
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = self.feature_names.clone();
        header.push("label".into());
        w.write_record(&header)?;
        let mut buf: Vec<String> = Vec::new();
        for (row, &label) in self.features.data().chunks(self.width()).zip(&self.labels) {
            buf.clear();
            buf.extend(row.iter().map(|v| v.to_string()));
            buf.push(label.to_string());
            w.write_record(&buf)?;
        }
        w.into_inner().map_err(|e| Error::Data(e.to_string()))
    }

    pub fn from_csv(bytes: &[u8], classes: Option<Vec<String>>) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.last().map(String::as_str) != Some("label") || header.len() < 2 {
            return Err(Error::Data("encoded CSV must end with a `label` column".into()));
        }
        let feature_names = header[..header.len() - 1].to_vec();
        let f = feature_names.len();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let row_err = |detail: String| Error::Row { row: i + 1, detail };
            if rec.len() != f + 1 {
                return Err(row_err(format!("expected {} cells, found {}", f + 1, rec.len())));
            }
            for (j, cell) in rec.iter().take(f).enumerate() {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| row_err(format!("column {}: cannot parse {cell:?}", feature_names[j])))?;
                data.push(v);
            }
            labels.push(
                rec[f]
                    .parse::<usize>()
                    .map_err(|_| row_err(format!("label {:?} is not a class index", &rec[f])))?,
            );
        }
        if labels.is_empty() {
            return Err(Error::Data("encoded CSV has no rows".into()));
        }
        let n_classes = labels.iter().max().unwrap() + 1;
        let classes = match classes {
            Some(c) if c.len() >= n_classes => c,
            Some(c) => {
                return Err(Error::Data(format!(
                    "label index {} outside the {} classes of the sidecar",
                    n_classes - 1,
                    c.len()
                )))
            }
            None => (0..n_classes.max(2)).map(|c| format!("class{c}")).collect(),
        };
        Ok(EncodedDataset {
            features: Tensor::new(vec![labels.len(), f], data)?,
            labels,
            groups: EncodedDataset::groups_from_names(&feature_names),
            feature_names,
            classes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EncodedDataset {
        let names: Vec<String> = ["a", "p=tcp", "p=udp"].iter().map(|s| s.to_string()).collect();
        EncodedDataset {
            features: Tensor::new(vec![2, 3], vec![0.1, 1.0, 0.0, 1.0 / 3.0, 0.0, 1.0]).unwrap(),
            labels: vec![1, 0],
            groups: EncodedDataset::groups_from_names(&names),
            feature_names: names,
            classes: vec!["normal".into(), "attack".into()],
        }
    }

    #[test]
    fn binary_round_trip() {
        let ds = sample();
        let bytes = ds.to_binary().unwrap();
        assert_eq!(EncodedDataset::from_binary(&bytes).unwrap(), ds);
        let mut corrupt = bytes.clone();
        let mid = corrupt.len() / 2;
        corrupt[mid] ^= 1;
        assert!(EncodedDataset::from_binary(&corrupt).is_err());
        assert!(EncodedDataset::from_binary(&bytes[..bytes.len() - 5]).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = sample();
        let back = EncodedDataset::from_csv(&ds.to_csv().unwrap(), Some(ds.classes.clone())).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn files_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample();
        for name in ["d.csv", "d.dnet"] {
            let path = dir.path().join(name);
            ds.save(&path, DataFormat::from_path(&path), None).unwrap();
            assert_eq!(EncodedDataset::load(&path).unwrap().features, ds.features);
        }
    }
}
