//! On-disk formats: datasets, epoched tensors, generator parameters and
//! fitted models. Manifests are `key=value` text; bulk floats are raw
//! little-endian f64 or shortest-round-trip decimal text.

mod dataset;
mod models;
mod tensor;

pub use dataset::{load_dataset, save_dataset, DatasetManifest, DatasetMeta, LoadedDataset, ManifestSubject, Payload};
pub use models::{
    load_decoder, load_stacked, read_params, save_decoder, save_stacked, write_params,
};
pub use tensor::{ingest_dir, read_tensor, vectorize, write_tensor, EpochedTensor};

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Ordered `key=value` lines. Keys may repeat.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct KeyValues {
    path: PathBuf,
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub(crate) fn new(path: impl Into<PathBuf>) -> Self {
        KeyValues {
            path: path.into(),
            entries: Vec::new(),
        }
    }

    pub(crate) fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut kv = KeyValues::new(path);
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(path, format!("line {}: expected key=value", n + 1)))?;
            kv.entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(kv)
    }

    pub(crate) fn read(path: &Path) -> Result<Self> {
        let text = read_string(path)?;
        KeyValues::parse(path, &text)
    }

    pub(crate) fn push(&mut self, key: &str, value: impl Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub(crate) fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub(crate) fn all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries
            .iter()
            .filter(move |(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub(crate) fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::format(&self.path, format!("missing key {key:?}")))
    }

    pub(crate) fn parse_value<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|e| Error::format(&self.path, format!("bad value for {key}: {raw:?} ({e})")))
    }

    pub(crate) fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(_) => self.parse_value(key).map(Some),
        }
    }

    pub(crate) fn err(&self, msg: impl Into<String>) -> Error {
        Error::format(&self.path, msg)
    }

    pub(crate) fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    pub(crate) fn write(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_text().as_bytes())
    }
}

pub(crate) fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn f64s_to_le(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(f64::to_le_bytes).collect()
}

pub(crate) fn le_to_f64s(path: &Path, bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::format(
            path,
            format!("payload length {} is not a multiple of 8", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// One label per line, each 0 or 1.
pub(crate) fn parse_labels(path: &Path, text: &str) -> Result<Vec<u8>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| match l {
            "0" => Ok(0),
            "1" => Ok(1),
            _ => Err(Error::format(path, format!("label {i}: expected 0 or 1, got {l:?}"))),
        })
        .collect()
}

pub(crate) fn labels_text(labels: &[u8]) -> String {
    let mut s = String::with_capacity(labels.len() * 2);
    for l in labels {
        s.push_str(if *l == 0 { "0\n" } else { "1\n" });
    }
    s
}
