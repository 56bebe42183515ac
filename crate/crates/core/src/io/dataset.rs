use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;

use super::{
    create_dir, f64s_to_le, labels_text, le_to_f64s, parse_labels, read_bytes, read_string, write_file, KeyValues,
    FORMAT_VERSION,
};
use crate::data::{MultiSubjectDataset, SubjectDataset, SubjectId};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Payload {
    /// Raw little-endian f64 rows plus a labels file.
    #[default]
    Binary,
    /// `label,x0,...` rows with shortest-round-trip decimals.
    Csv,
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Payload::Binary => "binary",
            Payload::Csv => "csv",
        })
    }
}

impl FromStr for Payload {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Payload::Binary),
            "csv" => Ok(Payload::Csv),
            _ => Err(Error::invalid(format!("unknown payload {s:?} (expected binary or csv)"))),
        }
    }
}

/// Descriptive metadata stored next to the data.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    /// (channels, timepoints) with channels·timepoints = d.
    pub factorization: Option<(usize, usize)>,
    /// Free-text epoch window description.
    pub window: Option<String>,
    pub prefiltered: bool,
    pub payload: Payload,
}

impl Default for DatasetMeta {
    fn default() -> Self {
        DatasetMeta {
            factorization: None,
            window: None,
            prefiltered: true,
            payload: Payload::Binary,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestSubject {
    pub id: SubjectId,
    pub file: String,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub d: usize,
    pub subjects: Vec<ManifestSubject>,
    pub meta: DatasetMeta,
    pub fingerprint: String,
}

impl DatasetManifest {
    fn to_kv(&self, path: &Path) -> KeyValues {
        let mut kv = KeyValues::new(path);
        kv.push("format_version", self.format_version);
        kv.push("d", self.d);
        kv.push("payload", self.meta.payload);
        if let Some((c, t)) = self.meta.factorization {
            kv.push("channels", c);
            kv.push("timepoints", t);
        }
        if let Some(w) = &self.meta.window {
            kv.push("window", w);
        }
        kv.push("prefiltered", self.meta.prefiltered);
        kv.push("fingerprint", &self.fingerprint);
        for s in &self.subjects {
            kv.push("subject", format!("{},{},{}", s.id, s.file, s.trials));
        }
        kv
    }

    fn from_kv(kv: &KeyValues) -> Result<Self> {
        let format_version: u32 = kv.parse_value("format_version")?;
        if format_version != FORMAT_VERSION {
            return Err(kv.err(format!(
                "unsupported format_version {format_version} (this build reads {FORMAT_VERSION})"
            )));
        }
        let d: usize = kv.parse_value("d")?;
        if d == 0 {
            return Err(kv.err("d must be >= 1"));
        }
        let factorization = match (kv.parse_opt::<usize>("channels")?, kv.parse_opt::<usize>("timepoints")?) {
            (Some(c), Some(t)) => {
                if c.checked_mul(t) != Some(d) {
                    return Err(kv.err(format!("channels*timepoints = {c}*{t} does not equal d = {d}")));
                }
                Some((c, t))
            }
            (None, None) => None,
            _ => return Err(kv.err("channels and timepoints must be given together")),
        };
        let payload: Payload = kv.parse_value("payload")?;
        let prefiltered = kv.parse_opt::<bool>("prefiltered")?.unwrap_or(true);
        let subjects = kv
            .all("subject")
            .map(|line| {
                let parts: Vec<&str> = line.split(',').map(str::trim).collect();
                let [id, file, trials] = parts[..] else {
                    return Err(kv.err(format!("subject entry {line:?}: expected id,file,trials")));
                };
                Ok(ManifestSubject {
                    id: id
                        .parse()
                        .map_err(|_| kv.err(format!("subject entry {line:?}: bad id")))?,
                    file: file.to_string(),
                    trials: trials
                        .parse()
                        .map_err(|_| kv.err(format!("subject entry {line:?}: bad trial count")))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if subjects.is_empty() {
            return Err(kv.err("no subject entries"));
        }
        Ok(DatasetManifest {
            format_version,
            d,
            subjects,
            meta: DatasetMeta {
                factorization,
                window: kv.get("window").map(str::to_string),
                prefiltered,
                payload,
            },
            fingerprint: kv.require("fingerprint")?.to_string(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub dataset: MultiSubjectDataset,
    pub manifest: DatasetManifest,
    /// False when the recomputed fingerprint differs from the manifest.
    pub fingerprint_matches: bool,
}

fn labels_file(data_file: &str) -> String {
    let stem = data_file.rsplit_once('.').map_or(data_file, |(s, _)| s);
    format!("{stem}.labels")
}

/// Writes `dataset` into `dir` (created if needed) and returns the manifest.
pub fn save_dataset(dataset: &MultiSubjectDataset, dir: &Path, meta: &DatasetMeta) -> Result<DatasetManifest> {
    if let Some((c, t)) = meta.factorization {
        if c.checked_mul(t) != Some(dataset.d()) {
            return Err(Error::invalid(format!(
                "factorization {c}x{t} does not match d = {}",
                dataset.d()
            )));
        }
    }
    if meta.window.as_deref().is_some_and(|w| w.contains('\n')) {
        return Err(Error::invalid("window description must be a single line"));
    }
    create_dir(dir)?;
    let mut subjects = Vec::with_capacity(dataset.subjects().len());
    for s in dataset.subjects() {
        let file = match meta.payload {
            Payload::Binary => {
                let file = format!("subject_{}.f64", s.subject_id());
                let bytes = f64s_to_le(s.trials().iter().flat_map(|t| t.features.iter().copied()));
                write_file(&dir.join(&file), &bytes)?;
                write_file(&dir.join(labels_file(&file)), labels_text(&s.labels()).as_bytes())?;
                file
            }
            Payload::Csv => {
                let file = format!("subject_{}.csv", s.subject_id());
                write_file(&dir.join(&file), subject_csv(s).as_bytes())?;
                file
            }
        };
        subjects.push(ManifestSubject {
            id: s.subject_id(),
            file,
            trials: s.len(),
        });
    }
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        d: dataset.d(),
        subjects,
        meta: meta.clone(),
        fingerprint: dataset.fingerprint(),
    };
    let path = dir.join(MANIFEST_FILE);
    manifest.to_kv(&path).write(&path)?;
    Ok(manifest)
}

fn subject_csv(s: &SubjectDataset) -> String {
    let mut out = String::from("label");
    for j in 0..s.d() {
        out.push_str(&format!(",x{j}"));
    }
    out.push('\n');
    for t in s.trials() {
        out.push_str(if t.label == 0 { "0" } else { "1" });
        for v in &t.features {
            out.push_str(&format!(",{v:?}"));
        }
        out.push('\n');
    }
    out
}

fn read_subject(dir: &Path, entry: &ManifestSubject, d: usize, payload: Payload) -> Result<SubjectDataset> {
    let path = dir.join(&entry.file);
    let (values, labels) = match payload {
        Payload::Binary => {
            let values = le_to_f64s(&path, &read_bytes(&path)?)?;
            let lpath = dir.join(labels_file(&entry.file));
            let labels = parse_labels(&lpath, &read_string(&lpath)?)?;
            (values, labels)
        }
        Payload::Csv => read_csv_rows(&path, d)?,
    };
    if values.len() != entry.trials * d {
        return Err(Error::format(
            &path,
            format!(
                "expected {} trials of dimension {d}, found {} values",
                entry.trials,
                values.len()
            ),
        ));
    }
    if labels.len() != entry.trials {
        return Err(Error::format(
            &path,
            format!("expected {} labels, found {}", entry.trials, labels.len()),
        ));
    }
    let rows: Vec<Vec<f64>> = if d == 0 {
        Vec::new()
    } else {
        values.chunks_exact(d).map(<[f64]>::to_vec).collect()
    };
    SubjectDataset::from_rows(entry.id, rows, &labels)
}

fn read_csv_rows(path: &Path, d: usize) -> Result<(Vec<f64>, Vec<u8>)> {
    let text = read_string(path)?;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let mut cells = line.split(',');
        let label = match cells.next().map(str::trim) {
            Some("0") => 0,
            Some("1") => 1,
            other => return Err(Error::format(path, format!("line {}: bad label {other:?}", n + 1))),
        };
        let before = values.len();
        for c in cells {
            values.push(
                c.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?,
            );
        }
        if values.len() - before != d {
            return Err(Error::format(
                path,
                format!("line {}: expected {d} features, found {}", n + 1, values.len() - before),
            ));
        }
        labels.push(label);
    }
    Ok((values, labels))
}

/// Reads and validates a dataset directory. A fingerprint mismatch is
/// reported through [`LoadedDataset::fingerprint_matches`], not as an error.
pub fn load_dataset(dir: &Path) -> Result<LoadedDataset> {
    let path: PathBuf = dir.join(MANIFEST_FILE);
    let manifest = DatasetManifest::from_kv(&KeyValues::read(&path)?)?;
    let subjects = manifest
        .subjects
        .iter()
        .map(|e| read_subject(dir, e, manifest.d, manifest.meta.payload).map_err(|err| err.for_subject(e.id)))
        .collect::<Result<Vec<_>>>()?;
    let dataset = MultiSubjectDataset::new(subjects)?;
    let fingerprint_matches = dataset.fingerprint() == manifest.fingerprint;
    if !fingerprint_matches {
        warn!(
            "{}: fingerprint mismatch (manifest {}, data {})",
            path.display(),
            manifest.fingerprint,
            dataset.fingerprint()
        );
    }
    Ok(LoadedDataset {
        dataset,
        manifest,
        fingerprint_matches,
    })
}
