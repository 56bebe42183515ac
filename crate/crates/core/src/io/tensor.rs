use std::path::{Path, PathBuf};

use log::warn;

use super::{f64s_to_le, labels_text, le_to_f64s, parse_labels, read_bytes, read_string, write_file, KeyValues};
use crate::data::{MultiSubjectDataset, SubjectDataset, SubjectId};
use crate::error::{Error, Result};

const ORDER: &str = "trial,channel,timepoint";

/// One subject's epoched recording, trials × channels × timepoints,
/// stored trial-major then channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochedTensor {
    pub subject_id: SubjectId,
    pub trials: usize,
    pub channels: usize,
    pub timepoints: usize,
    pub data: Vec<f64>,
    pub labels: Vec<u8>,
}

impl EpochedTensor {
    pub fn new(
        subject_id: SubjectId,
        shape: (usize, usize, usize),
        data: Vec<f64>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let (trials, channels, timepoints) = shape;
        let expected = trials
            .checked_mul(channels)
            .and_then(|v| v.checked_mul(timepoints))
            .ok_or_else(|| Error::invalid("tensor shape overflows"))?;
        if data.len() != expected {
            return Err(Error::invalid(format!(
                "tensor shape {trials}x{channels}x{timepoints} needs {expected} values, got {}",
                data.len()
            )));
        }
        if labels.len() != trials {
            return Err(Error::invalid(format!("{} labels for {trials} trials", labels.len())));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::invalid(format!("label {l} is not 0 or 1")));
        }
        Ok(EpochedTensor {
            subject_id,
            trials,
            channels,
            timepoints,
            data,
            labels,
        })
    }

    pub fn get(&self, trial: usize, channel: usize, timepoint: usize) -> f64 {
        self.data[(trial * self.channels + channel) * self.timepoints + timepoint]
    }
}

/// Block-means `decimate` consecutive timepoints, then concatenates
/// channels: feature `c * t' + j` is channel `c`, decimated sample `j`.
/// Trailing timepoints that do not fill a block are dropped.
pub fn vectorize(tensor: &EpochedTensor, decimate: usize) -> Result<SubjectDataset> {
    if decimate == 0 || decimate > tensor.timepoints {
        return Err(Error::invalid(format!(
            "decimate must be in 1..={}, got {decimate}",
            tensor.timepoints
        )));
    }
    let tp = tensor.timepoints / decimate;
    let dropped = tensor.timepoints % decimate;
    if dropped > 0 {
        warn!(
            "subject {}: dropping {dropped} trailing timepoint(s) not divisible by decimate={decimate}",
            tensor.subject_id
        );
    }
    let d = tensor.channels * tp;
    let scale = 1.0 / decimate as f64;
    let rows = (0..tensor.trials)
        .map(|i| {
            let mut row = Vec::with_capacity(d);
            for c in 0..tensor.channels {
                let base = (i * tensor.channels + c) * tensor.timepoints;
                let series = &tensor.data[base..base + tp * decimate];
                row.extend(series.chunks_exact(decimate).map(|b| {
                    if decimate == 1 {
                        b[0]
                    } else {
                        b.iter().sum::<f64>() * scale
                    }
                }));
            }
            row
        })
        .collect();
    SubjectDataset::from_rows(tensor.subject_id, rows, &tensor.labels)
}

/// Writes `<name>.hdr`, `<name>.f64` and `<name>.labels` into `dir`.
pub fn write_tensor(dir: &Path, name: &str, tensor: &EpochedTensor) -> Result<PathBuf> {
    let hdr = dir.join(format!("{name}.hdr"));
    let mut kv = KeyValues::new(&hdr);
    kv.push("subject", tensor.subject_id);
    kv.push("trials", tensor.trials);
    kv.push("channels", tensor.channels);
    kv.push("timepoints", tensor.timepoints);
    kv.push("order", ORDER);
    kv.push("data", format!("{name}.f64"));
    kv.push("labels", format!("{name}.labels"));
    write_file(&dir.join(format!("{name}.f64")), &f64s_to_le(tensor.data.iter().copied()))?;
    write_file(&dir.join(format!("{name}.labels")), labels_text(&tensor.labels).as_bytes())?;
    kv.write(&hdr)?;
    Ok(hdr)
}

/// Reads a tensor from its header file; payload paths are relative to it.
pub fn read_tensor(header: &Path) -> Result<EpochedTensor> {
    let kv = KeyValues::read(header)?;
    let dir = header.parent().unwrap_or(Path::new("."));
    if let Some(order) = kv.get("order") {
        if order != ORDER {
            return Err(kv.err(format!("unsupported order {order:?} (expected {ORDER})")));
        }
    }
    let shape = (
        kv.parse_value::<usize>("trials")?,
        kv.parse_value::<usize>("channels")?,
        kv.parse_value::<usize>("timepoints")?,
    );
    let data_path = dir.join(kv.require("data")?);
    let data = le_to_f64s(&data_path, &read_bytes(&data_path)?)?;
    let labels_path = dir.join(kv.require("labels")?);
    let labels = parse_labels(&labels_path, &read_string(&labels_path)?)?;
    let subject = kv.parse_value::<SubjectId>("subject")?;
    EpochedTensor::new(subject, shape, data, labels).map_err(|e| kv.err(e.to_string()))
}

/// Vectorizes every `*.hdr` tensor in `dir` (sorted by file name).
/// Returns the dataset and its (channels, decimated timepoints) shape.
pub fn ingest_dir(dir: &Path, decimate: usize) -> Result<(MultiSubjectDataset, (usize, usize))> {
    let mut headers: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "hdr"))
        .collect();
    headers.sort();
    if headers.is_empty() {
        return Err(Error::invalid(format!("no .hdr tensor headers in {}", dir.display())));
    }
    let mut shape = None;
    let mut subjects = Vec::with_capacity(headers.len());
    for h in &headers {
        let t = read_tensor(h)?;
        let this = (t.channels, t.timepoints / decimate.max(1));
        match shape {
            None => shape = Some(this),
            Some(s) if s != this => {
                return Err(Error::format(
                    h,
                    format!("shape {}x{} differs from earlier tensors ({}x{})", this.0, this.1, s.0, s.1),
                ))
            }
            _ => {}
        }
        subjects.push(vectorize(&t, decimate).map_err(|e| e.for_subject(t.subject_id))?);
    }
    Ok((MultiSubjectDataset::new(subjects)?, shape.expect("at least one header")))
}
