use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{create_dir, read_string, write_file, KeyValues, FORMAT_VERSION};
use crate::data::SubjectId;
use crate::decoders::{DecoderMeta, DecoderModel, FittedDecoder, Method, WeightsSummary};
use crate::error::{Error, Result};
use crate::glm::LinearModel;
use crate::shift::ImportanceWeights;
use crate::stacking::{FirstLevelBank, FoldModel, StackedModel, SubjectModels};
use crate::synth::SubjectParams;

const STACKED_MANIFEST: &str = "stacked.txt";
const DECODER_MANIFEST: &str = "decoder.txt";

fn write_model(path: &Path, m: &LinearModel) -> Result<()> {
    write_file(path, m.to_text().as_bytes())
}

fn read_model(path: &Path, d: usize) -> Result<LinearModel> {
    let m = LinearModel::from_text(&read_string(path)?).map_err(|e| Error::format(path, e.to_string()))?;
    if m.dim() != d {
        return Err(Error::format(path, format!("model has {} coefficients, expected {d}", m.dim())));
    }
    Ok(m)
}

fn floats_text(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
}

fn parse_floats(path: &Path, line: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| Error::format(path, format!("bad number {t:?}: {e}")))
        })
        .collect()
}

/// Writes `params_<id>.txt`: a `subject=`/`d=` header, then the d×d
/// transform one row per line, then the shift vector on one line.
pub fn write_params(dir: &Path, params: &[SubjectParams]) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    params
        .iter()
        .map(|p| {
            let path = dir.join(format!("params_{}.txt", p.subject_id));
            let mut s = format!("subject={}\nd={}\ntransform\n", p.subject_id, p.d);
            for row in p.transform.chunks_exact(p.d.max(1)) {
                s.push_str(&floats_text(row));
                s.push('\n');
            }
            s.push_str("shift\n");
            s.push_str(&floats_text(&p.shift));
            s.push('\n');
            write_file(&path, s.as_bytes())?;
            Ok(path)
        })
        .collect()
}

pub fn read_params(path: &Path) -> Result<SubjectParams> {
    let text = read_string(path)?;
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let mut header = |key: &str| -> Result<String> {
        let line = lines.next().unwrap_or_default();
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .map(str::to_string)
            .ok_or_else(|| Error::format(path, format!("expected {key}=..., got {line:?}")))
    };
    let subject_id: SubjectId = header("subject")?
        .parse()
        .map_err(|_| Error::format(path, "bad subject id"))?;
    let d: usize = header("d")?.parse().map_err(|_| Error::format(path, "bad d"))?;
    if lines.next() != Some("transform") {
        return Err(Error::format(path, "expected transform block"));
    }
    let mut transform = Vec::with_capacity(d * d);
    for _ in 0..d {
        let row = parse_floats(path, lines.next().unwrap_or_default())?;
        if row.len() != d {
            return Err(Error::format(path, format!("transform row has {} values, expected {d}", row.len())));
        }
        transform.extend(row);
    }
    if lines.next() != Some("shift") {
        return Err(Error::format(path, "expected shift block"));
    }
    let shift = parse_floats(path, lines.next().unwrap_or_default())?;
    if shift.len() != d {
        return Err(Error::format(path, format!("shift has {} values, expected {d}", shift.len())));
    }
    Ok(SubjectParams {
        subject_id,
        d,
        transform,
        shift,
    })
}

/// Writes the bank, the combiner and a manifest into `dir`.
pub fn save_stacked(model: &StackedModel, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let path = dir.join(STACKED_MANIFEST);
    let bank = &model.bank;
    let mut kv = KeyValues::new(&path);
    kv.push("format_version", FORMAT_VERSION);
    kv.push("k", bank.k);
    kv.push("seed", bank.seed);
    kv.push("d", bank.d);
    kv.push("used_weights", model.used_weights);
    kv.push("combiner", "combiner.txt");
    write_model(&dir.join("combiner.txt"), &model.combiner)?;
    for (sid, sm) in &bank.subjects {
        kv.push("subject", sid);
        write_model(&dir.join(format!("subject_{sid}_full.txt")), &sm.full)?;
        for fm in &sm.folds {
            write_model(&dir.join(format!("subject_{sid}_fold_{}.txt", fm.fold)), &fm.model)?;
        }
        let folds: String = sm.fold_assignment.iter().map(|f| format!("{f}\n")).collect();
        write_file(&dir.join(format!("subject_{sid}_folds.txt")), folds.as_bytes())?;
    }
    if let Some(w) = &model.weights {
        kv.push("weights_clip", format!("{:?},{:?}", w.clip_lo, w.clip_hi));
        kv.push("weights_raw_mean", format!("{:?}", w.raw_mean));
        let text: String = w.weights.iter().map(|v| format!("{v:?}\n")).collect();
        write_file(&dir.join("weights.txt"), text.as_bytes())?;
    }
    kv.write(&path)
}

pub fn load_stacked(dir: &Path) -> Result<StackedModel> {
    let kv = KeyValues::read(&dir.join(STACKED_MANIFEST))?;
    if kv.parse_value::<u32>("format_version")? != FORMAT_VERSION {
        return Err(kv.err("unsupported format_version"));
    }
    let k: usize = kv.parse_value("k")?;
    let seed: u64 = kv.parse_value("seed")?;
    let d: usize = kv.parse_value("d")?;
    let used_weights: bool = kv.parse_value("used_weights")?;
    let ids = kv
        .all("subject")
        .map(|s| s.parse::<SubjectId>().map_err(|_| kv.err(format!("bad subject id {s:?}"))))
        .collect::<Result<Vec<_>>>()?;
    if ids.is_empty() {
        return Err(kv.err("no subjects"));
    }
    let mut subjects = BTreeMap::new();
    for sid in ids {
        let fpath = dir.join(format!("subject_{sid}_folds.txt"));
        let fold_assignment = read_string(&fpath)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.parse::<usize>()
                    .ok()
                    .filter(|&f| f < k)
                    .ok_or_else(|| Error::format(&fpath, format!("bad fold index {l:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let folds = (0..k)
            .map(|f| {
                Ok(FoldModel {
                    fold: f,
                    model: read_model(&dir.join(format!("subject_{sid}_fold_{f}.txt")), d)?,
                    train_indices: fold_assignment
                        .iter()
                        .enumerate()
                        .filter(|&(_, &a)| a != f)
                        .map(|(i, _)| i)
                        .collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let full = read_model(&dir.join(format!("subject_{sid}_full.txt")), d)?;
        subjects.insert(
            sid,
            SubjectModels {
                full,
                folds,
                fold_assignment,
            },
        );
    }
    let n = subjects.len();
    let combiner = read_model(&dir.join(kv.require("combiner")?), n)?;
    let weights = match kv.get("weights_clip") {
        None => None,
        Some(clip) => {
            let (lo, hi) = clip
                .split_once(',')
                .and_then(|(a, b)| Some((a.parse::<f64>().ok()?, b.parse::<f64>().ok()?)))
                .ok_or_else(|| kv.err(format!("bad weights_clip {clip:?}")))?;
            let wpath = dir.join("weights.txt");
            let weights = parse_floats(&wpath, &read_string(&wpath)?)?;
            Some(ImportanceWeights {
                weights,
                clip_lo: lo,
                clip_hi: hi,
                raw_mean: kv.parse_value("weights_raw_mean")?,
            })
        }
    };
    Ok(StackedModel {
        bank: FirstLevelBank { subjects, k, seed, d },
        combiner,
        used_weights,
        weights,
    })
}

/// Writes `decoder.txt` plus the model (`model.txt` or a `stacked/` directory).
pub fn save_decoder(decoder: &FittedDecoder, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let path = dir.join(DECODER_MANIFEST);
    let mut kv = KeyValues::new(&path);
    kv.push("format_version", FORMAT_VERSION);
    kv.push("method", decoder.method);
    let subjects: Vec<String> = decoder.meta.subjects.iter().map(|s| s.to_string()).collect();
    kv.push("subjects", subjects.join(","));
    kv.push("lambda", format!("{:?}", decoder.meta.lambda));
    kv.push("seed", decoder.meta.seed);
    if let Some(w) = decoder.meta.weights {
        kv.push("weights_min", format!("{:?}", w.min));
        kv.push("weights_max", format!("{:?}", w.max));
        kv.push("weights_raw_mean", format!("{:?}", w.raw_mean));
    }
    match &decoder.model {
        DecoderModel::Linear(m) => {
            kv.push("d", m.dim());
            kv.push("model", "model.txt");
            write_model(&dir.join("model.txt"), m)?;
        }
        DecoderModel::Stacked(m) => {
            kv.push("model", "stacked");
            save_stacked(m, &dir.join("stacked"))?;
        }
    }
    kv.write(&path)
}

pub fn load_decoder(dir: &Path) -> Result<FittedDecoder> {
    let kv = KeyValues::read(&dir.join(DECODER_MANIFEST))?;
    if kv.parse_value::<u32>("format_version")? != FORMAT_VERSION {
        return Err(kv.err("unsupported format_version"));
    }
    let method: Method = kv.parse_value("method")?;
    let subjects = kv
        .require("subjects")?
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| s.trim().parse::<SubjectId>().map_err(|_| kv.err(format!("bad subject {s:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let weights = match kv.parse_opt::<f64>("weights_min")? {
        None => None,
        Some(min) => Some(WeightsSummary {
            min,
            max: kv.parse_value("weights_max")?,
            raw_mean: kv.parse_value("weights_raw_mean")?,
        }),
    };
    let model_path = dir.join(kv.require("model")?);
    let model = match method {
        Method::Single | Method::Pool => DecoderModel::Linear(read_model(&model_path, kv.parse_value("d")?)?),
        Method::Sg | Method::SgCs => DecoderModel::Stacked(load_stacked(&model_path)?),
    };
    Ok(FittedDecoder {
        method,
        model,
        meta: DecoderMeta {
            subjects,
            lambda: kv.parse_value("lambda")?,
            weights,
            seed: kv.parse_value("seed")?,
        },
    })
}
