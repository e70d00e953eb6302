//! CSV and JSON dataset formats.
//!
//! CSV: header `window_id,subject_id,label,sample_rate_hz,modality,idx,value`,
//! one row per sample, empty `label` for unlabeled windows.
//!
//! JSON: an array of window objects
//! `{window_id, subject_id, label, sample_rate_hz, channels: {ACC: [...], ...}}`,
//! written one window per line.
//!
//! Floats are written in shortest round-trip form, so `load(save(d)) == d`
//! bit for bit and `save(load(f))` reproduces `f` byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::Deserialize;

use super::{Channels, Dataset, Modality, MultimodalWindow, Split};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 7] =
    ["window_id", "subject_id", "label", "sample_rate_hz", "modality", "idx", "value"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Json,
}

impl DataFormat {
    pub fn extension(self) -> &'static str {
        match self {
            DataFormat::Csv => "csv",
            DataFormat::Json => "json",
        }
    }

    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(DataFormat::Csv),
            "json" => Some(DataFormat::Json),
            _ => None,
        }
    }
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "json" => Ok(DataFormat::Json),
            other => Err(Error::InvalidConfig(format!("unknown data format `{other}`"))),
        }
    }
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>, format: DataFormat) -> Result<()> {
    let text = match format {
        DataFormat::Csv => to_csv(ds.windows())?,
        DataFormat::Json => to_json(ds.windows())?,
    };
    fs::write(path, text)?;
    Ok(())
}

pub fn load_windows(path: impl AsRef<Path>, format: DataFormat) -> Result<Vec<MultimodalWindow>> {
    let text = fs::read_to_string(path)?;
    match format {
        DataFormat::Csv => from_csv(&text),
        DataFormat::Json => from_json(&text),
    }
}

pub fn load_dataset(
    path: impl AsRef<Path>,
    format: DataFormat,
    split: Split,
    class_names: Vec<String>,
) -> Result<Dataset> {
    Dataset::new(load_windows(path, format)?, split, class_names)
}

fn to_csv(windows: &[MultimodalWindow]) -> Result<String> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(vec![]);
    wtr.write_record(CSV_HEADER)?;
    for w in windows {
        let label = w.label().map(|l| l.to_string()).unwrap_or_default();
        let rate = w.sample_rate_hz().to_string();
        for (m, xs) in w.channels() {
            for (i, x) in xs.iter().enumerate() {
                wtr.write_record([
                    w.window_id(),
                    w.subject_id(),
                    &label,
                    &rate,
                    m.tag(),
                    &i.to_string(),
                    &x.to_string(),
                ])?;
            }
        }
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

struct PartialWindow {
    subject_id: String,
    label: Option<usize>,
    rate: f64,
    channels: BTreeMap<Modality, BTreeMap<usize, f64>>,
}

fn parse_field<T: FromStr>(rec: &csv::StringRecord, idx: usize, line: u64) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = rec.get(idx).unwrap_or("");
    raw.parse::<T>().map_err(|e| Error::Parse {
        line,
        field: CSV_HEADER[idx].to_string(),
        msg: format!("`{raw}`: {e}"),
    })
}

fn from_csv(text: &str) -> Result<Vec<MultimodalWindow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::SchemaMismatch(format!(
            "expected CSV header `{}`, got `{}`",
            CSV_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut partial: IndexMap<String, PartialWindow> = IndexMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != CSV_HEADER.len() {
            return Err(Error::Parse {
                line,
                field: "record".into(),
                msg: format!("expected {} fields, got {}", CSV_HEADER.len(), rec.len()),
            });
        }
        let window_id = rec[0].to_string();
        let subject_id = rec[1].to_string();
        let label = if rec[2].is_empty() { None } else { Some(parse_field::<usize>(&rec, 2, line)?) };
        let rate: f64 = parse_field(&rec, 3, line)?;
        let modality = Modality::from_str(&rec[4]).map_err(|e| Error::Parse {
            line,
            field: "modality".into(),
            msg: e.to_string(),
        })?;
        let idx: usize = parse_field(&rec, 5, line)?;
        let value: f64 = parse_field(&rec, 6, line)?;
        let entry = partial.entry(window_id.clone()).or_insert_with(|| PartialWindow {
            subject_id: subject_id.clone(),
            label,
            rate,
            channels: BTreeMap::new(),
        });
        if entry.subject_id != subject_id || entry.label != label || entry.rate.to_bits() != rate.to_bits() {
            return Err(Error::Parse {
                line,
                field: "window_id".into(),
                msg: format!("window `{window_id}` has inconsistent metadata across rows"),
            });
        }
        if entry.channels.entry(modality).or_default().insert(idx, value).is_some() {
            return Err(Error::Parse {
                line,
                field: "idx".into(),
                msg: format!("duplicate sample {idx} for {modality} in window `{window_id}`"),
            });
        }
    }
    partial
        .into_iter()
        .map(|(id, p)| {
            let mut channels = Channels::new();
            for (m, samples) in p.channels {
                let n = samples.len();
                if samples.keys().copied().ne(0..n) {
                    return Err(Error::SchemaMismatch(format!(
                        "window `{id}` channel {m} has non-contiguous sample indices"
                    )));
                }
                channels.insert(m, samples.into_values().collect());
            }
            MultimodalWindow::new(id, p.subject_id, p.label, p.rate, channels)
        })
        .collect()
}

fn to_json(windows: &[MultimodalWindow]) -> Result<String> {
    let mut out = String::from("[");
    for (i, w) in windows.iter().enumerate() {
        out.push_str(if i == 0 { "\n" } else { ",\n" });
        out.push_str(&serde_json::to_string(w)?);
    }
    out.push_str("\n]\n");
    Ok(out)
}

#[derive(Deserialize)]
struct RawWindow {
    window_id: Option<String>,
    subject_id: Option<String>,
    #[serde(default)]
    label: Option<usize>,
    sample_rate_hz: Option<f64>,
    channels: Option<BTreeMap<String, Vec<f64>>>,
}

fn from_json(text: &str) -> Result<Vec<MultimodalWindow>> {
    let raw: Vec<RawWindow> = serde_json::from_str(text)?;
    raw.into_iter()
        .enumerate()
        .map(|(i, r)| {
            let missing = |f: &str| Error::SchemaMismatch(format!("window #{i}: missing field `{f}`"));
            let window_id = r.window_id.ok_or_else(|| missing("window_id"))?;
            let subject_id = r.subject_id.ok_or_else(|| missing("subject_id"))?;
            let rate = r.sample_rate_hz.ok_or_else(|| missing("sample_rate_hz"))?;
            let raw_channels = r.channels.ok_or_else(|| missing("channels"))?;
            let mut channels = Channels::new();
            for (tag, xs) in raw_channels {
                channels.insert(Modality::from_str(&tag)?, xs);
            }
            MultimodalWindow::new(window_id, subject_id, r.label, rate, channels)
        })
        .collect()
}
