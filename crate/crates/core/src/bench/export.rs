use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{sort_records, StudyRecord, WorkPrecisionRecord};
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "system,method,solver,setting,n_fcalls,mse,wall_time_s,seed";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Jsonl,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "jsonl" => Ok(ExportFormat::Jsonl),
            other => Err(Error::InvalidArgument(format!("unknown export format `{other}`"))),
        }
    }
}

/// Non-finite floats travel as the strings `inf`, `-inf` and `NaN`, so that
/// JSON can carry them too.
pub(crate) mod float_or_inf {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    struct FloatVisitor;

    impl Visitor<'_> for FloatVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a number or `inf`")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            v.parse().map_err(|_| E::custom(format!("bad float `{v}`")))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(FloatVisitor)
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// CSV text with the fixed header, rows sorted.
pub fn to_csv(records: &[WorkPrecisionRecord]) -> Result<String> {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(',')).map_err(csv_error)?;
    for r in &sorted {
        w.serialize(r).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn parse_csv(text: &str) -> Result<Vec<WorkPrecisionRecord>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(csv_error)?.iter().map(String::from).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Format(format!("unexpected header `{}`", header.join(","))));
    }
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}

/// One JSON object per line, rows sorted.
pub fn to_jsonl(records: &[WorkPrecisionRecord]) -> Result<String> {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut out = String::new();
    for r in &sorted {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_jsonl(text: &str) -> Result<Vec<WorkPrecisionRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Format(format!("jsonl: {e}"))))
        .collect()
}

pub fn write_records(records: &[WorkPrecisionRecord], path: impl AsRef<Path>, format: ExportFormat) -> Result<()> {
    let text = match format {
        ExportFormat::Csv => to_csv(records)?,
        ExportFormat::Jsonl => to_jsonl(records)?,
    };
    fs::write(path, text)?;
    Ok(())
}

pub fn read_records(path: impl AsRef<Path>, format: ExportFormat) -> Result<Vec<WorkPrecisionRecord>> {
    let text = fs::read_to_string(path)?;
    match format {
        ExportFormat::Csv => parse_csv(&text),
        ExportFormat::Jsonl => parse_jsonl(&text),
    }
}

pub fn write_study_csv(records: &[StudyRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in records {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}
