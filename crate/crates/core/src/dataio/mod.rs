//! Exam files, reliability filtering, patient-grouped splits, MD buckets
//! and the synthetic generator.
//!
//! Exams are exchanged as JSON lines. Every line is one object:
//!
//! ```json
//! {"schema_version": 1, "patient_id": "P000001", "eye": "right", "age": 63.0,
//!  "sdoct_date": "2014-03-02", "sap_date": "2014-04-11", "quality_score": 27.5,
//!  "fixation_loss_pct": 6.0, "false_positive_pct": 2.0,
//!  "rnfl": [768 values], "td": [52 values], "md": -3.1, "psd": 2.4}
//! ```
//!
//! RNFL values are micrometres in TSNIT order and TD values are dB in
//! canonical location order with the blind-spot points already removed.
//! Left eyes are expected to be mirrored into right-eye orientation
//! upstream.

mod filter;
mod split;
pub mod synth;

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::grid::NUM_LOCATIONS;

pub use filter::{reliability_filter, RejectReason, Rejected};
pub use split::{split_by_patient, Split, SplitStats, SplitName};
pub use synth::{synth_generate, SynthConfig};

pub const SCHEMA_VERSION: u64 = 1;
pub const RNFL_LENGTH: usize = 768;
/// Plausible range for total-deviation values, in dB.
pub const TD_RANGE: (f64, f64) = (-40.0, 10.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Eye {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedExam {
    pub patient_id: String,
    pub eye: Eye,
    pub age: f64,
    pub sdoct_date: NaiveDate,
    pub sap_date: NaiveDate,
    pub quality_score: f64,
    pub fixation_loss_pct: f64,
    pub false_positive_pct: f64,
    pub rnfl: Vec<f64>,
    pub td: Vec<f64>,
    pub md: f64,
    pub psd: f64,
}

impl PairedExam {
    /// Days between the two tests.
    pub fn date_gap_days(&self) -> i64 {
        (self.sdoct_date - self.sap_date).num_days().abs()
    }

    pub fn interval(&self) -> Result<MdInterval> {
        assign_interval(self.md)
    }

    pub fn group(&self) -> Result<DiseaseGroup> {
        assign_group(self.md)
    }

    fn to_json(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("schema_version".into(), SCHEMA_VERSION.into());
        let Value::Object(fields) = serde_json::to_value(self).expect("exam serializes") else {
            unreachable!()
        };
        obj.extend(fields);
        Value::Object(obj)
    }
}

/// Training-weight buckets of mean deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MdInterval {
    /// md > −6
    I1,
    /// −6 ≥ md > −16
    I2,
    /// −16 ≥ md ≥ −26
    I3,
    /// md < −26
    I4,
}

impl MdInterval {
    pub const ALL: [MdInterval; 4] = [MdInterval::I1, MdInterval::I2, MdInterval::I3, MdInterval::I4];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Evaluation groups of mean deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiseaseGroup {
    /// md > −6
    Early,
    /// −12 < md ≤ −6
    Moderate,
    /// md ≤ −12
    Advanced,
}

impl DiseaseGroup {
    pub const ALL: [DiseaseGroup; 3] = [DiseaseGroup::Early, DiseaseGroup::Moderate, DiseaseGroup::Advanced];

    pub fn as_str(self) -> &'static str {
        match self {
            DiseaseGroup::Early => "early",
            DiseaseGroup::Moderate => "moderate",
            DiseaseGroup::Advanced => "advanced",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

fn check_md(md: f64) -> Result<()> {
    if md.is_finite() {
        Ok(())
    } else {
        Err(Error::data(format!("mean deviation {md} is not finite")))
    }
}

pub fn assign_interval(md: f64) -> Result<MdInterval> {
    check_md(md)?;
    Ok(if md > -6.0 {
        MdInterval::I1
    } else if md > -16.0 {
        MdInterval::I2
    } else if md >= -26.0 {
        MdInterval::I3
    } else {
        MdInterval::I4
    })
}

pub fn assign_group(md: f64) -> Result<DiseaseGroup> {
    check_md(md)?;
    Ok(if md > -6.0 {
        DiseaseGroup::Early
    } else if md > -12.0 {
        DiseaseGroup::Moderate
    } else {
        DiseaseGroup::Advanced
    })
}

/// Exams per training interval.
pub fn interval_counts(exams: &[PairedExam]) -> Result<[usize; 4]> {
    let mut counts = [0; 4];
    for e in exams {
        counts[e.interval()?.index()] += 1;
    }
    Ok(counts)
}

fn parse_err(line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn get<'a>(obj: &'a Map<String, Value>, line: usize, field: &str) -> Result<&'a Value> {
    obj.get(field).ok_or_else(|| parse_err(line, field, "missing field"))
}

fn get_f64(obj: &Map<String, Value>, line: usize, field: &str) -> Result<f64> {
    let v = get(obj, line, field)?
        .as_f64()
        .ok_or_else(|| parse_err(line, field, "expected a number"))?;
    if !v.is_finite() {
        return Err(parse_err(line, field, "value is not finite"));
    }
    Ok(v)
}

fn get_str<'a>(obj: &'a Map<String, Value>, line: usize, field: &str) -> Result<&'a str> {
    get(obj, line, field)?
        .as_str()
        .ok_or_else(|| parse_err(line, field, "expected a string"))
}

fn get_date(obj: &Map<String, Value>, line: usize, field: &str) -> Result<NaiveDate> {
    let s = get_str(obj, line, field)?;
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|e| parse_err(line, field, format!("invalid ISO-8601 date `{s}`: {e}")))
}

fn get_array(obj: &Map<String, Value>, line: usize, field: &str, len: usize, hint: &str) -> Result<Vec<f64>> {
    let arr = get(obj, line, field)?
        .as_array()
        .ok_or_else(|| parse_err(line, field, "expected an array"))?;
    if arr.len() != len {
        return Err(parse_err(
            line,
            field,
            format!("expected {len} values, found {}{hint}", arr.len()),
        ));
    }
    arr.iter()
        .enumerate()
        .map(|(i, v)| match v.as_f64() {
            Some(x) if x.is_finite() => Ok(x),
            _ => Err(parse_err(line, field, format!("element {i} is not a finite number"))),
        })
        .collect()
}

/// Parses and validates one JSON object; `line` is 1-based and only used
/// in error messages.
pub fn parse_exam_line(text: &str, line: usize) -> Result<PairedExam> {
    let value: Value = serde_json::from_str(text).map_err(|e| parse_err(line, "<record>", e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| parse_err(line, "<record>", "expected a JSON object"))?;
    let version = get(obj, line, "schema_version")?
        .as_u64()
        .ok_or_else(|| parse_err(line, "schema_version", "expected an integer"))?;
    if version != SCHEMA_VERSION {
        return Err(parse_err(
            line,
            "schema_version",
            format!("unsupported version {version}, expected {SCHEMA_VERSION}"),
        ));
    }
    let eye = match get_str(obj, line, "eye")? {
        "left" => Eye::Left,
        "right" => Eye::Right,
        other => return Err(parse_err(line, "eye", format!("expected left or right, got `{other}`"))),
    };
    let rnfl = get_array(obj, line, "rnfl", RNFL_LENGTH, "")?;
    if let Some(i) = rnfl.iter().position(|&v| v < 0.0) {
        return Err(parse_err(line, "rnfl", format!("element {i} is negative")));
    }
    let td = get_array(
        obj,
        line,
        "td",
        NUM_LOCATIONS,
        "; the two blind-spot points must be excluded",
    )?;
    if let Some(i) = td.iter().position(|&v| v < TD_RANGE.0 || v > TD_RANGE.1) {
        return Err(parse_err(
            line,
            "td",
            format!("element {i} = {} outside [{}, {}] dB", td[i], TD_RANGE.0, TD_RANGE.1),
        ));
    }
    let patient_id = get_str(obj, line, "patient_id")?.to_string();
    if patient_id.is_empty() {
        return Err(parse_err(line, "patient_id", "must not be empty"));
    }
    Ok(PairedExam {
        patient_id,
        eye,
        age: get_f64(obj, line, "age")?,
        sdoct_date: get_date(obj, line, "sdoct_date")?,
        sap_date: get_date(obj, line, "sap_date")?,
        quality_score: get_f64(obj, line, "quality_score")?,
        fixation_loss_pct: get_f64(obj, line, "fixation_loss_pct")?,
        false_positive_pct: get_f64(obj, line, "false_positive_pct")?,
        rnfl,
        td,
        md: get_f64(obj, line, "md")?,
        psd: get_f64(obj, line, "psd")?,
    })
}

/// Reads a JSON-lines exam file. Blank lines are skipped.
pub fn parse_exams(path: &Path) -> Result<Vec<PairedExam>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut exams = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        exams.push(parse_exam_line(&line, i + 1)?);
    }
    Ok(exams)
}

pub fn write_exams_to(mut out: impl Write, exams: &[PairedExam]) -> std::io::Result<()> {
    for e in exams {
        serde_json::to_writer(&mut out, &e.to_json())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_exams(path: &Path, exams: &[PairedExam]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_exams_to(&mut w, exams)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
