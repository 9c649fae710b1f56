//! CSV and JSON formats for claims, demographics, cohorts and feature sets.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::Path;

use chrono::NaiveDate;
use claimsrisk_core::claims::{merge_demographics, ClaimId, ClaimRecord, ClaimType, EventCode, EventSet, Gender, PatientDemographics, PatientId};
use claimsrisk_core::cohort::{CohortResult, FunnelCounts};
use claimsrisk_core::features::{
    sequence_numeric_mask, static_numeric_mask, SequenceDataset, StaticDataset, SEQ_CHANNELS, SEQ_CHANNEL_NAMES, STATIC_NAMES,
};
use claimsrisk_core::matrix::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};
use crate::output::{read_to_string, write_atomic};

pub const CLAIMS_HEADER: [&str; 7] = ["patient_id", "claim_id", "claim_type", "service_date", "cost", "event_codes", "ed_visit"];
pub const DEMOGRAPHICS_HEADER: [&str; 3] = ["patient_id", "gender", "birth_date"];

/// External code to canonical event.
pub type CodeMap = HashMap<String, EventCode>;

const DATE_FMT: &str = "%Y-%m-%d";

fn open(path: &Path) -> AppResult<File> {
    File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            AppError::Data(format!("missing file {}", path.display()))
        } else {
            AppError::io(path, e)
        }
    })
}

fn csv_err(path: &Path, e: csv::Error) -> AppError {
    AppError::Data(format!("{}: {e}", path.display()))
}

fn check_header(path: &Path, found: &csv::StringRecord, expected: &[&str]) -> AppResult<()> {
    for col in expected {
        if !found.iter().any(|h| h.trim() == *col) {
            return Err(AppError::Data(format!("{}: missing column {col}", path.display())));
        }
    }
    if found.len() != expected.len() || found.iter().zip(expected).any(|(a, b)| a.trim() != *b) {
        return Err(AppError::Data(format!("{}: header must be exactly {}", path.display(), expected.join(","))));
    }
    Ok(())
}

/// Every canonical code mapped to itself.
pub fn identity_code_map() -> CodeMap {
    EventCode::ALL.iter().map(|c| (c.as_str().to_string(), *c)).collect()
}

pub fn read_code_map(path: &Path) -> AppResult<CodeMap> {
    let raw: BTreeMap<String, String> = serde_json::from_str(&read_to_string(path)?).map_err(|e| AppError::json(path, e))?;
    raw.into_iter()
        .map(|(k, v)| {
            let code = v.parse::<EventCode>().map_err(|_| AppError::Data(format!("{}: code {k:?} maps to unknown event {v:?}", path.display())))?;
            Ok((k, code))
        })
        .collect()
}

pub fn write_code_map(path: &Path, map: &CodeMap) -> AppResult<()> {
    let sorted: BTreeMap<&str, &str> = map.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    crate::output::write_json(path, &sorted)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub line_number: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ClaimsFile {
    pub claims: Vec<ClaimRecord>,
    pub rejections: Vec<Rejection>,
    /// Occurrences of external codes missing from the code map, among
    /// accepted rows.
    pub unmapped_codes: BTreeMap<String, usize>,
    pub rows: usize,
}

fn parse_claim(rec: &csv::StringRecord, map: &CodeMap, unmapped: &mut Vec<String>) -> Result<ClaimRecord, String> {
    if rec.len() != CLAIMS_HEADER.len() {
        return Err(format!("expected {} fields, found {}", CLAIMS_HEADER.len(), rec.len()));
    }
    let f = |i: usize| rec[i].trim();
    let required = |i: usize| if f(i).is_empty() { Err(format!("missing {}", CLAIMS_HEADER[i])) } else { Ok(f(i)) };
    let patient_id = required(0)?;
    let claim_id = required(1)?;
    let claim_type: ClaimType = required(2)?.parse().map_err(|e: claimsrisk_core::Error| e.to_string())?;
    let date_s = required(3)?;
    let service_date = NaiveDate::parse_from_str(date_s, DATE_FMT).map_err(|_| format!("invalid service_date {date_s:?}"))?;
    let cost_s = required(4)?;
    let cost: f64 = cost_s.parse().ok().filter(|c: &f64| c.is_finite()).ok_or_else(|| format!("invalid cost {cost_s:?}"))?;
    let mut codes = EventSet::EMPTY;
    for code in f(5).split(';').map(str::trim).filter(|c| !c.is_empty()) {
        match map.get(code) {
            Some(c) => codes.insert(*c),
            None => unmapped.push(code.to_string()),
        }
    }
    let ed_visit = match f(6) {
        "0" => false,
        "1" => true,
        other => return Err(format!("invalid ed_visit {other:?} (expected 0 or 1)")),
    };
    Ok(ClaimRecord {
        patient_id: PatientId::new(patient_id),
        claim_id: ClaimId::new(claim_id),
        claim_type,
        service_date,
        cost,
        event_codes: codes,
        ed_visit,
    })
}

/// Reads a claims CSV. Malformed rows become rejections (header is line 1);
/// only a missing file or a bad header is fatal. Costs are kept as written,
/// negative ones included.
pub fn read_claims(path: &Path, map: &CodeMap) -> AppResult<ClaimsFile> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(open(path)?);
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    check_header(path, &header, &CLAIMS_HEADER)?;
    let mut out = ClaimsFile::default();
    let mut rec = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {
                out.rows += 1;
                let line = rec.position().map_or(0, |p| p.line());
                let mut unmapped = Vec::new();
                match parse_claim(&rec, map, &mut unmapped) {
                    Ok(c) => {
                        out.claims.push(c);
                        for u in unmapped {
                            *out.unmapped_codes.entry(u).or_default() += 1;
                        }
                    }
                    Err(reason) => out.rejections.push(Rejection { line_number: line, reason }),
                }
            }
            Err(e) => match e.position() {
                // Undecodable rows are rejected like any other malformed row.
                Some(p) if !matches!(e.kind(), csv::ErrorKind::Io(_)) => {
                    out.rows += 1;
                    out.rejections.push(Rejection { line_number: p.line(), reason: e.to_string() });
                }
                _ => return Err(csv_err(path, e)),
            },
        }
    }
    Ok(out)
}

fn fmt_codes(set: EventSet) -> String {
    set.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(";")
}

/// Writes claims with canonical code names, so reading back with
/// [`identity_code_map`] reproduces the records exactly.
pub fn write_claims(path: &Path, claims: &[ClaimRecord]) -> AppResult<()> {
    write_atomic(path, |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(CLAIMS_HEADER)?;
        for c in claims {
            wr.write_record([
                c.patient_id.as_str(),
                c.claim_id.as_str(),
                c.claim_type.as_str(),
                &c.service_date.format(DATE_FMT).to_string(),
                &c.cost.to_string(),
                &fmt_codes(c.event_codes),
                if c.ed_visit { "1" } else { "0" },
            ])?;
        }
        wr.flush().map_err(|e| AppError::io(path, e))?;
        Ok(())
    })
}

/// Reads demographics. Unlike claims, any malformed row is fatal, as is a
/// patient listed twice with different gender or birth date.
pub fn read_demographics(path: &Path) -> AppResult<Vec<PatientDemographics>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(open(path)?);
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    check_header(path, &header, &DEMOGRAPHICS_HEADER)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| AppError::Data(format!("{}: line {line}: {what}", path.display()));
        if rec.len() != DEMOGRAPHICS_HEADER.len() {
            return Err(bad(&format!("expected {} fields, found {}", DEMOGRAPHICS_HEADER.len(), rec.len())));
        }
        let id = rec[0].trim();
        if id.is_empty() {
            return Err(bad("missing patient_id"));
        }
        let gender: Gender = rec[1].parse().map_err(|_| bad(&format!("invalid gender {:?}", &rec[1])))?;
        let birth_date = NaiveDate::parse_from_str(rec[2].trim(), DATE_FMT).map_err(|_| bad(&format!("invalid birth_date {:?}", &rec[2])))?;
        rows.push(PatientDemographics { patient_id: PatientId::new(id), gender, birth_date });
    }
    Ok(merge_demographics(rows)?)
}

pub fn write_demographics(path: &Path, demographics: &[PatientDemographics]) -> AppResult<()> {
    write_atomic(path, |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(DEMOGRAPHICS_HEADER)?;
        for d in demographics {
            wr.write_record([d.patient_id.as_str(), d.gender.as_str(), &d.birth_date.format(DATE_FMT).to_string()])?;
        }
        wr.flush().map_err(|e| AppError::io(path, e))?;
        Ok(())
    })
}

pub fn write_rejections(path: &Path, rejections: &[Rejection]) -> AppResult<()> {
    write_atomic(path, |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["line_number", "reason"])?;
        for r in rejections {
            wr.write_record([r.line_number.to_string().as_str(), &r.reason])?;
        }
        wr.flush().map_err(|e| AppError::io(path, e))?;
        Ok(())
    })
}

/// One row per patient, sorted by id: members carry their label, excluded
/// patients the reason (and their window when one was defined).
pub fn write_cohort(path: &Path, cohort: &CohortResult<'_>) -> AppResult<()> {
    let date = |d: NaiveDate| d.format(DATE_FMT).to_string();
    let mut rows: Vec<[String; 5]> = cohort
        .members
        .iter()
        .map(|m| {
            let label = if m.label { "1" } else { "0" };
            [m.timeline.patient_id.to_string(), label.into(), date(m.window.anchor), date(m.window.end), String::new()]
        })
        .collect();
    for e in &cohort.exclusions {
        let (a, b) = e.window.map_or((String::new(), String::new()), |w| (date(w.anchor), date(w.end)));
        rows.push([e.patient_id.to_string(), String::new(), a, b, e.reason.as_str().into()]);
    }
    rows.sort_by(|a, b| a[0].cmp(&b[0]));
    write_atomic(path, |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["patient_id", "label", "anchor", "window_end", "exclusion_reason"])?;
        for r in &rows {
            wr.write_record(r)?;
        }
        wr.flush().map_err(|e| AppError::io(path, e))?;
        Ok(())
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunnelExport {
    pub window_months: u32,
    pub counts: FunnelCounts,
    /// Survivors after each funnel step.
    pub steps: [usize; 4],
}

impl FunnelExport {
    pub fn new(cohort: &CohortResult<'_>) -> Self {
        Self { window_months: cohort.window_months, counts: cohort.funnel, steps: cohort.funnel.steps() }
    }
}

/// A labeled feature matrix, static (one row per patient) or sequence
/// (flattened `steps x channels`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<PatientId>,
    /// Column names for static data, channel names for sequences.
    pub feature_names: Vec<String>,
    pub x: Matrix,
    pub y: Vec<bool>,
    pub steps: Option<usize>,
}

impl Dataset {
    pub fn from_static(ds: &StaticDataset) -> Self {
        Self { ids: ds.ids.clone(), feature_names: STATIC_NAMES.iter().map(|s| s.to_string()).collect(), x: ds.x.clone(), y: ds.y.clone(), steps: None }
    }

    pub fn from_sequence(ds: &SequenceDataset) -> Self {
        Self {
            ids: ds.ids.clone(),
            feature_names: SEQ_CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
            x: ds.x.clone(),
            y: ds.y.clone(),
            steps: Some(ds.steps),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|p| p.as_str() == id)
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            x: self.x.select(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            steps: self.steps,
        }
    }

    /// Numeric-column mask and scaler period. Known layouts use their fixed
    /// masks; anything else treats a column as a flag when every value is 0
    /// or 1.
    pub fn numeric_mask(&self) -> (Vec<bool>, Option<usize>) {
        let names: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        match self.steps {
            None if names == STATIC_NAMES => (static_numeric_mask(), None),
            Some(_) if names == SEQ_CHANNEL_NAMES => (sequence_numeric_mask(), Some(SEQ_CHANNELS)),
            _ => {
                let f = names.len();
                let mut numeric = vec![false; f];
                for r in self.x.iter_rows() {
                    for (j, v) in r.iter().enumerate() {
                        if *v != 0.0 && *v != 1.0 {
                            numeric[j % f] = true;
                        }
                    }
                }
                (numeric, self.steps.map(|_| f))
            }
        }
    }
}

/// Header: `patient_id`, the feature names, `label`.
pub fn write_features_csv(path: &Path, ds: &Dataset) -> AppResult<()> {
    if ds.steps.is_some() {
        return Err(AppError::Usage("sequence data is written as JSONL".into()));
    }
    write_atomic(path, |w| {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["patient_id".to_string()];
        header.extend(ds.feature_names.iter().cloned());
        header.push("label".into());
        wr.write_record(&header)?;
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        for (i, id) in ds.ids.iter().enumerate() {
            rec.clear();
            rec.push(id.to_string());
            rec.extend(ds.x.row(i).iter().map(|v| v.to_string()));
            rec.push(if ds.y[i] { "1" } else { "0" }.into());
            wr.write_record(&rec)?;
        }
        wr.flush().map_err(|e| AppError::io(path, e))?;
        Ok(())
    })
}

pub fn read_features_csv(path: &Path) -> AppResult<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(open(path)?);
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let n = header.len();
    if n < 3 || header[0].trim() != "patient_id" || header[n - 1].trim() != "label" {
        return Err(AppError::Data(format!("{}: header must be patient_id, feature columns, label", path.display())));
    }
    let names: Vec<String> = header.iter().skip(1).take(n - 2).map(|s| s.trim().to_string()).collect();
    let (mut ids, mut data, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        ids.push(PatientId::new(rec[0].trim()));
        for j in 1..n - 1 {
            let v: f64 = rec[j].trim().parse().map_err(|_| AppError::Data(format!("{}: line {line}: invalid value {:?} for {}", path.display(), &rec[j], names[j - 1])))?;
            data.push(v);
        }
        y.push(match rec[n - 1].trim() {
            "0" => false,
            "1" => true,
            other => return Err(AppError::Data(format!("{}: line {line}: invalid label {other:?}", path.display()))),
        });
    }
    let x = Matrix::new(ids.len(), names.len(), data)?;
    Ok(Dataset { ids, feature_names: names, x, y, steps: None })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SequenceLine {
    patient_id: String,
    label: u8,
    /// `[steps, channels]`.
    shape: [usize; 2],
    channels: Vec<String>,
    /// Row-major, one step after another.
    data: Vec<f64>,
}

pub fn write_sequences_jsonl(path: &Path, ds: &Dataset) -> AppResult<()> {
    let steps = ds.steps.ok_or_else(|| AppError::Usage("static data is written as CSV".into()))?;
    write_atomic(path, |w| {
        for (i, id) in ds.ids.iter().enumerate() {
            let line = SequenceLine {
                patient_id: id.to_string(),
                label: ds.y[i] as u8,
                shape: [steps, ds.feature_names.len()],
                channels: ds.feature_names.clone(),
                data: ds.x.row(i).to_vec(),
            };
            serde_json::to_writer(&mut *w, &line).map_err(|e| AppError::Internal(e.to_string()))?;
            w.write_all(b"\n").map_err(|e| AppError::io(path, e))?;
        }
        Ok(())
    })
}

pub fn read_sequences_jsonl(path: &Path) -> AppResult<Dataset> {
    let text = read_to_string(path)?;
    let (mut ids, mut data, mut y) = (Vec::new(), Vec::new(), Vec::new());
    let mut layout: Option<([usize; 2], Vec<String>)> = None;
    for (k, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |what: String| AppError::Data(format!("{}: line {}: {what}", path.display(), k + 1));
        let s: SequenceLine = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if s.data.len() != s.shape[0] * s.shape[1] || s.channels.len() != s.shape[1] {
            return Err(bad(format!("shape {:?} does not match {} values and {} channels", s.shape, s.data.len(), s.channels.len())));
        }
        match &layout {
            None => layout = Some((s.shape, s.channels.clone())),
            Some((shape, ch)) if *shape != s.shape || *ch != s.channels => return Err(bad("shape differs from the first record".into())),
            Some(_) => {}
        }
        if s.label > 1 {
            return Err(bad(format!("invalid label {}", s.label)));
        }
        ids.push(PatientId::new(&s.patient_id));
        y.push(s.label == 1);
        data.extend_from_slice(&s.data);
    }
    let (shape, channels) = layout.ok_or_else(|| AppError::Data(format!("{}: no sequence records", path.display())))?;
    Ok(Dataset { x: Matrix::new(ids.len(), shape[0] * shape[1], data)?, ids, feature_names: channels, y, steps: Some(shape[0]) })
}

fn is_jsonl(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("jsonl"))
}

/// `.jsonl` files hold sequences, anything else a static CSV.
pub fn read_dataset(path: &Path) -> AppResult<Dataset> {
    if is_jsonl(path) {
        read_sequences_jsonl(path)
    } else {
        read_features_csv(path)
    }
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> AppResult<()> {
    if ds.steps.is_some() {
        write_sequences_jsonl(path, ds)
    } else {
        write_features_csv(path, ds)
    }
}

/// File name for a dataset of this kind.
pub fn dataset_file_name(stem: &str, ds: &Dataset) -> String {
    format!("{stem}.{}", if ds.steps.is_some() { "jsonl" } else { "csv" })
}

/// Probe-set prediction dump: `patient_id,label,probability`.
pub fn write_predictions(path: &Path, ids: &[PatientId], y: &[bool], p: &[f64]) -> AppResult<()> {
    write_atomic(path, |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["patient_id", "label", "probability"])?;
        for ((id, l), p) in ids.iter().zip(y).zip(p) {
            wr.write_record([id.as_str(), if *l { "1" } else { "0" }, &p.to_string()])?;
        }
        wr.flush().map_err(|e| AppError::io(path, e))?;
        Ok(())
    })
}

pub fn read_predictions(path: &Path) -> AppResult<Vec<(String, bool, f64)>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let p: f64 = rec[2].parse().map_err(|_| AppError::Data(format!("{}: invalid probability {:?}", path.display(), &rec[2])))?;
        out.push((rec[0].to_string(), &rec[1] == "1", p));
    }
    Ok(out)
}
