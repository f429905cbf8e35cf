use std::str::FromStr;

use crate::campaign::{CampaignState, ExperimentRecord, ExperimentStatus};
use crate::wire::{canonical_encode, canonical_string, format_real, to_data, DataValue, EncodeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            other => Err(format!("unknown export format {other:?}")),
        }
    }
}

impl ExportFormat {
    pub fn content_type(self) -> &'static str {
        match self {
            ExportFormat::Csv => "text/csv; charset=utf-8",
            ExportFormat::Json => "application/json",
        }
    }

    pub fn export(self, state: &CampaignState) -> Result<Vec<u8>, EncodeError> {
        match self {
            ExportFormat::Csv => Ok(export_csv(state).into_bytes()),
            ExportFormat::Json => export_json(state),
        }
    }
}

fn csv_field(out: &mut String, field: &str) {
    if field.contains([',', '"', '\r', '\n']) {
        out.push('"');
        out.push_str(&field.replace('"', "\"\""));
        out.push('"');
    } else {
        out.push_str(field);
    }
}

fn cell(value: Option<&DataValue>) -> String {
    match value {
        None | Some(DataValue::Null) => String::new(),
        Some(DataValue::Bool(b)) => b.to_string(),
        Some(DataValue::Int(i)) => i.to_string(),
        Some(DataValue::Real(r)) => format_real(*r),
        Some(DataValue::Text(t)) => t.clone(),
        Some(other) => canonical_string(other).unwrap_or_default(),
    }
}

fn push_row(out: &mut String, fields: &[String]) {
    for (i, f) in fields.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        csv_field(out, f);
    }
    out.push_str("\r\n");
}

/// `index,status,<dimensions>,objective,started,ended`, one CRLF-terminated
/// row per experiment in index order.
pub fn export_csv(state: &CampaignState) -> String {
    let dims: Vec<&str> = state.spec.space.dimensions.iter().map(|d| d.name.as_str()).collect();
    let mut out = String::new();
    let mut header: Vec<String> = vec!["index".into(), "status".into()];
    header.extend(dims.iter().map(|d| d.to_string()));
    header.extend(["objective", "started", "ended"].map(String::from));
    push_row(&mut out, &header);
    for rec in &state.experiments {
        let mut row = vec![rec.index.to_string(), rec.status.as_str().to_owned()];
        row.extend(dims.iter().map(|d| cell(rec.params.get(*d))));
        row.push(rec.objective_value.map(format_real).unwrap_or_default());
        row.push(rec.started.to_string());
        row.push(rec.ended.map(|e| e.to_string()).unwrap_or_default());
        push_row(&mut out, &row);
    }
    out
}

/// The experiment list as one canonical-JSON document.
pub fn export_json(state: &CampaignState) -> Result<Vec<u8>, EncodeError> {
    let value = to_data(&state.experiments).map_err(|_| EncodeError::NonFiniteReal)?;
    canonical_encode(&value)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExperimentQuery {
    pub status: Option<ExperimentStatus>,
    /// Inclusive lower index bound.
    pub from: Option<u64>,
    /// Exclusive upper index bound.
    pub to: Option<u64>,
}

pub fn query_experiments(state: &CampaignState, q: &ExperimentQuery) -> Vec<ExperimentRecord> {
    state
        .experiments
        .iter()
        .filter(|e| q.status.map_or(true, |s| e.status == s))
        .filter(|e| q.from.map_or(true, |f| e.index >= f))
        .filter(|e| q.to.map_or(true, |t| e.index < t))
        .cloned()
        .collect()
}
