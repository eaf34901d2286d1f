//! Metric reports and their serialization.
//!
//! JSON output is canonical: object keys sorted, two-space indentation, and
//! every float written with 17 significant digits, so identical runs produce
//! identical bytes. CSV output has one row per sentence; aggregates go to a
//! sidecar `<stem>.aggregates.csv`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::manifest::json_pointer;
use crate::metrics::{MultimodalERanks, SentenceEntropyRecord};
use crate::sum::pairwise_mean;

pub const TOOL_VERSION: &str = concat!("erank ", env!("CARGO_PKG_VERSION"));

/// Tolerance for recomputing aggregates from per-sentence records.
pub const AGGREGATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SentenceLoss {
    pub sentence_id: String,
    pub token_count: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkippedSentence {
    pub sentence_id: String,
    /// `"erank"` or `"loss"`.
    pub stage: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aggregates {
    pub sentence_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_entropy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub erank_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub erank_b: Option<f64>,
    pub loss_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_loss: Option<f64>,
}

impl Aggregates {
    pub fn compute(records: &[SentenceEntropyRecord], losses: &[SentenceLoss]) -> Self {
        let (mean_entropy, erank_a, erank_b) = if records.is_empty() {
            (None, None, None)
        } else {
            let h: Vec<f64> = records.iter().map(|r| r.entropy).collect();
            let e: Vec<f64> = records.iter().map(|r| r.erank).collect();
            let mean_h = pairwise_mean(&h);
            (Some(mean_h), Some(mean_h.exp()), Some(pairwise_mean(&e)))
        };
        let mean_loss = if losses.is_empty() {
            None
        } else {
            let l: Vec<f64> = losses.iter().map(|s| s.loss).collect();
            Some(pairwise_mean(&l))
        };
        Aggregates {
            sentence_count: records.len(),
            mean_entropy,
            erank_a,
            erank_b,
            loss_count: losses.len(),
            mean_loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// `"single"`, `"untrained"` or `"trained"`.
    pub role: String,
    pub model_id: String,
    pub dataset_id: String,
    pub layer: i64,
    pub records: Vec<SentenceEntropyRecord>,
    #[serde(default)]
    pub losses: Vec<SentenceLoss>,
    #[serde(default)]
    pub skipped: Vec<SkippedSentence>,
    pub aggregates: Aggregates,
}

impl ModelSection {
    /// Checks that the stored aggregates match a recomputation from the
    /// per-sentence records.
    pub fn check_aggregates(&self) -> Result<()> {
        let fresh = Aggregates::compute(&self.records, &self.losses);
        let a = &self.aggregates;
        let counts_ok = fresh.sentence_count == a.sentence_count && fresh.loss_count == a.loss_count;
        let close = |x: Option<f64>, y: Option<f64>| match (x, y) {
            (None, None) => true,
            (Some(x), Some(y)) => (x - y).abs() <= AGGREGATE_TOL * x.abs().max(1.0),
            _ => false,
        };
        if counts_ok
            && close(fresh.mean_entropy, a.mean_entropy)
            && close(fresh.erank_a, a.erank_a)
            && close(fresh.erank_b, a.erank_b)
            && close(fresh.mean_loss, a.mean_loss)
        {
            Ok(())
        } else {
            Err(Error::SchemaViolation {
                pointer: format!("/models/{}/aggregates", self.role),
                message: "aggregates do not match per-sentence records".into(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Comparison {
    /// `"a"`, `"b"` or `"both"`.
    pub algorithm: String,
    pub sentence_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diff_erank_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diff_erank_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduced_loss: Option<f64>,
    pub loss_sentence_count: usize,
}

impl Comparison {
    /// The headline Diff-eRank: algorithm (a) when present, else (b).
    pub fn diff_erank(&self) -> Option<f64> {
        self.diff_erank_a.or(self.diff_erank_b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultimodalBlock {
    pub erank1: f64,
    pub erank2: f64,
    pub erank3: f64,
    pub erank4: f64,
    pub erank5: f64,
    pub image_reduction_ratio: f64,
    pub image_text_alignment: f64,
}

impl From<MultimodalERanks> for MultimodalBlock {
    fn from(e: MultimodalERanks) -> Self {
        MultimodalBlock {
            erank1: e.erank1,
            erank2: e.erank2,
            erank3: e.erank3,
            erank4: e.erank4,
            erank5: e.erank5,
            image_reduction_ratio: e.image_reduction_ratio(),
            image_text_alignment: e.image_text_alignment(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub tool_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default)]
    pub inputs: Vec<InputDigest>,
    #[serde(default)]
    pub models: Vec<ModelSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multimodal: Option<MultimodalBlock>,
}

impl Default for MetricsReport {
    fn default() -> Self {
        MetricsReport {
            tool_version: TOOL_VERSION.to_string(),
            label: None,
            inputs: Vec::new(),
            models: Vec::new(),
            comparison: None,
            multimodal: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl MetricsReport {
    pub fn model(&self, role: &str) -> Option<&ModelSection> {
        self.models.iter().find(|m| m.role == role)
    }

    pub fn to_canonical_json(&self) -> Result<String> {
        let value = serde_json::to_value(self).expect("report serializes to a JSON value");
        let mut out = String::new();
        write_canonical(&value, 0, "", &mut out)?;
        out.push('\n');
        Ok(out)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        serde_path_to_error::deserialize(de).map_err(|err| Error::SchemaViolation {
            pointer: json_pointer(err.path()),
            message: err.inner().to_string(),
        })
    }

    /// Per-sentence rows: one per (model, sentence).
    pub fn to_sentence_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "role",
            "model_id",
            "sentence_id",
            "token_count",
            "entropy",
            "erank",
            "dropped_rows",
            "loss",
        ])
        .expect("in-memory csv write");
        for m in &self.models {
            let losses: HashMap<&str, &SentenceLoss> =
                m.losses.iter().map(|l| (l.sentence_id.as_str(), l)).collect();
            for r in &m.records {
                let loss = losses.get(r.sentence_id.as_str()).map(|l| format_float(l.loss)).unwrap_or_default();
                w.write_record([
                    m.role.as_str(),
                    m.model_id.as_str(),
                    r.sentence_id.as_str(),
                    &r.token_count.to_string(),
                    &format_float(r.entropy),
                    &format_float(r.erank),
                    &r.dropped_rows.to_string(),
                    &loss,
                ])
                .expect("in-memory csv write");
            }
            let with_records: std::collections::HashSet<&str> =
                m.records.iter().map(|r| r.sentence_id.as_str()).collect();
            for l in m.losses.iter().filter(|l| !with_records.contains(l.sentence_id.as_str())) {
                w.write_record([
                    m.role.as_str(),
                    m.model_id.as_str(),
                    l.sentence_id.as_str(),
                    &l.token_count.to_string(),
                    "",
                    "",
                    "",
                    &format_float(l.loss),
                ])
                .expect("in-memory csv write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
    }

    /// `section,key,value` rows for the aggregates sidecar.
    pub fn to_aggregates_csv(&self) -> String {
        let mut rows: Vec<(String, String, String)> = vec![
            ("meta".into(), "tool_version".into(), self.tool_version.clone()),
        ];
        if let Some(label) = &self.label {
            rows.push(("meta".into(), "label".into(), label.clone()));
        }
        let mut push = |section: &str, key: &str, v: Option<f64>| {
            if let Some(v) = v {
                rows.push((section.into(), key.into(), format_float(v)));
            }
        };
        for m in &self.models {
            let a = &m.aggregates;
            push(&m.role, "sentence_count", Some(a.sentence_count as f64));
            push(&m.role, "skipped_count", Some(m.skipped.len() as f64));
            push(&m.role, "mean_entropy", a.mean_entropy);
            push(&m.role, "erank_a", a.erank_a);
            push(&m.role, "erank_b", a.erank_b);
            push(&m.role, "mean_loss", a.mean_loss);
        }
        if let Some(c) = &self.comparison {
            push("comparison", "diff_erank_a", c.diff_erank_a);
            push("comparison", "diff_erank_b", c.diff_erank_b);
            push("comparison", "reduced_loss", c.reduced_loss);
        }
        if let Some(mm) = &self.multimodal {
            for (k, v) in [
                ("erank1", mm.erank1),
                ("erank2", mm.erank2),
                ("erank3", mm.erank3),
                ("erank4", mm.erank4),
                ("erank5", mm.erank5),
                ("image_reduction_ratio", mm.image_reduction_ratio),
                ("image_text_alignment", mm.image_text_alignment),
            ] {
                push("multimodal", k, Some(v));
            }
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["section", "key", "value"]).expect("in-memory csv write");
        for (s, k, v) in rows {
            // counts are integral; print them without a fraction
            let v = v.strip_suffix(".0").filter(|_| k.ends_with("_count")).map(str::to_string).unwrap_or(v);
            w.write_record([s, k, v]).expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
    }
}

/// Path of the aggregates sidecar for a CSV report path.
pub fn aggregates_sidecar_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.aggregates.csv"))
}

/// Writes a report atomically. CSV output also writes the aggregates sidecar.
pub fn write_report(report: &MetricsReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    match format {
        ReportFormat::Json => write_atomic(path, report.to_canonical_json()?.as_bytes()),
        ReportFormat::Csv => {
            // reject non-finite values the same way JSON output does
            report.to_canonical_json()?;
            write_atomic(path, report.to_sentence_csv().as_bytes())?;
            write_atomic(&aggregates_sidecar_path(path), report.to_aggregates_csv().as_bytes())
        }
    }
}

pub fn read_report(path: impl AsRef<Path>) -> Result<MetricsReport> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    MetricsReport::from_json(&bytes).map_err(|e| Error::at_path(path, e))
}

fn write_canonical(value: &Value, indent: usize, pointer: &str, out: &mut String) -> Result<()> {
    match value {
        // optional fields are skipped, so a null can only come from a NaN or
        // infinite float
        Value::Null => return Err(Error::NonFiniteReport(pointer.to_string())),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                write!(out, "{i}").unwrap();
            } else if let Some(u) = n.as_u64() {
                write!(out, "{u}").unwrap();
            } else {
                let f = n.as_f64().expect("number is i64, u64 or f64");
                out.push_str(&format_float(f));
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string serializes")),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return Ok(());
            }
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                push_indent(out, indent + 1);
                write_canonical(item, indent + 1, &format!("{pointer}/{i}"), out)?;
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            push_indent(out, indent);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return Ok(());
            }
            let sorted: BTreeMap<&String, &Value> = map.iter().collect();
            out.push_str("{\n");
            for (i, (k, v)) in sorted.iter().enumerate() {
                push_indent(out, indent + 1);
                out.push_str(&serde_json::to_string(k).expect("key serializes"));
                out.push_str(": ");
                write_canonical(v, indent + 1, &format!("{pointer}/{k}"), out)?;
                out.push_str(if i + 1 < sorted.len() { ",\n" } else { "\n" });
            }
            push_indent(out, indent);
            out.push('}');
        }
    }
    Ok(())
}

fn push_indent(out: &mut String, level: usize) {
    out.extend(std::iter::repeat_n("  ", level));
}

/// Formats a finite float with 17 significant digits, trailing zeros
/// trimmed, always with a fraction or exponent so it reads back as a float.
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0.0" } else { "0.0" }.to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let (negative, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => (true, m),
        None => (false, mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    let digits = digits.trim_end_matches('0');

    let mut out = String::with_capacity(24);
    if negative {
        out.push('-');
    }
    if !(-5..17).contains(&exp) {
        out.push_str(&digits[..1]);
        out.push('.');
        out.push_str(if digits.len() > 1 { &digits[1..] } else { "0" });
        write!(out, "e{exp}").unwrap();
    } else if exp >= 0 {
        let int_len = exp as usize + 1;
        if digits.len() <= int_len {
            out.push_str(digits);
            out.extend(std::iter::repeat_n('0', int_len - digits.len()));
            out.push_str(".0");
        } else {
            out.push_str(&digits[..int_len]);
            out.push('.');
            out.push_str(&digits[int_len..]);
        }
    } else {
        out.push_str("0.");
        out.extend(std::iter::repeat_n('0', (-exp - 1) as usize));
        out.push_str(digits);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn float_formatting() {
        assert_eq!(format_float(1.0), "1.0");
        assert_eq!(format_float(-2.5), "-2.5");
        assert_eq!(format_float(0.1), "0.10000000000000001");
        assert_eq!(format_float(100.0), "100.0");
        assert_eq!(format_float(1e-7), "9.9999999999999995e-8");
        assert_eq!(format_float(1e20), "1.0e20");
        assert_eq!(format_float(0.000123), "0.00012300000000000001");
        assert_eq!(format_float(0.0), "0.0");
    }

    proptest! {
        #[test]
        fn float_format_round_trips(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL) {
            let s = format_float(x);
            prop_assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits());
            let v: serde_json::Value = serde_json::from_str(&s).unwrap();
            prop_assert!(v.is_f64());
        }
    }

    fn sample() -> MetricsReport {
        let records = vec![
            SentenceEntropyRecord {
                sentence_id: "b".into(),
                token_count: 5,
                entropy: 1.2,
                erank: 1.2f64.exp(),
                dropped_rows: 0,
            },
            SentenceEntropyRecord {
                sentence_id: "a".into(),
                token_count: 9,
                entropy: 0.4,
                erank: 0.4f64.exp(),
                dropped_rows: 1,
            },
        ];
        let losses = vec![SentenceLoss {
            sentence_id: "a".into(),
            token_count: 8,
            loss: 3.25,
        }];
        let aggregates = Aggregates::compute(&records, &losses);
        MetricsReport {
            label: Some("tiny".into()),
            models: vec![ModelSection {
                role: "single".into(),
                model_id: "m".into(),
                dataset_id: "d".into(),
                layer: -1,
                records,
                losses,
                skipped: vec![SkippedSentence {
                    sentence_id: "c".into(),
                    stage: "erank".into(),
                    reason: "degenerate".into(),
                }],
                aggregates,
            }],
            ..Default::default()
        }
    }

    #[test]
    fn canonical_json_sorted_and_stable() {
        let r = sample();
        let json = r.to_canonical_json().unwrap();
        assert_eq!(json, r.to_canonical_json().unwrap());
        let label = json.find("\"label\"").unwrap();
        let models = json.find("\"models\"").unwrap();
        let tool = json.find("\"tool_version\"").unwrap();
        assert!(label < models && models < tool);
        let back = MetricsReport::from_json(json.as_bytes()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_canonical_json().unwrap(), json);
        back.models[0].check_aggregates().unwrap();
    }

    #[test]
    fn non_finite_values_rejected() {
        let mut r = sample();
        r.models[0].records[0].entropy = f64::NAN;
        match r.to_canonical_json() {
            Err(Error::NonFiniteReport(p)) => assert_eq!(p, "/models/0/records/0/entropy"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tampered_aggregates_detected() {
        let mut r = sample();
        r.models[0].aggregates.erank_b = Some(10.0);
        assert!(r.models[0].check_aggregates().is_err());
    }

    #[test]
    fn csv_layout() {
        let r = sample();
        let csv = r.to_sentence_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "role,model_id,sentence_id,token_count,entropy,erank,dropped_rows,loss");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("single,m,b,5,1.2,"));
        assert!(lines[2].ends_with(",1,3.25"));
        let agg = r.to_aggregates_csv();
        assert!(agg.contains("single,sentence_count,2\n"));
        assert!(agg.contains("single,skipped_count,1\n"));
        assert!(agg.contains("meta,label,tiny\n"));
        assert_eq!(
            aggregates_sidecar_path(Path::new("/tmp/out/report.csv")),
            Path::new("/tmp/out/report.aggregates.csv")
        );
    }
}
