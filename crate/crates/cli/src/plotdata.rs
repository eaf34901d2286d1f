use std::path::{Path, PathBuf};

use erank_core::report::format_float;
use erank_core::{read_report, write_atomic, Error};

use crate::{CmdResult, Failure};

struct Row {
    label: String,
    diff_erank: f64,
    reduced_loss: Option<f64>,
}

fn row_for(path: &Path) -> Result<Row, Error> {
    let report = read_report(path)?;
    let at = |pointer: &str, message: &str| Error::AtPath {
        path: path.to_path_buf(),
        source: Box::new(Error::SchemaViolation {
            pointer: pointer.into(),
            message: message.into(),
        }),
    };
    for m in &report.models {
        m.check_aggregates().map_err(|e| Error::at_path(path, e))?;
    }
    let c = report.comparison.as_ref().ok_or_else(|| at("/comparison", "not a diff-erank report"))?;
    let diff_erank = c.diff_erank().ok_or_else(|| at("/comparison", "no diff_erank value"))?;
    let label = match report.label {
        Some(l) => l,
        None => report.model("trained").map(|m| m.model_id.clone()).ok_or_else(|| at("/label", "missing"))?,
    };
    Ok(Row {
        label,
        diff_erank,
        reduced_loss: c.reduced_loss,
    })
}

pub fn run(reports: &[PathBuf], output: Option<&Path>) -> CmdResult {
    let mut rows = reports.iter().map(|p| row_for(p)).collect::<Result<Vec<_>, _>>()?;
    rows.sort_by(|a, b| a.label.cmp(&b.label));

    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Failure {
        code: 1,
        message: e.to_string(),
    };
    w.write_record(["model_size_label", "diff_erank", "reduced_loss"]).map_err(io)?;
    for r in &rows {
        let loss = r.reduced_loss.map(format_float).unwrap_or_default();
        w.write_record([r.label.as_str(), &format_float(r.diff_erank), &loss]).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| io(e.into_error().into()))?;

    match output {
        Some(path) => {
            write_atomic(path, &bytes)?;
            println!("{} rows written to {}", rows.len(), path.display());
        }
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(())
}
