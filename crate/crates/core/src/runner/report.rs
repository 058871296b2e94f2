use std::collections::HashMap;
use std::fmt::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::EvaluationReport;

/// Row or column id standing for the ensemble over that axis.
pub const ENSEMBLE_ID: &str = ".*";

const MISSING: &str = "—";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub template: String,
    pub verbalizer: String,
    pub report: EvaluationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResults {
    pub template_ids: Vec<String>,
    pub verbalizer_ids: Vec<String>,
    pub cells: Vec<GridCell>,
}

impl GridResults {
    pub fn get(&self, template: &str, verbalizer: &str) -> Option<&EvaluationReport> {
        self.cells
            .iter()
            .find(|c| c.template == template && c.verbalizer == verbalizer)
            .map(|c| &c.report)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::MalformedFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridReport {
    pub markdown: String,
    pub warnings: Vec<String>,
}

/// Templates down, verbalizers across, ensembles last and in bold. Cells
/// read `accuracy / macro-F1` in percent.
pub fn render_grid_report(results: &GridResults) -> GridReport {
    let lookup: HashMap<(&str, &str), &EvaluationReport> = results
        .cells
        .iter()
        .map(|c| ((c.template.as_str(), c.verbalizer.as_str()), &c.report))
        .collect();
    let rows: Vec<&str> = results
        .template_ids
        .iter()
        .map(String::as_str)
        .chain([ENSEMBLE_ID])
        .collect();
    let cols: Vec<&str> = results
        .verbalizer_ids
        .iter()
        .map(String::as_str)
        .chain([ENSEMBLE_ID])
        .collect();

    let mut md = String::from("| Template \\ Verbalizer |");
    for c in &cols {
        let _ = write!(md, " {c} |");
    }
    md.push_str("\n|---|");
    md.push_str(&"---|".repeat(cols.len()));
    md.push('\n');

    let mut warnings = Vec::new();
    for r in &rows {
        let _ = write!(md, "| {r} |");
        for c in &cols {
            let text = match lookup.get(&(*r, *c)) {
                Some(report) if *r == ENSEMBLE_ID || *c == ENSEMBLE_ID => format!("**{}**", report.cell()),
                Some(report) => report.cell(),
                None => {
                    warnings.push(format!("no result for template `{r}`, verbalizer `{c}`"));
                    MISSING.to_string()
                }
            };
            let _ = write!(md, " {text} |");
        }
        md.push('\n');
    }
    if !warnings.is_empty() {
        md.push('\n');
        for w in &warnings {
            let _ = writeln!(md, "- warning: {w}");
        }
    }
    GridReport { markdown: md, warnings }
}
