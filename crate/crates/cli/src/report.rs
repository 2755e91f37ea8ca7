//! Model comparison table: one row per eval report or search trial file.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use capdet_core::search::load_trials;
use capdet_core::train::ModelKind;
use serde::{Deserialize, Serialize};

use crate::EvalReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub model: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub maximize_score: f64,
    pub source: Option<String>,
}

impl Row {
    pub fn from_eval(r: &EvalReport) -> Self {
        let m = &r.metrics;
        Row {
            model: r.name.clone(),
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            maximize_score: m.maximize_score,
            source: None,
        }
    }
}

fn model_label(kind: &ModelKind) -> &'static str {
    match kind {
        ModelKind::CapturenetDeep => "capturenet-deep",
        ModelKind::HistogramLogistic { .. } => "histogram-logistic",
    }
}

fn rows_from(path: &Path) -> Result<Vec<Row>> {
    let source = Some(path.display().to_string());
    if path.extension().and_then(|e| e.to_str()) == Some("jsonl") {
        let trials = load_trials(path)?;
        let Some(best) = capdet_core::search::select_best(&trials) else {
            return Ok(Vec::new());
        };
        let t = &trials[best];
        let m = t.metrics.unwrap_or_default();
        return Ok(vec![Row {
            model: format!("{} (trial {})", model_label(&t.config.model), t.trial_id),
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            maximize_score: t.maximize_score,
            source,
        }]);
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let r: EvalReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(vec![Row { source, ..Row::from_eval(&r) }])
}

/// Rows sorted by maximize score, best first. Search files whose trials all
/// failed contribute nothing.
pub fn load_rows(files: &[PathBuf]) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    for f in files {
        rows.extend(rows_from(f)?);
    }
    rows.sort_by(|a, b| b.maximize_score.total_cmp(&a.maximize_score));
    Ok(rows)
}

pub fn render_table(rows: &[Row]) -> String {
    let header = ["Model", "Accuracy (%)", "Precision (%)", "Recall (%)", "F1 Score", "Maximize Score"];
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.model.clone(),
                format!("{:.2}", r.accuracy),
                format!("{:.2}", r.precision),
                format!("{:.2}", r.recall),
                format!("{:.2}", r.f1),
                format!("{:.2}", r.maximize_score),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for c in &cells {
        for (w, s) in widths.iter_mut().zip(c) {
            *w = (*w).max(s.len());
        }
    }
    let line = |cols: &[&str]| -> String {
        let mut s = String::new();
        for (i, (c, w)) in cols.iter().zip(widths).enumerate() {
            if i == 0 {
                s += &format!("{c:<w$}");
            } else {
                s += &format!("  {c:>w$}");
            }
        }
        s + "\n"
    };
    let mut out = line(&header);
    out += &line(&widths.map(|w| "-".repeat(w)).iter().map(String::as_str).collect::<Vec<_>>());
    for c in &cells {
        out += &line(&c.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_layout() {
        let rows = vec![Row {
            model: "capturenet-deep".into(),
            accuracy: 93.19,
            precision: 93.39,
            recall: 95.39,
            f1: 0.94,
            maximize_score: 93.82,
            source: None,
        }];
        let t = render_table(&rows);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("Model"));
        assert!(lines[2].contains("93.39") && lines[2].ends_with("93.82"));
        assert_eq!(lines[0].len(), lines[2].len());
    }
}
