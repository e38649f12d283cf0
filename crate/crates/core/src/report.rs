//! Comparison tables merging measured reports with the bundled reference results.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::costmodel::Preset;
use crate::error::{Error, Result};
use crate::metrics::{MetricReport, SummaryMetrics, TABLE_HEADERS};
use crate::pipeline::{classify_deployability, Deployability, LatencyReport, UsabilityThresholds};

const REFERENCE_JSON: &str = include_str!("../fixtures/reference_results.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub model: String,
    pub preset: Preset,
    pub accuracy: SummaryMetrics,
    pub pytorch_ms: f64,
    pub trt_fp16_ms: f64,
    pub fps_trt: f64,
    pub depth_mae_cm: f64,
    pub usable: Deployability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceResults {
    pub source: String,
    pub note: String,
    pub rows: Vec<ReferenceRow>,
}

impl ReferenceResults {
    /// The read-only table bundled with the crate.
    pub fn bundled() -> Self {
        serde_json::from_str(REFERENCE_JSON).expect("bundled reference fixture is valid JSON")
    }

    pub fn row(&self, preset: Preset) -> Option<&ReferenceRow> {
        self.rows.iter().find(|r| r.preset == preset)
    }
}

/// Header of the accuracy table: model, provenance, then the metric columns.
pub fn accuracy_headers() -> Vec<String> {
    let mut h = vec!["Model".to_string(), "Source".to_string()];
    h.extend(TABLE_HEADERS.iter().map(|s| s.to_string()));
    h
}

pub const DEPLOYMENT_HEADERS: [&str; 9] = [
    "Model",
    "Source",
    "PyTorch (ms)",
    "TRT FP16 (ms)",
    "Measured (ms)",
    "FPS",
    "Depth MAE (cm)",
    "δ1 (%)",
    "Usable?",
];

/// A rendered table: header plus string cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.headers)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("| {} |\n", self.headers.join(" | "));
        s.push_str(&format!("|{}\n", "---|".repeat(self.headers.len())));
        for r in &self.rows {
            s.push_str(&format!("| {} |\n", r.join(" | ")));
        }
        s
    }

    /// Writes `<stem>.csv` and, when asked, `<stem>.md` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str, markdown: bool) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let f = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        self.write_csv(f)?;
        if markdown {
            let md = dir.join(format!("{stem}.md"));
            std::fs::write(&md, self.to_markdown()).map_err(|e| Error::io(&md, e))?;
        }
        Ok(())
    }
}

fn fmt_row(s: &SummaryMetrics) -> Vec<String> {
    let row = s.table_row();
    row.iter()
        .enumerate()
        .map(|(i, v)| if i == 9 { format!("{v:.3}") } else { format!("{v:.2}") })
        .collect()
}

/// Measured summaries first, then the reference rows.
pub fn accuracy_table(measured: &[MetricReport], reference: Option<&ReferenceResults>) -> Table {
    let mut rows = Vec::new();
    for m in measured {
        let mut r = vec![m.model_name.clone(), "measured".to_string()];
        r.extend(fmt_row(&m.summary));
        rows.push(r);
    }
    if let Some(refs) = reference {
        for row in &refs.rows {
            let mut r = vec![row.model.clone(), refs.source.clone()];
            r.extend(fmt_row(&row.accuracy));
            rows.push(r);
        }
    }
    Table {
        headers: accuracy_headers(),
        rows,
    }
}

/// Deployment table. Measured accuracy is paired with a latency report of the same label;
/// reference rows are reclassified from their own numbers.
pub fn deployment_table(
    measured: &[MetricReport],
    latencies: &[LatencyReport],
    reference: Option<&ReferenceResults>,
    thresholds: &UsabilityThresholds,
) -> Table {
    let mut rows = Vec::new();
    for m in measured {
        let lat = latencies.iter().find(|l| l.label == m.model_name);
        let usable = lat.map(|l| classify_deployability(l.fps, m.summary.mae_cm, Some(m.summary.delta1), thresholds));
        rows.push(vec![
            m.model_name.clone(),
            "measured".into(),
            String::new(),
            String::new(),
            lat.map(|l| format!("{:.1}", l.mean_ms)).unwrap_or_default(),
            lat.map(|l| format!("{:.1}", l.fps)).unwrap_or_default(),
            format!("{:.2}", m.summary.mae_cm),
            format!("{:.2}", m.summary.delta1),
            usable.map_or("-".to_string(), |u| u.symbol().to_string()),
        ]);
    }
    for l in latencies.iter().filter(|l| !measured.iter().any(|m| m.model_name == l.label)) {
        rows.push(vec![
            l.label.clone(),
            "measured".into(),
            String::new(),
            String::new(),
            format!("{:.1}", l.mean_ms),
            format!("{:.1}", l.fps),
            String::new(),
            String::new(),
            "-".into(),
        ]);
    }
    if let Some(refs) = reference {
        for r in &refs.rows {
            let u = classify_deployability(r.fps_trt, r.depth_mae_cm, Some(r.accuracy.delta1), thresholds);
            rows.push(vec![
                r.model.clone(),
                refs.source.clone(),
                format!("{}", r.pytorch_ms),
                format!("{}", r.trt_fp16_ms),
                String::new(),
                format!("{:.1}", r.fps_trt),
                format!("{:.2}", r.depth_mae_cm),
                format!("{:.2}", r.accuracy.delta1),
                u.symbol().to_string(),
            ]);
        }
    }
    Table {
        headers: DEPLOYMENT_HEADERS.iter().map(|s| s.to_string()).collect(),
        rows,
    }
}
