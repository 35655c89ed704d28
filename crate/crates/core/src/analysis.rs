//! Confidence-threshold census, robustness curves, accuracy metrics and
//! deterministic metric export.
//!
//! Exports are byte-stable: JSON object keys are written in sorted order and
//! every float is formatted `%.6f`, so identical inputs produce identical
//! files.

use std::io::Write as _;
use std::path::Path;

use crate::attacks::{evaluate_robustness, AttackSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::rng::Rng;

const EVAL_BATCH: usize = 512;

/// Evaluation-mode softmax outputs for the whole dataset, flat `[N×C]`.
pub fn prob_matrix(model: &Classifier, dataset: &Dataset) -> Result<Vec<f64>> {
    let n = dataset.len();
    let c = model.classes();
    let mut probs = Vec::with_capacity(n * c);
    let mut offset = 0;
    while offset < n {
        let idx: Vec<usize> = (offset..(offset + EVAL_BATCH).min(n)).collect();
        let (x, _) = dataset.gather(&idx);
        let p = model.predict_probs(&x)?;
        probs.extend_from_slice(p.values());
        offset += EVAL_BATCH;
    }
    Ok(probs)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Top-1 predictions over the dataset.
pub fn predictions(model: &Classifier, dataset: &Dataset) -> Result<Vec<usize>> {
    let c = model.classes();
    let probs = prob_matrix(model, dataset)?;
    Ok((0..dataset.len()).map(|i| argmax(&probs[i * c..(i + 1) * c])).collect())
}

/// Top-1 accuracy; deterministic given model and dataset.
pub fn accuracy(model: &Classifier, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Param("accuracy of an empty dataset".into()));
    }
    let preds = predictions(model, dataset)?;
    let correct = preds.iter().zip(dataset.labels()).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / dataset.len() as f64)
}

/// Count of wrong-category probabilities strictly below a threshold, over
/// all test inputs and all `C-1` wrong categories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtCensus {
    pub threshold: f64,
    /// `N × (C-1)`.
    pub total_slots: usize,
    pub below: usize,
}

/// Census core over a flat probability matrix.
pub fn ct_census_from_probs(probs: &[f64], labels: &[usize], classes: usize, threshold: f64) -> CtCensus {
    let mut below = 0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &probs[i * classes..(i + 1) * classes];
        for (c, &p) in row.iter().enumerate() {
            if c != y && p < threshold {
                below += 1;
            }
        }
    }
    CtCensus { threshold, total_slots: labels.len() * (classes - 1), below }
}

/// Runs the census over a model's evaluation-mode outputs.
pub fn ct_census(model: &Classifier, dataset: &Dataset, threshold: f64) -> Result<CtCensus> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Param(format!("census threshold {threshold} outside (0,1)")));
    }
    let probs = prob_matrix(model, dataset)?;
    Ok(ct_census_from_probs(&probs, dataset.labels(), model.classes(), threshold))
}

/// A curve with strictly increasing x values.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub label: String,
}

impl Curve {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, label: &str) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::Shape(format!("curve: {} xs vs {} ys", xs.len(), ys.len())));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Param("curve: x values must be strictly increasing".into()));
        }
        Ok(Self { xs, ys, label: label.to_string() })
    }
}

/// Census counts for a rising sequence of thresholds, each in
/// `(0, 1/(C-1)]`. Monotone nondecreasing by set inclusion.
pub fn ct_sweep(model: &Classifier, dataset: &Dataset, thresholds: &[f64]) -> Result<Curve> {
    if thresholds.is_empty() {
        return Err(Error::Param("ct_sweep: no thresholds".into()));
    }
    let cap = 1.0 / (model.classes() - 1) as f64;
    for &t in thresholds {
        if !(t > 0.0 && t <= cap) {
            return Err(Error::Param(format!("ct_sweep: threshold {t} outside (0, {cap}]")));
        }
    }
    if thresholds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Param("ct_sweep: thresholds must increase".into()));
    }
    let probs = prob_matrix(model, dataset)?;
    let ys = thresholds
        .iter()
        .map(|&t| ct_census_from_probs(&probs, dataset.labels(), model.classes(), t).below as f64)
        .collect();
    Curve::new(thresholds.to_vec(), ys, "ct_census")
}

/// A robustness curve plus whether it was nonincreasing in ε (not
/// guaranteed for fixed-step attacks; violations are flagged, not errors).
#[derive(Debug, Clone)]
pub struct RobustnessCurve {
    pub curve: Curve,
    pub monotone: bool,
}

/// Robust accuracy per ε. The ε = 0 entry equals natural accuracy.
pub fn robustness_curve(
    model: &Classifier,
    dataset: &Dataset,
    base: &AttackSpec,
    eps_list: &[f64],
    rng: &mut Rng,
) -> Result<RobustnessCurve> {
    if eps_list.is_empty() {
        return Err(Error::Param("robustness_curve: no epsilons".into()));
    }
    if eps_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Param("robustness_curve: epsilons must increase".into()));
    }
    let mut ys = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let mut spec = base.clone();
        spec.epsilon = eps;
        if eps > 0.0 && spec.alpha <= 0.0 {
            spec.alpha = eps / 4.0;
        }
        spec.alpha = spec.alpha.min(eps.max(f64::MIN_POSITIVE));
        let report = evaluate_robustness(model, dataset, &spec, rng)?;
        ys.push(report.robust_accuracy);
    }
    let monotone = ys.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    Ok(RobustnessCurve { curve: Curve::new(eps_list.to_vec(), ys, "robust_accuracy")?, monotone })
}

// ---- deterministic export -------------------------------------------------

/// One table cell; floats are exported with fixed `%.6f` formatting.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

/// A small column-labeled result table, the export currency of the
/// analysis commands.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Csv,
}

fn cell_json(c: &Cell) -> String {
    match c {
        Cell::Int(v) => v.to_string(),
        Cell::Float(v) => format!("{v:.6}"),
        Cell::Text(s) => serde_json::to_string(s).expect("string encodes"),
    }
}

fn cell_csv(c: &Cell) -> String {
    match c {
        Cell::Int(v) => v.to_string(),
        Cell::Float(v) => format!("{v:.6}"),
        Cell::Text(s) => {
            if s.contains(',') || s.contains('"') {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.clone()
            }
        }
    }
}

/// Writes the table. Byte-stable: sorted keys ("columns" before "rows"),
/// fixed float formatting, `\n` line endings.
pub fn export(table: &ResultTable, path: &Path, format: ExportFormat) -> Result<()> {
    let mut out = Vec::new();
    match format {
        ExportFormat::Json => {
            let cols: Vec<String> = table
                .columns
                .iter()
                .map(|c| serde_json::to_string(c).expect("string encodes"))
                .collect();
            write!(out, "{{\"columns\":[{}],\"rows\":[", cols.join(","))?;
            for (i, row) in table.rows.iter().enumerate() {
                if i > 0 {
                    write!(out, ",")?;
                }
                let cells: Vec<String> = row.iter().map(cell_json).collect();
                write!(out, "[{}]", cells.join(","))?;
            }
            writeln!(out, "]}}")?;
        }
        ExportFormat::Csv => {
            writeln!(out, "{}", table.columns.join(","))?;
            for row in &table.rows {
                let cells: Vec<String> = row.iter().map(cell_csv).collect();
                writeln!(out, "{}", cells.join(","))?;
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn parse_scalar(s: &str) -> Cell {
    if let Ok(i) = s.parse::<i64>() {
        return Cell::Int(i);
    }
    if let Ok(f) = s.parse::<f64>() {
        return Cell::Float(f);
    }
    Cell::Text(s.to_string())
}

/// Reads a table back; the inverse of [`export`] on its own output.
pub fn read_table(path: &Path, format: ExportFormat) -> Result<ResultTable> {
    let text = std::fs::read_to_string(path)?;
    match format {
        ExportFormat::Json => {
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| Error::Format { offset: 0, msg: format!("json parse: {e}") })?;
            let columns = value["columns"]
                .as_array()
                .ok_or_else(|| Error::Format { offset: 0, msg: "missing columns".into() })?
                .iter()
                .map(|v| v.as_str().unwrap_or_default().to_string())
                .collect();
            let mut rows = Vec::new();
            for row in value["rows"].as_array().into_iter().flatten() {
                let cells = row
                    .as_array()
                    .ok_or_else(|| Error::Format { offset: 0, msg: "row not an array".into() })?
                    .iter()
                    .map(|v| match v {
                        serde_json::Value::Number(n) if n.is_i64() => Cell::Int(n.as_i64().expect("i64")),
                        serde_json::Value::Number(n) => Cell::Float(n.as_f64().unwrap_or(f64::NAN)),
                        serde_json::Value::String(s) => Cell::Text(s.clone()),
                        other => Cell::Text(other.to_string()),
                    })
                    .collect();
                rows.push(cells);
            }
            Ok(ResultTable { columns, rows })
        }
        ExportFormat::Csv => {
            let mut lines = text.lines();
            let columns = lines
                .next()
                .map(|h| h.split(',').map(|s| s.to_string()).collect())
                .unwrap_or_default();
            let rows = lines
                .map(|l| l.split(',').map(parse_scalar).collect())
                .collect();
            Ok(ResultTable { columns, rows })
        }
    }
}

/// Per-example logits as CSV (for external embedding/visualization tools).
pub fn export_logits(model: &Classifier, dataset: &Dataset, path: &Path) -> Result<()> {
    let c = model.classes();
    let mut out = Vec::new();
    let header: Vec<String> = (0..c).map(|i| format!("logit_{i}")).collect();
    writeln!(out, "index,label,{}", header.join(","))?;
    let n = dataset.len();
    let mut offset = 0;
    while offset < n {
        let idx: Vec<usize> = (offset..(offset + EVAL_BATCH).min(n)).collect();
        let (x, y) = dataset.gather(&idx);
        let logits = model.forward(&x, &mut crate::model::Mode::Eval)?;
        for (i, &global) in idx.iter().enumerate() {
            let row: Vec<String> = logits.values()[i * c..(i + 1) * c]
                .iter()
                .map(|v| format!("{v:.6}"))
                .collect();
            writeln!(out, "{},{},{}", global, y[i], row.join(","))?;
        }
        offset += EVAL_BATCH;
    }
    std::fs::write(path, out)?;
    Ok(())
}
