//! Correlations, cluster coverage of a selection, and sweep reports.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::feature_store::InstructionMeta;
use crate::selector::SelectionResult;

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(invalid(format!(
            "lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(invalid("correlation needs at least two points"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite input to correlation".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation of a constant vector".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation: Pearson over average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(invalid(format!(
            "lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coverage {
    pub clusters: usize,
    pub max_concentration: f64,
}

/// Distinct `cluster:` tags among the selected samples and the largest
/// single-cluster share.
pub fn cluster_coverage(selection: &SelectionResult, meta: &[InstructionMeta]) -> Result<Coverage> {
    if selection.picks.is_empty() {
        return Err(invalid("coverage of an empty selection"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for p in &selection.picks {
        let m = meta
            .get(p.index)
            .ok_or_else(|| invalid(format!("selected index {} has no metadata", p.index)))?;
        let c = m
            .tag("cluster")
            .ok_or_else(|| invalid(format!("sample {:?} has no cluster tag", m.id)))?;
        *counts.entry(c).or_default() += 1;
    }
    let max = counts.values().copied().max().unwrap_or(0);
    Ok(Coverage {
        clusters: counts.len(),
        max_concentration: max as f64 / selection.picks.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: usize,
    pub seed: u64,
    pub grad_accum_steps: usize,
    pub selected: usize,
    pub held_out_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub variable: String,
    /// `None` marks an undefined metric.
    pub metrics: BTreeMap<String, Option<f64>>,
    pub rows: Vec<SweepRow>,
}

impl Report {
    pub fn new(variable: impl Into<String>) -> Self {
        Self {
            variable: variable.into(),
            metrics: BTreeMap::new(),
            rows: Vec::new(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let fail = |e: csv::Error| Error::Validation(format!("csv write failed: {e}"));
        for r in &self.rows {
            w.serialize(r).map_err(fail)?;
        }
        w.flush().map_err(|e| fail(e.into()))
    }

    pub fn save(&self, csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<()> {
        let csv_path = csv_path.as_ref();
        let file = std::fs::File::create(csv_path).map_err(|e| Error::storage(csv_path, e))?;
        self.write_csv(std::io::BufWriter::new(file))?;
        let json_path = json_path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(json_path, json + "\n").map_err(|e| Error::storage(json_path, e))
    }
}
