//! Evaluation measures: 3D Chamfer distance, per-object min/mean over views,
//! minimal matching distance and the per-object view spread.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{nearest_neighbors, PointCloud};
use crate::losses::LossVariant;

/// Reported Chamfer values are squared distances times this factor.
pub const CD_REPORT_SCALE: f64 = 1e4;

/// Per-(object, view) Chamfer distance, already scaled for reporting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub object: usize,
    pub view: usize,
    pub cd: f64,
}

/// One row of an evaluation summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub category: String,
    pub cd_min: f64,
    pub cd_avg: f64,
    pub std: f64,
    pub objects: usize,
    pub views: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Per-category rows followed by the overall average.
    pub rows: Vec<SummaryRow>,
    pub mmd: Option<f64>,
}

fn one_sided(a: &PointCloud, b: &PointCloud, variant: LossVariant) -> Result<f64> {
    let nn = nearest_neighbors(a.points(), b.points())?;
    let sum: f64 = nn
        .iter()
        .map(|&(_, d)| match variant {
            LossVariant::Squared => d,
            LossVariant::Unsquared => d.sqrt(),
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// Symmetric mean-of-min distance, unscaled.
pub fn chamfer_3d(a: &PointCloud, b: &PointCloud, variant: LossVariant) -> Result<f64> {
    Ok(one_sided(a, b, variant)? + one_sided(b, a, variant)?)
}

/// Squared Chamfer distance times [`CD_REPORT_SCALE`].
pub fn reported_cd(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    Ok(chamfer_3d(a, b, LossVariant::Squared)? * CD_REPORT_SCALE)
}

/// `(min, mean)` of one object's per-view values.
pub fn cd_min_avg(per_view: &[f64]) -> Result<(f64, f64)> {
    if per_view.is_empty() {
        return Err(Error::Empty);
    }
    let min = per_view.iter().copied().fold(f64::INFINITY, f64::min);
    let avg = per_view.iter().sum::<f64>() / per_view.len() as f64;
    // Rounding in the mean can otherwise put it a hair below the minimum.
    Ok((min, avg.max(min)))
}

/// Dataset-level `(CD_min, CD_avg)`: per-object values averaged over objects.
pub fn dataset_min_avg(per_object: &[Vec<f64>]) -> Result<(f64, f64)> {
    if per_object.is_empty() {
        return Err(Error::Empty);
    }
    let mut acc = (0.0, 0.0);
    for views in per_object {
        let (mn, av) = cd_min_avg(views)?;
        acc.0 += mn;
        acc.1 += av;
    }
    let j = per_object.len() as f64;
    Ok((acc.0 / j, (acc.1 / j).max(acc.0 / j)))
}

/// Mean over predictions of the smallest reported CD to any reference.
pub fn mmd(predictions: &[PointCloud], references: &[PointCloud]) -> Result<f64> {
    if predictions.is_empty() || references.is_empty() {
        return Err(Error::Empty);
    }
    let mut total = 0.0;
    for p in predictions {
        let mut best = f64::INFINITY;
        for r in references {
            best = best.min(reported_cd(p, r)?);
        }
        total += best;
    }
    Ok(total / predictions.len() as f64)
}

/// Population standard deviation across views, averaged over objects.
pub fn cd_std(per_object: &[Vec<f64>]) -> Result<f64> {
    if per_object.is_empty() || per_object.iter().any(Vec::is_empty) {
        return Err(Error::Empty);
    }
    let total: f64 = per_object
        .iter()
        .map(|views| {
            if views.iter().all(|&c| c == views[0]) {
                return 0.0;
            }
            let i = views.len() as f64;
            let mean = views.iter().sum::<f64>() / i;
            (views.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / i).sqrt()
        })
        .sum();
    Ok(total / per_object.len() as f64)
}

/// Builds one row per category plus an `average` row over categories.
pub fn summarize(per_category: &[(String, Vec<Vec<f64>>)], mmd: Option<f64>) -> Result<EvalSummary> {
    let mut rows = Vec::with_capacity(per_category.len() + 1);
    for (category, objects) in per_category {
        let (cd_min, cd_avg) = dataset_min_avg(objects)?;
        rows.push(SummaryRow {
            category: category.clone(),
            cd_min,
            cd_avg,
            std: cd_std(objects)?,
            objects: objects.len(),
            views: objects.iter().map(Vec::len).max().unwrap_or(0),
        });
    }
    if rows.is_empty() {
        return Err(Error::Empty);
    }
    let k = rows.len() as f64;
    let avg = SummaryRow {
        category: "average".into(),
        cd_min: rows.iter().map(|r| r.cd_min).sum::<f64>() / k,
        cd_avg: (rows.iter().map(|r| r.cd_avg).sum::<f64>() / k).max(rows.iter().map(|r| r.cd_min).sum::<f64>() / k),
        std: rows.iter().map(|r| r.std).sum::<f64>() / k,
        objects: rows.iter().map(|r| r.objects).sum(),
        views: rows.iter().map(|r| r.views).max().unwrap_or(0),
    };
    rows.push(avg);
    Ok(EvalSummary { rows, mmd })
}

impl EvalSummary {
    /// CSV with a header row; CD columns are `min/avg` slash-separated.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,cd_min/cd_avg,cd_min,cd_avg,std,objects,views\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.4}/{:.4},{:.17e},{:.17e},{:.17e},{},{}\n",
                r.category, r.cd_min, r.cd_avg, r.cd_min, r.cd_avg, r.std, r.objects, r.views
            ));
        }
        if let Some(m) = self.mmd {
            out.push_str(&format!("mmd,{m:.4},{m:.17e},,,,\n"));
        }
        out
    }

    /// Fixed-width table for terminals.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<12} {:>19} {:>10}\n", "category", "CD min/avg (x1e4)", "STD");
        for r in &self.rows {
            out.push_str(&format!("{:<12} {:>19} {:>10.4}\n", r.category, format!("{:.3}/{:.3}", r.cd_min, r.cd_avg), r.std));
        }
        if let Some(m) = self.mmd {
            out.push_str(&format!("{:<12} {:>19.3}\n", "mmd", m));
        }
        out
    }
}
