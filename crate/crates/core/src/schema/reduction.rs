//! PCA-based importance ranking of CVs.
//!
//! The ranking is advisory: nothing is dropped here. An expert reads the
//! report and marks CVs `unimportant` in the schema.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::dataset::ConfigDataset;
use crate::error::{ChiError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recommendation {
    Keep,
    Drop,
}

impl Recommendation {
    pub fn as_str(self) -> &'static str {
        match self {
            Recommendation::Keep => "keep",
            Recommendation::Drop => "drop",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionEntry {
    pub cv: String,
    /// |loading| on the leading principal component.
    pub loading: f64,
    /// Sum over components of explained-variance fraction times |loading|.
    pub score: f64,
    /// 1-based, by descending score.
    pub rank: usize,
    pub recommendation: Recommendation,
    /// Filled in by a human reviewer.
    pub expert_decision: Option<Recommendation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionReport {
    /// Sorted by descending score.
    pub entries: Vec<ReductionEntry>,
    pub explained_variance: Vec<f64>,
    pub warnings: Vec<String>,
}

impl ReductionReport {
    pub fn score_of(&self, cv: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.cv == cv).map(|e| e.score)
    }

    pub fn recommended_drops(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.recommendation == Recommendation::Drop)
            .map(|e| e.cv.as_str())
            .collect()
    }

    /// CSV with columns `cv,score,rank,recommendation`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cv", "score", "rank", "recommendation"])?;
        for e in &self.entries {
            w.write_record([
                e.cv.clone(),
                format!("{:.6}", e.score),
                e.rank.to_string(),
                e.recommendation.as_str().to_string(),
            ])?;
        }
        w.flush()
            .map_err(|e| ChiError::io("<reduction report>", e))?;
        Ok(())
    }
}

/// Sample covariance (N-1 denominator) of the CV columns.
pub fn covariance(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; m];
    for row in rows {
        for (acc, v) in mean.iter_mut().zip(row) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= n as f64;
    }
    let mut cov = DMatrix::zeros(m, m);
    if n < 2 {
        return cov;
    }
    for row in rows {
        for i in 0..m {
            let di = row[i] - mean[i];
            for j in i..m {
                cov[(i, j)] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..m {
        for j in i..m {
            let v = cov[(i, j)] / (n as f64 - 1.0);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

/// Ranks CVs of a (normalized) dataset by PCA importance.
pub fn pca_rank(ds: &ConfigDataset) -> Result<ReductionReport> {
    let rows = ds.dense()?;
    let m = ds.n_cols();
    let mut warnings = Vec::new();
    if ds.n_rows() <= m {
        warnings.push(format!(
            "only {} rows for {} CVs; PCA ranking is unreliable",
            ds.n_rows(),
            m
        ));
    }
    let cov = covariance(&rows);
    let var: Vec<f64> = (0..m).map(|i| cov[(i, i)]).collect();

    let eig = SymmetricEigen::new(cov);
    let lambdas: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let total: f64 = lambdas.iter().sum();

    let mut scores = vec![0.0; m];
    let mut leading = vec![0.0; m];
    let explained: Vec<f64>;
    if total <= 0.0 {
        warnings.push("zero total variance: all scores are 0".into());
        explained = vec![0.0; m];
    } else {
        explained = lambdas.iter().map(|l| l / total).collect();
        let top = (0..m)
            .max_by(|&a, &b| lambdas[a].total_cmp(&lambdas[b]))
            .unwrap_or(0);
        for (cv, score) in scores.iter_mut().enumerate() {
            if var[cv] <= 0.0 {
                continue;
            }
            *score = (0..m)
                .map(|k| explained[k] * eig.eigenvectors[(cv, k)].abs())
                .sum();
            leading[cv] = eig.eigenvectors[(cv, top)].abs();
        }
    }

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mean_score = scores.iter().sum::<f64>() / m as f64;
    let entries = order
        .iter()
        .enumerate()
        .map(|(rank, &cv)| ReductionEntry {
            cv: ds.columns[cv].clone(),
            loading: leading[cv],
            score: scores[cv],
            rank: rank + 1,
            recommendation: if scores[cv] <= 0.0 || scores[cv] < 0.5 * mean_score {
                Recommendation::Drop
            } else {
                Recommendation::Keep
            },
            expert_decision: None,
        })
        .collect();
    let mut explained_sorted = explained;
    explained_sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(ReductionReport {
        entries,
        explained_variance: explained_sorted,
        warnings,
    })
}
