//! Comparison regressors: ordinary least squares and a forward-only hinge
//! model (MARS without pruning or interactions).

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::dataset::{
    drop_zero_observed, fit_preprocess, preprocess_with, ConfigDataset, NORM_FLOOR,
};
use crate::error::{ChiError, Result};
use crate::evaluation::{split_indices, EvalReport, RowRecord, SplitSpec};
use crate::schema::{validate_schema, CvSchema};
use crate::training::{evaluate_holdout, fit, Objective, TrainOptions};

/// Diagonal jitter added to the normal equations.
pub const OLS_JITTER: f64 = 1e-8;
/// |influence| below this counts as ignoring a CV.
pub const INFLUENCE_EPS: f64 = 1e-6;

const REFINE_STEPS: usize = 3;
/// (cv, knot, sign) of one hinge basis function.
type Basis = (usize, f64, i8);

const KNOT_QUANTILES: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// `y = beta[0] + sum_j beta[j+1] * x_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub beta: Vec<f64>,
}

impl LinearModel {
    pub fn intercept(&self) -> f64 {
        self.beta[0]
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.beta[0]
            + x.iter()
                .zip(&self.beta[1..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }
}

fn column_range(x: &[Vec<f64>], j: usize) -> (f64, f64) {
    x.iter()
        .map(|r| r[j])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        })
}

/// Least squares via the normal equations with a small diagonal jitter,
/// followed by iterative refinement against the unjittered system.
/// Constant columns get a zero coefficient.
pub fn ols_fit(x: &[Vec<f64>], y: &[f64]) -> Result<LinearModel> {
    let p = x.first().map_or(0, Vec::len) + 1;
    if x.len() < p {
        log::warn!(
            "ols_fit: {} rows for {p} coefficients; solution is not unique",
            x.len()
        );
    }
    solve_ls(x, y)
}

fn solve_ls(x: &[Vec<f64>], y: &[f64]) -> Result<LinearModel> {
    let n = x.len();
    if n == 0 || n != y.len() {
        return Err(ChiError::Contract(format!(
            "ols_fit: {} rows vs {} targets",
            n,
            y.len()
        )));
    }
    let m = x[0].len();
    let active: Vec<usize> = (0..m)
        .filter(|&j| {
            let (lo, hi) = column_range(x, j);
            hi > lo
        })
        .collect();
    let p = active.len() + 1;
    let design = DMatrix::from_fn(n, p, |i, k| if k == 0 { 1.0 } else { x[i][active[k - 1]] });
    let target = DVector::from_column_slice(y);
    let xtx = design.transpose() * &design;
    let xty = design.transpose() * &target;
    let mut jittered = xtx.clone();
    for k in 0..p {
        jittered[(k, k)] += OLS_JITTER;
    }
    let chol = jittered.cholesky().ok_or_else(|| {
        ChiError::Training("normal equations are singular even with jitter".into())
    })?;
    let mut coef = chol.solve(&xty);
    for _ in 0..REFINE_STEPS {
        let r = &xty - &xtx * &coef;
        coef += chol.solve(&r);
    }
    if coef.iter().any(|v| !v.is_finite()) {
        return Err(ChiError::Training(
            "ols_fit produced non-finite coefficients".into(),
        ));
    }
    let mut beta = vec![0.0; m + 1];
    beta[0] = coef[0];
    for (k, &j) in active.iter().enumerate() {
        beta[j + 1] = coef[k + 1];
    }
    Ok(LinearModel { beta })
}

/// `coef * max(0, x - knot)` for `sign = 1`, `coef * max(0, knot - x)` for
/// `sign = -1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HingeTerm {
    pub cv: usize,
    pub knot: f64,
    pub sign: i8,
    pub coef: f64,
}

impl HingeTerm {
    fn basis(cv: usize, knot: f64, sign: i8, x: &[f64]) -> f64 {
        let d = if sign > 0 { x[cv] - knot } else { knot - x[cv] };
        d.max(0.0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.coef * Self::basis(self.cv, self.knot, self.sign, x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HingeModel {
    pub intercept: f64,
    pub terms: Vec<HingeTerm>,
    /// Training MSE after each forward step, starting with intercept only.
    pub history: Vec<f64>,
}

impl HingeModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.terms.iter().map(|t| t.eval(x)).sum::<f64>()
    }

    /// Sum of |coef| over the terms on each CV.
    pub fn influence(&self, n_cvs: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_cvs];
        for t in &self.terms {
            out[t.cv] += t.coef.abs();
        }
        out
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, f) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] + f * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Candidate knots of one column: its 0.1..0.9 quantiles, deduplicated.
pub fn knots(x: &[Vec<f64>], cv: usize) -> Vec<f64> {
    let mut col: Vec<f64> = x.iter().map(|r| r[cv]).collect();
    col.sort_by(f64::total_cmp);
    if col.first() == col.last() {
        return Vec::new();
    }
    let mut k: Vec<f64> = KNOT_QUANTILES.iter().map(|&q| quantile(&col, q)).collect();
    k.dedup();
    k
}

fn mse_of(pred: impl Iterator<Item = f64>, y: &[f64]) -> f64 {
    pred.zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64
}

/// Greedy forward selection of hinge terms. Each step adds the mirrored
/// pair (or a single hinge when only one slot is left) whose least-squares
/// refit lowers training MSE the most; stops when the gain drops below
/// `min_improvement` or `max_terms` is reached.
pub fn hinge_fit(
    x: &[Vec<f64>],
    y: &[f64],
    max_terms: usize,
    min_improvement: f64,
) -> Result<HingeModel> {
    if max_terms == 0 {
        return Err(ChiError::Contract("hinge_fit needs max_terms >= 1".into()));
    }
    if x.is_empty() || x.len() != y.len() {
        return Err(ChiError::Contract(
            "hinge_fit: empty or mismatched input".into(),
        ));
    }
    let n_cvs = x[0].len();
    let knot_sets: Vec<Vec<f64>> = (0..n_cvs).map(|j| knots(x, j)).collect();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let mut chosen: Vec<Basis> = Vec::new();
    let mut fit = LinearModel { beta: vec![mean] };
    let mut current = mse_of(std::iter::repeat_n(mean, y.len()), y);
    let mut history = vec![current];

    let basis_rows = |terms: &[Basis]| -> Vec<Vec<f64>> {
        x.iter()
            .map(|r| {
                terms
                    .iter()
                    .map(|&(cv, k, s)| HingeTerm::basis(cv, k, s, r))
                    .collect()
            })
            .collect()
    };

    while chosen.len() < max_terms {
        let pair = max_terms - chosen.len() >= 2;
        let mut best: Option<(f64, Vec<Basis>, LinearModel)> = None;
        for (cv, ks) in knot_sets.iter().enumerate() {
            for &knot in ks {
                let options: Vec<Vec<Basis>> = if pair {
                    vec![vec![(cv, knot, 1), (cv, knot, -1)]]
                } else {
                    vec![vec![(cv, knot, 1)], vec![(cv, knot, -1)]]
                };
                for add in options {
                    let mut terms = chosen.clone();
                    terms.extend(&add);
                    let b = basis_rows(&terms);
                    let model = solve_ls(&b, y)?;
                    let err = mse_of(b.iter().map(|r| model.predict(r)), y);
                    if best.as_ref().is_none_or(|(e, ..)| err < *e) {
                        best = Some((err, terms, model));
                    }
                }
            }
        }
        match best {
            Some((err, terms, model)) if current - err >= min_improvement => {
                chosen = terms;
                fit = model;
                current = err;
                history.push(err);
            }
            _ => break,
        }
    }

    let terms = chosen
        .iter()
        .enumerate()
        .map(|(k, &(cv, knot, sign))| HingeTerm {
            cv,
            knot,
            sign,
            coef: fit.beta.get(k + 1).copied().unwrap_or(0.0),
        })
        .collect();
    Ok(HingeModel {
        intercept: fit.beta[0],
        terms,
        history,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareOptions {
    pub train: TrainOptions,
    pub split: SplitSpec,
    pub max_terms: usize,
    pub min_improvement: f64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            train: TrainOptions::default(),
            split: SplitSpec::default(),
            max_terms: 10,
            min_improvement: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub method: String,
    pub train_mse: f64,
    pub test_mse: f64,
    pub variance: f64,
    pub ignored_cvs: Vec<String>,
    pub split_hash: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub rows: Vec<MethodResult>,
}

impl CompareReport {
    pub fn get(&self, method: &str) -> Option<&MethodResult> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// CSV `method,train_mse,test_mse,variance,ignored_cvs`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut text = String::from("method,train_mse,test_mse,variance,ignored_cvs\n");
        for r in &self.rows {
            let _ = writeln!(
                text,
                "{},{:.6},{:.6},{:.6},{}",
                r.method,
                r.train_mse,
                r.test_mse,
                r.variance,
                r.ignored_cvs.join(";")
            );
        }
        out.write_all(text.as_bytes())
            .map_err(|e| ChiError::io("<compare report>", e))
    }
}

fn records(pred: &[f64], y: &[f64]) -> Vec<RowRecord> {
    pred.iter()
        .zip(y)
        .enumerate()
        .map(|(row, (&h, &o))| RowRecord { row, h, o })
        .collect()
}

fn method_result(
    method: &str,
    train_pred: &[f64],
    train_y: &[f64],
    test_pred: &[f64],
    test_y: &[f64],
    ignored: Vec<String>,
    split_hash: u64,
) -> MethodResult {
    let test = EvalReport::from_records(
        records(test_pred, test_y),
        Objective::Plain,
        train_y.len(),
        0,
    );
    MethodResult {
        method: method.to_string(),
        train_mse: mse_of(train_pred.iter().copied(), train_y),
        test_mse: test.mse,
        variance: test.variance,
        ignored_cvs: ignored,
        split_hash,
    }
}

/// Fits CHI, OLS and the hinge model on one shared split and
/// normalization, and reports their errors and the CVs each one ignores.
pub fn compare(
    ds: &ConfigDataset,
    schema: &CvSchema,
    opts: &CompareOptions,
) -> Result<CompareReport> {
    let schema = validate_schema(schema, ds).into_result()?;
    let (ds, _) = drop_zero_observed(ds)?;
    let parts = split_indices(ds.n_rows(), &opts.split)?;
    let split_hash = parts.hash_value();
    let (train, stats) = fit_preprocess(&ds.select_rows(&parts.train), &schema)?;
    let test = preprocess_with(&ds.select_rows(&parts.test), &stats)?;
    let (xtr, xte) = (train.dense()?, test.dense()?);
    let (ytr, yte) = (&train.observed, &test.observed);
    let names = &train.columns;
    let ignored_by = |influence: &[f64]| -> Vec<String> {
        names
            .iter()
            .zip(influence)
            .filter(|(_, v)| v.abs() < INFLUENCE_EPS)
            .map(|(n, _)| n.clone())
            .collect()
    };

    let mut rows = Vec::new();

    let (model, _) = fit(&train, &schema, &stats, &opts.train)?;
    let chi_train = evaluate_holdout(&model, &train, Objective::Plain)?;
    let chi_test = evaluate_holdout(&model, &test, Objective::Plain)?;
    let chi_influence: Vec<f64> = names
        .iter()
        .map(|n| match (model.curve(n), stats.column(n)) {
            (Some(_), Some((_, c))) if c.degenerate => 0.0,
            (Some(curve), _) => curve.value(1.0) - curve.value(NORM_FLOOR),
            (None, _) => 0.0,
        })
        .collect();
    rows.push(MethodResult {
        method: "chi".into(),
        train_mse: chi_train.mse,
        test_mse: chi_test.mse,
        variance: chi_test.variance,
        ignored_cvs: ignored_by(&chi_influence),
        split_hash,
    });

    let ols = ols_fit(&xtr, ytr)?;
    let ols_influence: Vec<f64> = (0..names.len())
        .map(|j| {
            let (lo, hi) = column_range(&xtr, j);
            ols.beta[j + 1] * (hi - lo)
        })
        .collect();
    let ptr: Vec<f64> = xtr.iter().map(|r| ols.predict(r)).collect();
    let pte: Vec<f64> = xte.iter().map(|r| ols.predict(r)).collect();
    rows.push(method_result(
        "ols",
        &ptr,
        ytr,
        &pte,
        yte,
        ignored_by(&ols_influence),
        split_hash,
    ));

    let hinge = hinge_fit(&xtr, ytr, opts.max_terms, opts.min_improvement)?;
    let ptr: Vec<f64> = xtr.iter().map(|r| hinge.predict(r)).collect();
    let pte: Vec<f64> = xte.iter().map(|r| hinge.predict(r)).collect();
    let influence = hinge.influence(names.len());
    rows.push(method_result(
        "hinge",
        &ptr,
        ytr,
        &pte,
        yte,
        ignored_by(&influence),
        split_hash,
    ));

    Ok(CompareReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&a| vec![a]).collect()
    }

    #[test]
    fn exact_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 / 9.0).collect();
        let y: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let m = ols_fit(&col(&xs), &y).unwrap();
        assert!(
            (m.beta[0] - 1.0).abs() < 1e-8 && (m.beta[1] - 2.0).abs() < 1e-8,
            "{:?}",
            m.beta
        );
    }

    #[test]
    fn constant_target() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let m = ols_fit(&col(&xs), &[3.5; 10]).unwrap();
        assert!((m.intercept() - 3.5).abs() < 1e-9);
        assert!(m.beta[1].abs() < 1e-9);
    }

    #[test]
    fn constant_column_gets_zero_coefficient() {
        let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, 0.5]).collect();
        let y: Vec<f64> = (0..8).map(|i| i as f64 * 3.0).collect();
        let m = ols_fit(&x, &y).unwrap();
        assert_eq!(m.beta[2], 0.0);
    }

    #[test]
    fn knots_are_quantiles() {
        let xs: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let k = knots(&col(&xs), 0);
        assert_eq!(k.len(), 9);
        assert!((k[4] - 0.5).abs() < 1e-12);
        assert!(knots(&col(&[0.3; 5]), 0).is_empty());
    }

    #[test]
    fn hinge_history_decreases() {
        let x: Vec<Vec<f64>> = (0..60)
            .map(|i| vec![(i % 10) as f64 / 9.0, (i / 6) as f64 / 9.0])
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| (r[0] - 0.4).max(0.0) + 0.3 * r[1] * r[1])
            .collect();
        let h = hinge_fit(&x, &y, 6, 1e-9).unwrap();
        assert!(h.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(h.terms.len() <= 6);
    }

    #[test]
    fn single_slot_adds_single_hinge() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        let y: Vec<f64> = xs.iter().map(|x| (x - 0.5f64).max(0.0)).collect();
        let h = hinge_fit(&col(&xs), &y, 1, 1e-9).unwrap();
        assert_eq!(h.terms.len(), 1);
    }

    #[test]
    fn compare_csv_header() {
        let r = CompareReport { rows: vec![] };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "method,train_mse,test_mse,variance,ignored_cvs\n"
        );
    }
}
