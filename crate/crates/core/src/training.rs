//! Gradient-descent fitting of the health curves.
//!
//! The loss is the mean squared error between the aggregated health index
//! `H_n` and the normalized observed metric `O_n` (or between their logs).
//! Its gradient factors per row as
//! `dLoss/dH_n * dH_n/dh_nm * dh_nm/dparam`, with `dH_n/dh_nm = H_n / (L h_nm)`
//! from the geometric mean and `dh/dparam` taken on whichever branch of the
//! curve the row sits on.
//!
//! By default each epoch sweeps the training rows in order and applies
//! `param -= alpha * d(row loss)/d(param)` after every row, then clamps.
//! [`UpdateRule::Batch`] instead takes one step per epoch along the exact
//! batch gradient.
//! Unimodal modes are not differentiable at the branch point; they are
//! refreshed every few epochs by a grid search on training MSE.

use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dataset::{ConfigDataset, NormStats, NORM_FLOOR};
use crate::error::{ChiError, Result};
use crate::evaluation::{EvalReport, RowRecord};
use crate::model::{
    geometric_mean, rise_slope, Branch, CvCurve, HealthModel, NamedCurve, TrainMeta, WeakOffset,
    ETA_LINEAR_LIMIT, ETA_MAX, ETA_MIN, GAMMA_MAX, HEALTH_FLOOR, MODEL_VERSION,
};
use crate::schema::{CvSchema, DependencyLayout, Shape, Source};

/// Gradient slope through the health floor when it is active.
pub const LEAKY_SLOPE: f64 = 1e-3;

const INIT_ETA: f64 = 1.0;
const INIT_GAMMA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    Plain,
    Log,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Plain => "plain",
            Objective::Log => "log",
        }
    }

    fn term(self, h: f64, o: f64) -> f64 {
        match self {
            Objective::Plain => (h - o).powi(2),
            Objective::Log => (h.ln() - o.ln()).powi(2),
        }
    }

    /// d(term)/dH.
    fn term_slope(self, h: f64, o: f64) -> f64 {
        match self {
            Objective::Plain => 2.0 * (h - o),
            Objective::Log => 2.0 * (h.ln() - o.ln()) / h,
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "plain" => Ok(Objective::Plain),
            "log" => Ok(Objective::Log),
            other => Err(format!("unknown objective '{other}' (plain|log)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateRule {
    /// One step per row, rows in dataset order.
    #[default]
    Sequential,
    /// One step per epoch along the mean-loss gradient.
    Batch,
}

impl std::str::FromStr for UpdateRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(UpdateRule::Sequential),
            "batch" => Ok(UpdateRule::Batch),
            other => Err(format!("unknown update rule '{other}' (sequential|batch)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub alpha: f64,
    pub max_epochs: usize,
    /// Stop once an epoch starts at or below this loss.
    pub target_mse: Option<f64>,
    pub objective: Objective,
    pub seed: u64,
    /// Candidate count for the unimodal mode search.
    pub mode_grid: usize,
    /// Epochs between mode refreshes; 0 disables them.
    pub mode_refresh_every: usize,
    /// Each refresh after the first searches a window this many times
    /// narrower, centred on the current mode; 1 keeps the full grid.
    pub mode_zoom: f64,
    /// Also try each mode candidate with eta scaled by the change in the
    /// rising branch's width, which keeps its rate in `p` units.
    pub mode_rescale_eta: bool,
    pub update: UpdateRule,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            alpha: 0.5,
            max_epochs: 500,
            target_mse: None,
            objective: Objective::Plain,
            seed: 0,
            mode_grid: 9,
            mode_refresh_every: 25,
            mode_zoom: 0.5,
            mode_rescale_eta: true,
            update: UpdateRule::Sequential,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(ChiError::Contract(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if self.max_epochs == 0 {
            return Err(ChiError::Contract("max_epochs must be >= 1".into()));
        }
        if self.mode_grid < 3 {
            return Err(ChiError::Contract("mode_grid must be >= 3".into()));
        }
        if !(self.mode_zoom > 0.0 && self.mode_zoom <= 1.0) {
            return Err(ChiError::Contract(format!(
                "mode_zoom must be in (0, 1], got {}",
                self.mode_zoom
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    /// Loss at the start of each epoch.
    pub mse: Vec<f64>,
    /// Largest |batch gradient| entry at the start of each epoch.
    pub max_grad: Vec<f64>,
    /// Returned parameters, flattened as `eta ++ gamma ++ offsets`.
    pub final_params: Vec<f64>,
    pub duration: Duration,
}

impl TrainTrace {
    pub fn epochs(&self) -> usize {
        self.mse.len()
    }

    /// CSV with columns `epoch,mse,max_grad`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "mse", "max_grad"])?;
        for (i, (m, g)) in self.mse.iter().zip(&self.max_grad).enumerate() {
            w.write_record([(i + 1).to_string(), format!("{m:.6}"), format!("{g:.6}")])?;
        }
        w.flush().map_err(|e| ChiError::io("<trace>", e))?;
        Ok(())
    }
}

/// Mean squared error between health indices and observations.
pub fn mse(h: &[f64], o: &[f64], objective: Objective) -> Result<f64> {
    if h.len() != o.len() {
        return Err(ChiError::Contract(format!(
            "length mismatch: {} health values vs {} observations",
            h.len(),
            o.len()
        )));
    }
    if h.is_empty() {
        return Err(ChiError::Contract("mse of zero rows".into()));
    }
    if objective == Objective::Log && h.iter().chain(o).any(|v| v.is_nan() || *v <= 0.0) {
        return Err(ChiError::Contract(
            "log objective needs positive values".into(),
        ));
    }
    let sum: f64 = h.iter().zip(o).map(|(&a, &b)| objective.term(a, b)).sum();
    Ok(sum / h.len() as f64)
}

/// d h / d eta on the rising branch at coordinate `s`.
pub fn grad_eta(s: f64, eta: f64) -> f64 {
    if eta.abs() < ETA_LINEAR_LIMIT {
        return 0.5 * s * (1.0 - s);
    }
    let a = -(-eta).exp_m1(); // 1 - e^-eta
    let b = -(-eta * s).exp_m1(); // 1 - e^-eta*s
    (s * (-eta * s).exp() * a - b * (-eta).exp()) / (a * a)
}

/// d h / d gamma on the falling branch at coordinate `s_f`.
pub fn grad_gamma(s_f: f64) -> f64 {
    -s_f
}

/// Learnable parameters, one slot per participating CV (gamma and mode
/// are unused for monotonic CVs) plus one offset per weak dependent.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub eta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub mode: Vec<f64>,
    pub offsets: Vec<f64>,
}

impl Params {
    pub fn flatten(&self) -> Vec<f64> {
        self.eta
            .iter()
            .chain(&self.gamma)
            .chain(&self.offsets)
            .copied()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub eta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub offsets: Vec<f64>,
}

impl Gradient {
    fn zeros(l: usize, k: usize) -> Self {
        Gradient {
            eta: vec![0.0; l],
            gamma: vec![0.0; l],
            offsets: vec![0.0; k],
        }
    }

    fn clear(&mut self) {
        self.eta.iter_mut().for_each(|v| *v = 0.0);
        self.gamma.iter_mut().for_each(|v| *v = 0.0);
        self.offsets.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.eta
            .iter()
            .chain(&self.gamma)
            .chain(&self.offsets)
            .copied()
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.flatten().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// A normalized training set bound to a schema's participating CVs.
#[derive(Debug, Clone)]
pub struct Problem {
    pub layout: DependencyLayout,
    pub rows: Vec<Vec<f64>>,
    pub observed: Vec<f64>,
    pub shapes: Vec<Shape>,
    /// Normalized (lo, hi) of each participating CV's expert bounds.
    pub bounds: Vec<(f64, f64)>,
    pub radius: Vec<f64>,
}

/// Normalized position of a CV's expert bounds; the full band when they
/// collapse.
pub fn curve_bounds(schema: &CvSchema, stats: &NormStats, cv: &str) -> (f64, f64) {
    let (Some(spec), Some((k, col))) = (schema.get(cv), stats.column(cv)) else {
        return (NORM_FLOOR, 1.0);
    };
    let lo = stats.normalize_value(k, col.transform.apply(spec.min));
    let hi = stats.normalize_value(k, col.transform.apply(spec.max));
    if lo < hi && lo.is_finite() && hi.is_finite() {
        (lo, hi)
    } else {
        (NORM_FLOOR, 1.0)
    }
}

impl Problem {
    pub fn new(ds: &ConfigDataset, schema: &CvSchema, stats: &NormStats) -> Result<Self> {
        if !ds.provenance.normalized {
            return Err(ChiError::Contract(
                "training data must be normalized".into(),
            ));
        }
        let columns: Vec<String> = stats.columns.iter().map(|c| c.name.clone()).collect();
        let order: Vec<usize> = columns
            .iter()
            .map(|c| {
                ds.column_index(c)
                    .ok_or_else(|| ChiError::Schema(format!("column '{c}' missing from data")))
            })
            .collect::<Result<_>>()?;
        let dense = ds.dense()?;
        let rows = dense
            .iter()
            .map(|r| order.iter().map(|&j| r[j]).collect())
            .collect();
        let layout = DependencyLayout::new(schema, &columns)?;
        let mut shapes = Vec::new();
        let mut bounds = Vec::new();
        for name in &layout.names {
            let spec = schema.get(name).expect("layout names come from the schema");
            shapes.push(spec.shape);
            bounds.push(curve_bounds(schema, stats, name));
        }
        let radius = schema.weak().map(|s| s.radius.unwrap_or(0.0)).collect();
        Ok(Problem {
            layout,
            rows,
            observed: ds.observed.clone(),
            shapes,
            bounds,
            radius,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_curves(&self) -> usize {
        self.layout.len()
    }

    pub fn initial_params(&self) -> Params {
        let l = self.n_curves();
        Params {
            eta: vec![INIT_ETA; l],
            gamma: self
                .shapes
                .iter()
                .map(|s| {
                    if *s == Shape::Unimodal {
                        INIT_GAMMA
                    } else {
                        0.0
                    }
                })
                .collect(),
            mode: self.bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect(),
            offsets: vec![0.0; self.radius.len()],
        }
    }

    pub fn clamp(&self, p: &mut Params) {
        for e in &mut p.eta {
            *e = e.clamp(ETA_MIN, ETA_MAX);
        }
        for (g, s) in p.gamma.iter_mut().zip(&self.shapes) {
            *g = if *s == Shape::Unimodal {
                g.clamp(0.0, GAMMA_MAX)
            } else {
                0.0
            };
        }
        for (r, &rad) in p.offsets.iter_mut().zip(&self.radius) {
            *r = r.clamp(-rad, rad);
        }
    }

    pub fn curves(&self, p: &Params) -> Vec<CvCurve> {
        (0..self.n_curves())
            .map(|m| {
                let (lo, hi) = self.bounds[m];
                CvCurve {
                    shape: self.shapes[m],
                    eta: p.eta[m],
                    gamma: p.gamma[m],
                    p_mode: (self.shapes[m] == Shape::Unimodal).then_some(p.mode[m]),
                    lo,
                    hi,
                }
            })
            .collect()
    }

    /// Reduced value of every participating CV on row `n`, with
    /// d(value)/d(offset) for weak dependents (zero otherwise).
    fn reduced(&self, n: usize, offsets: &[f64], vals: &mut Vec<f64>, dvals: &mut Vec<f64>) {
        vals.clear();
        dvals.clear();
        let row = &self.rows[n];
        for src in &self.layout.sources {
            match *src {
                Source::Column(j) => {
                    vals.push(row[j]);
                    dvals.push(0.0);
                }
                Source::Weak {
                    parent_col,
                    a,
                    b,
                    offset,
                    ..
                } => {
                    let base = a * row[parent_col] + b;
                    let v = base * (1.0 + offsets[offset]);
                    let clamped = v.clamp(NORM_FLOOR, 1.0);
                    vals.push(clamped);
                    dvals.push(if clamped == v && v > NORM_FLOOR && v < 1.0 {
                        base
                    } else {
                        0.0
                    });
                }
            }
        }
    }

    /// Health index of every row.
    pub fn forward(&self, p: &Params) -> Vec<f64> {
        let curves = self.curves(p);
        let (mut vals, mut dvals) = (Vec::new(), Vec::new());
        let mut h = Vec::with_capacity(curves.len());
        (0..self.n_rows())
            .map(|n| {
                self.reduced(n, &p.offsets, &mut vals, &mut dvals);
                h.clear();
                h.extend(vals.iter().zip(&curves).map(|(v, c)| c.value(*v)));
                geometric_mean(&h)
            })
            .collect()
    }

    pub fn loss(&self, p: &Params, objective: Objective) -> f64 {
        let h = self.forward(p);
        let sum: f64 = h
            .iter()
            .zip(&self.observed)
            .map(|(&a, &b)| objective.term(a, b))
            .sum();
        sum / self.n_rows() as f64
    }

    /// Adds `weight * d(term_n)/d(param)` for row `n` into `g`.
    #[allow(clippy::too_many_arguments)]
    fn accumulate_row(
        &self,
        n: usize,
        curves: &[CvCurve],
        p: &Params,
        objective: Objective,
        weight: f64,
        g: &mut Gradient,
        scratch: &mut Scratch,
    ) -> Result<f64> {
        self.reduced(n, &p.offsets, &mut scratch.vals, &mut scratch.dvals);
        scratch.points.clear();
        scratch
            .points
            .extend(scratch.vals.iter().zip(curves).map(|(v, c)| c.point(*v)));
        scratch.h.clear();
        scratch.h.extend(scratch.points.iter().map(|pt| pt.value));
        let big_h = geometric_mean(&scratch.h);
        let o = self.observed[n];
        let outer = weight * objective.term_slope(big_h, o);
        let l = curves.len() as f64;
        for (m, pt) in scratch.points.iter().enumerate() {
            let c = outer * big_h / (l * pt.value) * if pt.floored() { LEAKY_SLOPE } else { 1.0 };
            let (d_eta, d_gamma, dh_dv) = match pt.branch {
                Branch::Rising => (
                    grad_eta(pt.coord, curves[m].eta),
                    0.0,
                    rise_slope(pt.coord, curves[m].eta) * pt.coord_slope,
                ),
                Branch::Falling => (0.0, grad_gamma(pt.coord), -curves[m].gamma * pt.coord_slope),
            };
            let term = c * d_eta + c * d_gamma;
            if !term.is_finite() {
                return Err(ChiError::Training(format!(
                    "non-finite gradient at row {}, CV '{}'",
                    n + 1,
                    self.layout.names[m]
                )));
            }
            g.eta[m] += c * d_eta;
            g.gamma[m] += c * d_gamma;
            if let Source::Weak { offset, .. } = self.layout.sources[m] {
                g.offsets[offset] += c * dh_dv * scratch.dvals[m];
            }
        }
        Ok(objective.term(big_h, o))
    }

    /// Loss and its exact batch gradient.
    pub fn loss_and_gradient(&self, p: &Params, objective: Objective) -> Result<(f64, Gradient)> {
        let curves = self.curves(p);
        let mut g = Gradient::zeros(self.n_curves(), p.offsets.len());
        let mut scratch = Scratch::default();
        let w = 1.0 / self.n_rows() as f64;
        let mut loss = 0.0;
        for n in 0..self.n_rows() {
            loss += self.accumulate_row(n, &curves, p, objective, w, &mut g, &mut scratch)?;
        }
        Ok((loss * w, g))
    }

    /// One pass over the rows in order, stepping after each row.
    fn sweep(&self, p: &mut Params, objective: Objective, alpha: f64) -> Result<()> {
        let mut g = Gradient::zeros(self.n_curves(), p.offsets.len());
        let mut scratch = Scratch::default();
        let mut curves = self.curves(p);
        for n in 0..self.n_rows() {
            g.clear();
            self.accumulate_row(n, &curves, p, objective, 1.0, &mut g, &mut scratch)?;
            self.step(p, &g, alpha);
            for (c, m) in curves.iter_mut().zip(0..) {
                c.eta = p.eta[m];
                c.gamma = p.gamma[m];
            }
        }
        Ok(())
    }

    fn step(&self, p: &mut Params, g: &Gradient, alpha: f64) {
        for m in 0..p.eta.len() {
            p.eta[m] -= alpha * g.eta[m];
            p.gamma[m] -= alpha * g.gamma[m];
        }
        for k in 0..p.offsets.len() {
            p.offsets[k] -= alpha * g.offsets[k];
        }
        self.clamp(p);
    }

    /// Grid search of each unimodal mode with everything else held fixed.
    /// The grid spans `width` times the CV's range, centred on the current
    /// mode and cut to the range. The current mode competes with the grid,
    /// so the loss never rises.
    pub fn refresh_modes(
        &self,
        p: &mut Params,
        objective: Objective,
        grid: usize,
        width: f64,
        rescale_eta: bool,
    ) {
        let l = self.n_curves();
        for m in 0..l {
            if self.shapes[m] != Shape::Unimodal {
                continue;
            }
            let curves = self.curves(p);
            let (mut vals, mut dvals) = (Vec::new(), Vec::new());
            // Per row: sum of log-health over the other CVs, and this CV's value.
            let mut rest = Vec::with_capacity(self.n_rows());
            let mut own = Vec::with_capacity(self.n_rows());
            for n in 0..self.n_rows() {
                self.reduced(n, &p.offsets, &mut vals, &mut dvals);
                let s: f64 = (0..l)
                    .filter(|&j| j != m)
                    .map(|j| curves[j].value(vals[j]).ln())
                    .sum();
                rest.push(s);
                own.push(vals[m]);
            }
            let (lo, hi) = self.bounds[m];
            let loss_at = |mode: f64, eta: f64| {
                let c = CvCurve {
                    p_mode: Some(mode),
                    eta,
                    ..curves[m].clone()
                };
                let sum: f64 = (0..self.n_rows())
                    .map(|n| {
                        let h = ((rest[n] + c.value(own[n]).ln()) / l as f64).exp();
                        objective.term(h, self.observed[n])
                    })
                    .sum();
                sum / self.n_rows() as f64
            };
            let half = 0.5 * width * (hi - lo);
            let (a, b) = if width >= 1.0 {
                (lo, hi)
            } else {
                ((p.mode[m] - half).max(lo), (p.mode[m] + half).min(hi))
            };
            let (mode0, eta0) = (p.mode[m], p.eta[m]);
            let mut best = (loss_at(mode0, eta0), mode0, eta0);
            for k in 1..=grid {
                let cand = a + (b - a) * k as f64 / (grid + 1) as f64;
                let mut etas = vec![eta0];
                if rescale_eta {
                    etas.push((eta0 * (cand - lo) / (mode0 - lo)).clamp(ETA_MIN, ETA_MAX));
                }
                for eta in etas {
                    let v = loss_at(cand, eta);
                    if v < best.0 {
                        best = (v, cand, eta);
                    }
                }
            }
            p.mode[m] = best.1;
            p.eta[m] = best.2;
        }
    }

    pub fn to_model(
        &self,
        p: &Params,
        stats: &NormStats,
        schema: &CvSchema,
        meta: TrainMeta,
    ) -> HealthModel {
        HealthModel {
            version: MODEL_VERSION.to_string(),
            norm_stats: stats.clone(),
            curves: self
                .layout
                .names
                .iter()
                .cloned()
                .zip(self.curves(p))
                .map(|(cv, curve)| NamedCurve { cv, curve })
                .collect(),
            weak_offsets: self
                .layout
                .weak_names
                .iter()
                .cloned()
                .zip(&p.offsets)
                .map(|(cv, &r)| WeakOffset { cv, r })
                .collect(),
            meta,
            floor: HEALTH_FLOOR,
            schema: Some(schema.clone()),
        }
    }
}

#[derive(Default)]
struct Scratch {
    vals: Vec<f64>,
    dvals: Vec<f64>,
    points: Vec<crate::model::CurvePoint>,
    h: Vec<f64>,
}

/// Batch gradient of the loss over every learnable parameter.
pub fn grad_params(problem: &Problem, params: &Params, objective: Objective) -> Result<Gradient> {
    Ok(problem.loss_and_gradient(params, objective)?.1)
}

/// Fits a model on a normalized training set.
///
/// Returns the parameters with the lowest loss seen, never worse than any
/// epoch recorded in the trace.
pub fn fit(
    ds: &ConfigDataset,
    schema: &CvSchema,
    stats: &NormStats,
    opts: &TrainOptions,
) -> Result<(HealthModel, TrainTrace)> {
    opts.validate()?;
    let start = Instant::now();
    let problem = Problem::new(ds, schema, stats)?;
    let mut params = problem.initial_params();
    let mut best: Option<(f64, Params)> = None;
    let mut trace_mse = Vec::new();
    let mut trace_grad = Vec::new();
    let mut initial = None;
    let mut diverging = 0usize;

    for epoch in 0..opts.max_epochs {
        if opts.mode_refresh_every > 0 && epoch > 0 && epoch % opts.mode_refresh_every == 0 {
            let round = epoch / opts.mode_refresh_every - 1;
            let width = opts.mode_zoom.powi(round as i32);
            problem.refresh_modes(
                &mut params,
                opts.objective,
                opts.mode_grid,
                width,
                opts.mode_rescale_eta,
            );
        }
        let (loss, grad) = problem.loss_and_gradient(&params, opts.objective)?;
        trace_mse.push(loss);
        trace_grad.push(grad.max_abs());
        if best.as_ref().is_none_or(|(b, _)| loss < *b) {
            best = Some((loss, params.clone()));
        }
        let init = *initial.get_or_insert(loss);
        if loss > 10.0 * init {
            diverging += 1;
            if diverging >= 10 {
                return Err(ChiError::Training(format!(
                    "diverging: loss {loss:.6} exceeds 10x the initial {init:.6} for 10 epochs; \
                     try a smaller learning rate"
                )));
            }
        } else {
            diverging = 0;
        }
        if opts.target_mse.is_some_and(|t| loss <= t) {
            break;
        }
        match opts.update {
            UpdateRule::Sequential => problem.sweep(&mut params, opts.objective, opts.alpha)?,
            UpdateRule::Batch => problem.step(&mut params, &grad, opts.alpha),
        }
    }
    // Parameters after the final sweep have not been scored yet.
    if trace_mse.len() == opts.max_epochs {
        let loss = problem.loss(&params, opts.objective);
        if best.as_ref().is_none_or(|(b, _)| loss < *b) {
            best = Some((loss, params.clone()));
        }
    }
    let (final_mse, params) = best.expect("at least one epoch runs");
    let meta = TrainMeta {
        epochs: trace_mse.len(),
        final_mse,
        seed: opts.seed,
    };
    let model = problem.to_model(&params, stats, schema, meta);
    let trace = TrainTrace {
        mse: trace_mse,
        max_grad: trace_grad,
        final_params: params.flatten(),
        duration: start.elapsed(),
    };
    Ok((model, trace))
}

/// Scores a normalized hold-out set with a trained model.
pub fn evaluate_holdout(
    model: &HealthModel,
    test: &ConfigDataset,
    objective: Objective,
) -> Result<EvalReport> {
    if test.n_rows() == 0 {
        return Err(ChiError::Contract("empty test split".into()));
    }
    if !test.provenance.normalized {
        return Err(ChiError::Contract(
            "test data must be normalized with training stats".into(),
        ));
    }
    let start = Instant::now();
    let schema = model.effective_schema();
    let order: Vec<usize> = model
        .norm_stats
        .columns
        .iter()
        .map(|c| {
            test.column_index(&c.name).ok_or_else(|| {
                ChiError::Schema(format!("column '{}' missing from test data", c.name))
            })
        })
        .collect::<Result<_>>()?;
    let dense = test.dense()?;
    let mut records = Vec::with_capacity(test.n_rows());
    for (n, row) in dense.iter().enumerate() {
        let ordered: Vec<f64> = order.iter().map(|&j| row[j]).collect();
        let s = model.score_normalized(&schema, &ordered)?;
        records.push(RowRecord {
            row: n,
            h: s.h,
            o: test.observed[n],
        });
    }
    Ok(EvalReport::from_records(
        records,
        objective,
        0,
        start.elapsed().as_millis(),
    ))
}
