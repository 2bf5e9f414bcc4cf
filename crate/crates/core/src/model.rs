//! Per-CV health curves, their geometric-mean aggregation, and the
//! persisted model.
//!
//! A monotonic CV rises along a saturating exponential
//! `h(s) = (1 - e^(-eta*s)) / (1 - e^(-eta))` over its normalized range.
//! A unimodal CV follows the same rise up to `p_mode` (renormalized so it
//! reaches exactly 1 there) and then falls linearly by at most `gamma`.
//! Every health value is floored at [`HEALTH_FLOOR`] so logs stay finite.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{NormStats, NORM_FLOOR};
use crate::error::{ChiError, Result};
use crate::schema::{CvSchema, CvSpec, DependencyLayout, Shape};

pub const MODEL_VERSION: &str = "chi-model/1";

/// Lower clamp on every health value.
pub const HEALTH_FLOOR: f64 = 1e-3;
pub const ETA_MIN: f64 = 0.01;
pub const ETA_MAX: f64 = 50.0;
pub const GAMMA_MAX: f64 = 0.999;
/// Below this |eta| the rise is evaluated as its linear limit `h = s`.
pub const ETA_LINEAR_LIMIT: f64 = 1e-6;

/// Saturating rise on `s` in `[0, 1]`, unfloored.
pub fn rise(s: f64, eta: f64) -> f64 {
    if eta.abs() < ETA_LINEAR_LIMIT {
        s
    } else {
        (-eta * s).exp_m1() / (-eta).exp_m1()
    }
}

/// d(rise)/ds.
pub fn rise_slope(s: f64, eta: f64) -> f64 {
    if eta.abs() < ETA_LINEAR_LIMIT {
        1.0
    } else {
        eta * (-eta * s).exp() / -(-eta).exp_m1()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Rising,
    Falling,
}

/// One evaluation of a curve, with what the gradient code needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    /// Floored health value.
    pub value: f64,
    /// Health before the floor.
    pub raw: f64,
    pub branch: Branch,
    /// Branch coordinate (`s`, `s_r` or `s_f`), clamped to `[0, 1]`.
    pub coord: f64,
    /// d(coord)/dp; zero where the clamp is active.
    pub coord_slope: f64,
}

impl CurvePoint {
    pub fn floored(&self) -> bool {
        self.raw < HEALTH_FLOOR
    }
}

fn coordinate(p: f64, from: f64, to: f64) -> (f64, f64) {
    let width = to - from;
    let s = (p - from) / width;
    if s <= 0.0 {
        (0.0, 0.0)
    } else if s >= 1.0 {
        (1.0, 0.0)
    } else {
        (s, 1.0 / width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCurve {
    pub shape: Shape,
    pub eta: f64,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub p_mode: Option<f64>,
    /// Normalized position of the expert lower bound (health floor).
    #[serde(default = "default_lo")]
    pub lo: f64,
    /// Normalized position of the expert upper bound.
    #[serde(default = "default_hi")]
    pub hi: f64,
}

fn default_lo() -> f64 {
    NORM_FLOOR
}

fn default_hi() -> f64 {
    1.0
}

impl CvCurve {
    pub fn monotonic(eta: f64) -> Self {
        CvCurve {
            shape: Shape::Monotonic,
            eta,
            gamma: 0.0,
            p_mode: None,
            lo: NORM_FLOOR,
            hi: 1.0,
        }
    }

    pub fn unimodal(eta: f64, gamma: f64, p_mode: f64) -> Self {
        CvCurve {
            shape: Shape::Unimodal,
            eta,
            gamma,
            p_mode: Some(p_mode),
            lo: NORM_FLOOR,
            hi: 1.0,
        }
    }

    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.lo = lo;
        self.hi = hi;
        self
    }

    pub fn mode(&self) -> f64 {
        self.p_mode.unwrap_or(0.5 * (self.lo + self.hi))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(ChiError::Contract(format!("curve {what}")));
        if self.eta.is_nan() || self.gamma.is_nan() || self.lo.is_nan() || self.hi.is_nan() {
            return bad("has a NaN parameter");
        }
        if self.lo >= self.hi {
            return bad("bounds are empty (lo >= hi)");
        }
        if self.shape == Shape::Unimodal {
            let mode = match self.p_mode {
                Some(m) if !m.is_nan() => m,
                _ => return bad("is unimodal without p_mode"),
            };
            if mode <= self.lo || mode >= self.hi {
                return bad("p_mode outside (lo, hi)");
            }
            if !(0.0..1.0).contains(&self.gamma) {
                return bad("gamma outside [0, 1)");
            }
        }
        Ok(())
    }

    /// Evaluates the curve at normalized value `p` (no contract checks).
    pub fn point(&self, p: f64) -> CurvePoint {
        let (branch, (coord, coord_slope), raw) = match self.shape {
            Shape::Monotonic => {
                let c = coordinate(p, self.lo, self.hi);
                (Branch::Rising, c, rise(c.0, self.eta))
            }
            Shape::Unimodal => {
                let mode = self.mode();
                if p <= mode {
                    let c = coordinate(p, self.lo, mode);
                    (Branch::Rising, c, rise(c.0, self.eta))
                } else {
                    let c = coordinate(p, mode, self.hi);
                    (Branch::Falling, c, 1.0 - self.gamma * c.0)
                }
            }
        };
        CurvePoint {
            value: raw.max(HEALTH_FLOOR),
            raw,
            branch,
            coord,
            coord_slope,
        }
    }

    pub fn value(&self, p: f64) -> f64 {
        self.point(p).value
    }

    /// d(raw health)/dp at `p`.
    pub fn slope(&self, p: f64) -> f64 {
        let pt = self.point(p);
        match pt.branch {
            Branch::Rising => rise_slope(pt.coord, self.eta) * pt.coord_slope,
            Branch::Falling => -self.gamma * pt.coord_slope,
        }
    }

    /// `h(hi) - h(lo)`: how much the curve moves across the CV's range.
    pub fn influence(&self) -> f64 {
        self.value(self.hi) - self.value(self.lo)
    }
}

/// Health of one CV at normalized value `p`, in `[HEALTH_FLOOR, 1]`.
pub fn health(p: f64, curve: &CvCurve) -> Result<f64> {
    if p.is_nan() || !(-1e-9..=1.0 + 1e-9).contains(&p) {
        return Err(ChiError::Contract(format!(
            "normalized value {p} outside [0, 1]"
        )));
    }
    curve.validate()?;
    Ok(curve.value(p))
}

/// Geometric mean in log space; callers guarantee `h > 0`.
pub(crate) fn geometric_mean(h: &[f64]) -> f64 {
    let sum: f64 = h.iter().map(|v| v.ln()).sum();
    (sum / h.len() as f64).exp()
}

/// Configuration health index: geometric mean of per-CV health values.
pub fn aggregate(h: &[f64]) -> Result<f64> {
    if h.is_empty() {
        return Err(ChiError::Contract("aggregate of zero health values".into()));
    }
    if let Some(bad) = h.iter().find(|v| v.is_nan() || **v <= 0.0) {
        return Err(ChiError::Contract(format!(
            "health value {bad} is not positive"
        )));
    }
    Ok(geometric_mean(h))
}

/// Uniform samples over `[0, 1]`; a unimodal curve also gets its mode.
pub fn curve_samples(curve: &CvCurve, n_points: usize) -> Vec<(f64, f64)> {
    let n = n_points.max(2);
    let mut ps: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
    if let (Shape::Unimodal, Some(m)) = (curve.shape, curve.p_mode) {
        ps.push(m);
        ps.sort_by(f64::total_cmp);
        ps.dedup();
    }
    ps.into_iter().map(|p| (p, curve.value(p))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCurve {
    pub cv: String,
    #[serde(flatten)]
    pub curve: CvCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakOffset {
    pub cv: String,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs: usize,
    pub final_mse: f64,
    pub seed: u64,
}

/// Learned model: one curve per participating CV, weak-dependency offsets,
/// and the frozen normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthModel {
    pub version: String,
    pub norm_stats: NormStats,
    pub curves: Vec<NamedCurve>,
    pub weak_offsets: Vec<WeakOffset>,
    pub meta: TrainMeta,
    #[serde(default = "default_floor")]
    pub floor: f64,
    /// Schema the model was trained under; hand-written models may omit it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<CvSchema>,
}

fn default_floor() -> f64 {
    HEALTH_FLOOR
}

/// H for one configuration plus its per-CV breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub h: f64,
    pub breakdown: Vec<(String, f64)>,
}

impl HealthModel {
    pub fn curve(&self, cv: &str) -> Option<&CvCurve> {
        self.curves.iter().find(|c| c.cv == cv).map(|c| &c.curve)
    }

    pub fn offsets(&self) -> Vec<f64> {
        self.weak_offsets.iter().map(|w| w.r).collect()
    }

    /// The stored schema, or one treating every curve as a dominant CV.
    pub fn effective_schema(&self) -> CvSchema {
        self.schema.clone().unwrap_or_else(|| {
            CvSchema::new(
                self.curves
                    .iter()
                    .map(|c| CvSpec::dominant(c.cv.clone(), 0.0, 1.0).with_shape(c.curve.shape))
                    .collect(),
            )
        })
    }

    /// Layout over the model's normalization columns, with curves aligned
    /// to its order.
    pub fn layout(&self, schema: &CvSchema) -> Result<(DependencyLayout, Vec<&CvCurve>)> {
        let columns: Vec<String> = self
            .norm_stats
            .columns
            .iter()
            .map(|c| c.name.clone())
            .collect();
        let layout = DependencyLayout::new(schema, &columns)?;
        let curves = layout
            .names
            .iter()
            .map(|n| {
                self.curve(n)
                    .ok_or_else(|| ChiError::ModelFormat(format!("no curve for CV '{n}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((layout, curves))
    }

    /// Scores a row already normalized with this model's stats (values in
    /// the model's column order).
    pub fn score_normalized(&self, schema: &CvSchema, row: &[f64]) -> Result<Score> {
        let (layout, curves) = self.layout(schema)?;
        let reduced = layout.resolve(row, &self.offsets())?;
        let mut h = Vec::with_capacity(curves.len());
        for (p, c) in reduced.iter().zip(&curves) {
            h.push(health(*p, c)?);
        }
        Ok(Score {
            h: aggregate(&h)?,
            breakdown: layout.names.iter().cloned().zip(h).collect(),
        })
    }

    /// Fills, transforms and normalizes a raw row into model column order.
    /// CVs absent from the row take their stored fill value.
    pub fn normalize_row(&self, columns: &[String], values: &[Option<f64>]) -> Result<Vec<f64>> {
        let stats = &self.norm_stats;
        let mut raw: Vec<Option<f64>> = vec![None; stats.columns.len()];
        for (name, v) in columns.iter().zip(values) {
            let (k, _) = stats
                .column(name)
                .ok_or_else(|| ChiError::Schema(format!("unknown CV column '{name}'")))?;
            raw[k] = *v;
        }
        raw.iter()
            .enumerate()
            .map(|(k, v)| {
                let c = &stats.columns[k];
                let value = v.unwrap_or(c.fill);
                if c.transform == crate::dataset::Transform::Log1p && value < 0.0 {
                    return Err(ChiError::Domain {
                        row: 1,
                        column: c.name.clone(),
                        message: format!("log1p needs a non-negative value, got {value}"),
                    });
                }
                Ok(stats.normalize_value(k, c.transform.apply(value)))
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ChiError::ModelFormat(e.to_string()))?;
        match value.get("version").and_then(|v| v.as_str()) {
            None => return Err(ChiError::ModelFormat("missing key 'version'".into())),
            Some(v) if v != MODEL_VERSION => {
                return Err(ChiError::ModelFormat(format!(
                    "key 'version': expected '{MODEL_VERSION}', found '{v}'"
                )))
            }
            _ => {}
        }
        let model: HealthModel =
            serde_json::from_value(value).map_err(|e| ChiError::ModelFormat(e.to_string()))?;
        for c in &model.curves {
            c.curve
                .validate()
                .map_err(|e| ChiError::ModelFormat(format!("curve '{}': {e}", c.cv)))?;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| ChiError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ChiError::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Scores one raw configuration row.
pub fn score(
    columns: &[String],
    values: &[Option<f64>],
    model: &HealthModel,
    schema: &CvSchema,
) -> Result<Score> {
    let row = model.normalize_row(columns, values)?;
    model.score_normalized(schema, &row)
}
