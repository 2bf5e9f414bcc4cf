//! Per-CV expert knowledge: bounds, curve shape, transform, dependency role.
//!
//! Only dominant and weakly dependent CVs carry a health curve. Strong
//! dependents are fully determined by their parent and drop out of the
//! model; unimportant CVs are dropped by expert decision (see
//! [`reduction`] for the PCA ranking that informs it).

pub mod reduction;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{ConfigDataset, Transform, NORM_FLOOR};
use crate::error::{ChiError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    #[default]
    Monotonic,
    Unimodal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[default]
    Dominant,
    Strong,
    Weak,
    Unimportant,
}

impl Role {
    /// Whether CVs with this role carry a health curve.
    pub fn participates(self) -> bool {
        matches!(self, Role::Dominant | Role::Weak)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSpec {
    pub name: String,
    /// Expert lower bound, raw units.
    pub min: f64,
    /// Expert upper bound, raw units.
    pub max: f64,
    #[serde(default)]
    pub shape: Shape,
    #[serde(default)]
    pub transform: Transform,
    #[serde(default)]
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    /// Slope of the dependency function `f(p) = a*p + b` (normalized units).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    /// Uncertainty radius of a weak dependency, as a fraction.
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

impl CvSpec {
    pub fn dominant(name: impl Into<String>, min: f64, max: f64) -> Self {
        CvSpec {
            name: name.into(),
            min,
            max,
            shape: Shape::Monotonic,
            transform: Transform::Linear,
            role: Role::Dominant,
            parent: None,
            a: None,
            b: None,
            radius: None,
        }
    }

    pub fn with_shape(mut self, shape: Shape) -> Self {
        self.shape = shape;
        self
    }

    pub fn dependent(
        name: impl Into<String>,
        role: Role,
        parent: impl Into<String>,
        a: f64,
        b: f64,
        radius: Option<f64>,
    ) -> Self {
        CvSpec {
            role,
            parent: Some(parent.into()),
            a: Some(a),
            b: Some(b),
            radius,
            ..CvSpec::dominant(name, 0.0, 1.0)
        }
    }

    pub fn slope(&self) -> f64 {
        self.a.unwrap_or(1.0)
    }

    pub fn intercept(&self) -> f64 {
        self.b.unwrap_or(0.0)
    }

    /// `f(parent)`, the dependency function without uncertainty.
    pub fn dependency_base(&self, parent: f64) -> f64 {
        self.slope() * parent + self.intercept()
    }

    /// Value of a dependent CV given its parent's value and offset `r`:
    /// `f(parent) * (1 + r)`. Strong dependents take `r = 0`.
    pub fn apply_dependency(&self, parent: f64, r: f64) -> Result<f64> {
        let bound = match self.role {
            Role::Weak => self.radius.unwrap_or(0.0),
            _ => 0.0,
        };
        if r.abs() > bound + 1e-15 || r.is_nan() {
            return Err(ChiError::Contract(format!(
                "offset {r} for '{}' outside [-{bound}, {bound}]",
                self.name
            )));
        }
        Ok(self.dependency_base(parent) * (1.0 + r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedBounds {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CvSchema {
    pub cvs: Vec<CvSpec>,
    /// Optional expert range of the observed metric, raw units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed: Option<ObservedBounds>,
}

impl CvSchema {
    pub fn new(cvs: Vec<CvSpec>) -> Self {
        CvSchema {
            cvs,
            observed: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ChiError::Schema(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ChiError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| ChiError::io(path, e))
    }

    pub fn get(&self, name: &str) -> Option<&CvSpec> {
        self.cvs.iter().find(|c| c.name == name)
    }

    /// CVs that carry a health curve, in schema order.
    pub fn participating(&self) -> impl Iterator<Item = &CvSpec> {
        self.cvs.iter().filter(|c| c.role.participates())
    }

    /// Number of dominant CVs.
    pub fn dominant_count(&self) -> usize {
        self.cvs.iter().filter(|c| c.role == Role::Dominant).count()
    }

    pub fn weak(&self) -> impl Iterator<Item = &CvSpec> {
        self.cvs.iter().filter(|c| c.role == Role::Weak)
    }

    /// Schema for a dataset without expert input: every column dominant,
    /// monotonic, linear, bounded by its observed range.
    pub fn default_for(ds: &ConfigDataset) -> Self {
        CvSchema::new(
            ds.columns
                .iter()
                .enumerate()
                .map(|(j, name)| {
                    let (lo, hi) = observed_range(ds, j);
                    CvSpec::dominant(name.clone(), lo, hi)
                })
                .collect(),
        )
    }
}

fn observed_range(ds: &ConfigDataset, col: usize) -> (f64, f64) {
    let (lo, hi) = ds
        .column_values(col)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Info,
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    pub severity: Severity,
    pub cv: Option<String>,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Info => "info",
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        match &self.cv {
            Some(cv) => write!(f, "{tag}: {cv}: {}", self.message),
            None => write!(f, "{tag}: {}", self.message),
        }
    }
}

/// Findings from checking a schema against a dataset, plus the schema
/// completed with defaults for CVs the schema did not mention.
#[derive(Debug, Clone)]
pub struct Validation {
    pub findings: Vec<Finding>,
    pub schema: CvSchema,
}

impl Validation {
    pub fn has_errors(&self) -> bool {
        self.findings.iter().any(|f| f.severity == Severity::Error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| f.severity == Severity::Error)
    }

    /// The completed schema, or a schema error listing every hard finding.
    pub fn into_result(self) -> Result<CvSchema> {
        if self.has_errors() {
            let msg: Vec<String> = self.errors().map(|f| f.to_string()).collect();
            Err(ChiError::Schema(msg.join("; ")))
        } else {
            Ok(self.schema)
        }
    }
}

pub fn validate_schema(schema: &CvSchema, ds: &ConfigDataset) -> Validation {
    let mut findings = Vec::new();
    let mut push = |severity, cv: Option<&str>, message: String| {
        findings.push(Finding {
            severity,
            cv: cv.map(str::to_string),
            message,
        })
    };

    let mut completed = schema.clone();
    let mut seen = HashMap::new();
    for spec in &schema.cvs {
        if seen.insert(spec.name.as_str(), ()).is_some() {
            push(
                Severity::Error,
                Some(&spec.name),
                "listed twice in schema".into(),
            );
        }
    }
    for spec in &schema.cvs {
        if ds.column_index(&spec.name).is_none() {
            push(
                Severity::Error,
                Some(&spec.name),
                "in schema but not in dataset".into(),
            );
        }
    }
    for (j, col) in ds.columns.iter().enumerate() {
        if schema.get(col).is_none() {
            let (lo, hi) = observed_range(ds, j);
            completed.cvs.push(CvSpec::dominant(col.clone(), lo, hi));
            push(
                Severity::Info,
                Some(col),
                format!("defaulted: dominant, monotonic, bounds [{lo}, {hi}]"),
            );
        }
    }

    for spec in &schema.cvs {
        let name = Some(spec.name.as_str());
        if !(spec.min.is_finite() && spec.max.is_finite()) {
            push(Severity::Error, name, "bounds must be finite".into());
        } else if spec.min > spec.max {
            push(
                Severity::Error,
                name,
                format!("min {} > max {}", spec.min, spec.max),
            );
        } else if spec.min == spec.max && spec.role.participates() {
            push(Severity::Warning, name, "min == max: constant CV".into());
        }
        if spec.transform == Transform::Log1p && spec.min < 0.0 {
            push(
                Severity::Error,
                name,
                "log1p transform with negative min".into(),
            );
        }
        match spec.role {
            Role::Strong | Role::Weak => {
                if spec.parent.is_none() {
                    push(
                        Severity::Error,
                        name,
                        "dependent CV without a parent".into(),
                    );
                }
            }
            _ => {
                if spec.parent.is_some() {
                    push(
                        Severity::Warning,
                        name,
                        "parent ignored for non-dependent role".into(),
                    );
                }
            }
        }
        if spec.role == Role::Weak {
            match spec.radius {
                None => push(
                    Severity::Error,
                    name,
                    "weak dependent without radius R".into(),
                ),
                Some(r) if !(0.0..=1.0).contains(&r) => push(
                    Severity::Error,
                    name,
                    format!("radius R = {r} outside [0, 1]"),
                ),
                _ => {}
            }
        }
        if let Some(j) = ds.column_index(&spec.name) {
            let outside = ds
                .column_values(j)
                .filter(|&v| v < spec.min || v > spec.max)
                .count();
            if outside > 0 {
                push(
                    Severity::Warning,
                    name,
                    format!("{outside} values outside [{}, {}]", spec.min, spec.max),
                );
            }
        }
    }

    // Parent edges: every node has at most one parent, so a cycle is found
    // by walking up from each node.
    let parents: HashMap<&str, &str> = schema
        .cvs
        .iter()
        .filter(|c| matches!(c.role, Role::Strong | Role::Weak))
        .filter_map(|c| c.parent.as_deref().map(|p| (c.name.as_str(), p)))
        .collect();
    let mut in_cycle = false;
    for &start in parents.keys() {
        let mut cur = start;
        let mut steps = 0;
        while let Some(&p) = parents.get(cur) {
            if p == start {
                in_cycle = true;
                push(
                    Severity::Error,
                    Some(start),
                    "dependency cycle through parent edges".into(),
                );
                break;
            }
            cur = p;
            steps += 1;
            if steps > parents.len() {
                break;
            }
        }
    }
    if !in_cycle {
        for (&child, &parent) in &parents {
            match schema.get(parent) {
                None => push(
                    Severity::Error,
                    Some(child),
                    format!("parent '{parent}' not in schema"),
                ),
                Some(p) if p.role != Role::Dominant => push(
                    Severity::Error,
                    Some(child),
                    format!("parent '{parent}' is not a dominant CV"),
                ),
                _ => {}
            }
        }
    }
    if completed.participating().next().is_none() {
        push(
            Severity::Error,
            None,
            "no dominant or weak CVs left to model".into(),
        );
    }

    findings.sort_by_key(|f| std::cmp::Reverse(f.severity));
    Validation {
        findings,
        schema: completed,
    }
}

/// How a participating CV obtains its value from a normalized row.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Column(usize),
    Weak {
        parent_col: usize,
        a: f64,
        b: f64,
        /// Index into the weak-offset vector.
        offset: usize,
        radius: f64,
    },
}

/// Precomputed mapping from dataset columns to the reduced vector of
/// participating CVs.
#[derive(Debug, Clone, PartialEq)]
pub struct DependencyLayout {
    pub names: Vec<String>,
    pub sources: Vec<Source>,
    pub weak_names: Vec<String>,
}

impl DependencyLayout {
    pub fn new(schema: &CvSchema, columns: &[String]) -> Result<Self> {
        let col = |name: &str| {
            columns
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| ChiError::Schema(format!("column '{name}' missing from data")))
        };
        let mut names = Vec::new();
        let mut sources = Vec::new();
        let mut weak_names = Vec::new();
        for spec in schema.participating() {
            let src = match spec.role {
                Role::Dominant => Source::Column(col(&spec.name)?),
                Role::Weak => {
                    let parent = spec.parent.as_deref().ok_or_else(|| {
                        ChiError::Schema(format!("weak CV '{}' has no parent", spec.name))
                    })?;
                    weak_names.push(spec.name.clone());
                    Source::Weak {
                        parent_col: col(parent)?,
                        a: spec.slope(),
                        b: spec.intercept(),
                        offset: weak_names.len() - 1,
                        radius: spec.radius.unwrap_or(0.0),
                    }
                }
                _ => unreachable!("participating() yields dominant and weak only"),
            };
            names.push(spec.name.clone());
            sources.push(src);
        }
        Ok(DependencyLayout {
            names,
            sources,
            weak_names,
        })
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    /// Reduced vector for one normalized row. Weak dependents become
    /// `f(parent) * (1 + r)`, clamped into the normalization band.
    pub fn resolve(&self, row: &[f64], offsets: &[f64]) -> Result<Vec<f64>> {
        self.sources
            .iter()
            .map(|src| match *src {
                Source::Column(j) => Ok(row[j]),
                Source::Weak {
                    parent_col,
                    a,
                    b,
                    offset,
                    radius,
                } => {
                    let r = offsets.get(offset).copied().unwrap_or(0.0);
                    if r.abs() > radius + 1e-15 || r.is_nan() {
                        return Err(ChiError::Contract(format!(
                            "offset {r} for '{}' outside [-{radius}, {radius}]",
                            self.weak_names[offset]
                        )));
                    }
                    Ok(((a * row[parent_col] + b) * (1.0 + r)).clamp(NORM_FLOOR, 1.0))
                }
            })
            .collect()
    }
}

/// Reduced vector (dominant and weak CVs, schema order) for one normalized
/// row whose values are listed in `columns` order.
pub fn resolve_dependents(
    row: &[f64],
    columns: &[String],
    schema: &CvSchema,
    offsets: &[f64],
) -> Result<Vec<f64>> {
    DependencyLayout::new(schema, columns)?.resolve(row, offsets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(cols: &[&str], rows: Vec<Vec<f64>>) -> ConfigDataset {
        let n = rows.len();
        ConfigDataset::from_dense(
            cols.iter().map(|s| s.to_string()).collect(),
            rows,
            vec![1.0; n],
            "o",
            "t",
        )
        .unwrap()
    }

    #[test]
    fn strong_dependent_applies_function() {
        let s = CvSpec::dependent("threads", Role::Strong, "servers", 2.0, 0.0, None);
        assert!((s.apply_dependency(0.3, 0.0).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn weak_dependent_offset() {
        let s = CvSpec::dependent("w", Role::Weak, "p", 1.0, 0.0, Some(0.1));
        assert!((s.apply_dependency(0.5, 0.1).unwrap() - 0.55).abs() < 1e-15);
        assert!(matches!(
            s.apply_dependency(0.5, 0.2),
            Err(ChiError::Contract(_))
        ));
    }

    #[test]
    fn resolve_drops_strong_and_unimportant() {
        let mut junk = CvSpec::dominant("junk", 0.0, 1.0);
        junk.role = Role::Unimportant;
        let schema = CvSchema::new(vec![
            CvSpec::dominant("p", 0.0, 1.0),
            CvSpec::dependent("s", Role::Strong, "p", 2.0, 0.0, None),
            CvSpec::dependent("w", Role::Weak, "p", 1.0, 0.0, Some(0.1)),
            junk,
        ]);
        let cols: Vec<String> = ["p", "s", "w", "junk"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let out = resolve_dependents(&[0.5, 0.9, 0.2, 0.7], &cols, &schema, &[0.1]).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0], 0.5);
        assert!((out[1] - 0.55).abs() < 1e-15);
        assert!(resolve_dependents(&[0.5, 0.9, 0.2, 0.7], &cols, &schema, &[0.2]).is_err());
    }

    #[test]
    fn schema_json_keys() {
        let text = r#"{"cvs":[
            {"name":"mem","min":1,"max":64,"shape":"unimodal","transform":"log1p","role":"dominant"},
            {"name":"thr","min":0,"max":1,"role":"weak","parent":"mem","a":0.5,"b":0.1,"R":0.2}
        ]}"#;
        let s = CvSchema::from_json(text).unwrap();
        assert_eq!(s.cvs[0].shape, Shape::Unimodal);
        assert_eq!(s.cvs[0].transform, Transform::Log1p);
        assert_eq!(s.cvs[1].radius, Some(0.2));
        assert_eq!(s.dominant_count(), 1);
        let back = CvSchema::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn missing_schema_column_is_error() {
        let schema = CvSchema::new(vec![CvSpec::dominant("ghost", 0.0, 1.0)]);
        let v = validate_schema(&schema, &ds(&["x"], vec![vec![0.5]]));
        assert!(v.has_errors());
        assert!(v.errors().any(|f| f.message.contains("not in dataset")));
    }

    #[test]
    fn unknown_column_defaulted() {
        let v = validate_schema(
            &CvSchema::default(),
            &ds(&["x"], vec![vec![0.2], vec![0.8]]),
        );
        assert!(!v.has_errors());
        assert!(v.findings[0]
            .message
            .starts_with("defaulted: dominant, monotonic"));
        let spec = v.schema.get("x").unwrap();
        assert_eq!((spec.min, spec.max), (0.2, 0.8));
    }

    #[test]
    fn cycle_detected() {
        let schema = CvSchema::new(vec![
            CvSpec::dependent("A", Role::Strong, "B", 1.0, 0.0, None),
            CvSpec::dependent("B", Role::Strong, "A", 1.0, 0.0, None),
        ]);
        let v = validate_schema(&schema, &ds(&["A", "B"], vec![vec![0.1, 0.2]]));
        assert!(v.errors().any(|f| f.message.contains("cycle")));
    }

    #[test]
    fn parent_must_be_dominant() {
        let schema = CvSchema::new(vec![
            CvSpec::dominant("A", 0.0, 1.0),
            CvSpec::dependent("B", Role::Weak, "A", 1.0, 0.0, Some(0.1)),
            CvSpec::dependent("C", Role::Weak, "B", 1.0, 0.0, Some(0.1)),
        ]);
        let v = validate_schema(&schema, &ds(&["A", "B", "C"], vec![vec![0.1, 0.2, 0.3]]));
        assert!(v.errors().any(|f| f.message.contains("not a dominant")));
    }

    #[test]
    fn radius_bounds_checked() {
        let schema = CvSchema::new(vec![
            CvSpec::dominant("A", 0.0, 1.0),
            CvSpec::dependent("B", Role::Weak, "A", 1.0, 0.0, Some(1.5)),
        ]);
        let v = validate_schema(&schema, &ds(&["A", "B"], vec![vec![0.1, 0.2]]));
        assert!(v.errors().any(|f| f.message.contains("radius")));
    }

    #[test]
    fn out_of_bounds_values_warned() {
        let schema = CvSchema::new(vec![CvSpec::dominant("A", 0.0, 1.0)]);
        let v = validate_schema(&schema, &ds(&["A"], vec![vec![0.5], vec![2.0], vec![3.0]]));
        assert!(!v.has_errors());
        assert!(v
            .findings
            .iter()
            .any(|f| f.severity == Severity::Warning && f.message.starts_with("2 values outside")));
    }
}
