//! Loading, cleaning, transforming and normalizing configuration datasets.
//!
//! A dataset is N configuration rows over M configuration variables (CVs)
//! plus one observed metric per row. The learner consumes values that have
//! gone through, in order: missing-value filling, the per-CV transform
//! (`linear` or `log1p`), and affine normalization into `[epsilon, 1]`
//! using statistics frozen on the training split.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ChiError, Result};
use crate::schema::CvSchema;

/// Lower edge of the normalization band.
pub const NORM_FLOOR: f64 = 1e-3;

/// First line of a normalized CSV file.
pub const NORMALIZED_MARKER: &str = "# chi-normalized v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    #[default]
    Linear,
    Log1p,
}

impl Transform {
    pub fn apply(self, value: f64) -> f64 {
        match self {
            Transform::Linear => value,
            Transform::Log1p => value.ln_1p(),
        }
    }

    pub fn invert(self, value: f64) -> f64 {
        match self {
            Transform::Linear => value,
            Transform::Log1p => value.exp_m1(),
        }
    }
}

/// Pipeline stages already applied to a dataset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Provenance {
    pub filled: bool,
    pub transformed: bool,
    pub normalized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigDataset {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
    pub observed: Vec<f64>,
    /// Name of the observed-metric column.
    pub target: String,
    pub source_id: String,
    pub provenance: Provenance,
}

impl ConfigDataset {
    pub fn new(
        columns: Vec<String>,
        rows: Vec<Vec<Option<f64>>>,
        observed: Vec<f64>,
        target: impl Into<String>,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        let ds = ConfigDataset {
            columns,
            rows,
            observed,
            target: target.into(),
            source_id: source_id.into(),
            provenance: Provenance::default(),
        };
        ds.check()?;
        Ok(ds)
    }

    /// Builds a dataset from fully populated rows.
    pub fn from_dense(
        columns: Vec<String>,
        rows: Vec<Vec<f64>>,
        observed: Vec<f64>,
        target: impl Into<String>,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        let rows = rows
            .into_iter()
            .map(|r| r.into_iter().map(Some).collect())
            .collect();
        Self::new(columns, rows, observed, target, source_id)
    }

    fn check(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(ChiError::Load("dataset has no CV columns".into()));
        }
        if self.rows.is_empty() {
            return Err(ChiError::Load("dataset has no rows".into()));
        }
        if self.rows.len() != self.observed.len() {
            return Err(ChiError::Load(format!(
                "{} rows but {} observed values",
                self.rows.len(),
                self.observed.len()
            )));
        }
        let m = self.columns.len();
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != m {
                return Err(ChiError::Load(format!(
                    "row {}: expected {} fields, found {}",
                    i + 1,
                    m + 1,
                    row.len() + 1
                )));
            }
        }
        if let Some(i) = self.observed.iter().position(|o| !o.is_finite()) {
            return Err(ChiError::Load(format!(
                "row {}: observed value is not finite",
                i + 1
            )));
        }
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.as_str()) {
                return Err(ChiError::Load(format!("duplicate column name '{c}'")));
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Non-missing values of one column.
    pub fn column_values(&self, col: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().filter_map(move |r| r[col])
    }

    /// Dense row-major copy; fails if any cell is missing.
    pub fn dense(&self) -> Result<Vec<Vec<f64>>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, v)| {
                        v.ok_or_else(|| {
                            ChiError::Contract(format!(
                                "missing value at row {}, column '{}'",
                                i + 1,
                                self.columns[j]
                            ))
                        })
                    })
                    .collect()
            })
            .collect()
    }

    /// Subset of rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> ConfigDataset {
        ConfigDataset {
            columns: self.columns.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            observed: idx.iter().map(|&i| self.observed[i]).collect(),
            target: self.target.clone(),
            source_id: self.source_id.clone(),
            provenance: self.provenance,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub delimiter: u8,
    /// Observed-metric column; `None` selects the last column.
    pub target: Option<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            delimiter: b',',
            target: None,
        }
    }
}

/// Header plus raw cells of a CSV file, before the target is split off.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

fn parse_cell(cell: &str) -> std::result::Result<Option<f64>, ()> {
    let t = cell.trim();
    if t.is_empty() {
        return Ok(None);
    }
    t.parse::<f64>().map(Some).map_err(|_| ())
}

/// Reads a header + numeric body. Lines starting with `#` are skipped.
pub fn read_table<R: Read>(reader: R, delimiter: u8) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(ChiError::Load("missing header row".into()));
    }
    let mut seen = HashSet::new();
    for h in &header {
        if !seen.insert(h.as_str()) {
            return Err(ChiError::Load(format!("duplicate column name '{h}'")));
        }
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row_no = i + 1;
        if rec.len() != header.len() {
            return Err(ChiError::Load(format!(
                "row {row_no}: expected {} fields, found {}",
                header.len(),
                rec.len()
            )));
        }
        let mut values = Vec::with_capacity(rec.len());
        for (j, cell) in rec.iter().enumerate() {
            let v = parse_cell(cell).map_err(|_| {
                ChiError::Load(format!(
                    "row {row_no}: non-numeric value '{}' in column '{}'",
                    cell.trim(),
                    header[j]
                ))
            })?;
            values.push(v);
        }
        rows.push(values);
    }
    Ok(RawTable { header, rows })
}

/// Parses a configuration dataset from CSV text.
pub fn read_csv<R: Read>(reader: R, opts: &LoadOptions, source_id: &str) -> Result<ConfigDataset> {
    let table = read_table(reader, opts.delimiter)?;
    let target_idx = match &opts.target {
        Some(name) => table
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ChiError::Load(format!("target column '{name}' not found")))?,
        None => table.header.len() - 1,
    };
    if table.header.len() < 2 {
        return Err(ChiError::Load(
            "need at least one CV column besides the target".into(),
        ));
    }
    let target = table.header[target_idx].clone();
    let columns: Vec<String> = table
        .header
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != target_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut rows = Vec::with_capacity(table.rows.len());
    let mut observed = Vec::with_capacity(table.rows.len());
    let mut rejected = 0usize;
    for mut row in table.rows {
        let o = row.remove(target_idx);
        match o {
            Some(v) => {
                rows.push(row);
                observed.push(v);
            }
            None => rejected += 1,
        }
    }
    if rejected > 0 {
        log::warn!("{source_id}: rejected {rejected} rows with a missing '{target}' value");
    }
    ConfigDataset::new(columns, rows, observed, target, source_id)
}

pub fn load_csv(path: &Path, opts: &LoadOptions) -> Result<ConfigDataset> {
    let file = File::open(path).map_err(|e| ChiError::io(path, e))?;
    read_csv(file, opts, &path.display().to_string())
}

/// Loads a CSV that may or may not carry the target column (for scoring).
pub fn load_table(path: &Path, delimiter: u8) -> Result<RawTable> {
    let file = File::open(path).map_err(|e| ChiError::io(path, e))?;
    read_table(file, delimiter)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FillStrategy {
    Median,
    Constant(f64),
}

pub(crate) fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Fills every missing cell. Returns the filled dataset and the per-column
/// fill values (raw units) so unseen data can be filled identically.
pub fn fill_missing(
    ds: &ConfigDataset,
    strategy: FillStrategy,
) -> Result<(ConfigDataset, Vec<f64>)> {
    let mut fills = Vec::with_capacity(ds.n_cols());
    for (j, name) in ds.columns.iter().enumerate() {
        let fill = match strategy {
            FillStrategy::Constant(c) => c,
            FillStrategy::Median => {
                let mut vals: Vec<f64> = ds.column_values(j).collect();
                median(&mut vals).ok_or_else(|| {
                    ChiError::Load(format!("column '{name}' has no values to take a median of"))
                })?
            }
        };
        fills.push(fill);
    }
    Ok((apply_fills(ds, &fills), fills))
}

pub fn apply_fills(ds: &ConfigDataset, fills: &[f64]) -> ConfigDataset {
    let mut out = ds.clone();
    for row in &mut out.rows {
        for (v, &f) in row.iter_mut().zip(fills) {
            if v.is_none() {
                *v = Some(f);
            }
        }
    }
    out.provenance.filled = true;
    out
}

/// Drops rows whose observed metric is exactly zero (idle or broken trace
/// records). Returns the kept dataset and the number of dropped rows.
pub fn drop_zero_observed(ds: &ConfigDataset) -> Result<(ConfigDataset, usize)> {
    let keep: Vec<usize> = (0..ds.n_rows())
        .filter(|&i| ds.observed[i] != 0.0)
        .collect();
    let dropped = ds.n_rows() - keep.len();
    if keep.is_empty() {
        return Err(ChiError::Load(format!(
            "{}: every observed value is zero",
            ds.source_id
        )));
    }
    Ok((ds.select_rows(&keep), dropped))
}

/// Applies each column's schema transform. Columns absent from the schema
/// are left linear. Refuses to run twice on the same dataset.
pub fn apply_transform(ds: &ConfigDataset, schema: &CvSchema) -> Result<ConfigDataset> {
    if ds.provenance.transformed {
        return Err(ChiError::Contract(format!(
            "{}: transforms already applied",
            ds.source_id
        )));
    }
    let transforms: Vec<Transform> = ds
        .columns
        .iter()
        .map(|c| schema.get(c).map(|s| s.transform).unwrap_or_default())
        .collect();
    transform_with(ds, &transforms)
}

pub(crate) fn transform_with(
    ds: &ConfigDataset,
    transforms: &[Transform],
) -> Result<ConfigDataset> {
    let mut out = ds.clone();
    for (i, row) in out.rows.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            if let (Some(v), Transform::Log1p) = (cell.as_mut(), transforms[j]) {
                if *v < 0.0 {
                    return Err(ChiError::Domain {
                        row: i + 1,
                        column: ds.columns[j].clone(),
                        message: format!("log1p needs a non-negative value, got {v}"),
                    });
                }
                *v = v.ln_1p();
            }
        }
    }
    out.provenance.transformed = true;
    Ok(out)
}

/// Frozen normalization of one CV column (values are post-transform).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub raw_min: f64,
    pub raw_max: f64,
    pub transform: Transform,
    /// Fill value for missing cells, raw units (pre-transform).
    pub fill: f64,
    /// Constant in the training data: carries no information, maps to 1.0.
    #[serde(default)]
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub columns: Vec<ColumnStats>,
    pub target: String,
    pub observed_min: f64,
    pub observed_max: f64,
    pub epsilon: f64,
}

fn to_band(v: f64, lo: f64, hi: f64, eps: f64) -> f64 {
    let t = eps + (1.0 - eps) * (v - lo) / (hi - lo);
    t.clamp(eps, 1.0)
}

fn from_band(t: f64, lo: f64, hi: f64, eps: f64) -> f64 {
    lo + (t - eps) / (1.0 - eps) * (hi - lo)
}

impl NormStats {
    pub fn column(&self, name: &str) -> Option<(usize, &ColumnStats)> {
        self.columns
            .iter()
            .enumerate()
            .find(|(_, c)| c.name == name)
    }

    /// Maps a post-transform value of column `col` into `[epsilon, 1]`.
    pub fn normalize_value(&self, col: usize, v: f64) -> f64 {
        let c = &self.columns[col];
        if c.degenerate || c.raw_max <= c.raw_min {
            return 1.0;
        }
        to_band(v, c.raw_min, c.raw_max, self.epsilon)
    }

    pub fn denormalize_value(&self, col: usize, t: f64) -> f64 {
        let c = &self.columns[col];
        from_band(t, c.raw_min, c.raw_max, self.epsilon)
    }

    pub fn normalize_observed(&self, o: f64) -> f64 {
        if self.observed_max <= self.observed_min {
            return 1.0;
        }
        to_band(o, self.observed_min, self.observed_max, self.epsilon)
    }

    pub fn denormalize_observed(&self, t: f64) -> f64 {
        from_band(t, self.observed_min, self.observed_max, self.epsilon)
    }

    /// Raw (pre-transform) value to normalized units.
    pub fn normalize_raw(&self, col: usize, raw: f64) -> f64 {
        self.normalize_value(col, self.columns[col].transform.apply(raw))
    }

    pub fn denormalize_raw(&self, col: usize, t: f64) -> f64 {
        self.columns[col]
            .transform
            .invert(self.denormalize_value(col, t))
    }

    pub fn degenerate_columns(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| c.degenerate)
            .map(|c| c.name.clone())
            .collect()
    }
}

/// Freezes normalization statistics on a filled, transformed dataset.
///
/// The normalization range of each CV covers both the data range and the
/// expert bounds from the schema (transformed), so expert bounds always land
/// inside the band. A column that is constant in the data is flagged
/// degenerate regardless of its expert bounds.
pub fn fit_stats(ds: &ConfigDataset, schema: &CvSchema, fills: &[f64]) -> Result<NormStats> {
    if !ds.provenance.transformed {
        return Err(ChiError::Contract(
            "fit_stats expects a transformed dataset".into(),
        ));
    }
    let mut columns = Vec::with_capacity(ds.n_cols());
    for (j, name) in ds.columns.iter().enumerate() {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in ds.column_values(j) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Err(ChiError::Load(format!("column '{name}' has no values")));
        }
        let degenerate = lo == hi;
        let spec = schema.get(name);
        let transform = spec.map(|s| s.transform).unwrap_or_default();
        if let Some(s) = spec {
            if s.min.is_finite() && s.max.is_finite() && s.min < s.max {
                let (emin, emax) = (transform.apply(s.min), transform.apply(s.max));
                if emin.is_finite() && emax.is_finite() {
                    lo = lo.min(emin);
                    hi = hi.max(emax);
                }
            }
        }
        columns.push(ColumnStats {
            name: name.clone(),
            raw_min: lo,
            raw_max: hi,
            transform,
            fill: fills.get(j).copied().unwrap_or(0.0),
            degenerate,
        });
    }
    let (mut omin, mut omax) = ds
        .observed
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &o| {
            (a.min(o), b.max(o))
        });
    if let Some(ob) = &schema.observed {
        omin = omin.min(ob.min);
        omax = omax.max(ob.max);
    }
    Ok(NormStats {
        columns,
        target: ds.target.clone(),
        observed_min: omin,
        observed_max: omax,
        epsilon: NORM_FLOOR,
    })
}

/// Normalizes a filled, transformed dataset with frozen statistics.
/// Returns the dataset and the names of degenerate (constant) columns.
pub fn normalize(ds: &ConfigDataset, stats: &NormStats) -> Result<(ConfigDataset, Vec<String>)> {
    if ds.provenance.normalized {
        return Err(ChiError::Contract(format!(
            "{}: already normalized",
            ds.source_id
        )));
    }
    let map: Vec<usize> =
        ds.columns
            .iter()
            .map(|c| {
                stats.column(c).map(|(i, _)| i).ok_or_else(|| {
                    ChiError::Schema(format!("no normalization stats for column '{c}'"))
                })
            })
            .collect::<Result<_>>()?;
    let dense = ds.dense()?;
    let rows = dense
        .iter()
        .map(|row| {
            row.iter()
                .zip(&map)
                .map(|(&v, &k)| Some(stats.normalize_value(k, v)))
                .collect()
        })
        .collect();
    let observed = ds
        .observed
        .iter()
        .map(|&o| stats.normalize_observed(o))
        .collect();
    let degenerate = map
        .iter()
        .filter(|&&k| stats.columns[k].degenerate)
        .map(|&k| stats.columns[k].name.clone())
        .collect();
    let out = ConfigDataset {
        columns: ds.columns.clone(),
        rows,
        observed,
        target: ds.target.clone(),
        source_id: ds.source_id.clone(),
        provenance: Provenance {
            filled: ds.provenance.filled,
            transformed: ds.provenance.transformed,
            normalized: true,
        },
    };
    Ok((out, degenerate))
}

/// Training-side preprocessing: fill with medians, transform, freeze stats,
/// normalize.
pub fn fit_preprocess(ds: &ConfigDataset, schema: &CvSchema) -> Result<(ConfigDataset, NormStats)> {
    let (filled, fills) = fill_missing(ds, FillStrategy::Median)?;
    let transformed = apply_transform(&filled, schema)?;
    let stats = fit_stats(&transformed, schema, &fills)?;
    let (normalized, degenerate) = normalize(&transformed, &stats)?;
    if !degenerate.is_empty() {
        log::warn!(
            "constant columns carry no information and map to 1.0: {}",
            degenerate.join(", ")
        );
    }
    Ok((normalized, stats))
}

/// Applies frozen preprocessing (fills, transforms, normalization) to unseen
/// raw data.
pub fn preprocess_with(ds: &ConfigDataset, stats: &NormStats) -> Result<ConfigDataset> {
    let mut fills = Vec::with_capacity(ds.n_cols());
    let mut transforms = Vec::with_capacity(ds.n_cols());
    for c in &ds.columns {
        let (_, cs) = stats
            .column(c)
            .ok_or_else(|| ChiError::Schema(format!("unknown CV column '{c}'")))?;
        fills.push(cs.fill);
        transforms.push(cs.transform);
    }
    let filled = apply_fills(ds, &fills);
    let transformed = transform_with(&filled, &transforms)?;
    Ok(normalize(&transformed, stats)?.0)
}

/// Writes a normalized dataset as CSV with the provenance marker line.
pub fn write_normalized_csv<W: Write>(ds: &ConfigDataset, out: W) -> Result<()> {
    let mut out = out;
    writeln!(out, "{NORMALIZED_MARKER}").map_err(|e| ChiError::io("<normalized csv>", e))?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = ds.columns.clone();
    header.push(ds.target.clone());
    w.write_record(&header)?;
    for (row, o) in ds.rows.iter().zip(&ds.observed) {
        let mut rec: Vec<String> = row
            .iter()
            .map(|v| v.map(|x| format!("{x:.6}")).unwrap_or_default())
            .collect();
        rec.push(format!("{o:.6}"));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| ChiError::io("<normalized csv>", e))?;
    Ok(())
}

/// Writes a raw dataset as plain CSV (full precision).
pub fn write_csv<W: Write>(ds: &ConfigDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = ds.columns.clone();
    header.push(ds.target.clone());
    w.write_record(&header)?;
    for (row, o) in ds.rows.iter().zip(&ds.observed) {
        let mut rec: Vec<String> = row
            .iter()
            .map(|v| v.map(|x| format!("{x}")).unwrap_or_default())
            .collect();
        rec.push(format!("{o}"));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| ChiError::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{CvSchema, CvSpec};

    fn parse(text: &str) -> Result<ConfigDataset> {
        read_csv(text.as_bytes(), &LoadOptions::default(), "test")
    }

    #[test]
    fn loads_three_rows() {
        let ds = parse("mem,cores,perf\n1,2,10\n2,4,20\n4,8,40\n").unwrap();
        assert_eq!(ds.n_cols(), 2);
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.target, "perf");
        assert_eq!(ds.observed, vec![10.0, 20.0, 40.0]);
    }

    #[test]
    fn blank_cell_is_missing_not_zero() {
        let ds = parse("mem,cores,perf\n1,2,10\n,4,20\n4,8,40\n").unwrap();
        assert_eq!(ds.rows[1][0], None);
        assert_eq!(ds.rows[1][1], Some(4.0));
    }

    #[test]
    fn ragged_row_names_row() {
        let err = parse("mem,cores,perf\n1,2,10\n2,4,20\n4,8,40\n5,50\n").unwrap_err();
        assert!(
            err.to_string().contains("row 4: expected 3 fields"),
            "{err}"
        );
    }

    #[test]
    fn non_numeric_target_is_error() {
        let err = parse("mem,perf\n1,fast\n").unwrap_err();
        assert!(matches!(err, ChiError::Load(_)));
    }

    #[test]
    fn duplicate_columns_rejected() {
        assert!(parse("mem,mem,perf\n1,2,3\n").is_err());
    }

    #[test]
    fn target_by_name() {
        let opts = LoadOptions {
            target: Some("perf".into()),
            ..Default::default()
        };
        let ds = read_csv("perf,mem\n10,1\n20,2\n".as_bytes(), &opts, "t").unwrap();
        assert_eq!(ds.columns, vec!["mem"]);
        assert_eq!(ds.observed, vec![10.0, 20.0]);
    }

    #[test]
    fn median_fill() {
        let ds = parse("a,perf\n2,1\n,1\n4,1\n").unwrap();
        let (filled, fills) = fill_missing(&ds, FillStrategy::Median).unwrap();
        assert_eq!(fills, vec![3.0]);
        let col: Vec<f64> = filled.column_values(0).collect();
        assert_eq!(col, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn constant_fill() {
        let ds = parse("a,perf\n5,1\n5,1\n,1\n").unwrap();
        let (filled, _) = fill_missing(&ds, FillStrategy::Constant(0.0)).unwrap();
        let col: Vec<f64> = filled.column_values(0).collect();
        assert_eq!(col, vec![5.0, 5.0, 0.0]);
    }

    #[test]
    fn all_missing_column_errors() {
        let ds = parse("a,b,perf\n,1,1\n,2,1\n").unwrap();
        let err = fill_missing(&ds, FillStrategy::Median).unwrap_err();
        assert!(err.to_string().contains("'a'"));
    }

    fn log_schema(name: &str) -> CvSchema {
        let mut spec = CvSpec::dominant(name, 0.0, 1.0);
        spec.transform = Transform::Log1p;
        CvSchema::new(vec![spec])
    }

    #[test]
    fn log1p_values() {
        let e1 = std::f64::consts::E - 1.0;
        let ds = ConfigDataset::from_dense(
            vec!["x".into()],
            vec![vec![0.0], vec![e1], vec![1000.0]],
            vec![1.0, 1.0, 1.0],
            "o",
            "t",
        )
        .unwrap();
        let t = apply_transform(&ds, &log_schema("x")).unwrap();
        let col: Vec<f64> = t.column_values(0).collect();
        assert_eq!(col[0], 0.0);
        assert!((col[1] - 1.0).abs() < 1e-15);
        // ln(1001)
        assert!((col[2] - 6.908_754_779_315_221).abs() < 1e-12);
    }

    #[test]
    fn log1p_negative_is_domain_error() {
        let ds = ConfigDataset::from_dense(vec!["x".into()], vec![vec![-1.0]], vec![1.0], "o", "t")
            .unwrap();
        let err = apply_transform(&ds, &log_schema("x")).unwrap_err();
        assert!(matches!(err, ChiError::Domain { row: 1, .. }));
    }

    #[test]
    fn transform_applies_once() {
        let ds = ConfigDataset::from_dense(vec!["x".into()], vec![vec![1.0]], vec![1.0], "o", "t")
            .unwrap();
        let schema = log_schema("x");
        let once = apply_transform(&ds, &schema).unwrap();
        assert!(apply_transform(&once, &schema).is_err());
    }

    fn stats_0_100() -> NormStats {
        NormStats {
            columns: vec![ColumnStats {
                name: "x".into(),
                raw_min: 0.0,
                raw_max: 100.0,
                transform: Transform::Linear,
                fill: 0.0,
                degenerate: false,
            }],
            target: "o".into(),
            observed_min: 0.0,
            observed_max: 100.0,
            epsilon: NORM_FLOOR,
        }
    }

    #[test]
    fn band_endpoints_and_midpoint() {
        let s = stats_0_100();
        assert_eq!(s.normalize_value(0, 100.0), 1.0);
        assert_eq!(s.normalize_value(0, 0.0), 0.001);
        assert!((s.normalize_value(0, 50.0) - 0.5005).abs() < 1e-15);
        // unseen values are clamped
        assert_eq!(s.normalize_value(0, 150.0), 1.0);
        assert_eq!(s.normalize_value(0, -3.0), 0.001);
    }

    #[test]
    fn fit_stats_ranges() {
        let ds = ConfigDataset::from_dense(
            vec!["x".into()],
            vec![vec![2.0], vec![4.0], vec![6.0]],
            vec![100.0, 250.0, 400.0],
            "o",
            "t",
        )
        .unwrap();
        let schema = CvSchema::default_for(&ds);
        let t = apply_transform(&ds, &schema).unwrap();
        let st = fit_stats(&t, &schema, &[4.0]).unwrap();
        assert_eq!((st.columns[0].raw_min, st.columns[0].raw_max), (2.0, 6.0));
        assert_eq!((st.observed_min, st.observed_max), (100.0, 400.0));
    }

    #[test]
    fn fit_stats_after_log1p() {
        let e1 = std::f64::consts::E - 1.0;
        let ds = ConfigDataset::from_dense(
            vec!["x".into()],
            vec![vec![0.0], vec![e1]],
            vec![1.0, 2.0],
            "o",
            "t",
        )
        .unwrap();
        let mut schema = log_schema("x");
        schema.cvs[0].max = e1;
        let t = apply_transform(&ds, &schema).unwrap();
        let st = fit_stats(&t, &schema, &[0.0]).unwrap();
        assert_eq!(st.columns[0].raw_min, 0.0);
        assert!((st.columns[0].raw_max - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_column_maps_to_one_and_is_flagged() {
        let ds = ConfigDataset::from_dense(
            vec!["c".into(), "x".into()],
            vec![vec![7.0, 1.0], vec![7.0, 2.0]],
            vec![1.0, 2.0],
            "o",
            "t",
        )
        .unwrap();
        let (norm, stats) = fit_preprocess(&ds, &CvSchema::default_for(&ds)).unwrap();
        assert_eq!(stats.degenerate_columns(), vec!["c".to_string()]);
        assert!(norm.column_values(0).all(|v| v == 1.0));
    }

    #[test]
    fn zero_observed_rows_dropped() {
        let ds = ConfigDataset::from_dense(
            vec!["x".into()],
            vec![vec![1.0], vec![2.0], vec![3.0]],
            vec![0.0, 5.0, 0.0],
            "o",
            "t",
        )
        .unwrap();
        let (kept, dropped) = drop_zero_observed(&ds).unwrap();
        assert_eq!(dropped, 2);
        assert_eq!(kept.observed, vec![5.0]);
    }

    #[test]
    fn normalized_csv_has_marker_and_reloads() {
        let ds = ConfigDataset::from_dense(
            vec!["x".into()],
            vec![vec![0.0], vec![10.0]],
            vec![1.0, 3.0],
            "o",
            "t",
        )
        .unwrap();
        let (norm, _) = fit_preprocess(&ds, &CvSchema::default_for(&ds)).unwrap();
        let mut buf = Vec::new();
        write_normalized_csv(&norm, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# chi-normalized v1\n"));
        let back = parse(&text).unwrap();
        assert_eq!(back.observed, vec![0.001, 1.0]);
    }
}
