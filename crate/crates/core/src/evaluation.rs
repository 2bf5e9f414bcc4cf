//! Train/test splitting, hold-out reports, and experiment artifacts.

use std::collections::hash_map::DefaultHasher;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{drop_zero_observed, fit_preprocess, preprocess_with, ConfigDataset};
use crate::error::{ChiError, Result};
use crate::model::{curve_samples, HealthModel};
use crate::schema::{validate_schema, CvSchema, Finding, Severity};
use crate::training::{evaluate_holdout, fit, mse, Objective, TrainOptions, TrainTrace};

pub const DEFAULT_SEEDS: usize = 5;
pub const CURVE_POINTS: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    /// Fraction of rows in the training split.
    pub ratio: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratio: 0.8,
            seed: 0,
            shuffle: true,
        }
    }
}

/// Row indices of a train/test partition.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn hash_value(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.hash(&mut h);
        h.finish()
    }
}

pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<Split> {
    if !(spec.ratio > 0.0 && spec.ratio < 1.0) {
        return Err(ChiError::Contract(format!(
            "split ratio {} outside (0, 1)",
            spec.ratio
        )));
    }
    if n < 2 {
        return Err(ChiError::Contract(format!("cannot split {n} row(s)")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    if spec.shuffle {
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    }
    // The small slack keeps e.g. 0.8 * 10 from rounding up to 9.
    let n_train = (spec.ratio * n as f64 - 1e-9).ceil() as usize;
    if n_train == 0 || n_train >= n {
        return Err(ChiError::Contract(format!(
            "ratio {} leaves an empty side for {n} rows",
            spec.ratio
        )));
    }
    let test = idx.split_off(n_train);
    Ok(Split { train: idx, test })
}

pub fn split(ds: &ConfigDataset, spec: &SplitSpec) -> Result<(ConfigDataset, ConfigDataset)> {
    let s = split_indices(ds.n_rows(), spec)?;
    Ok((ds.select_rows(&s.train), ds.select_rows(&s.test)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowRecord {
    /// Position in the evaluated set.
    pub row: usize,
    pub h: f64,
    pub o: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mse: f64,
    /// Variance of the per-row squared residuals.
    pub variance: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub runtime_ms: u128,
    pub records: Vec<RowRecord>,
    pub objective: Objective,
    pub split: Option<SplitSpec>,
}

impl EvalReport {
    pub fn from_records(
        records: Vec<RowRecord>,
        objective: Objective,
        n_train: usize,
        runtime_ms: u128,
    ) -> Self {
        let h: Vec<f64> = records.iter().map(|r| r.h).collect();
        let o: Vec<f64> = records.iter().map(|r| r.o).collect();
        let (mse, variance) = if records.is_empty() {
            (0.0, 0.0)
        } else {
            let terms: Vec<f64> = h
                .iter()
                .zip(&o)
                .map(|(&a, &b)| mse(&[a], &[b], objective).unwrap_or(f64::NAN))
                .collect();
            let mean = mse(&h, &o, objective).unwrap_or(f64::NAN);
            let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / terms.len() as f64;
            (mean, var)
        };
        EvalReport {
            mse,
            variance,
            n_train,
            n_test: records.len(),
            runtime_ms,
            records,
            objective,
            split: None,
        }
    }

    /// CSV `row,H,O,residual` followed by `mse=<v> variance=<v>`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut text = String::from("row,H,O,residual\n");
        for r in &self.records {
            let _ = writeln!(text, "{},{:.6},{:.6},{:.6}", r.row + 1, r.h, r.o, r.h - r.o);
        }
        let _ = writeln!(text, "mse={:.6} variance={:.6}", self.mse, self.variance);
        out.write_all(text.as_bytes())
            .map_err(|e| ChiError::io("<report>", e))
    }
}

/// Everything one train/evaluate run produces.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub report: EvalReport,
    pub model: HealthModel,
    pub trace: TrainTrace,
    pub findings: Vec<Finding>,
    pub split: Split,
    pub dropped_zero_rows: usize,
}

/// Validates, splits, fits on the training side with frozen normalization,
/// and scores the test side.
pub fn run_experiment(
    ds: &ConfigDataset,
    schema: &CvSchema,
    opts: &TrainOptions,
    spec: &SplitSpec,
) -> Result<Experiment> {
    let start = Instant::now();
    let validation = validate_schema(schema, ds);
    let findings = validation.findings.clone();
    let schema = validation.into_result()?;
    let (ds, dropped) = drop_zero_observed(ds)?;
    let parts = split_indices(ds.n_rows(), spec)?;
    let train = ds.select_rows(&parts.train);
    let test = ds.select_rows(&parts.test);
    let (train_n, stats) = fit_preprocess(&train, &schema)?;
    let test_n = preprocess_with(&test, &stats)?;
    let (model, trace) = fit(&train_n, &schema, &stats, opts)?;
    let mut report = evaluate_holdout(&model, &test_n, opts.objective)?;
    report.n_train = train.n_rows();
    report.split = Some(*spec);
    report.runtime_ms = start.elapsed().as_millis();
    Ok(Experiment {
        report,
        model,
        trace,
        findings,
        split: parts,
        dropped_zero_rows: dropped,
    })
}

/// Results of the same experiment over several split seeds.
#[derive(Debug, Clone)]
pub struct MultiRun {
    pub seeds: Vec<u64>,
    pub runs: Vec<Experiment>,
}

impl MultiRun {
    pub fn median_mse(&self) -> f64 {
        median(self.runs.iter().map(|r| r.report.mse).collect())
    }

    pub fn median_variance(&self) -> f64 {
        median(self.runs.iter().map(|r| r.report.variance).collect())
    }

    /// CSV `seed,mse,variance,n_train,n_test` plus a `median` row.
    pub fn write_summary<W: Write>(&self, mut out: W) -> Result<()> {
        let mut text = String::from("seed,mse,variance,n_train,n_test\n");
        for (seed, r) in self.seeds.iter().zip(&self.runs) {
            let _ = writeln!(
                text,
                "{seed},{:.6},{:.6},{},{}",
                r.report.mse, r.report.variance, r.report.n_train, r.report.n_test
            );
        }
        let _ = writeln!(
            text,
            "median,{:.6},{:.6},,",
            self.median_mse(),
            self.median_variance()
        );
        out.write_all(text.as_bytes())
            .map_err(|e| ChiError::io("<summary>", e))
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    crate::dataset::median(&mut v).unwrap_or(f64::NAN)
}

/// Runs the experiment once per seed; the seed drives the split.
pub fn run_seeds(
    ds: &ConfigDataset,
    schema: &CvSchema,
    opts: &TrainOptions,
    ratio: f64,
    seeds: &[u64],
) -> Result<MultiRun> {
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let spec = SplitSpec {
            ratio,
            seed,
            shuffle: true,
        };
        let run_opts = TrainOptions {
            seed,
            ..opts.clone()
        };
        let exp = run_experiment(ds, schema, &run_opts, &spec)?;
        log::info!(
            "seed {seed}: mse={:.6} variance={:.6}",
            exp.report.mse,
            exp.report.variance
        );
        runs.push(exp);
    }
    Ok(MultiRun {
        seeds: seeds.to_vec(),
        runs,
    })
}

pub fn report_file_name(dataset: &str, ratio: f64, seed: u64) -> String {
    format!("{dataset}_{ratio}_{seed}.report.csv")
}

pub fn curve_file_name(dataset: &str, cv: &str) -> String {
    format!("{dataset}_{cv}.curve.csv")
}

/// CSV `cv,p_norm,h` for every curve of the model.
pub fn write_curves_csv<W: Write>(
    model: &HealthModel,
    cvs: Option<&[&str]>,
    mut out: W,
) -> Result<()> {
    let mut text = String::from("cv,p_norm,h\n");
    for c in &model.curves {
        if cvs.is_some_and(|only| !only.contains(&c.cv.as_str())) {
            continue;
        }
        for (p, h) in curve_samples(&c.curve, CURVE_POINTS) {
            let _ = writeln!(text, "{},{p:.6},{h:.6}", c.cv);
        }
    }
    out.write_all(text.as_bytes())
        .map_err(|e| ChiError::io("<curves>", e))
}

/// Self-contained SVG line chart of one curve.
pub fn curve_svg(cv: &str, samples: &[(f64, f64)]) -> String {
    let (w, h, pad) = (360.0, 240.0, 30.0);
    let x = |p: f64| pad + p * (w - 2.0 * pad);
    let y = |v: f64| h - pad - v * (h - 2.0 * pad);
    let points: Vec<String> = samples
        .iter()
        .map(|(p, v)| format!("{:.2},{:.2}", x(*p), y(*v)))
        .collect();
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n",
            "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n",
            "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{pts}\"/>\n",
            "<text x=\"{tx}\" y=\"18\" font-family=\"sans-serif\" font-size=\"12\">{cv}</text>\n",
            "</svg>\n"
        ),
        w = w,
        h = h,
        x0 = x(0.0),
        x1 = x(1.0),
        y0 = y(0.0),
        y1 = y(1.0),
        pts = points.join(" "),
        tx = pad,
        cv = xml_escape(cv),
    )
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn write_file(path: &Path, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    std::fs::write(path, buf).map_err(|e| ChiError::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Writes one curve CSV and SVG per modelled CV; returns the paths.
pub fn write_curve_files(
    model: &HealthModel,
    dir: &Path,
    dataset: &str,
    svg: bool,
) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for c in &model.curves {
        let path = dir.join(curve_file_name(dataset, &c.cv));
        paths.push(write_file(&path, |b| {
            write_curves_csv(model, Some(&[c.cv.as_str()]), b)
        })?);
        if svg {
            let path = path.with_extension("svg");
            let samples = curve_samples(&c.curve, CURVE_POINTS);
            std::fs::write(&path, curve_svg(&c.cv, &samples))
                .map_err(|e| ChiError::io(&path, e))?;
            paths.push(path);
        }
    }
    Ok(paths)
}

/// Report, model, trace and curve files for one experiment.
pub fn write_experiment(
    exp: &Experiment,
    dir: &Path,
    dataset: &str,
    svg: bool,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| ChiError::io(dir, e))?;
    let spec = exp.report.split.unwrap_or_default();
    let stem = format!("{dataset}_{}_{}", spec.ratio, spec.seed);
    let mut paths = vec![write_file(
        &dir.join(report_file_name(dataset, spec.ratio, spec.seed)),
        |b| exp.report.write_csv(b),
    )?];
    let model_path = dir.join(format!("{stem}.model.json"));
    exp.model.save(&model_path)?;
    paths.push(model_path);
    paths.push(write_file(&dir.join(format!("{stem}.trace.csv")), |b| {
        exp.trace.write_csv(b)
    })?);
    paths.extend(write_curve_files(&exp.model, dir, dataset, svg)?);
    Ok(paths)
}

/// Error-level findings as one message.
pub fn findings_summary(findings: &[Finding]) -> String {
    findings
        .iter()
        .filter(|f| f.severity == Severity::Error)
        .map(|f| f.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let s = split_indices(10, &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (8, 2));
        let half = SplitSpec {
            ratio: 0.5,
            ..Default::default()
        };
        let s = split_indices(2, &half).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (1, 1));
    }

    #[test]
    fn split_is_seeded() {
        let spec = SplitSpec {
            seed: 7,
            ..Default::default()
        };
        assert_eq!(
            split_indices(50, &spec).unwrap(),
            split_indices(50, &spec).unwrap()
        );
        let other = SplitSpec { seed: 8, ..spec };
        assert_ne!(
            split_indices(50, &spec).unwrap(),
            split_indices(50, &other).unwrap()
        );
    }

    #[test]
    fn split_rejects_empty_side() {
        let spec = SplitSpec {
            ratio: 0.99,
            ..Default::default()
        };
        assert!(split_indices(10, &spec).is_err());
        assert!(split_indices(1, &SplitSpec::default()).is_err());
    }

    #[test]
    fn unshuffled_split_keeps_order() {
        let spec = SplitSpec {
            shuffle: false,
            ..Default::default()
        };
        let s = split_indices(5, &spec).unwrap();
        assert_eq!(s.train, vec![0, 1, 2, 3]);
        assert_eq!(s.test, vec![4]);
    }

    #[test]
    fn constant_prediction_report() {
        let recs = (0..4)
            .map(|row| RowRecord {
                row,
                h: 0.3,
                o: 0.3,
            })
            .collect();
        let r = EvalReport::from_records(recs, Objective::Plain, 0, 0);
        assert_eq!((r.mse, r.variance), (0.0, 0.0));
    }

    #[test]
    fn report_csv_has_summary_line() {
        let recs = vec![
            RowRecord {
                row: 0,
                h: 0.5,
                o: 0.25,
            },
            RowRecord {
                row: 1,
                h: 0.5,
                o: 0.5,
            },
        ];
        let r = EvalReport::from_records(recs, Objective::Plain, 0, 0);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "row,H,O,residual\n1,0.500000,0.250000,0.250000\n2,0.500000,0.500000,0.000000\n\
             mse=0.031250 variance=0.000977\n"
        );
    }

    #[test]
    fn svg_is_well_formed() {
        let svg = curve_svg("a<b", &[(0.0, 0.0), (1.0, 1.0)]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b"));
    }
}
