//! The `chi` command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 input or validation error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::baselines::{compare, CompareOptions};
use crate::dataset::{
    drop_zero_observed, fit_preprocess, load_csv, load_table, write_csv, ConfigDataset, LoadOptions,
};
use crate::error::{ChiError, Result};
use crate::evaluation::{run_seeds, write_curve_files, write_experiment, SplitSpec};
use crate::model::{score, HealthModel};
use crate::schema::reduction::pca_rank;
use crate::schema::{validate_schema, CvSchema, Severity};
use crate::synth::{generate, SynthSpec};
use crate::training::{fit, Objective, TrainOptions, UpdateRule};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "chi",
    version,
    about = "Learn and apply configuration health indices"
)]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset CSV (header row, one observed-metric column).
    #[arg(long)]
    pub data: PathBuf,

    /// Observed-metric column (default: last column).
    #[arg(long)]
    pub target: Option<String>,
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long, env = "CHI_OUT_DIR", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,

    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,

    /// plain or log.
    #[arg(long, default_value = "plain")]
    pub objective: Objective,

    /// Stop once the training MSE reaches this value.
    #[arg(long)]
    pub target_mse: Option<f64>,

    /// sequential (per-row steps) or batch.
    #[arg(long, default_value = "sequential")]
    pub update: UpdateRule,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl TrainArgs {
    pub fn options(&self) -> TrainOptions {
        TrainOptions {
            alpha: self.alpha,
            max_epochs: self.epochs,
            target_mse: self.target_mse,
            objective: self.objective,
            seed: self.seed,
            update: self.update,
            ..TrainOptions::default()
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a dataset against a schema.
    Validate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Rank CVs by PCA importance.
    Reduce {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Fit a model on a whole dataset.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Model file (default: <out>/<dataset>.model.json).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Also write an SVG chart per curve.
        #[arg(long)]
        svg: bool,
    },
    /// Score configurations with a trained model.
    Score {
        #[arg(long)]
        model: PathBuf,
        /// Configurations to score; a target column, if present, is ignored.
        #[arg(long, required_unless_present = "set", conflicts_with = "set")]
        data: Option<PathBuf>,
        /// One configuration given as name=value pairs.
        #[arg(long, value_name = "NAME=VALUE")]
        set: Vec<String>,
    },
    /// Train/test experiments over several split seeds.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Training fraction.
        #[arg(long, default_value_t = 0.8)]
        ratio: f64,
        /// Number of split seeds, starting at --seed.
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        svg: bool,
    },
    /// CHI against OLS and the hinge baseline on one split.
    Compare {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long, default_value_t = 0.8)]
        ratio: f64,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Hinge terms allowed in the baseline.
        #[arg(long, default_value_t = 10)]
        max_terms: usize,
    },
    /// Generate a synthetic dataset and its ground-truth model.
    Synth {
        #[arg(long, default_value_t = 6)]
        cvs: usize,
        #[arg(long, default_value_t = 200)]
        rows: usize,
        #[arg(long, default_value_t = 0.02)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Constant columns the generator ignores.
        #[arg(long, default_value_t = 0)]
        dead: usize,
        /// File name prefix.
        #[arg(long, default_value = "synth")]
        name: String,
        #[command(flatten)]
        out: OutArgs,
    },
}

/// Parses arguments, runs the command, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_logging(cli.verbose);
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                EXIT_INPUT
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

fn dispatch(cmd: &Command) -> Result<i32> {
    match cmd {
        Command::Validate { data, schema } => cmd_validate(data, schema.as_deref()),
        Command::Reduce { data, schema, out } => cmd_reduce(data, schema.as_deref(), &out.out),
        Command::Train {
            data,
            schema,
            train,
            out,
            model,
            svg,
        } => cmd_train(
            data,
            schema.as_deref(),
            train,
            &out.out,
            model.as_deref(),
            *svg,
        ),
        Command::Score { model, data, set } => cmd_score(model, data.as_deref(), set),
        Command::Eval {
            data,
            schema,
            ratio,
            seeds,
            train,
            out,
            svg,
        } => cmd_eval(
            data,
            schema.as_deref(),
            *ratio,
            *seeds,
            train,
            &out.out,
            *svg,
        ),
        Command::Compare {
            data,
            schema,
            ratio,
            train,
            out,
            max_terms,
        } => cmd_compare(data, schema.as_deref(), *ratio, train, &out.out, *max_terms),
        Command::Synth {
            cvs,
            rows,
            noise,
            seed,
            dead,
            name,
            out,
        } => cmd_synth(*cvs, *rows, *noise, *seed, *dead, name, &out.out),
    }
}

fn load(data: &DataArgs) -> Result<ConfigDataset> {
    load_csv(
        &data.data,
        &LoadOptions {
            target: data.target.clone(),
            ..LoadOptions::default()
        },
    )
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

fn schema_or_default(path: Option<&Path>, ds: &ConfigDataset) -> Result<CvSchema> {
    match path {
        Some(p) => CvSchema::load(p),
        None => {
            log::warn!(
                "no schema given: every CV defaults to dominant, monotonic, bounds from the data"
            );
            Ok(CvSchema::default_for(ds))
        }
    }
}

/// Validates and prints findings; warnings and errors go to stderr.
fn checked_schema(schema: &CvSchema, ds: &ConfigDataset) -> Result<CvSchema> {
    let v = validate_schema(schema, ds);
    for f in &v.findings {
        match f.severity {
            Severity::Info => log::info!("{f}"),
            _ => eprintln!("{f}"),
        }
    }
    v.into_result()
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| ChiError::io(dir, e))
}

fn write_bytes(path: &Path, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    std::fs::write(path, buf).map_err(|e| ChiError::io(path, e))
}

fn cmd_validate(data: &DataArgs, schema: Option<&Path>) -> Result<i32> {
    let ds = load(data)?;
    let schema = schema_or_default(schema, &ds)?;
    let v = validate_schema(&schema, &ds);
    for f in &v.findings {
        eprintln!("{f}");
    }
    if v.has_errors() {
        return Ok(EXIT_INPUT);
    }
    println!("ok: {} rows, {} CVs", ds.n_rows(), ds.n_cols());
    Ok(EXIT_OK)
}

fn cmd_reduce(data: &DataArgs, schema: Option<&Path>, out: &Path) -> Result<i32> {
    let ds = load(data)?;
    let schema = checked_schema(&schema_or_default(schema, &ds)?, &ds)?;
    let (ds, _) = drop_zero_observed(&ds)?;
    let (norm, _) = fit_preprocess(&ds, &schema)?;
    let report = pca_rank(&norm)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    create_dir(out)?;
    let path = out.join(format!("{}.reduction.csv", dataset_name(&data.data)));
    write_bytes(&path, |b| report.write_csv(b))?;
    let mut text = Vec::new();
    report.write_csv(&mut text)?;
    print!("{}", String::from_utf8_lossy(&text));
    Ok(EXIT_OK)
}

fn cmd_train(
    data: &DataArgs,
    schema: Option<&Path>,
    train: &TrainArgs,
    out: &Path,
    model_path: Option<&Path>,
    svg: bool,
) -> Result<i32> {
    let ds = load(data)?;
    let schema = checked_schema(&schema_or_default(schema, &ds)?, &ds)?;
    let (ds, dropped) = drop_zero_observed(&ds)?;
    if dropped > 0 {
        log::warn!("dropped {dropped} row(s) with zero observed metric");
    }
    let (norm, stats) = fit_preprocess(&ds, &schema)?;
    let (model, trace) = fit(&norm, &schema, &stats, &train.options())?;
    let name = dataset_name(&data.data);
    create_dir(out)?;
    let model_path = model_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join(format!("{name}.model.json")));
    model.save(&model_path)?;
    write_bytes(&out.join(format!("{name}.trace.csv")), |b| {
        trace.write_csv(b)
    })?;
    write_curve_files(&model, out, &name, svg)?;
    println!(
        "epochs={} final_mse={:.6}",
        model.meta.epochs, model.meta.final_mse
    );
    println!("model={}", model_path.display());
    Ok(EXIT_OK)
}

fn parse_set(pairs: &[String]) -> Result<(Vec<String>, Vec<Option<f64>>)> {
    let mut names = Vec::new();
    let mut values = Vec::new();
    for p in pairs {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| ChiError::Load(format!("--set expects name=value, got '{p}'")))?;
        let v = v.trim();
        let value = if v.is_empty() {
            None
        } else {
            Some(
                v.parse::<f64>()
                    .map_err(|_| ChiError::Load(format!("--set {k}: '{v}' is not a number")))?,
            )
        };
        names.push(k.trim().to_string());
        values.push(value);
    }
    Ok((names, values))
}

fn cmd_score(model_path: &Path, data: Option<&Path>, set: &[String]) -> Result<i32> {
    let model = HealthModel::load(model_path)?;
    let schema = model.effective_schema();
    let (columns, rows) = match data {
        Some(path) => {
            let table = load_table(path, b',')?;
            let keep: Vec<usize> = (0..table.header.len())
                .filter(|&j| table.header[j] != model.norm_stats.target)
                .collect();
            let columns = keep.iter().map(|&j| table.header[j].clone()).collect();
            let rows = table
                .rows
                .iter()
                .map(|r| keep.iter().map(|&j| r[j]).collect())
                .collect();
            (columns, rows)
        }
        None => {
            let (c, v) = parse_set(set)?;
            (c, vec![v])
        }
    };
    let mut text = String::from("row,H");
    for c in &model.curves {
        let _ = write!(text, ",{}", c.cv);
    }
    text.push('\n');
    for (i, row) in rows.iter().enumerate() {
        let s = score(&columns, row, &model, &schema).map_err(|e| match e {
            ChiError::Domain {
                column, message, ..
            } => ChiError::Domain {
                row: i + 1,
                column,
                message,
            },
            other => other,
        })?;
        let _ = write!(text, "{},{:.6}", i + 1, s.h);
        for (_, h) in &s.breakdown {
            let _ = write!(text, ",{h:.6}");
        }
        text.push('\n');
    }
    print!("{text}");
    Ok(EXIT_OK)
}

fn cmd_eval(
    data: &DataArgs,
    schema: Option<&Path>,
    ratio: f64,
    seeds: usize,
    train: &TrainArgs,
    out: &Path,
    svg: bool,
) -> Result<i32> {
    if seeds == 0 {
        return Err(ChiError::Load("--seeds must be >= 1".into()));
    }
    let ds = load(data)?;
    let schema = checked_schema(&schema_or_default(schema, &ds)?, &ds)?;
    let seed_list: Vec<u64> = (0..seeds as u64).map(|k| train.seed + k).collect();
    let multi = run_seeds(&ds, &schema, &train.options(), ratio, &seed_list)?;
    let name = dataset_name(&data.data);
    create_dir(out)?;
    for exp in &multi.runs {
        write_experiment(exp, out, &name, false)?;
    }
    // Curves come from the run closest to the median error.
    let median = multi.median_mse();
    if let Some(exp) = multi.runs.iter().min_by(|a, b| {
        (a.report.mse - median)
            .abs()
            .total_cmp(&(b.report.mse - median).abs())
    }) {
        write_curve_files(&exp.model, out, &name, svg)?;
    }
    let summary = out.join(format!("{name}_{ratio}.summary.csv"));
    write_bytes(&summary, |b| multi.write_summary(b))?;
    let mut text = Vec::new();
    multi.write_summary(&mut text)?;
    print!("{}", String::from_utf8_lossy(&text));
    Ok(EXIT_OK)
}

fn cmd_compare(
    data: &DataArgs,
    schema: Option<&Path>,
    ratio: f64,
    train: &TrainArgs,
    out: &Path,
    max_terms: usize,
) -> Result<i32> {
    let ds = load(data)?;
    let schema = checked_schema(&schema_or_default(schema, &ds)?, &ds)?;
    let opts = CompareOptions {
        train: train.options(),
        split: SplitSpec {
            ratio,
            seed: train.seed,
            shuffle: true,
        },
        max_terms,
        ..CompareOptions::default()
    };
    let report = compare(&ds, &schema, &opts)?;
    create_dir(out)?;
    let path = out.join(format!(
        "{}_{ratio}_{}.compare.csv",
        dataset_name(&data.data),
        train.seed
    ));
    write_bytes(&path, |b| report.write_csv(b))?;
    let mut text = Vec::new();
    report.write_csv(&mut text)?;
    print!("{}", String::from_utf8_lossy(&text));
    Ok(EXIT_OK)
}

fn cmd_synth(
    cvs: usize,
    rows: usize,
    noise: f64,
    seed: u64,
    dead: usize,
    name: &str,
    out: &Path,
) -> Result<i32> {
    let spec = SynthSpec {
        n_cvs: cvs,
        n_rows: rows,
        noise_sigma: noise,
        seed,
        dead_cvs: dead,
        ..SynthSpec::default()
    };
    let s = generate(&spec).map_err(|e| match e {
        ChiError::Contract(m) => ChiError::Load(m),
        other => other,
    })?;
    create_dir(out)?;
    let data = out.join(format!("{name}.csv"));
    write_bytes(&data, |b| write_csv(&s.dataset, b))?;
    let truth = out.join(format!("{name}.truth.json"));
    s.truth.save(&truth)?;
    let schema = out.join(format!("{name}.schema.json"));
    s.schema.save(&schema)?;
    println!("data={}", data.display());
    println!("truth={}", truth.display());
    println!("schema={}", schema.display());
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_set_pairs() {
        let (c, v) = parse_set(&["mem=32".into(), "cores= 4".into(), "disk=".into()]).unwrap();
        assert_eq!(c, vec!["mem", "cores", "disk"]);
        assert_eq!(v, vec![Some(32.0), Some(4.0), None]);
        assert!(parse_set(&["mem".into()]).is_err());
        assert!(parse_set(&["mem=lots".into()]).is_err());
    }

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let cli = Cli::try_parse_from(["chi", "train", "--data", "x.csv"]).unwrap();
        let Command::Train { train, .. } = cli.command else {
            panic!("expected train");
        };
        let opts = train.options();
        assert_eq!((opts.max_epochs, opts.alpha), (500, 0.5));
        assert_eq!(opts.objective, Objective::Plain);
    }

    #[test]
    fn usage_error_exits_two() {
        assert_eq!(run(["chi", "train"]), 2);
        assert_eq!(run(["chi", "bogus"]), 2);
    }
}
