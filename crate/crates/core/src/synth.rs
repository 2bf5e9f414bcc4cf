//! Synthetic datasets drawn from a known health model.
//!
//! CV values are sampled on `[NORM_FLOOR, 1]` and the schema pins the same
//! bounds, so normalization is the identity and the ground-truth curves can
//! be compared directly with fitted ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{
    apply_transform, fill_missing, fit_stats, ConfigDataset, FillStrategy, NORM_FLOOR,
};
use crate::error::{ChiError, Result};
use crate::model::{
    score, CvCurve, HealthModel, NamedCurve, TrainMeta, HEALTH_FLOOR, MODEL_VERSION,
};
use crate::schema::{CvSchema, CvSpec, ObservedBounds, Role, Shape};

/// Raw value of every dead CV.
pub const DEAD_VALUE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_cvs: usize,
    pub n_rows: usize,
    /// Standard deviation of the Gaussian noise on O, normalized units.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Extra constant columns the generator never uses.
    pub dead_cvs: usize,
    /// Per-CV shapes; alternates monotonic/unimodal when `None`.
    pub shapes: Option<Vec<Shape>>,
    pub eta_range: (f64, f64),
    pub gamma_range: (f64, f64),
    pub mode_range: (f64, f64),
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_cvs: 6,
            n_rows: 200,
            noise_sigma: 0.02,
            seed: 0,
            dead_cvs: 0,
            shapes: None,
            eta_range: (1.0, 8.0),
            gamma_range: (0.05, 0.3),
            mode_range: (0.5, 0.9),
        }
    }
}

impl SynthSpec {
    pub fn shape(&self, m: usize) -> Shape {
        match &self.shapes {
            Some(s) => s[m],
            None if m.is_multiple_of(2) => Shape::Monotonic,
            None => Shape::Unimodal,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_cvs == 0 || self.n_rows == 0 {
            return Err(ChiError::Contract(
                "synth needs at least one CV and one row".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(ChiError::Contract(format!(
                "noise_sigma {} must be >= 0",
                self.noise_sigma
            )));
        }
        if self.shapes.as_ref().is_some_and(|s| s.len() != self.n_cvs) {
            return Err(ChiError::Contract(
                "shapes must list one entry per CV".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    /// Raw dataset (already inside the normalization band).
    pub dataset: ConfigDataset,
    /// Generating model; dead CVs are `unimportant` in its stored schema.
    pub truth: HealthModel,
    /// Schema for training: every column is a dominant CV.
    pub schema: CvSchema,
}

impl Synthetic {
    pub fn dead_names(&self) -> Vec<String> {
        self.schema
            .cvs
            .iter()
            .filter(|c| self.truth.curve(&c.name).is_none())
            .map(|c| c.name.clone())
            .collect()
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

pub fn generate(spec: &SynthSpec) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let l = spec.n_cvs;

    let mut curves = Vec::with_capacity(l);
    for m in 0..l {
        let eta = uniform(&mut rng, spec.eta_range);
        let curve = match spec.shape(m) {
            Shape::Monotonic => CvCurve::monotonic(eta),
            Shape::Unimodal => {
                let gamma = uniform(&mut rng, spec.gamma_range);
                let mode = uniform(&mut rng, spec.mode_range);
                CvCurve::unimodal(eta, gamma, mode)
            }
        };
        curves.push(NamedCurve {
            cv: format!("cv{}", m + 1),
            curve: curve.with_bounds(NORM_FLOOR, 1.0),
        });
    }

    let dead: Vec<String> = (0..spec.dead_cvs)
        .map(|k| format!("dead{}", k + 1))
        .collect();
    let columns: Vec<String> = curves
        .iter()
        .map(|c| c.cv.clone())
        .chain(dead.iter().cloned())
        .collect();
    let rows: Vec<Vec<f64>> = (0..spec.n_rows)
        .map(|_| {
            (0..l)
                .map(|_| rng.random_range(NORM_FLOOR..=1.0))
                .chain(std::iter::repeat_n(DEAD_VALUE, spec.dead_cvs))
                .collect()
        })
        .collect();

    let observed_bounds = ObservedBounds {
        min: NORM_FLOOR,
        max: 1.0,
    };
    let spec_for = |name: &str, shape: Shape, role: Role| CvSpec {
        role,
        ..CvSpec::dominant(name, NORM_FLOOR, 1.0).with_shape(shape)
    };
    let mut train_schema = CvSchema::new(
        curves
            .iter()
            .map(|c| spec_for(&c.cv, c.curve.shape, Role::Dominant))
            .chain(
                dead.iter()
                    .map(|d| spec_for(d, Shape::Monotonic, Role::Dominant)),
            )
            .collect(),
    );
    train_schema.observed = Some(observed_bounds);
    let mut truth_schema = train_schema.clone();
    for c in truth_schema.cvs.iter_mut().skip(l) {
        c.role = Role::Unimportant;
    }

    // Stats depend on the CV columns only: the observed range is pinned by
    // the schema, so a placeholder target gives the same result.
    let placeholder = ConfigDataset::from_dense(
        columns.clone(),
        rows.clone(),
        vec![1.0; spec.n_rows],
        "O",
        "synth",
    )?;
    let (filled, fills) = fill_missing(&placeholder, FillStrategy::Median)?;
    let stats = fit_stats(
        &apply_transform(&filled, &train_schema)?,
        &train_schema,
        &fills,
    )?;

    let mut truth = HealthModel {
        version: MODEL_VERSION.to_string(),
        norm_stats: stats,
        curves,
        weak_offsets: Vec::new(),
        meta: TrainMeta {
            epochs: 0,
            final_mse: 0.0,
            seed: spec.seed,
        },
        floor: HEALTH_FLOOR,
        schema: Some(truth_schema.clone()),
    };

    let noise =
        Normal::new(0.0, spec.noise_sigma).map_err(|e| ChiError::Contract(e.to_string()))?;
    let mut observed = Vec::with_capacity(spec.n_rows);
    let mut sq = 0.0;
    for row in &rows {
        let values: Vec<Option<f64>> = row.iter().copied().map(Some).collect();
        let h = score(&columns, &values, &truth, &truth_schema)?.h;
        let o = if spec.noise_sigma > 0.0 {
            (h + noise.sample(&mut rng)).clamp(NORM_FLOOR, 1.0)
        } else {
            h
        };
        sq += (h - o).powi(2);
        observed.push(o);
    }
    truth.meta.final_mse = sq / spec.n_rows as f64;

    let dataset =
        ConfigDataset::from_dense(columns, rows, observed, "O", format!("synth:{}", spec.seed))?;
    Ok(Synthetic {
        dataset,
        truth,
        schema: train_schema,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_matches_truth_scores() {
        let spec = SynthSpec {
            noise_sigma: 0.0,
            n_rows: 30,
            ..Default::default()
        };
        let s = generate(&spec).unwrap();
        let schema = s.truth.effective_schema();
        for (row, o) in s.dataset.rows.iter().zip(&s.dataset.observed) {
            let h = score(&s.dataset.columns, row, &s.truth, &schema).unwrap().h;
            assert_eq!(h, *o);
        }
    }

    #[test]
    fn same_seed_same_data() {
        let spec = SynthSpec {
            seed: 11,
            dead_cvs: 1,
            ..Default::default()
        };
        let (a, b) = (generate(&spec).unwrap(), generate(&spec).unwrap());
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn single_cv_endpoint_scores_one() {
        let spec = SynthSpec {
            n_cvs: 1,
            n_rows: 5,
            noise_sigma: 0.0,
            eta_range: (3.0, 3.0),
            ..Default::default()
        };
        let s = generate(&spec).unwrap();
        let schema = s.truth.effective_schema();
        let h = score(&s.dataset.columns, &[Some(1.0)], &s.truth, &schema)
            .unwrap()
            .h;
        assert_eq!(h, 1.0);
    }

    #[test]
    fn parameters_respect_ranges_and_dead_cvs_are_constant() {
        let s = generate(&SynthSpec {
            dead_cvs: 2,
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        for c in &s.truth.curves {
            assert!((1.0..=8.0).contains(&c.curve.eta));
            if c.curve.shape == Shape::Unimodal {
                assert!((0.05..=0.3).contains(&c.curve.gamma));
                assert!((0.5..=0.9).contains(&c.curve.mode()));
            }
        }
        assert_eq!(s.dead_names(), vec!["dead1", "dead2"]);
        let k = s.dataset.column_index("dead1").unwrap();
        assert!(s.dataset.column_values(k).all(|v| v == DEAD_VALUE));
        assert!(s
            .dataset
            .observed
            .iter()
            .all(|o| (NORM_FLOOR..=1.0).contains(o)));
    }
}
