use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chi_core::baselines::{compare, hinge_fit, knots, ols_fit, CompareOptions};
use chi_core::dataset::{fit_preprocess, ConfigDataset, NORM_FLOOR};
use chi_core::evaluation::{run_experiment, SplitSpec};
use chi_core::model::score;
use chi_core::schema::reduction::pca_rank;
use chi_core::schema::{CvSchema, CvSpec, ObservedBounds};
use chi_core::synth::{generate, SynthSpec};
use chi_core::training::{fit, grad_params, Objective, Problem, TrainOptions};

/// Eigen-decomposition of a small symmetric matrix by cyclic Jacobi sweeps.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j].powi(2))
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (akp, akq) = (row[p], row[q]);
                    row[p] = c * akp - s * akq;
                    row[q] = s * akp + c * akq;
                }
                let (rp, rq) = (a[p].clone(), a[q].clone());
                for k in 0..n {
                    a[p][k] = c * rp[k] - s * rq[k];
                    a[q][k] = s * rp[k] + c * rq[k];
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

#[test]
fn pca_matches_independent_eigen_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> = (0..400)
        .map(|_| {
            let z: [f64; 3] = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            vec![10.0 * z[0], z[1], z[2]]
        })
        .collect();
    let ds = ConfigDataset::from_dense(
        vec!["big".into(), "s1".into(), "s2".into()],
        rows.clone(),
        vec![1.0; 400],
        "o",
        "pca",
    )
    .unwrap();
    let report = pca_rank(&ds).unwrap();

    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..3)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let cov: Vec<Vec<f64>> = (0..3)
        .map(|i| {
            (0..3)
                .map(|j| {
                    rows.iter()
                        .map(|r| (r[i] - mean[i]) * (r[j] - mean[j]))
                        .sum::<f64>()
                        / (n - 1.0)
                })
                .collect()
        })
        .collect();
    let (lambda, vecs) = jacobi_eigen(cov);
    let total: f64 = lambda.iter().sum();
    let expected: Vec<f64> = (0..3)
        .map(|cv| (0..3).map(|k| lambda[k] / total * vecs[cv][k].abs()).sum())
        .collect();

    assert_eq!(report.entries[0].cv, "big");
    assert_eq!(report.entries[0].rank, 1);
    for (j, name) in ["big", "s1", "s2"].iter().enumerate() {
        let got = report.score_of(name).unwrap();
        assert!(
            (got - expected[j]).abs() < 1e-9,
            "{name}: {got} vs {}",
            expected[j]
        );
    }
    assert!(report.explained_variance[0] > 0.9);
    assert!((report.explained_variance.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn ols_residuals_are_orthogonal_to_columns() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x: Vec<Vec<f64>> = (0..50)
        .map(|_| (0..3).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let y: Vec<f64> = x
        .iter()
        .map(|r| 0.4 + 0.3 * r[0] - 0.2 * r[1] + 0.1 * r[2] + rng.random_range(-0.05..0.05))
        .collect();
    let m = ols_fit(&x, &y).unwrap();
    let resid: Vec<f64> = x.iter().zip(&y).map(|(r, t)| t - m.predict(r)).collect();
    assert!(resid.iter().sum::<f64>().abs() <= 1e-6);
    for j in 0..3 {
        let dot: f64 = x.iter().zip(&resid).map(|(r, e)| r[j] * e).sum();
        assert!(dot.abs() <= 1e-6, "column {j}: {dot}");
    }
}

#[test]
fn hinge_finds_the_kink() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random_range(0.0..1.0)]).collect();
    let y: Vec<f64> = x.iter().map(|r| (r[0] - 0.6).max(0.0)).collect();
    let model = hinge_fit(&x, &y, 2, 1e-9).unwrap();
    let ks = knots(&x, 0);
    let step = ks.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    assert!(
        model.terms.iter().any(|t| (t.knot - 0.6).abs() <= step),
        "knots {:?}, step {step}",
        model.terms.iter().map(|t| t.knot).collect::<Vec<_>>()
    );
    assert!(*model.history.last().unwrap() < 1e-3 * model.history[0]);
}

#[test]
fn hinge_is_no_worse_than_ols_on_linear_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<Vec<f64>> = (0..80)
        .map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
        .collect();
    let y: Vec<f64> = x.iter().map(|r| 0.3 + 2.0 * r[0] - r[1]).collect();
    let mse = |pred: &dyn Fn(&[f64]) -> f64| {
        x.iter()
            .zip(&y)
            .map(|(r, t)| (pred(r) - t).powi(2))
            .sum::<f64>()
            / y.len() as f64
    };
    let ols = ols_fit(&x, &y).unwrap();
    let hinge = hinge_fit(&x, &y, 10, 1e-12).unwrap();
    assert!(mse(&|r| hinge.predict(r)) <= mse(&|r| ols.predict(r)) + 1e-9);
}

#[test]
fn compare_uses_one_split_and_flags_dead_cv() {
    let s = generate(&SynthSpec {
        seed: 7,
        dead_cvs: 1,
        ..SynthSpec::default()
    })
    .unwrap();
    let report = compare(&s.dataset, &s.schema, &CompareOptions::default()).unwrap();
    let methods: Vec<&str> = report.rows.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(methods, ["chi", "ols", "hinge"]);
    assert!(report
        .rows
        .iter()
        .all(|r| r.split_hash == report.rows[0].split_hash));
    assert!(report.get("chi").unwrap().test_mse <= report.get("ols").unwrap().test_mse);
    for r in &report.rows {
        assert!(
            r.ignored_cvs.contains(&"dead1".to_string()),
            "{}: {:?}",
            r.method,
            r.ignored_cvs
        );
    }
}

#[test]
fn noise_free_synthetic_is_fitted_closely() {
    let s = generate(&SynthSpec {
        noise_sigma: 0.0,
        seed: 42,
        ..SynthSpec::default()
    })
    .unwrap();
    let exp = run_experiment(
        &s.dataset,
        &s.schema,
        &TrainOptions::default(),
        &SplitSpec::default(),
    )
    .unwrap();
    assert!(exp.report.mse <= 1e-3, "test mse {}", exp.report.mse);
    assert!(
        exp.model.meta.final_mse <= 1e-4,
        "train mse {}",
        exp.model.meta.final_mse
    );
}

#[test]
fn scoring_raw_rows_reproduces_holdout_values() {
    let s = generate(&SynthSpec {
        n_rows: 60,
        seed: 2,
        ..SynthSpec::default()
    })
    .unwrap();
    let opts = TrainOptions {
        max_epochs: 40,
        ..TrainOptions::default()
    };
    let exp = run_experiment(&s.dataset, &s.schema, &opts, &SplitSpec::default()).unwrap();
    let schema = exp.model.effective_schema();
    for rec in &exp.report.records {
        let raw = &s.dataset.rows[exp.split.test[rec.row]];
        let h = score(&s.dataset.columns, raw, &exp.model, &schema)
            .unwrap()
            .h;
        assert_eq!(h.to_bits(), rec.h.to_bits());
    }
}

#[test]
fn gradient_by_hand() {
    // The second row sits at h = O = 1 and contributes nothing but keeps
    // the column from being constant.
    let mut schema = CvSchema::new(vec![CvSpec::dominant("x", NORM_FLOOR, 1.0)]);
    schema.observed = Some(ObservedBounds {
        min: NORM_FLOOR,
        max: 1.0,
    });
    let ds = ConfigDataset::from_dense(
        vec!["x".into()],
        vec![vec![0.5], vec![1.0]],
        vec![0.5, 1.0],
        "O",
        "two",
    )
    .unwrap();
    let (norm, stats) = fit_preprocess(&ds, &schema).unwrap();
    let problem = Problem::new(&norm, &schema, &stats).unwrap();
    assert_eq!(problem.bounds[0], (NORM_FLOOR, 1.0));

    let eta = 2.0;
    let mut p = problem.initial_params();
    p.eta[0] = eta;
    let s = (0.5 - NORM_FLOOR) / (1.0 - NORM_FLOOR);
    let den = 1.0 - (-eta).exp();
    let h = (1.0 - (-eta * s).exp()) / den;
    let dh = (s * (-eta * s).exp() * den - (1.0 - (-eta * s).exp()) * (-eta).exp()) / (den * den);
    let o = 0.5;
    let g = grad_params(&problem, &p, Objective::Plain).unwrap();
    assert!(
        (g.eta[0] - (h - o) * dh).abs() < 1e-12,
        "{} vs {}",
        g.eta[0],
        (h - o) * dh
    );
    assert!((problem.loss(&p, Objective::Plain) - 0.5 * (h - o).powi(2)).abs() < 1e-15);

    let g_log = grad_params(&problem, &p, Objective::Log).unwrap();
    let want = (h.ln() - o.ln()) * dh / h;
    assert!((g_log.eta[0] - want).abs() < 1e-12);
}

#[test]
fn training_on_the_normalized_fixture_reduces_error() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mini.csv");
    let ds = chi_core::dataset::load_csv(&path, &Default::default()).unwrap();
    let schema = CvSchema::load(&path.with_file_name("mini.schema.json")).unwrap();
    let (norm, stats) = fit_preprocess(&ds, &schema).unwrap();
    let (model, trace) = fit(&norm, &schema, &stats, &TrainOptions::default()).unwrap();
    assert!(model.meta.final_mse < trace.mse[0]);
    assert_eq!(model.weak_offsets.len(), 1);
}
