use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use vcgp::baselines::{
    fit_projected, mean_predictor, mlr_fit_predict, moment_matched_forecast, naive_ar_forecast, nn_predict,
    pca_features, BaselineResult,
};
use vcgp::harness::metrics;
use vcgp::pipelines::{autoregressive_reformat, forecast_with_posterior, iterative_forecast, ForecastConfig};
use vcgp::rng::{stream, Stream};
use vcgp::model::Posterior;
use vcgp::{FitConfig, Mask, MaskedDataset, Objective};

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

#[test]
fn mlr_matches_normal_equations() {
    let mut rng = stream(1, Stream::Oracle);
    let (n, q, d) = (20, 3, 2);
    let x = DMatrix::from_fn(n, q, |_, _| uniform(&mut rng, -1.0, 1.0));
    let y = DMatrix::from_fn(n, d, |_, _| uniform(&mut rng, -1.0, 1.0));
    let xt = DMatrix::from_fn(4, q, |_, _| uniform(&mut rng, -1.0, 1.0));
    let a = DMatrix::from_fn(n, q + 1, |r, c| if c == 0 { 1.0 } else { x[(r, c - 1)] });
    let at = DMatrix::from_fn(4, q + 1, |r, c| if c == 0 { 1.0 } else { xt[(r, c - 1)] });
    let w = (a.transpose() * &a).try_inverse().unwrap() * a.transpose() * &y;
    let expect = at * w;
    let got = mlr_fit_predict(&x, &y, &xt).unwrap();
    assert!((got - expect).amax() < 1e-10);
}

#[test]
fn mlr_fills_missing_inputs_with_training_means() {
    let x = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
    let y = x.map(|v| 3.0 - v);
    let got = mlr_fit_predict(&x, &y, &DMatrix::from_element(1, 1, f64::NAN)).unwrap();
    assert!((got[(0, 0)] - 1.5).abs() < 1e-10);
}

#[test]
fn mlr_beats_the_mean_on_linear_data() {
    let mut rng = stream(2, Stream::Oracle);
    let x = DMatrix::from_fn(40, 2, |_, _| uniform(&mut rng, -1.0, 1.0));
    let y = DMatrix::from_fn(40, 1, |r, _| 2.0 * x[(r, 0)] - x[(r, 1)] + 0.05 * uniform(&mut rng, -1.0, 1.0));
    let (tr, te) = ((0..30).collect::<Vec<_>>(), (30..40).collect::<Vec<_>>());
    let truth = y.select_rows(&te);
    let mlr = mlr_fit_predict(&x.select_rows(&tr), &y.select_rows(&tr), &x.select_rows(&te)).unwrap();
    let mean = mean_predictor(&y.select_rows(&tr), te.len()).unwrap();
    let a = metrics(&mlr, &truth).unwrap();
    let b = metrics(&mean, &truth).unwrap();
    assert!(a.mse < b.mse / 10.0, "{} vs {}", a.mse, b.mse);
}

#[test]
fn nearest_neighbour_examples() {
    let x = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 1.0, 5.0, f64::NAN]);
    let mask = Mask::from_rows(&[vec![true, true], vec![true, true], vec![true, false]]).unwrap();
    let y = DMatrix::from_column_slice(3, 1, &[10.0, 20.0, 30.0]);
    let q = DMatrix::from_row_slice(3, 2, &[0.9, 0.8, 4.0, 100.0, f64::NAN, f64::NAN]);
    let p = nn_predict(&x, &mask, &y, &q).unwrap();
    assert_eq!(p[(0, 0)], 20.0);
    // Only dimension 0 is shared with row 2; distance 1 per shared dimension beats the rest.
    assert_eq!(p[(1, 0)], 30.0);
    // Nothing observed in the query: fall back to the training mean.
    assert_eq!(p[(2, 0)], 20.0);
}

#[test]
fn baseline_result_reports_per_point_errors() {
    let pred = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
    let truth = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 2.0]);
    let r = BaselineResult::new("x", &pred, &truth).unwrap();
    assert_eq!(r.per_point_error, vec![0.5, 2.0]);
    assert_eq!(r.mse, 1.25);
    assert_eq!(r.mae, 0.75);
}

fn ar_dataset() -> (MaskedDataset, Vec<f64>) {
    let series: Vec<f64> = (0..45).map(|t| (0.35 * t as f64).sin()).collect();
    let (x, y) = autoregressive_reformat(&DMatrix::from_column_slice(45, 1, &series), 3).unwrap();
    (MaskedDataset::fully_observed(x, y).unwrap(), series[42..].to_vec())
}

#[test]
fn moment_matching_is_the_propagating_forecast_on_the_projected_model() {
    let (ds, seed) = ar_dataset();
    let cfg = FitConfig {
        max_iterations: 100,
        num_inducing: Some(12),
        ..FitConfig::default()
    };
    let (s, _) = fit_projected(&ds, &cfg).unwrap();
    assert_eq!(s.objective, Objective::Projected);
    let fc = ForecastConfig {
        window: 3,
        horizon: 6,
        propagate_uncertainty: false,
        include_noise: true,
    };
    let mm = moment_matched_forecast(&s, &seed, &fc).unwrap();
    let prop = ForecastConfig {
        propagate_uncertainty: true,
        ..fc.clone()
    };
    assert_eq!(mm, iterative_forecast(&s, &seed, &prop).unwrap());
    assert_eq!(mm, forecast_with_posterior(&Posterior::new(&s).unwrap(), &seed, &prop, |_, _, _| {}).unwrap());
    assert_eq!(naive_ar_forecast(&s, &seed, 3, 6).unwrap(), iterative_forecast(&s, &seed, &fc).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pca_basis_is_orthonormal_and_sorted(seed in 0u64..5000, dim in 1usize..4) {
        let mut rng = stream(seed, Stream::Oracle);
        let x = DMatrix::from_fn(12, 4, |_, c| uniform(&mut rng, -1.0, 1.0) * (c + 1) as f64);
        let p = pca_features(&x, dim).unwrap();
        let g = p.basis.transpose() * &p.basis;
        prop_assert!((g - DMatrix::identity(dim, dim)).amax() < 1e-10);
        for w in p.variances.as_slice().windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        prop_assert!((p.project(&x).unwrap() - &p.projections).amax() < 1e-12);
    }

    #[test]
    fn mean_predictor_is_constant(vals in prop::collection::vec(-5.0..5.0f64, 1..20), count in 0usize..5) {
        let y = DMatrix::from_column_slice(vals.len(), 1, &vals);
        let p = mean_predictor(&y, count).unwrap();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        prop_assert_eq!(p.nrows(), count);
        prop_assert!(p.iter().all(|v| (v - m).abs() < 1e-12));
    }
}
