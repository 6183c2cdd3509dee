use nalu_core::dataset::{nearly_perfect_weights, Task};
use nalu_core::evaluation::{
    beta_mean_interval, gamma_mean_interval, judge_seed, success_threshold, wilson_interval,
};
use nalu_core::model::Model;
use nalu_core::optimizer::{EvalRecord, TrainTrace};
use nalu_core::units::{Unit, UnitConfig, UnitKind};
use nalu_core::RngStream;
use proptest::prelude::*;
use rand_distr::{Beta, Distribution, Gamma};

fn gamma_samples(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = RngStream::new(seed);
    let d = Gamma::new(4.0, 2.0).unwrap();
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

fn beta_samples(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = RngStream::new(seed);
    let d = Beta::new(2.0, 5.0).unwrap();
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

#[test]
fn gamma_interval_recovers_mean() {
    let xs = gamma_samples(10_000, 11);
    let ci = gamma_mean_interval(&xs, 0.95).unwrap();
    assert!(ci.lower < 8.0 && 8.0 < ci.upper, "{ci:?}");
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    assert!(ci.lower < mean && mean < ci.upper);
}

#[test]
fn gamma_interval_scales_with_samples() {
    let xs = gamma_samples(200, 3);
    let c = 37.5;
    let scaled: Vec<f64> = xs.iter().map(|x| x * c).collect();
    let a = gamma_mean_interval(&xs, 0.95).unwrap();
    let b = gamma_mean_interval(&scaled, 0.95).unwrap();
    assert!((b.lower / (a.lower * c) - 1.0).abs() < 1e-6, "{a:?} {b:?}");
    assert!((b.upper / (a.upper * c) - 1.0).abs() < 1e-6, "{a:?} {b:?}");
}

#[test]
fn beta_interval_recovers_mean() {
    let xs = beta_samples(10_000, 5);
    let ci = beta_mean_interval(&xs, 0.95).unwrap();
    assert!(ci.lower < 2.0 / 7.0 && 2.0 / 7.0 < ci.upper, "{ci:?}");
    assert!(ci.lower > 0.0 && ci.upper < 1.0);
}

#[test]
fn beta_interval_mirrors() {
    let xs = beta_samples(300, 9);
    let mirrored: Vec<f64> = xs.iter().map(|x| 1.0 - x).collect();
    let a = beta_mean_interval(&xs, 0.95).unwrap();
    let b = beta_mean_interval(&mirrored, 0.95).unwrap();
    assert!((a.lower - (1.0 - b.upper)).abs() < 1e-6, "{a:?} {b:?}");
    assert!((a.upper - (1.0 - b.lower)).abs() < 1e-6, "{a:?} {b:?}");
}

#[test]
fn intervals_shrink_with_more_samples() {
    let g = gamma_samples(4000, 21);
    let b = beta_samples(4000, 22);
    let mut last_g = f64::INFINITY;
    let mut last_b = f64::INFINITY;
    for n in [100, 400, 1600, 4000] {
        let cg = gamma_mean_interval(&g[..n], 0.95).unwrap();
        let cb = beta_mean_interval(&b[..n], 0.95).unwrap();
        assert!(cg.upper - cg.lower < last_g);
        assert!(cb.upper - cb.lower < last_b);
        last_g = cg.upper - cg.lower;
        last_b = cb.upper - cb.lower;
    }
}

#[test]
fn beta_accepts_boundary_samples() {
    let xs = [0.0, 0.0, 1e-6, 3e-5, 0.002, 1e-4];
    let ci = beta_mean_interval(&xs, 0.95).unwrap();
    assert!(ci.lower > 0.0 && ci.lower <= ci.estimate && ci.estimate <= ci.upper && ci.upper < 1.0);
}

proptest! {
    #[test]
    fn wilson_stays_in_unit_interval(n in 1u64..=10_000, frac in 0.0f64..=1.0) {
        let k = ((n as f64) * frac).floor() as u64;
        let (lo, hi) = wilson_interval(k, n, 0.95).unwrap();
        let p = k as f64 / n as f64;
        prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        prop_assert!(lo <= p + 1e-12 && p <= hi + 1e-12);
    }

    #[test]
    fn judging_is_monotone_in_threshold(mses in proptest::collection::vec(1e-6f64..10.0, 1..8), best in 0usize..8, a in 1e-6f64..10.0, b in 1e-6f64..10.0) {
        let trace = synthetic_trace(&mses, best % mses.len());
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        if judge_seed(0, &trace, lo).success {
            prop_assert!(judge_seed(0, &trace, hi).success);
        }
    }
}

fn synthetic_trace(extrap: &[f64], best_index: usize) -> TrainTrace {
    let model = Model::from_units(vec![Unit::new(UnitKind::Nau, 1, 1, UnitConfig::default()).unwrap()]).unwrap();
    let records = extrap
        .iter()
        .enumerate()
        .map(|(i, &e)| EvalRecord {
            iteration: 1000 * i as u64,
            train_mse: None,
            interpolation_mse: 0.0,
            extrapolation_mse: e,
            sparsity_error: 0.0,
            gate: None,
        })
        .collect();
    TrainTrace {
        records,
        final_model: model.clone(),
        best_model: model,
        best_index,
        diverged: false,
        iterations_run: 1000 * (extrap.len() as u64 - 1),
    }
}

#[test]
fn judge_examples() {
    let never = synthetic_trace(&[5.0, 4.0, 3.0], 2);
    let o = judge_seed(1, &never, 1.0);
    assert!(!o.success && o.solved_at.is_none() && o.sparsity_error.is_none());

    let first = synthetic_trace(&[0.5, 0.1, 0.05], 2);
    let o = judge_seed(2, &first, 1.0);
    assert!(o.success);
    assert_eq!(o.solved_at, Some(0));

    let later = synthetic_trace(&[5.0, 0.5, 3.0, 0.2], 3);
    assert_eq!(judge_seed(3, &later, 1.0).solved_at, Some(1000));

    let mut diverged = first.clone();
    diverged.diverged = true;
    assert!(!judge_seed(4, &diverged, 1.0).success);
}

#[test]
fn threshold_matches_row_loop() {
    let rng = RngStream::new(17);
    for op in ["add", "mul", "sub"] {
        let cfg = nalu_core::dataset::DatasetConfig {
            operation: op.parse().unwrap(),
            test_size: 500,
            validation_size: 10,
            ..Default::default()
        };
        let task = Task::new(cfg.clone(), &rng).unwrap();
        let (w1, _) = nearly_perfect_weights(&cfg, &task.subsets, 1e-5);
        let (x, y) = &task.test;
        let mut sse = 0.0;
        for r in 0..x.rows() {
            let row = x.row(r);
            let h0: f64 = row.iter().zip(w1.row(0)).map(|(a, b)| a * b).sum();
            let h1: f64 = row.iter().zip(w1.row(1)).map(|(a, b)| a * b).sum();
            let pred = cfg.operation.apply(h0, h1);
            sse += (pred - y[r]).powi(2);
        }
        let want = sse / x.rows() as f64;
        let got = success_threshold(&task, 1e-5).unwrap();
        assert!((got - want).abs() <= 1e-12 * want.max(1e-300), "{op}: {got} vs {want}");
        assert!(got > 0.0);
        if op == "add" {
            assert!(success_threshold(&task, 0.0).unwrap() < 1e-20);
        }
    }
}
