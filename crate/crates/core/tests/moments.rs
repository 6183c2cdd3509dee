use nalu_core::analysis::{
    mc_moments, mc_weight_construction, nmu_moments_closed, InputDistribution, WeightDistribution,
};
use nalu_core::initialization::{nac_weight_variance, InitOptions};
use nalu_core::units::UnitKind;
use nalu_core::RngStream;

const STANDARD_NORMAL: InputDistribution = InputDistribution::Normal { mean: 0.0, sd: 1.0 };

#[test]
fn nmu_expectation_at_four_inputs() {
    let mut rng = RngStream::new(101);
    let est = mc_moments(
        UnitKind::Nmu,
        4,
        STANDARD_NORMAL,
        WeightDistribution::Uniform { lo: 0.0, hi: 1.0 },
        1_000_000,
        &mut rng,
    )
    .unwrap();
    assert_eq!(est.overflow, 0);
    let z = est.mean_z(0.0625);
    assert!(z.abs() < 3.0, "mean {} (z = {z})", est.mean);
}

#[test]
fn nmu_forward_variance_matches_closed_form() {
    let mut rng = RngStream::new(102);
    // U[0,1] weights have variance 1/12
    for h in [1, 2, 3] {
        let est = mc_moments(
            UnitKind::Nmu,
            h,
            STANDARD_NORMAL,
            WeightDistribution::Uniform { lo: 0.0, hi: 1.0 },
            200_000,
            &mut rng,
        )
        .unwrap();
        let want = nmu_moments_closed(1.0 / 12.0, 1.0, h, 1).forward_variance;
        let z = est.variance_z(want);
        assert!(z.abs() < 3.0, "H={h}: variance {} vs {want} (z = {z})", est.variance);
    }
}

#[test]
fn nac_add_with_default_init_is_zero_mean() {
    let mut rng = RngStream::new(103);
    let est = mc_moments(
        UnitKind::NacAdd,
        8,
        STANDARD_NORMAL,
        WeightDistribution::Initialized(InitOptions::default()),
        100_000,
        &mut rng,
    )
    .unwrap();
    assert!(est.mean_z(0.0).abs() < 3.0, "{est:?}");
}

#[test]
fn weight_construction_variance_at_unit_range() {
    let mut rng = RngStream::new(104);
    let est = mc_weight_construction(1.0, 200_000, &mut rng).unwrap();
    let want = nac_weight_variance(1.0);
    assert!((est.variance / want - 1.0).abs() < 0.02, "{} vs {want}", est.variance);
    assert!(est.mean_z(0.0).abs() < 3.0);
}

#[test]
fn exp_log_overflow_is_counted() {
    let mut rng = RngStream::new(105);
    let est = mc_moments(
        UnitKind::NacMulNmu,
        1,
        InputDistribution::Uniform { lo: 0.0, hi: 0.0 },
        WeightDistribution::Uniform { lo: -400.0, hi: -100.0 },
        10_000,
        &mut rng,
    )
    .unwrap();
    assert!(est.overflow > 0);
    assert_eq!(est.overflow + est.samples, 10_000);
}

#[test]
fn mismatched_weight_distribution_is_rejected() {
    let mut rng = RngStream::new(106);
    assert!(mc_moments(
        UnitKind::NacAdd,
        2,
        STANDARD_NORMAL,
        WeightDistribution::Uniform { lo: 0.0, hi: 1.0 },
        10_000,
        &mut rng
    )
    .is_err());
    assert!(mc_moments(
        UnitKind::Nmu,
        2,
        STANDARD_NORMAL,
        WeightDistribution::NacUniform { r: 1.0 },
        10_000,
        &mut rng
    )
    .is_err());
}
