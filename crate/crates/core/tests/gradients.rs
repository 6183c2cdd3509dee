use nalu_core::gradcheck::{check_model, check_recurrent, check_unit, random_instance};
use nalu_core::model::{Layer, Model};
use nalu_core::regularization::{RzConfig, RzVariant, SparsitySchedule};
use nalu_core::units::{Unit, UnitConfig, UnitKind};
use nalu_core::{Matrix, RngStream};

const TOL: f64 = 1e-5;

fn variants() -> Vec<(UnitKind, bool)> {
    let mut v: Vec<_> = UnitKind::ALL.iter().map(|&k| (k, true)).collect();
    v.push((UnitKind::Nalu, false));
    v
}

#[test]
fn every_kind_matches_finite_differences() {
    for (kind, shared) in variants() {
        let mut rng = RngStream::new(1000 + kind as u64 * 7 + shared as u64);
        let mut compared = 0;
        for i in 0..100 {
            let (unit, x) = random_instance(kind, shared, &mut rng);
            let r = check_unit(&unit, &x, &mut rng).unwrap();
            assert!(r.passes(TOL), "{kind} shared={shared} instance {i}: {}", r.worst);
            compared += r.compared;
        }
        assert!(compared > 100, "{kind}: only {compared} elements compared");
    }
}

// weights kept off the penalty kinks at 0, ±0.5 and ±1
fn off_kink(rng: &mut RngStream, signed: bool) -> f64 {
    let v = if rng.next_f64() < 0.5 { rng.uniform(0.05, 0.45) } else { rng.uniform(0.55, 0.95) };
    if signed && rng.next_f64() < 0.5 {
        -v
    } else {
        v
    }
}

fn direct_unit(kind: UnitKind, din: usize, dout: usize, rng: &mut RngStream) -> Unit {
    let mut u = Unit::new(kind, din, dout, UnitConfig::default()).unwrap();
    let signed = kind == UnitKind::Nau;
    let w = Matrix::new(dout, din, (0..din * dout).map(|_| off_kink(rng, signed)).collect()).unwrap();
    u.set_param("W", w).unwrap();
    u
}

#[test]
fn regularized_two_layer_loss_matches_finite_differences() {
    let mut rng = RngStream::new(77);
    for i in 0..40 {
        let n = rng.uniform_int(2, 6);
        let hidden = rng.uniform_int(1, 3);
        let batch = rng.uniform_int(1, 4);
        let sched = SparsitySchedule::new(2.0, 0.0, 10.0).unwrap();
        let mut l2 = Layer::plain(direct_unit(UnitKind::Nmu, hidden, 1, &mut rng));
        l2.sparsity = Some(sched);
        if i % 2 == 0 {
            l2.rz = Some(RzConfig {
                variant: RzVariant::Multiplicative,
                schedule: SparsitySchedule::new(0.7, 0.0, 4.0).unwrap(),
            });
        }
        let mut l1 = Layer::plain(direct_unit(UnitKind::Nau, n, hidden, &mut rng));
        l1.sparsity = Some(sched);
        if i % 3 == 0 {
            l1.rz = Some(RzConfig {
                variant: RzVariant::Additive,
                schedule: SparsitySchedule::new(0.3, 0.0, 4.0).unwrap(),
            });
        }
        let model = Model::new(vec![l1, l2]).unwrap();
        let x = Matrix::new(batch, n, (0..batch * n).map(|_| rng.uniform(-2.0, 2.0)).collect()).unwrap();
        let t: Vec<f64> = (0..batch).map(|_| rng.uniform(-3.0, 3.0)).collect();
        // mid-ramp and after the ramp
        for iter in [5, 50] {
            let r = check_model(&model, &x, &t, iter).unwrap();
            assert!(r.passes(TOL), "instance {i} t={iter}: {}", r.worst);
        }
    }
}

#[test]
fn stacked_nac_and_nalu_models_match_finite_differences() {
    let mut rng = RngStream::new(78);
    for (k1, k2) in [
        (UnitKind::NacAdd, UnitKind::NacMul),
        (UnitKind::NacAdd, UnitKind::NacMulSigma),
        (UnitKind::Nalu, UnitKind::Nalu),
        (UnitKind::NacAdd, UnitKind::GatedNauNmu),
        (UnitKind::Relu, UnitKind::Linear),
    ] {
        let mut checked = 0;
        while checked < 20 {
            let (u1, x) = random_instance(k1, true, &mut rng);
            let (mut u2, _) = random_instance(k2, true, &mut rng);
            while u2.in_dim() != u1.out_dim() || u2.out_dim() != 1 {
                u2 = random_instance(k2, true, &mut rng).0;
            }
            // the exp-log layer is ill-conditioned at hidden values near 0
            let h = u1.forward(&x).unwrap().0;
            if h.data().iter().any(|v| v.abs() < 0.1) {
                continue;
            }
            let model = Model::from_units(vec![u1, u2]).unwrap();
            let t: Vec<f64> = (0..x.rows()).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let r = check_model(&model, &x, &t, 0).unwrap();
            assert!(r.passes(TOL), "{k1}->{k2}: {}", r.worst);
            checked += 1;
        }
    }
}

#[test]
fn three_step_recurrence_matches_finite_differences() {
    let mut rng = RngStream::new(79);
    for kind in [UnitKind::Nmu, UnitKind::Nau, UnitKind::NacMulNmu, UnitKind::Linear] {
        for _ in 0..30 {
            let mut unit = Unit::new(kind, 2, 1, UnitConfig::default()).unwrap();
            let w = Matrix::new(1, 2, vec![rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)]).unwrap();
            unit.set_param("W", w).unwrap();
            let batch = rng.uniform_int(1, 4);
            let z = Matrix::new(batch, 3, (0..batch * 3).map(|_| rng.uniform(0.5, 3.0)).collect()).unwrap();
            let r = check_recurrent(&unit, &z, 1.0, &mut rng).unwrap();
            assert!(r.passes(TOL), "{kind}: {}", r.worst);
            assert!(r.compared > 0);
        }
    }
}
