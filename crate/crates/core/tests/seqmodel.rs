#![allow(clippy::needless_range_loop)]

mod support;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::*;
use tlemu::neuralnet::DropoutMask;
use tlemu::seqmodel::*;

fn arch(d: usize, m: usize) -> Architecture {
    Architecture {
        d,
        m,
        hidden: 6,
        head_x_width: 5,
        head_y_width: 7,
        dropout: 0.3,
    }
}

fn reduced(hidden: usize, hx: usize, hy: usize, d: usize, m: usize) -> Architecture {
    Architecture {
        d,
        m,
        hidden,
        head_x_width: hx,
        head_y_width: hy,
        dropout: 0.3,
    }
}

fn perturbed(model: &EmulatorModel, prefix: &str, delta: f64) -> EmulatorModel {
    let mut store = model.store.clone();
    let ids: Vec<_> = store
        .ids()
        .filter(|&id| store.param(id).name.starts_with(prefix))
        .collect();
    for id in ids {
        store.get_mut(id).data.iter_mut().for_each(|v| *v += delta);
    }
    EmulatorModel::from_store(model.arch, store, model.standardizer.clone()).unwrap()
}

#[test]
fn nll_matches_density_oracle() {
    for seed in 0..4 {
        let a = arch(3, 2);
        let mut model = EmulatorModel::new(a, seed).unwrap();
        let ls = model.log_sigma_id();
        model.store.get_mut(ls).data[0] = -0.4;
        let lr = model.log_rho_id();
        model.store.get_mut(lr).data[0] = 0.3;
        let x = random_series(10, 3, seed + 10);
        let y = random_series(10, 6, seed + 20);
        let lo = model.nll_lowres(&x, Dropout::Off).unwrap();
        let hi = model.nll_highres(&x, &y, Dropout::Off).unwrap();
        assert!(close(
            lo,
            nll_oracle(&model, Target::LowRes, &x, None, None),
            1e-12
        ));
        assert!(close(
            hi,
            nll_oracle(&model, Target::HighRes, &x, Some(&y), None),
            1e-12
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let masks = sample_window_masks(10, &a, &mut rng);
        let lo_d = model.nll_lowres(&x, Dropout::Fixed(&masks)).unwrap();
        assert!(close(
            lo_d,
            nll_oracle(&model, Target::LowRes, &x, None, Some(&masks)),
            1e-12
        ));
    }
}

#[test]
fn full_model_matches_finite_differences() {
    for (i, a) in [
        reduced(8, 8, 8, 4, 3),
        reduced(8, 8, 8, 8, 4),
        reduced(8, 8, 4, 8, 4),
    ]
    .into_iter()
    .enumerate()
    {
        let model = EmulatorModel::new(a, 100 + i as u64).unwrap();
        let x = random_series(6, a.d, 1);
        let y = random_series(6, a.dm(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let masks = sample_window_masks(6, &a, &mut rng);
        for target in [Target::LowRes, Target::HighRes] {
            for m in [None, Some(&masks[..])] {
                let r = gradient_check(&model, target, &x, Some(&y), m, 1e-5).unwrap();
                assert!(r.max_relative_error <= 1e-6, "{a:?} {target:?}: {r:?}");
            }
        }
    }
}

#[test]
fn log_sigma_gradient_has_closed_form() {
    let a = arch(4, 2);
    let mut model = EmulatorModel::new(a, 7).unwrap();
    let ls = model.log_sigma_id();
    model.store.get_mut(ls).data[0] = 0.25;
    let x = random_series(12, 4, 3);
    let mut tape = Tape::new();
    model
        .forward(&mut tape, Target::LowRes, &x, None, Dropout::Off)
        .unwrap();
    let g = tape.backward(&model).unwrap();
    // Residuals from the oracle model.
    let mut h = vec![0.0; a.hidden];
    let mut sq = 0.0;
    for t in 0..11 {
        h = gru_oracle(&model.store, &h, x.row(t));
        let inc = head_oracle(&model.store, "head_x", &h);
        for i in 0..4 {
            sq += (x.row(t + 1)[i] - x.row(t)[i] - inc[i]).powi(2);
        }
    }
    let mean_sq = sq / (11.0 * 4.0);
    let want = 4.0 * (1.0 - mean_sq / (0.5f64).exp());
    assert!(
        (g.get(ls)[0] - want).abs() < 1e-8,
        "{} vs {want}",
        g.get(ls)[0]
    );
    assert!(g.get(model.log_rho_id()).iter().all(|&v| v == 0.0));
}

#[test]
fn heads_share_the_trunk() {
    let a = arch(3, 2);
    let model = EmulatorModel::new(a, 1).unwrap();
    let x = random_series(8, 3, 1);
    let y = random_series(8, 6, 2);
    let other = perturbed(&model, "gru.b_c", 0.1);
    assert_ne!(
        model.nll_lowres(&x, Dropout::Off).unwrap(),
        other.nll_lowres(&x, Dropout::Off).unwrap()
    );
    assert_ne!(
        model.nll_highres(&x, &y, Dropout::Off).unwrap(),
        other.nll_highres(&x, &y, Dropout::Off).unwrap()
    );
    // Each likelihood ignores the other head.
    let hy = perturbed(&model, "head_y.", 0.1);
    assert_eq!(
        model.nll_lowres(&x, Dropout::Off).unwrap(),
        hy.nll_lowres(&x, Dropout::Off).unwrap()
    );
    let hx = perturbed(&model, "head_x.", 0.1);
    assert_eq!(
        model.nll_highres(&x, &y, Dropout::Off).unwrap(),
        hx.nll_highres(&x, &y, Dropout::Off).unwrap()
    );
}

#[test]
fn rollout_never_depends_on_the_high_res_head() {
    let model = EmulatorModel::new(arch(3, 4), 2).unwrap();
    let other = perturbed(&perturbed(&model, "head_y.", 0.5), "log_rho", 1.0);
    let cfg = RolloutConfig {
        n_steps: 20,
        noise_on: true,
        seed: 9,
        stream: 3,
    };
    let h0 = vec![0.0; 6];
    let a = model.rollout(&[0.1, 0.2, 0.3], &h0, &cfg).unwrap();
    let b = other.rollout(&[0.1, 0.2, 0.3], &h0, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.states.len(), 20);
}

#[test]
fn carried_chunks_add_up_to_one_pass() {
    let model = EmulatorModel::new(arch(3, 2), 5).unwrap();
    let x = random_series(25, 3, 4);
    let full = model.nll_lowres(&x, Dropout::Off).unwrap() * 24.0;
    let (s1, n1, h) = model.nll_lowres_carry(&x.slice(0, 11), None).unwrap();
    let (s2, n2, _) = model.nll_lowres_carry(&x.slice(10, 25), Some(&h)).unwrap();
    assert_eq!(n1 + n2, 24);
    assert!(close(s1 + s2, full, 1e-12));
}

#[test]
fn zero_increment_rollout_is_a_random_walk() {
    let a = arch(2, 2);
    let mut model = EmulatorModel::new(a, 3).unwrap();
    for name in ["head_x.out.w", "head_x.out.b"] {
        let id = model.store.id(name).unwrap();
        model
            .store
            .get_mut(id)
            .data
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
    let ls = model.log_sigma_id();
    model.store.get_mut(ls).data[0] = (0.5f64).ln();
    let steps = 16;
    let members = 4000;
    let h0 = vec![0.0; a.hidden];
    let mut sum_sq = 0.0;
    for s in 0..members {
        let cfg = RolloutConfig {
            n_steps: steps,
            noise_on: true,
            seed: 1,
            stream: s,
        };
        let r = model.rollout(&[0.0, 0.0], &h0, &cfg).unwrap();
        sum_sq += r.states.row(steps - 1).iter().map(|v| v * v).sum::<f64>();
    }
    let var = sum_sq / (2 * members) as f64;
    let want = steps as f64 * 0.25;
    // Standard error of the variance estimate is about want * sqrt(2 / 8000).
    assert!(
        (var - want).abs() < 5.0 * want * (2.0 / 8000.0f64).sqrt(),
        "{var} vs {want}"
    );
    let quiet = RolloutConfig {
        n_steps: steps,
        noise_on: false,
        seed: 1,
        stream: 0,
    };
    assert!(model
        .rollout(&[0.7, -0.2], &h0, &quiet)
        .unwrap()
        .states
        .rows()
        .all(|r| r == [0.7, -0.2]));
}

#[test]
fn inputs_are_validated() {
    let model = EmulatorModel::new(arch(3, 2), 0).unwrap();
    assert!(model
        .nll_lowres(&random_series(1, 3, 0), Dropout::Off)
        .is_err());
    assert!(model
        .nll_lowres(&random_series(5, 2, 0), Dropout::Off)
        .is_err());
    assert!(model
        .nll_highres(
            &random_series(5, 3, 0),
            &random_series(5, 5, 0),
            Dropout::Off
        )
        .is_err());
    let masks = vec![DropoutMask::ones(6); 2];
    assert!(model
        .nll_lowres(&random_series(5, 3, 0), Dropout::Fixed(&masks))
        .is_err());
    assert!(matches!(
        Tape::new().backward(&model),
        Err(tlemu::Error::NoForwardPass)
    ));
}

#[test]
fn instances_differ_and_reproduce() {
    let a = EmulatorModel::new(arch(3, 2), 11).unwrap();
    let b = EmulatorModel::new(arch(3, 2), 11).unwrap();
    let c = EmulatorModel::new(arch(3, 2), 12).unwrap();
    assert_eq!(a.digest(), b.digest());
    assert_ne!(a.digest(), c.digest());
    assert_eq!((a.log_sigma(), a.log_rho()), (0.0, 0.0));
}
