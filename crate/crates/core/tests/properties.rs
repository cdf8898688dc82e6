//! Property tests for the divergence, density and network modules.

use alpha_uda::density::{self, GaussianModel, KernelMixture, SampleSet};
use alpha_uda::divergence::{self, Alpha, DiscreteDistribution};
use alpha_uda::nnet::{
    cross_entropy_value, model_params_mut, model_vars, sgd_step, softmax_floor_rows, Classifier,
    Dense, Gradients, Mlp, SgdState, Tape, Var, DEFAULT_P_MIN,
};
use alpha_uda::{rng, Error, Matrix};
use proptest::prelude::*;

fn probs(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, len).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    })
}

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..8).prop_flat_map(|n| (probs(n), probs(n)))
}

fn d(v: &[f64]) -> DiscreteDistribution {
    DiscreteDistribution::new(v.to_vec()).unwrap()
}

fn alpha(v: f64) -> Alpha {
    Alpha::new(v).unwrap()
}

proptest! {
    #[test]
    fn divergence_is_nonnegative((p, q) in pair(), a in 0.01f64..0.99) {
        let v = divergence::exact_alpha_divergence(&d(&p), &d(&q), alpha(a)).unwrap();
        prop_assert!(v >= -1e-12);
        prop_assert_eq!(divergence::exact_alpha_divergence(&d(&p), &d(&p), alpha(a)).unwrap(), 0.0);
        if p.iter().zip(&q).any(|(x, y)| (x - y).abs() > 1e-3) {
            prop_assert!(v > 0.0);
        }
    }

    #[test]
    fn skew_symmetry((p, q) in pair(), k in 1usize..10) {
        let a = alpha(k as f64 / 10.0);
        let lhs = divergence::exact_alpha_divergence(&d(&p), &d(&q), a).unwrap();
        let rhs = divergence::exact_alpha_divergence(&d(&q), &d(&p), a.complement()).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10);
    }

    #[test]
    fn kl_limits((p, q) in pair()) {
        let kl_pq = divergence::kl_divergence(&d(&p), &d(&q)).unwrap();
        let kl_qp = divergence::kl_divergence(&d(&q), &d(&p)).unwrap();
        let hi = divergence::exact_alpha_divergence(&d(&p), &d(&q), alpha(0.999)).unwrap();
        let lo = divergence::exact_alpha_divergence(&d(&p), &d(&q), alpha(0.001)).unwrap();
        prop_assert!((hi - kl_pq).abs() <= 5e-3);
        prop_assert!((lo - kl_qp).abs() <= 5e-3);
    }

    #[test]
    fn renyi_identity((p, q) in pair(), a in 0.05f64..0.95) {
        let dv = divergence::exact_alpha_divergence(&d(&p), &d(&q), alpha(a)).unwrap();
        let via = divergence::renyi_from_alpha_divergence(dv, a).unwrap();
        let direct = divergence::renyi_exact(&d(&p), &d(&q), a).unwrap();
        prop_assert!((via - direct).abs() <= 1e-9);
    }

    #[test]
    fn tune_alpha_is_monotone(r in 1e-4f64..0.2, rho1 in 1f64..200.0, extra in 0f64..200.0) {
        let a1 = divergence::tune_alpha(r, rho1, 0.999, 1e-9);
        let a2 = divergence::tune_alpha(r, rho1 + extra, 0.999, 1e-9);
        match (a1, a2) {
            (Ok(x), Ok(y)) => prop_assert!(x.value() <= y.value() + 1e-9),
            (Err(Error::NoFeasibleAlpha { .. }), _) => {}
            (Ok(_), Err(e)) => prop_assert!(false, "larger rho became infeasible: {e}"),
            (Err(e), _) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn estimator_is_zero_on_equal_densities(r in prop::collection::vec(-5f64..5.0, 1..20), a in 0.05f64..0.95) {
        let m = Matrix::column(&r);
        let f = |z: &[f64]| z[0].sin();
        let est = divergence::mc_alpha_divergence(&m, f, f, alpha(a)).unwrap();
        prop_assert_eq!(est.value, 0.0);
    }

    #[test]
    fn log_density_is_finite_far_away(c in -10f64..10.0, offset in 0f64..20.0, var in 0.1f64..4.0) {
        let m = KernelMixture::new(Matrix::column(&[c, c + 0.5]), var).unwrap();
        let z = c - offset * var.sqrt();
        prop_assert!(m.log_density(&[z]).unwrap().is_finite());
    }

    #[test]
    fn softmax_shift_invariance(logits in prop::collection::vec(-20f64..20.0, 2..6), shift in -100f64..100.0) {
        let a = Matrix::from_vec(1, logits.len(), logits.clone()).unwrap();
        let b = a.map(|v| v + shift);
        let pa = softmax_floor_rows(&a, DEFAULT_P_MIN).unwrap();
        let pb = softmax_floor_rows(&b, DEFAULT_P_MIN).unwrap();
        for (x, y) in pa.data().iter().zip(pb.data()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        prop_assert!((pa.data().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn loss_is_capped(logits in prop::collection::vec(-2000f64..2000.0, 3..=3), label in 0usize..3) {
        let p = softmax_floor_rows(&Matrix::from_vec(1, 3, logits).unwrap(), DEFAULT_P_MIN).unwrap();
        let loss = cross_entropy_value(&p, &[label]).unwrap();
        // renormalizing after the floor can push a floored entry just under p_min
        let cap = -DEFAULT_P_MIN.ln() + (1.0 + 2.0 * DEFAULT_P_MIN).ln();
        prop_assert!(loss >= 0.0 && loss <= cap);
    }
}

#[test]
fn mixtures_integrate_to_one() {
    let m1 = KernelMixture::new(Matrix::column(&[-1.0, 0.5, 2.0]), 0.7).unwrap();
    let h = 0.01;
    let total: f64 = (0..2400)
        .map(|i| m1.log_density(&[-12.0 + h * i as f64]).unwrap().exp() * h)
        .sum();
    assert!((total - 1.0).abs() < 1e-3, "{total}");

    let m2 = KernelMixture::new(Matrix::from_rows(&[[0.0, 0.0], [1.0, -0.5]]).unwrap(), 1.0).unwrap();
    let h = 0.05;
    let mut total = 0.0;
    for i in 0..320 {
        for j in 0..320 {
            let z = [-8.0 + h * i as f64, -8.0 + h * j as f64];
            total += m2.log_density(&z).unwrap().exp() * h * h;
        }
    }
    assert!((total - 1.0).abs() < 1e-3, "{total}");
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (n.abs() + 1e-12)
}

#[test]
fn log_density_gradients_match_differences() {
    let mut r = rng::seeded(11);
    for _ in 0..10 {
        let centers = Matrix::from_vec(4, 2, (0..8).map(|_| rng::standard_normal(&mut r)).collect()).unwrap();
        let z: Vec<f64> = (0..2).map(|_| rng::standard_normal(&mut r)).collect();
        for skip in [None, Some(2)] {
            let m = KernelMixture::new(centers.clone(), 0.8).unwrap();
            let g = m.log_density_grad(&z, skip).unwrap();
            let h = 1e-5;
            for j in 0..2 {
                let mut up = z.clone();
                up[j] += h;
                let mut down = z.clone();
                down[j] -= h;
                let num = (m.log_density_skipping(&up, skip).unwrap() - m.log_density_skipping(&down, skip).unwrap()) / (2.0 * h);
                assert!(rel_err(g.d_point[j], num) <= 1e-4);
            }
            for i in 0..4 {
                for j in 0..2 {
                    let shifted = |delta: f64| {
                        let mut c = centers.clone();
                        c.set(i, j, c.get(i, j) + delta);
                        KernelMixture::new(c, 0.8).unwrap().log_density_skipping(&z, skip).unwrap()
                    };
                    let num = (shifted(h) - shifted(-h)) / (2.0 * h);
                    let ana = g.d_centers.get(i, j);
                    assert!(rel_err(ana, num) <= 1e-4 || (ana == 0.0 && num == 0.0), "{ana} vs {num}");
                }
            }
        }
    }
}

#[test]
fn robust_objective_gradients_match_differences() {
    let s = density::contaminated_sample(3, 200).unwrap();
    for a in [0.3, 0.5, 0.9] {
        let a = alpha(a);
        for (mu, var) in [(0.2, 1.3), (-0.4, 0.7), (1.0, 2.5)] {
            let model = GaussianModel::new(vec![mu], vec![var]).unwrap();
            let g = density::robust_fit_objective_grad(&s, &model, a).unwrap();
            let f = |mu: f64, var: f64| {
                density::robust_fit_objective(&s, &GaussianModel::new(vec![mu], vec![var]).unwrap(), a).unwrap()
            };
            let h = 1e-5;
            let dm = (f(mu + h, var) - f(mu - h, var)) / (2.0 * h);
            let dv = (f(mu, var + h) - f(mu, var - h)) / (2.0 * h);
            let dlv = (f(mu, var * h.exp()) - f(mu, var * (-h).exp())) / (2.0 * h);
            assert!(rel_err(g.d_mean[0], dm) <= 1e-4);
            assert!(rel_err(g.d_variance[0], dv) <= 1e-4);
            assert!(rel_err(g.d_log_variance[0], dlv) <= 1e-4);
            assert!((g.value - f(mu, var)).abs() <= 1e-12 * g.value.abs());
        }
    }
}

#[test]
fn robust_fit_moves_toward_the_inliers() {
    for seed in 0..3 {
        let s = density::contaminated_sample(seed, 10_000).unwrap();
        let settings = density::FitSettings::default();
        let kl = density::fit_robust_gaussian(&s, alpha(0.999), &settings).unwrap();
        let robust = density::fit_robust_gaussian(&s, alpha(0.5), &settings).unwrap();
        assert!(robust.model.mean[0].abs() < kl.model.mean[0].abs());
    }
}

/// Contracts a tape output to a scalar with fixed weights.
fn contract(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let (r, c) = tape.value(out).shape();
    let mut g = rng::seeded(seed);
    let left = tape.leaf(Matrix::from_vec(1, r, (0..r).map(|_| rng::standard_normal(&mut g)).collect()).unwrap());
    let right = tape.leaf(Matrix::from_vec(c, 1, (0..c).map(|_| rng::standard_normal(&mut g)).collect()).unwrap());
    let row = tape.matmul(left, out).unwrap();
    tape.matmul(row, right).unwrap()
}

/// Checks the tape gradient of `build` against central differences for every input entry.
fn check_op(inputs: &[Matrix], build: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let eval = |xs: &[Matrix]| {
        let mut t = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone())).collect();
        let out = build(&mut t, &vars);
        let s = contract(&mut t, out, 99);
        (t.scalar(s), t.backward(s).unwrap(), vars)
    };
    let (_, grads, vars) = eval(inputs);
    let mut worst: f64 = 0.0;
    let h = 1e-6;
    let mut work = inputs.to_vec();
    for k in 0..work.len() {
        let analytic = grads.wrt(vars[k]);
        for i in 0..work[k].data().len() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + h;
            let up = eval(&work).0;
            work[k].data_mut()[i] = orig - h;
            let down = eval(&work).0;
            work[k].data_mut()[i] = orig;
            let num = (up - down) / (2.0 * h);
            let a = analytic.data()[i];
            if !(a == 0.0 && num.abs() < 1e-9) {
                worst = worst.max(rel_err(a, num));
            }
        }
    }
    worst
}

fn randn(r: &mut rng::ExperimentRng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng::standard_normal(r)).collect()).unwrap()
}

#[test]
fn every_registered_operation_has_exact_gradients() {
    let mut r = rng::seeded(5);
    let a = randn(&mut r, 3, 4);
    let b = randn(&mut r, 4, 2);
    let row = randn(&mut r, 1, 4);
    let same = randn(&mut r, 3, 4);
    // keep ReLU inputs away from the kink
    let relu_in = a.map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
    let probs = Matrix::from_rows(&[[0.2, 0.5, 0.3], [0.6, 0.1, 0.3]]).unwrap();
    let points = randn(&mut r, 5, 2);
    let centers = randn(&mut r, 5, 2);
    let ratios = randn(&mut r, 6, 1);

    let cases: Vec<(&str, f64)> = vec![
        ("matmul", check_op(&[a.clone(), b.clone()], |t, v| t.matmul(v[0], v[1]).unwrap())),
        ("add_row", check_op(&[a.clone(), row.clone()], |t, v| t.add_row(v[0], v[1]).unwrap())),
        ("add", check_op(&[a.clone(), same.clone()], |t, v| t.add(v[0], v[1]).unwrap())),
        ("sub", check_op(&[a.clone(), same.clone()], |t, v| t.sub(v[0], v[1]).unwrap())),
        ("scale", check_op(std::slice::from_ref(&a), |t, v| t.scale(v[0], -1.7))),
        ("relu", check_op(&[relu_in], |t, v| t.relu(v[0]))),
        ("softmax_floor", check_op(std::slice::from_ref(&a), |t, v| t.softmax_floor(v[0], DEFAULT_P_MIN).unwrap())),
        ("softmax_floor active", check_op(&[a.map(|x| 3.0 * x)], |t, v| t.softmax_floor(v[0], 0.1).unwrap())),
        ("cross_entropy", check_op(&[probs], |t, v| t.cross_entropy(v[0], &[1, 0]).unwrap())),
        ("mixture", check_op(&[points.clone(), centers.clone()], |t, v| t.mixture_log_density(v[0], v[1], 0.9, false).unwrap())),
        ("mixture leave-one-out", check_op(&[points.clone(), centers], |t, v| t.mixture_log_density(v[0], v[1], 0.9, true).unwrap())),
        ("mixture self", check_op(&[points], |t, v| t.mixture_log_density(v[0], v[0], 1.0, false).unwrap())),
        ("alpha_estimate", check_op(&[ratios], |t, v| t.alpha_estimate(v[0], alpha(0.7)).unwrap())),
    ];
    for (name, err) in cases {
        assert!(err <= 1e-4, "{name}: relative error {err}");
    }
}

/// One forward pass, backward pass and SGD step from a seeded model.
fn one_step() -> (f64, Matrix, Vec<Matrix>) {
    let mut r = rng::seeded(21);
    let mut mlp = Mlp::new(&[3, 5, 2], &mut r).unwrap();
    let mut cls = Classifier::new(2, 3, DEFAULT_P_MIN, &mut r).unwrap();
    let x = randn(&mut r, 7, 3);
    let mut tape = Tape::new();
    let ev = mlp.record(&mut tape);
    let cv = cls.record(&mut tape);
    let xv = tape.leaf(x.clone());
    let z = mlp.forward_tape(&mut tape, &ev, xv).unwrap();
    let p = cls.forward_tape(&mut tape, cv, z).unwrap();
    let loss = tape.cross_entropy(p, &[0, 1, 2, 0, 1, 2, 0]).unwrap();
    let grads = Gradients::from_tape(&tape.backward(loss).unwrap(), &model_vars(&ev, cv));
    let mut sgd = SgdState::new(0.05, 0.9, 5e-4).unwrap();
    sgd_step(&mut model_params_mut(&mut mlp, &mut cls), &grads, &mut sgd).unwrap();
    let probs = cls.forward(&mlp.forward(&x).unwrap()).unwrap();
    let params = mlp.params().into_iter().chain(cls.params()).cloned().collect();
    (tape.scalar(loss), probs, params)
}

#[test]
fn forward_and_updates_are_deterministic() {
    let (l1, p1, w1) = one_step();
    let (l2, p2, w2) = one_step();
    assert_eq!(l1.to_bits(), l2.to_bits());
    assert_eq!(p1, p2);
    assert_eq!(w1, w2);
}

#[test]
fn sample_sets_roundtrip_through_csv() {
    let s = density::contaminated_sample(8, 50).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    s.save_csv(&path).unwrap();
    let back = SampleSet::load_csv(&path).unwrap();
    assert_eq!(back.samples(), s.samples());
}

#[test]
fn dense_layers_roundtrip_checkpoints() {
    let mut r = rng::seeded(4);
    let mlp = Mlp::new(&[2, 4, 3], &mut r).unwrap();
    let cls = Classifier::from_layer(Dense::init(3, 2, &mut r), DEFAULT_P_MIN).unwrap();
    let text = alpha_uda::nnet::checkpoint_to_string(&mlp, &cls);
    let (m2, c2) = alpha_uda::nnet::parse_checkpoint(&text).unwrap();
    assert_eq!(m2, mlp);
    assert_eq!(c2, cls);
}
