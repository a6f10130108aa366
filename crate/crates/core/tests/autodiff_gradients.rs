use memb::autodiff::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod common;

use common::{op_catalogue, rand_tensor, worst_over_trials, H};

const TOL: f64 = 1e-5;

/// Runs every catalogue op whose name starts with one of `prefixes`.
fn check_ops(prefixes: &[&str]) {
    let ops: Vec<_> = op_catalogue().into_iter().filter(|(n, _)| prefixes.iter().any(|p| n.starts_with(p))).collect();
    assert!(!ops.is_empty(), "no ops match {prefixes:?}");
    for (name, case) in &ops {
        let worst = worst_over_trials(name, case);
        assert!(worst < TOL, "{name}: worst relative error {worst:e}");
    }
}

#[test]
fn matmul_gradients() {
    check_ops(&["matmul"]);
}

#[test]
fn unary_gradients() {
    check_ops(&["unary"]);
}

#[test]
fn binary_gradients_with_broadcast() {
    check_ops(&["binary", "sub"]);
}

#[test]
fn structural_op_gradients() {
    check_ops(&["add_row", "concat_cols", "reshape", "clamp", "row_map_fd"]);
}

#[test]
fn reduce_gradients() {
    check_ops(&["sum", "mean"]);
}

#[test]
fn gaussian_gradients() {
    check_ops(&["gaussian", "tanh_correction"]);
}

#[test]
fn reshape_examples() {
    let mut tape = Tape::new();
    let x = tape.watch(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let r = tape.reshape(x, &[3, 2]).unwrap();
    assert_eq!(tape.shape(r), &[3, 2]);
    assert_eq!(tape.value(r).row(1), &[3.0, 4.0]);
    assert!(matches!(tape.reshape(x, &[4]), Err(AutodiffError::Shape { .. })));
    let s = tape.sum(r, None).unwrap();
    let g = tape.backward(s, &mut []).unwrap();
    assert_eq!(g.wrt(x).unwrap().shape(), &[2, 3]);
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::new();
    let a = tape.input(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let b = tape.input(Tensor::matrix(2, 1, vec![2.0, 3.0]).unwrap());
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[2.0, 3.0]);
    let a = tape.input(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
    let b = tape.input(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[11.0]);
    assert!(matches!(tape.matmul(a, a), Err(AutodiffError::Shape { .. })));
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::new();
    let z = tape.watch(Tensor::scalar(0.0));
    let t = tape.elementwise(Elementwise::Tanh, &[z]).unwrap();
    assert_eq!(tape.value(t).item(), 0.0);
    let g = tape.backward(t, &mut []).unwrap();
    assert_eq!(g.wrt(z).unwrap().item(), 1.0);

    let x = tape.input(Tensor::scalar(0.5));
    let l = tape.log(x).unwrap();
    let e = tape.exp(l).unwrap();
    assert!((tape.value(e).item() - 0.5).abs() < 1e-15);

    let neg = tape.input(Tensor::scalar(-1.0));
    assert!(matches!(tape.log(neg), Err(AutodiffError::Domain { .. })));
    let big = tape.input(Tensor::scalar(1000.0));
    assert!(matches!(tape.exp(big), Err(AutodiffError::NonFinite { .. })));
    assert!(matches!(tape.elementwise(Elementwise::Add, &[x]), Err(AutodiffError::Arity { .. })));
}

#[test]
fn reduce_examples() {
    let mut tape = Tape::new();
    let v = tape.watch(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
    let m = tape.mean(v, None).unwrap();
    assert_eq!(tape.value(m).item(), 2.0);
    let g = tape.backward(m, &mut []).unwrap();
    assert_eq!(g.wrt(v).unwrap().data(), &[1.0 / 3.0; 3]);
    let x = tape.input(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let s = tape.sum(x, Some(0)).unwrap();
    assert_eq!(tape.value(s).data(), &[4.0, 6.0]);
    assert!(matches!(tape.sum(x, Some(2)), Err(AutodiffError::Axis { axis: 2, rank: 2 })));
    assert!(matches!(tape.backward(s, &mut []), Err(AutodiffError::NonScalarRoot(_))));
}

#[test]
fn squashed_density_integrates_to_one() {
    // a = tanh(u), u ~ N(mu, sigma²): integrate the corrected density over (−1, 1).
    // Wide sigmas lose visible mass to the ε floor once |u| > ~7.
    for (mu, log_std) in [(0.0, 0.0), (0.8, -0.5), (-1.2, 0.3)] {
        let n = 200_000;
        let mut total = 0.0;
        for i in 0..n {
            let a = -1.0 + (i as f64 + 0.5) * 2.0 / n as f64;
            let u = a.atanh();
            let mut tape = Tape::new();
            let m = tape.input(Tensor::scalar(mu));
            let s = tape.input(Tensor::scalar(log_std));
            let x = tape.input(Tensor::scalar(u));
            let lp = gaussian_log_prob(&mut tape, m, s, x).unwrap();
            let lp = tanh_correction(&mut tape, lp, x).unwrap();
            total += tape.value(lp).item().exp() * 2.0 / n as f64;
        }
        assert!((total - 1.0).abs() < 1e-3, "mass {total}");
    }
}

#[test]
fn backward_on_parameters() {
    let mut set = ParameterSet::new();
    let w = set.add("w", Tensor::new(vec![3], vec![0.1, -0.2, 0.3]).unwrap());
    let x = Tensor::new(vec![3], vec![1.0, 2.0, -4.0]).unwrap();
    let mut other = ParameterSet::new();
    let o = other.add("o", Tensor::scalar(2.0));

    let build = |tape: &mut Tape, set: &ParameterSet, other: &ParameterSet| {
        let wv = tape.param(set, w);
        let ov = tape.param(other, o);
        let xv = tape.input(x.clone());
        let p = tape.mul(wv, xv).unwrap();
        let p = tape.mul(p, ov).unwrap();
        tape.sum(p, None).unwrap()
    };
    let mut tape = Tape::new();
    let root = build(&mut tape, &set, &other);
    tape.backward(root, &mut [&mut set]).unwrap();
    assert_eq!(set.grad(w), &[2.0, 4.0, -8.0]);
    assert_eq!(other.grad(o), &[0.0], "sets not passed to backward stay untouched");

    // additivity: a second backward doubles the accumulators exactly
    tape.backward(root, &mut [&mut set]).unwrap();
    assert_eq!(set.grad(w), &[4.0, 8.0, -16.0]);
    set.zero_grad();
    assert_eq!(set.grad(w), &[0.0; 3]);
}

#[test]
fn two_layer_tanh_mlp_parameter_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let mut set = ParameterSet::new();
        let w1 = set.add("w1", rand_tensor(&mut rng, &[3, 5]));
        let b1 = set.add("b1", rand_tensor(&mut rng, &[1, 5]));
        let w2 = set.add("w2", rand_tensor(&mut rng, &[5, 1]));
        let x = rand_tensor(&mut rng, &[4, 3]);
        let err = param_gradient_check(
            |t, p| {
                let xv = t.input(x.clone());
                let (w1, b1, w2) = (t.param(p, w1), t.param(p, b1), t.param(p, w2));
                let h = t.matmul(xv, w1)?;
                let h = t.add_row(h, b1)?;
                let h = t.tanh(h)?;
                let y = t.matmul(h, w2)?;
                t.mean(y, None)
            },
            &mut set,
            H,
        )
        .unwrap();
        assert!(err < 1e-5, "{err:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backward_is_bit_deterministic(data in proptest::collection::vec(-2.0f64..2.0, 6)) {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.watch(Tensor::matrix(2, 3, data.clone()).unwrap());
            let y = tape.tanh(x).unwrap();
            let y = tape.square(y).unwrap();
            let s = tape.sum(y, Some(1)).unwrap();
            let s = tape.mean(s, None).unwrap();
            tape.backward(s, &mut []).unwrap().wrt(x).unwrap().data().to_vec()
        };
        let a = run();
        let b = run();
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn log_prob_bounded_by_normaliser(mu in -2.0f64..2.0, ls in -3.0f64..2.0, z in -4.0f64..4.0) {
        let mut tape = Tape::new();
        let m = tape.input(Tensor::scalar(mu));
        let s = tape.input(Tensor::scalar(ls));
        let n = tape.input(Tensor::scalar(z));
        let x = gaussian_reparam(&mut tape, m, s, n).unwrap();
        let lp = gaussian_log_prob(&mut tape, m, s, x).unwrap();
        let v = tape.value(lp).item();
        prop_assert!(v.is_finite());
        prop_assert!(v <= -ls - 0.5 * (2.0 * std::f64::consts::PI).ln() + 1e-12);
    }
}
