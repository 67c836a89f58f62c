use l2rnn::data::{generate_task, sample_dataset, InputDist, TaskConfig, TaskKind};
use l2rnn::linalg::Svd;
use l2rnn::recovery::{build_design, recover};
use l2rnn::refine::sgd_refine;
use l2rnn::spectral::{rank_factorize, recover_rnn, HankelTriple};
use l2rnn::{
    kron, spectral_learn, DenseTensor, Example, Linear2RNN, Method, RecoveryConfig, RefineConfig, SequenceDataset,
    SpectralConfig, TtVector,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(r: &mut ChaCha8Rng) -> f64 {
    r.sample(rand_distr::StandardNormal)
}

fn tensor(shape: &[usize], r: &mut ChaCha8Rng) -> DenseTensor {
    DenseTensor::from_fn(shape, |_| gaussian(r))
}

fn matrix(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| gaussian(r))
}

/// Well-conditioned: identity plus a small perturbation.
fn invertible(n: usize, r: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::identity(n, n) + matrix(n, n, r) * (0.3 / n as f64)
}

fn sequence(len: usize, d: usize, r: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..len).map(|_| (0..d).map(|_| gaussian(r)).collect()).collect()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..4, 1..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mode_product_matches_matricization(seed in any::<u64>(), shape in shape_strategy(), rows in 1usize..4) {
        let mut r = rng(seed);
        let t = tensor(&shape, &mut r);
        let mode = (seed as usize) % shape.len();
        let x = matrix(rows, shape[mode], &mut r);
        let y = t.mode_matrix_product(&x, mode).unwrap();
        let lhs = y.matricize(mode).unwrap().to_matrix().unwrap();
        let rhs = &x * t.matricize(mode).unwrap().to_matrix().unwrap();
        prop_assert!((lhs - &rhs).norm() <= 1e-12 * rhs.norm().max(1.0));
    }

    #[test]
    fn reshape_group_inverts(seed in any::<u64>(), shape in shape_strategy()) {
        let t = tensor(&shape, &mut rng(seed));
        let split = 1 + (seed as usize) % shape.len();
        let grouped = t.reshape_group(&[split, shape.len() - split].iter().copied().filter(|&g| g > 0).collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(grouped.reshape(&shape).unwrap(), t);
    }

    #[test]
    fn kron_entries_are_products(seed in any::<u64>(), dims in prop::collection::vec(1usize..4, 1..5)) {
        let mut r = rng(seed);
        let vs: Vec<Vec<f64>> = dims.iter().map(|&d| (0..d).map(|_| gaussian(&mut r)).collect()).collect();
        let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
        let k = kron(&refs).unwrap();
        prop_assert_eq!(k.len(), dims.iter().product::<usize>());
        let outer = DenseTensor::from_fn(&dims, |idx| idx.iter().zip(&vs).map(|(&i, v)| v[i]).product());
        for (a, b) in k.iter().zip(outer.data()) {
            prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON * b.abs().max(1e-300) * dims.len() as f64);
        }
    }

    #[test]
    fn tt_bond_basis_change_is_invisible(seed in any::<u64>(), order in 2usize..5, rank in 1usize..4) {
        let mut r = rng(seed);
        let tt = TtVector::uniform(&vec![2; order], rank, |_, _, _, _| gaussian(&mut r)).unwrap();
        let bond = (seed as usize) % (order - 1);
        let m = invertible(rank, &mut r);
        let moved = tt.change_bond_basis(bond, &m).unwrap();
        prop_assert!(moved.to_dense().rel_error(&tt.to_dense()).unwrap() < 1e-8);
    }

    #[test]
    fn tt_svd_is_non_expansive(seed in any::<u64>(), shape in prop::collection::vec(2usize..4, 2..5), rank in 1usize..4) {
        let t = tensor(&shape, &mut rng(seed));
        let tt = TtVector::svd(&t, rank, 0.0).unwrap();
        prop_assert!(tt.ranks().iter().all(|&k| k <= rank));
        prop_assert!(tt.to_dense().norm() <= t.norm() * (1.0 + 1e-12));
    }

    #[test]
    fn rnn_is_multilinear_in_each_input(seed in any::<u64>(), len in 1usize..5, slot in 0usize..4, c in -3.0f64..3.0) {
        let mut r = rng(seed);
        let m = Linear2RNN::random(3, 2, 2, 0.5, &mut r);
        let slot = slot % len;
        let x = sequence(len, 2, &mut r);
        let z = sequence(len, 2, &mut r);
        let base = m.evaluate(&x).unwrap();
        let mut scaled = x.clone();
        scaled[slot].iter_mut().for_each(|v| *v *= c);
        let want: Vec<f64> = base.iter().map(|v| c * v).collect();
        let got = m.evaluate(&scaled).unwrap();
        prop_assert!(got.iter().zip(&want).all(|(g, w)| (g - w).abs() <= 1e-9 * (1.0 + w.abs())));
        let mut other = x.clone();
        other[slot] = z[slot].clone();
        let mut sum = x.clone();
        sum[slot] = x[slot].iter().zip(&z[slot]).map(|(a, b)| a + b).collect();
        let add: Vec<f64> = base.iter().zip(m.evaluate(&other).unwrap()).map(|(a, b)| a + b).collect();
        let got = m.evaluate(&sum).unwrap();
        prop_assert!(got.iter().zip(&add).all(|(g, w)| (g - w).abs() <= 1e-9 * (1.0 + w.abs())));
    }

    #[test]
    fn hankel_ranks_bounded_by_states(seed in any::<u64>(), n in 1usize..5, d in 1usize..4, l in 1usize..5) {
        let m = Linear2RNN::random(n, d, 2, 0.5, &mut rng(seed));
        let h = m.hankel(l).unwrap();
        prop_assert!(h.ranks().iter().all(|&k| k <= n));
        prop_assert_eq!(h.shape(), [vec![d; l], vec![2]].concat());
    }

    #[test]
    fn change_of_basis_keeps_function_and_size(seed in any::<u64>(), n in 1usize..5) {
        let mut r = rng(seed);
        let m = Linear2RNN::random(n, 3, 2, 0.5, &mut r);
        let p = invertible(n, &mut r);
        let moved = m.change_of_basis(&p).unwrap();
        prop_assert_eq!(moved.n(), n);
        for _ in 0..5 {
            let x = sequence(4, 3, &mut r);
            prop_assert!(rel(&moved.evaluate(&x).unwrap(), &m.evaluate(&x).unwrap()) < 1e-8);
        }
    }

    #[test]
    fn serialization_round_trips(seed in any::<u64>(), count in 0usize..6, len in 0usize..4) {
        let mut r = rng(seed);
        let examples: Vec<Example> = (0..count)
            .map(|i| {
                let x = sequence(len, 2, &mut r);
                let y = vec![gaussian(&mut r) * 1e-300, gaussian(&mut r) * 1e300, f64::MIN_POSITIVE * i as f64];
                Example::new(x, y)
            })
            .collect();
        let ds = SequenceDataset::new(examples).unwrap();
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        prop_assert_eq!(&SequenceDataset::read_jsonl(buf.as_slice()).unwrap().examples, &ds.examples);
        let m = Linear2RNN::random(3, 2, 2, 0.7, &mut r);
        prop_assert_eq!(Linear2RNN::from_json(&m.to_json().unwrap()).unwrap(), m);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn noiseless_data_matches_generator_hankel(seed in any::<u64>(), len in 1usize..5) {
        let mut r = rng(seed);
        let m = Linear2RNN::random(3, 2, 2, 0.5, &mut r);
        let f = |x: &[Vec<f64>]| m.evaluate(x).unwrap();
        let ds = sample_dataset(&f, InputDist::Gaussian(2), len, 20, 0.0, &mut r);
        let rd = build_design(&ds.examples, 2).unwrap();
        let h = m.hankel_dense(len).unwrap();
        let pred = &rd.x * rd.as_matrix(&h).unwrap();
        for (e, row) in ds.examples.iter().zip(pred.row_iter()) {
            prop_assert_eq!(&e.y, &m.evaluate(&e.x).unwrap());
            for (a, b) in row.iter().zip(&e.y) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn recovery_shapes_ranks_and_consistency(seed in any::<u64>(), method in 0usize..4, l in 1usize..4) {
        let method = [Method::LeastSquares, Method::NuclearNorm, Method::Iht, Method::Tiht][method];
        let mut r = rng(seed);
        let target = Linear2RNN::random(2, 2, 1, 0.5, &mut r);
        let f = |x: &[Vec<f64>]| target.evaluate(x).unwrap();
        let count = 2usize.pow(l as u32) + 10;
        let ds = sample_dataset(&f, InputDist::Gaussian(2), l, count, 0.0, &mut r);
        let rd = build_design(&ds.examples, 2).unwrap();
        let mut cfg = RecoveryConfig::new(method, 2);
        cfg.rel_tol = 1e-12;
        cfg.max_iters = 20000;
        let est = recover(&rd, &cfg).unwrap().estimate;
        prop_assert_eq!(est.shape().to_vec(), [vec![2; l], vec![1]].concat());
        let res = &rd.x * rd.as_matrix(&est).unwrap() - &rd.y;
        prop_assert!(res.norm() <= 1e-6 * rd.y.norm(), "{} residual {:e}", method, res.norm() / rd.y.norm());
        if matches!(method, Method::Iht | Method::Tiht) {
            let split = l.div_ceil(2);
            let bal = est.unfold(split).unwrap();
            prop_assert!(Svd::new(&bal).numerical_rank(1e-10) <= 2);
        }
    }

    #[test]
    fn factorization_choice_does_not_change_the_model(seed in any::<u64>()) {
        let mut r = rng(seed);
        let target = Linear2RNN::random(3, 2, 2, 0.5, &mut r);
        let t = HankelTriple::from_model(&target, 2).unwrap();
        let (p, s, _) = rank_factorize(&t.h_2l, 2, 3).unwrap();
        let m = invertible(3, &mut r);
        let inv = m.clone().try_inverse().unwrap();
        let a = recover_rnn(&t, &p, &s).unwrap();
        let b = recover_rnn(&t, &(&p * &m), &(&inv * &s)).unwrap();
        for _ in 0..5 {
            let x = sequence(6, 2, &mut r);
            let (ya, yb) = (a.evaluate(&x).unwrap(), b.evaluate(&x).unwrap());
            let mse: f64 = ya.iter().zip(&yb).map(|(u, v)| (u - v).powi(2)).sum::<f64>() / ya.len() as f64;
            prop_assert!(mse < 1e-8);
        }
    }

    #[test]
    fn learned_model_always_has_rank_states(seed in any::<u64>(), rank in 1usize..7) {
        let mut cfg = TaskConfig::new(TaskKind::Arithmetic, 300, 0.0, seed);
        cfg.test_size = 1;
        let task = generate_task(&cfg).unwrap();
        let train: Vec<Vec<Example>> = task.train.iter().map(|d| d.examples.clone()).collect();
        let mut sc = SpectralConfig::new(2, RecoveryConfig::new(Method::LeastSquares, rank));
        sc.zero_fallback = false;
        let learned = spectral_learn(&train, &sc).unwrap();
        prop_assert_eq!(learned.model.n(), rank);
        prop_assert_eq!(learned.diagnostics.warning, rank != 2);
    }

    #[test]
    fn refinement_never_hurts_and_is_reproducible(seed in any::<u64>(), lr in 1e-4f64..1.0) {
        let mut r = rng(seed);
        let target = Linear2RNN::random(2, 2, 1, 0.5, &mut r);
        let start = Linear2RNN::random(2, 2, 1, 0.5, &mut r);
        let f = |x: &[Vec<f64>]| target.evaluate(x).unwrap();
        let data = sample_dataset(&f, InputDist::Gaussian(2), 3, 40, 0.1, &mut r).examples;
        let cfg = RefineConfig { lr, epochs: 4, batch_size: 8, seed, ..Default::default() };
        let (a, _) = sgd_refine(&start, &data, &cfg).unwrap();
        let (b, _) = sgd_refine(&start, &data, &cfg).unwrap();
        prop_assert!(a.mse(&data).unwrap() <= start.mse(&data).unwrap());
        prop_assert_eq!(a, b);
    }
}
