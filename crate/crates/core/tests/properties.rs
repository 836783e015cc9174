use pfa_core::engine::{closure_apply, ClosureMode, Pfa, PfaParts};
use pfa_core::generator::{random_epsilon_matrix, random_pfa, random_strings, GenConfig};
use pfa_core::learner::{HeadMode, LearnableModel, ModelOptions};
use pfa_core::stochastic::{
    is_simplex_point, mat_mul, power_sum, sample_dirichlet_row, seeded_rng, softmax_rows,
    AcceptIndicator, Matrix, ProbVector, StochasticMatrix,
};
use proptest::prelude::*;

fn stochastic(n: usize, seed: u64) -> StochasticMatrix {
    let mut rng = seeded_rng(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| sample_dirichlet_row(n, 1.0, &mut rng).unwrap().into_vec())
        .collect();
    StochasticMatrix::row_stochastic(&rows).unwrap()
}

fn random_instance(n: usize, k: usize, eps: f64, seed: u64) -> (Pfa, Vec<String>) {
    let cfg = GenConfig {
        n,
        alphabet_size: k,
        num_strings: 10,
        len_min: 1,
        len_max: 12,
        ..GenConfig::config1(seed)
    }
    .with_epsilon(eps);
    let mut rng = seeded_rng(seed);
    let pfa = random_pfa(&cfg, &mut rng).unwrap();
    let mut strings = random_strings(&cfg, &mut rng).unwrap();
    strings.push(String::new());
    (pfa, strings)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn traces_stay_on_simplex(n in 1usize..8, k in 1usize..4, eps in 0.0f64..1.0, seed in any::<u64>()) {
        let (pfa, strings) = random_instance(n, k, eps, seed);
        for s in &strings {
            let trace = pfa.state_trace(s).unwrap();
            prop_assert_eq!(trace.len(), s.chars().count() + 1);
            for v in &trace.states {
                prop_assert!(is_simplex_point(v.as_slice()), "{:?}", v);
            }
        }
    }

    #[test]
    fn matrix_product_is_associative(n in 1usize..7, seed in any::<u64>()) {
        let a = stochastic(n, seed);
        let b = stochastic(n, seed.wrapping_add(1));
        let c = stochastic(n, seed.wrapping_add(2));
        let left = mat_mul(&mat_mul(&a, &b).unwrap(), &c).unwrap();
        let right = mat_mul(&a, &mat_mul(&b, &c).unwrap()).unwrap();
        prop_assert!(left.as_matrix().max_abs_diff(right.as_matrix()) < 1e-12);
    }

    #[test]
    fn products_of_stochastic_matrices_are_stochastic(n in 1usize..7, seed in any::<u64>()) {
        let p = mat_mul(&stochastic(n, seed), &stochastic(n, !seed)).unwrap();
        for s in p.as_matrix().row_sums() {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(
        n in 1usize..6,
        entries in prop::collection::vec(-1e4f64..1e4, 36),
        extreme in any::<bool>(),
    ) {
        let mut data = entries[..n * n].to_vec();
        if extreme {
            for (i, x) in data.iter_mut().enumerate() {
                *x = if i % 2 == 0 { 1e4 } else { -1e4 };
            }
        }
        let t = softmax_rows(&Matrix::from_vec(n, n, data).unwrap()).unwrap();
        for s in t.as_matrix().row_sums() {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        prop_assert!(t.as_matrix().as_slice().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn single_term_power_sum_is_identity(n in 1usize..7, seed in any::<u64>()) {
        let s = power_sum(&stochastic(n, seed), 1).unwrap();
        prop_assert_eq!(s, Matrix::identity(n));
    }

    #[test]
    fn rest_mass_closure_fixes_terminal_distributions(n in 2usize..8, prob in 0.0f64..1.0, seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let e = random_epsilon_matrix(n, prob, &mut rng);
        // States without outgoing ε-edges keep all their mass.
        let terminal: Vec<usize> = (0..n).filter(|&i| e.row(i).iter().all(|&w| w == 0.0)).collect();
        let mut p = vec![0.0; n];
        for &i in &terminal {
            p[i] = 1.0 / terminal.len() as f64;
        }
        let p = ProbVector::new(p).unwrap();
        let c = closure_apply(&p, &e, ClosureMode::RestMass, n, 1e-12).unwrap();
        prop_assert!(c.vector.max_abs_diff(p.as_slice()) < 1e-15);
    }

    #[test]
    fn logit_row_shift_leaves_outputs_unchanged(
        seed in any::<u64>(),
        shift in -50.0f64..50.0,
        head_affine in any::<bool>(),
    ) {
        let head = if head_affine { HeadMode::AffineSigmoid } else { HeadMode::RawClipped };
        let mut rng = seeded_rng(seed);
        let model = LearnableModel::random(
            vec!['a', 'b'],
            AcceptIndicator::from_states(4, &[0, 3]).unwrap(),
            ModelOptions { head, init_std: 1.0, ..ModelOptions::default() },
            &mut rng,
        ).unwrap();
        let mut shifted = model.clone();
        let row = (seed % 12) as usize;
        for j in 0..4 {
            shifted.params_mut()[row * 4 + j] += shift;
        }
        for s in ["", "a", "abab", "bbbaab"] {
            let d = (model.predict(s).unwrap() - shifted.predict(s).unwrap()).abs();
            prop_assert!(d < 1e-12, "{s}: {d}");
        }
    }
}

#[test]
fn rest_mass_closure_is_not_idempotent_in_general() {
    let mut rows = vec![vec![0.0; 3]; 3];
    rows[0][1] = 0.5;
    rows[1][2] = 1.0;
    let e = StochasticMatrix::row_substochastic(&rows).unwrap();
    let p = ProbVector::one_hot(3, 0).unwrap();
    let once = closure_apply(&p, &e, ClosureMode::RestMass, 3, 1e-12).unwrap().vector;
    let twice = closure_apply(&once, &e, ClosureMode::RestMass, 3, 1e-12).unwrap().vector;
    assert_eq!(once.as_slice(), &[0.5, 0.0, 0.5]);
    assert_eq!(twice.as_slice(), &[0.25, 0.0, 0.75]);
}

#[test]
fn trace_matches_explicit_operator_product() {
    let (pfa, strings) = random_instance(5, 3, 0.0, 11);
    for s in strings.iter().filter(|s| !s.is_empty()) {
        let mut product = Matrix::identity(pfa.n());
        for c in s.chars() {
            product = product.matmul(pfa.transition(c).unwrap().as_matrix()).unwrap();
        }
        let expected = pfa_core::stochastic::row_times(pfa.initial().as_slice(), &product);
        let got = pfa.state_trace(s).unwrap();
        assert!(got.last().max_abs_diff(&expected) < 1e-12);
    }
}

#[test]
fn closure_modes_agree_on_epsilon_free_structure() {
    // With E = 0 every mode is the identity map.
    let n = 4;
    let zero = StochasticMatrix::row_substochastic(&vec![vec![0.0; n]; n]).unwrap();
    let p = ProbVector::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    for mode in [ClosureMode::PaperSum, ClosureMode::RestMass] {
        let c = closure_apply(&p, &zero, mode, n, 1e-12).unwrap();
        assert!(c.vector.max_abs_diff(p.as_slice()) < 1e-15);
    }
    let id = StochasticMatrix::identity(n);
    let c = closure_apply(&p, &id, ClosureMode::FixedPoint, 10 * n, 1e-12).unwrap();
    assert!(c.converged);
    assert!(c.vector.max_abs_diff(p.as_slice()) < 1e-15);
}

#[test]
fn pfa_parts_reject_inconsistent_epsilon_kind() {
    let mut rows = vec![vec![0.0; 2]; 2];
    rows[0][1] = 0.5;
    let sub = StochasticMatrix::row_substochastic(&rows).unwrap();
    let build = |mode| {
        Pfa::new(PfaParts {
            alphabet: vec!['a'],
            transitions: vec![StochasticMatrix::identity(2)],
            epsilon: Some(sub.clone()),
            initial: ProbVector::one_hot(2, 0).unwrap(),
            accepting: AcceptIndicator::from_states(2, &[1]).unwrap(),
            closure_mode: mode,
            fixed_point: None,
        })
    };
    assert!(build(ClosureMode::RestMass).is_ok());
    assert!(build(ClosureMode::FixedPoint).is_err());
    assert!(build(ClosureMode::None).is_err());
}
