mod common;

use common::{random_instance, relative_gradient, Instance};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xmhash_core::model::{objective, orthogonality_defect, HyperParams, LengthState, Modality, ModelState};
use xmhash_core::solver::{
    init_state, procrustes, train, update_b, update_p, update_r, update_s, update_t, update_u_backward,
    update_u_forward,
};
use xmhash_core::synth::{oracle_sign_min, random_orthogonal};

const EPS: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

fn instance(seed: u64) -> Instance {
    random_instance(&[4, 6], 40, 10, 3, seed)
}

fn with_length(state: &ModelState, k: usize, edit: impl Fn(&mut LengthState)) -> ModelState {
    let mut s = state.clone();
    edit(&mut s.lengths[k]);
    s
}

#[test]
fn objective_matches_naive_sum() {
    for seed in 0..5 {
        let inst = random_instance(&[3, 5, 8], 25, 7, 4, seed);
        let fast = objective(&inst.state, &inst.hp, &inst.phi1, &inst.phi2, &inst.y).unwrap();
        let naive = inst.objective(&inst.state);
        assert!(
            (fast.total - naive).abs() <= 1e-10 * naive.abs(),
            "{} vs {naive}",
            fast.total
        );
        assert!((fast.sum_of_parts() - fast.total).abs() <= 1e-10 * naive.abs());
    }
}

#[test]
fn objective_is_permutation_invariant() {
    let inst = random_instance(&[4, 6], 30, 8, 3, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let perm = rand::seq::index::sample(&mut rng, 30, 30).into_vec();
    let cols = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), perm.len(), |i, j| m[(i, perm[j])]);
    let mut state = inst.state.clone();
    for ls in &mut state.lengths {
        ls.s = cols(&ls.s);
        ls.b = cols(&ls.b);
    }
    let phi1 = xmhash_core::FeatureMatrix::new(cols(inst.phi1.as_matrix())).unwrap();
    let phi2 = xmhash_core::FeatureMatrix::new(cols(inst.phi2.as_matrix())).unwrap();
    let y = xmhash_core::LabelMatrix::new(cols(inst.y.as_matrix())).unwrap();
    let a = objective(&inst.state, &inst.hp, &inst.phi1, &inst.phi2, &inst.y)
        .unwrap()
        .total;
    let b = objective(&state, &inst.hp, &phi1, &phi2, &y).unwrap().total;
    assert!((a - b).abs() <= 1e-10 * a);
}

#[test]
fn s_update_is_stationary() {
    for seed in 0..3 {
        let inst = instance(seed);
        for k in 0..2 {
            let new = update_s(k, &inst.state, &inst.hp, &inst.phi1, &inst.phi2, &inst.y).unwrap();
            let rel = relative_gradient(&inst.state.lengths[k].s, &new, EPS, |x| {
                inst.objective(&with_length(&inst.state, k, |ls| ls.s = x.clone()))
            });
            assert!(rel <= GRAD_TOL, "S^{k}: {rel}");
        }
    }
}

#[test]
fn projection_updates_are_stationary() {
    let inst = instance(7);
    for k in 0..2 {
        for t in Modality::BOTH {
            let slot = t.slot();
            let fwd = update_u_forward(k, t, &inst.state, &inst.hp, &inst.phi1, &inst.phi2, &inst.y).unwrap();
            let rel = relative_gradient(&inst.state.lengths[k].u_forward[slot], &fwd, EPS, |x| {
                inst.objective(&with_length(&inst.state, k, |ls| ls.u_forward[slot] = x.clone()))
            });
            assert!(rel <= GRAD_TOL, "forward {k} {slot}: {rel}");

            let bwd = update_u_backward(k, t, &inst.state, &inst.hp, &inst.phi1, &inst.phi2, &inst.y).unwrap();
            let rel = relative_gradient(&inst.state.lengths[k].u_backward[slot], &bwd, EPS, |x| {
                inst.objective(&with_length(&inst.state, k, |ls| ls.u_backward[slot] = x.clone()))
            });
            assert!(rel <= GRAD_TOL, "backward {k} {slot}: {rel}");
        }
    }
}

#[test]
fn label_and_chain_updates_are_stationary() {
    let inst = instance(9);
    for k in 0..2 {
        let p = update_p(k, &inst.state, &inst.hp, &inst.phi1, &inst.phi2, &inst.y).unwrap();
        let rel = relative_gradient(&inst.state.lengths[k].p, &p, EPS, |x| {
            inst.objective(&with_length(&inst.state, k, |ls| ls.p = x.clone()))
        });
        assert!(rel <= GRAD_TOL, "P^{k}: {rel}");
    }
    let t = update_t(0, &inst.state, &inst.hp).unwrap();
    let rel = relative_gradient(&inst.state.chain[0], &t, EPS, |x| {
        let mut s = inst.state.clone();
        s.chain[0] = x.clone();
        inst.objective(&s)
    });
    assert!(rel <= GRAD_TOL, "T: {rel}");
    assert!(update_t(1, &inst.state, &inst.hp).is_err());
}

#[test]
fn code_update_matches_exhaustive_search() {
    let mut hp = HyperParams::with_lengths(&[2]);
    hp.mu.clear();
    for seed in 0..20u64 {
        let r = random_orthogonal(2, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let s = DMatrix::from_fn(2, 3, |_, _| {
            rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
        });
        let state = ModelState {
            lengths: vec![LengthState {
                s: s.clone(),
                b: DMatrix::from_element(2, 3, 1.0),
                r: r.clone(),
                u_forward: [DMatrix::zeros(2, 1), DMatrix::zeros(2, 1)],
                u_backward: [DMatrix::zeros(1, 2), DMatrix::zeros(1, 2)],
                p: DMatrix::zeros(1, 2),
            }],
            chain: vec![],
        };
        assert_eq!(update_b(0, &state, &hp).unwrap(), oracle_sign_min(&r, &s).unwrap());
    }
}

#[test]
fn procrustes_beats_random_rotations() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..5u64 {
        let b = common::random_signs(4, 12, &mut rng);
        let s = DMatrix::from_fn(4, 12, |_, _| {
            rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
        });
        let r = procrustes(&b, &s).unwrap();
        assert!(orthogonality_defect(&r) <= 1e-10);
        let best = (&b - &r * &s).norm_squared();
        for q in 0..200u64 {
            let other = random_orthogonal(4, case * 1000 + q);
            assert!(best <= (&b - &other * &s).norm_squared() + 1e-10);
        }
    }
}

#[test]
fn rotation_update_reads_current_blocks() {
    let inst = instance(2);
    let r = update_r(1, &inst.state).unwrap();
    assert_eq!(
        r,
        procrustes(&inst.state.lengths[1].b, &inst.state.lengths[1].s).unwrap()
    );
}

#[test]
fn initialization_is_deterministic() {
    let inst = instance(4);
    let a = init_state(&inst.hp, &inst.phi1, &inst.phi2, &inst.y, 77).unwrap();
    let b = init_state(&inst.hp, &inst.phi1, &inst.phi2, &inst.y, 77).unwrap();
    let c = init_state(&inst.hp, &inst.phi1, &inst.phi2, &inst.y, 78).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.lengths[0].s, c.lengths[0].s);
    for ls in &a.lengths {
        assert!(ls.b.iter().all(|&v| v == 1.0 || v == -1.0));
        assert!(orthogonality_defect(&ls.r) <= 1e-8);
    }
    assert!(a.chain.iter().all(|t| t.iter().all(|&v| v == 0.0)));
}

#[test]
fn training_descends_and_keeps_invariants() {
    let inst = random_instance(&[4, 8, 12], 60, 12, 3, 21);
    let mut hp = inst.hp.clone();
    hp.max_iter = 15;
    hp.tol = 1e-300;
    let (state, trace) = train(&inst.phi1, &inst.phi2, &inst.y, &hp).unwrap();
    let mut prev = trace.initial_objective;
    for rec in &trace.iterations {
        assert!(
            rec.objective.total <= prev * (1.0 + 1e-9),
            "{} > {prev}",
            rec.objective.total
        );
        assert!(rec.orthogonality_defect <= 1e-8);
        prev = rec.objective.total;
    }
    let check = objective(&state, &hp, &inst.phi1, &inst.phi2, &inst.y).unwrap();
    assert!((check.total - trace.final_objective()).abs() <= 1e-9 * check.total);
}

#[test]
fn decoupled_lengths_train_independently() {
    let inst = random_instance(&[4, 8], 50, 10, 3, 31);
    let mut joint = inst.hp.clone();
    joint.mu = vec![0.0];
    joint.max_iter = 8;
    joint.tol = 1e-300;
    let (both, _) = train(&inst.phi1, &inst.phi2, &inst.y, &joint).unwrap();
    for (k, &bits) in [4usize, 8].iter().enumerate() {
        let mut single = HyperParams::with_lengths(&[bits]);
        single.alpha = vec![joint.alpha[k]];
        single.beta = vec![joint.beta[k]];
        single.omega = vec![joint.omega[k]];
        single.lambda = joint.lambda;
        single.max_iter = joint.max_iter;
        single.tol = 1e-300;
        single.seed = joint.seed;
        let (alone, _) = train(&inst.phi1, &inst.phi2, &inst.y, &single).unwrap();
        assert_eq!(alone.lengths[0].b, both.lengths[k].b);
        assert!((&alone.lengths[0].s - &both.lengths[k].s).norm() <= 1e-9 * alone.lengths[0].s.norm());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn objective_is_nonnegative(seed in 0u64..1000) {
        let inst = random_instance(&[2, 3], 8, 4, 2, seed);
        let v = objective(&inst.state, &inst.hp, &inst.phi1, &inst.phi2, &inst.y).unwrap();
        prop_assert!(v.total >= 0.0);
        prop_assert!(v.lengths.iter().all(|t| t.forward >= 0.0 && t.backward >= 0.0 && t.quantization >= 0.0 && t.label >= 0.0));
    }

    #[test]
    fn code_update_is_blockwise_optimal(seed in 0u64..1000) {
        let inst = random_instance(&[3, 5], 10, 4, 2, seed);
        let mut state = inst.state.clone();
        let before = inst.objective(&state);
        for k in (0..2).rev() {
            state.lengths[k].b = update_b(k, &state, &inst.hp).unwrap();
        }
        prop_assert!(state.lengths.iter().all(|ls| ls.b.iter().all(|&v| v == 1.0 || v == -1.0)));
        // the shortest code appears in no other term, so its update is exact
        let mut shortest = inst.state.clone();
        shortest.lengths[0].b = update_b(0, &shortest, &inst.hp).unwrap();
        prop_assert!(inst.objective(&shortest) <= before + 1e-9 * before);
    }
}
