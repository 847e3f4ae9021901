use proptest::prelude::*;

use wyimvc::dca::{
    dc_objective, dca_step, equiv_class_prob_complete, equiv_class_prob_incomplete,
    incomplete_posterior, random_encoder, solve, HeadSet, KappaWeights, SolverConfig,
};
use wyimvc::discrete::{
    bayes_invert, cluster_marginal, conditional_mutual_information, encoder_information,
    enumerate_bipartitions, mutual_information, subset_information, Bipartition, JointPmf,
};
use wyimvc::rng_from_seed;

/// Joint over `cards` with strictly positive weights drawn by proptest.
fn joint_strategy(cards: Vec<usize>) -> impl Strategy<Value = JointPmf> {
    let n: usize = cards.iter().product();
    prop::collection::vec(0.01f64..1.0, n)
        .prop_map(move |w| JointPmf::from_weights(cards.clone(), w).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn interaction_information_identity(joint in joint_strategy(vec![3, 4]), seed in 0u64..1000) {
        // I(X1;X2) - I(X1;X2|Z) = I(Z;X1) + I(Z;X2) - I(Z;X1,X2)
        let enc = random_encoder(3, vec![3, 4], &mut rng_from_seed(seed)).unwrap();
        let split = Bipartition::canonical(2, &[0]).unwrap();
        let lhs = mutual_information(&joint, &[0]).unwrap()
            - conditional_mutual_information(&joint, &enc, &split).unwrap();
        let rhs = subset_information(&joint, &enc, &[0]).unwrap()
            + subset_information(&joint, &enc, &[1]).unwrap()
            - encoder_information(&joint, &enc).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn information_is_nonnegative_and_bounded(joint in joint_strategy(vec![2, 2, 3]), seed in 0u64..1000) {
        let enc = random_encoder(4, vec![2, 2, 3], &mut rng_from_seed(seed)).unwrap();
        let mi = encoder_information(&joint, &enc).unwrap();
        prop_assert!(mi >= -1e-15);
        prop_assert!(mi <= 4f64.ln() + 1e-12);
        prop_assert!(mi <= joint.entropy() + 1e-12);
        for split in enumerate_bipartitions(3).unwrap() {
            prop_assert!(conditional_mutual_information(&joint, &enc, &split).unwrap() >= -1e-15);
        }
    }

    #[test]
    fn bayes_inversion_remixes_to_the_marginal(joint in joint_strategy(vec![3, 2, 2]), seed in 0u64..1000) {
        let enc = random_encoder(3, vec![3, 2, 2], &mut rng_from_seed(seed)).unwrap();
        for subset in [vec![0], vec![1, 2], vec![0, 2], vec![0, 1, 2]] {
            let lik = bayes_invert(&joint, &enc, &subset).unwrap();
            let marginal = joint.marginal(&subset).unwrap();
            let pz = cluster_marginal(&joint, &enc).unwrap();
            for (s, &m) in marginal.iter().enumerate() {
                let mixed: f64 = (0..3).map(|z| pz[z] * lik.get(z, s)).sum();
                prop_assert!((mixed - m).abs() < 1e-12);
            }
            for z in 0..3 {
                prop_assert!((lik.row(z).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lagrangian_descends_for_half_total_weight(joint in joint_strategy(vec![2, 3, 2]), seed in 0u64..1000, total in 0.05f64..0.5) {
        let kappa = KappaWeights::uniform(3, total).unwrap();
        let cfg = SolverConfig { seed, max_iters: 200, ..SolverConfig::default() };
        let sol = solve(&joint, &kappa, 3, &cfg).unwrap();
        for w in sol.trace.lagrangians().windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn rescaled_objective_descends_for_any_weight(joint in joint_strategy(vec![3, 3]), seed in 0u64..1000, total in 0.05f64..0.95) {
        let kappa = KappaWeights::uniform(2, total).unwrap();
        let cfg = SolverConfig { seed, max_iters: 200, ..SolverConfig::default() };
        let sol = solve(&joint, &kappa, 3, &cfg).unwrap();
        let dc: Vec<f64> = sol.trace.records.iter().map(|r| r.dc_objective).collect();
        for w in dc.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
        }
        let last = sol.trace.records.last().unwrap().dc_objective;
        prop_assert!((dc_objective(&joint, &sol.encoder, &kappa).unwrap() - last).abs() < 1e-9 || !sol.converged);
    }

    #[test]
    fn converged_encoders_are_stationary(joint in joint_strategy(vec![3, 3]), seed in 0u64..1000) {
        let kappa = KappaWeights::uniform(2, 0.3).unwrap();
        let cfg = SolverConfig { seed, max_iters: 2000, tol: 1e-12, ..SolverConfig::default() };
        let sol = solve(&joint, &kappa, 3, &cfg).unwrap();
        prop_assume!(sol.converged);
        let prior = cluster_marginal(&joint, &sol.encoder).unwrap();
        let next = dca_step(&joint, &sol.encoder, &kappa, &prior).unwrap();
        prop_assert!(next.sup_distance(&sol.encoder) < 1e-10);
    }

    #[test]
    fn all_available_posterior_is_the_complete_update(joint in joint_strategy(vec![2, 3, 2]), seed in 0u64..1000) {
        let cards = vec![2, 3, 2];
        let enc = random_encoder(3, cards.clone(), &mut rng_from_seed(seed)).unwrap();
        let kappa = KappaWeights::uniform(3, 0.4).unwrap();
        let prior = cluster_marginal(&joint, &enc).unwrap();
        let next = dca_step(&joint, &enc, &kappa, &prior).unwrap();
        for i in 0..joint.configurations() {
            let config = joint.config_of(i);
            let row = incomplete_posterior(&joint, &enc, &kappa, &[0, 1, 2], &config).unwrap();
            for (a, b) in row.iter().zip(next.row(i)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn incomplete_posteriors_are_distributions(joint in joint_strategy(vec![2, 2, 3]), seed in 0u64..1000, bits in 1u32..7, x in prop::array::uniform3(0usize..2)) {
        let enc = random_encoder(4, vec![2, 2, 3], &mut rng_from_seed(seed)).unwrap();
        let kappa = KappaWeights::uniform(3, 0.45).unwrap();
        let avail: Vec<usize> = (0..3).filter(|v| bits & (1 << v) != 0).collect();
        let q = incomplete_posterior(&joint, &enc, &kappa, &avail, &x).unwrap();
        prop_assert!(q.iter().all(|p| *p >= 0.0));
        prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reduced_weights_stay_below_one(total in 0.0f64..0.5, bits in 1u32..15) {
        let kappa = KappaWeights::uniform(4, total).unwrap();
        let avail: Vec<usize> = (0..4).filter(|v| bits & (1 << v) != 0).collect();
        let r = kappa.reduce(&avail).unwrap();
        prop_assert!(r.kappa_available >= 0.0);
        prop_assert!(r.per_view.iter().all(|(_, k)| *k >= 0.0));
        prop_assert!(r.star() < 1.0);
        prop_assert_eq!(r.per_view.len(), avail.len());
    }
}

#[test]
fn zero_kappa_forgets_the_input_after_one_update() {
    let joint = JointPmf::from_weights(vec![3, 2], vec![1.0, 4.0, 2.0, 2.0, 5.0, 1.0]).unwrap();
    let kappa = KappaWeights::zero(2).unwrap();
    let sol = solve(&joint, &kappa, 3, &SolverConfig::default()).unwrap();
    assert!(sol.trace.records[1].mutual_information <= 1e-12);
    assert!(sol.converged);
    assert_eq!(sol.iterations, 2);
}

#[test]
fn one_hot_head_forces_the_equivalence_class() {
    let kappa = KappaWeights::uniform(2, 0.5).unwrap();
    let mut heads = HeadSet::new();
    heads.insert(vec![0], vec![0.0, 1.0, 0.0]);
    heads.insert(vec![1], vec![0.2, 0.5, 0.3]);
    let q = equiv_class_prob_complete(&heads, &kappa).unwrap();
    assert_eq!(q, vec![0.0, 1.0, 0.0]);
}

#[test]
fn uniform_heads_give_a_uniform_class() {
    let kappa = KappaWeights::uniform(3, 0.5).unwrap();
    let mut heads = HeadSet::new();
    for s in [vec![0], vec![1], vec![2], vec![0, 1], vec![0, 2], vec![1, 2], vec![0, 1, 2]] {
        heads.insert(s, vec![0.25; 4]);
    }
    for avail in [vec![0], vec![1, 2], vec![0, 1, 2]] {
        let q = equiv_class_prob_incomplete(&heads, &kappa, &avail).unwrap();
        for p in q {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }
}

#[test]
fn reported_solver_trace_starts_at_the_initial_encoder() {
    let joint = JointPmf::from_weights(vec![2, 2], vec![3.0, 1.0, 1.0, 3.0]).unwrap();
    let kappa = KappaWeights::uniform(2, 0.5).unwrap();
    let sol = solve(&joint, &kappa, 2, &SolverConfig::default()).unwrap();
    let init = random_encoder(2, vec![2, 2], &mut rng_from_seed(0)).unwrap();
    let first = &sol.trace.records[0];
    assert_eq!(first.iteration, 0);
    assert_eq!(first.step, 0.0);
    assert_eq!(first.mutual_information, encoder_information(&joint, &init).unwrap());
}
