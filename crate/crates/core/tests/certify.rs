mod common;

use std::cell::RefCell;
use std::collections::HashMap;

use common::{Counting, Toy};
use marlcert_core::certify::*;
use marlcert_core::envs::{reset, GridSpec};
use marlcert_core::policy::{JointPolicy, MixerKind};
use marlcert_core::smoothing::{sample_tally, ActionTally, NoiseConfig};
use marlcert_core::stats::{binom_lower_bound, std_normal_quantile, PValue};
use marlcert_core::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg(alpha: f64) -> NoiseConfig {
    NoiseConfig::new(0.1, 1000, alpha, 0).unwrap()
}

fn toy_clean_reward(toy: &Toy) -> f64 {
    let mut s = (0usize, 0u64);
    let mut total = 0.0;
    loop {
        let modal: Vec<usize> = toy.node(&s).action_sets.iter().map(|set| set[0]).collect();
        let t = toy.step(&s, &modal);
        total += t.reward;
        if t.done {
            return total;
        }
        s = t.state;
    }
}

#[test]
fn search_matches_brute_force_on_fixed_toys() {
    for seed in 0..40 {
        let toy = Toy { agents: 2, actions: 3, depth: 5, tags: 4, seed };
        let (r_min, eps) = toy.enumerate();
        for pruning in [true, false] {
            let out = tree_search(&toy, SearchOptions { pruning, max_expansions: None }).unwrap();
            assert_eq!(out.r_min, r_min, "seed {seed}");
            assert_eq!(out.epsilon_cert, eps, "seed {seed} pruning {pruning}");
            assert_eq!(out.clean_reward, toy_clean_reward(&toy));
        }
    }
}

#[test]
fn each_state_is_expanded_at_most_once() {
    for seed in 0..20 {
        let toy = Toy { agents: 3, actions: 3, depth: 6, tags: 3, seed };
        for pruning in [true, false] {
            let counting = Counting { inner: &toy, calls: RefCell::new(HashMap::new()) };
            let out = tree_search(&counting, SearchOptions { pruning, max_expansions: None }).unwrap();
            let calls = counting.calls.borrow();
            assert!(calls.values().all(|&c| c == 1));
            assert!(out.nodes_expanded >= calls.len());
        }
    }
}

#[test]
fn expansion_budget_is_enforced() {
    let toy = Toy { agents: 3, actions: 3, depth: 6, tags: 50, seed: 1 };
    let r = tree_search(&toy, SearchOptions { pruning: false, max_expansions: Some(3) });
    assert!(matches!(r, Err(Error::SearchBudget(3))));
}

#[test]
fn importance_hand_example() {
    // Q = 5; agent 0 counterfactuals average 3 under its frequencies, agent 1 average 4.5.
    let cf = vec![vec![5.0, 1.0, 3.0, 3.0, 3.0], vec![5.0, 4.0, 4.5, 4.5, 4.5]];
    let freqs = [[0.5, 0.5, 0.0, 0.0, 0.0], [0.5, 0.0, 0.5, 0.0, 0.0]];
    let f = importance_from_values(5.0, &cf, &freqs).unwrap();
    assert!((f.raw[0] - 2.0).abs() < 1e-12);
    assert!((f.raw[1] - 0.25).abs() < 1e-12);
    assert_eq!(f.normalized, vec![1.0, IF_FLOOR]);
    assert_eq!(ImportanceFactors::uniform(3).normalized, vec![1.0; 3]);
    assert!(importance_from_values(1.0, &cf[..1], &freqs).is_err());
}

#[test]
fn crsc_worked_examples() {
    let c = cfg(0.05);
    // A clear winner, a near tie, and a deterministic agent.
    let tally = ActionTally::from_per_agent(vec![
        [900, 100, 0, 0, 0],
        [0, 510, 490, 0, 0],
        [0, 0, 0, 0, 1000],
    ])
    .unwrap();
    let r = crsc_from_tally(&tally, &[1.0, 1.0, 1.0], &c).unwrap();
    assert_eq!(r.certified_set, vec![0, 2]);
    assert_eq!(r.per_agent_radius[1], 0.0);
    assert!(r.per_agent_radius[2] > r.per_agent_radius[0]);
    assert_eq!(r.min_radius, r.per_agent_radius[0]);
    assert!(r.pvalues[1].get() > 0.05);
    // A small weight rescues a marginal agent's p-value.
    let marginal = ActionTally::from_per_agent(vec![[520, 480, 0, 0, 0]]).unwrap();
    let plain = crsc_from_tally(&marginal, &[1.0], &c).unwrap();
    let weighted = crsc_from_tally(&marginal, &[IF_FLOOR], &c).unwrap();
    assert!(plain.pvalues[0].get() > 0.05);
    assert!(weighted.corrected_pvalues[0].get() <= 0.05);
    assert_eq!(weighted.corrected_pvalues[0].get(), plain.pvalues[0].get() * IF_FLOOR);
}

#[test]
fn node_closed_forms() {
    let c = cfg(0.05);
    let tally = ActionTally::from_per_agent(vec![[0, 0, 0, 1000, 0], [450, 400, 150, 0, 0]]).unwrap();
    let node = node_from_tally(&tally, &[1.0, 1.0], &c).unwrap();
    assert_eq!(node.action_sets, vec![vec![3], vec![0, 1]]);
    let r0 = 0.1 * std_normal_quantile(0.05f64.powf(1.0 / 1000.0)).unwrap();
    let r1 = 0.1 * std_normal_quantile(binom_lower_bound(850, 1000, 0.05).unwrap()).unwrap();
    assert!((node.agent_radius[0] - r0).abs() < 1e-12);
    assert!((node.agent_radius[1] - r1).abs() < 1e-12);
    assert_eq!(node.radius, node.agent_radius[0].min(node.agent_radius[1]));

    let flat = ActionTally::from_per_agent(vec![[250, 250, 250, 250, 0]]).unwrap();
    let node = node_from_tally(&flat, &[1.0], &c).unwrap();
    assert_eq!(node.action_sets, vec![vec![0, 1]]);
    assert_eq!(node.radius, 0.0);
}

#[test]
fn certify_trajectory_follows_greedy_rollout() {
    let spec = GridSpec::builtin("checkers").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let policy = JointPolicy::random(&spec, MixerKind::Vdn, &[16], 8, 4, &mut rng).unwrap();
    let c = NoiseConfig::new(0.05, 200, 0.01, 4).unwrap();
    let certs = certify_trajectory(&policy, &spec, &c).unwrap();
    assert_eq!(certs.len(), spec.step_cap);
    for (i, cert) in certs.iter().enumerate() {
        assert_eq!(cert.step, i);
        assert_eq!(cert.provenance.policy, policy.fingerprint());
        assert_eq!(cert.is_certified(), !cert.result.certified_set.is_empty());
        let direct = crsc(&policy, &spec, &cert.state, &c).unwrap();
        assert_eq!(&direct, cert);
    }
    let tally = sample_tally(&policy, &spec, &certs[0].state, &c).unwrap();
    assert_eq!(certs[0].modal, tally.modal_action());
    assert_eq!(certs[0].state, reset(&spec).unwrap());
}

#[test]
fn grid_search_is_pruning_invariant() {
    let spec = GridSpec::builtin("corridor").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let policy = JointPolicy::random(&spec, MixerKind::Vdn, &[8], 8, 4, &mut rng).unwrap();
    let c = NoiseConfig::new(0.3, 300, 0.01, 1).unwrap();
    let on = tcrgr(&policy, &spec, &c, SearchOptions::default()).unwrap();
    let off = tcrgr(&policy, &spec, &c, SearchOptions { pruning: false, max_expansions: None }).unwrap();
    assert_eq!(on.epsilon_cert, off.epsilon_cert);
    assert_eq!(on.r_min, off.r_min);
    assert_eq!(on.clean_reward, off.clean_reward);
    assert!(on.distinct_states <= off.distinct_states);
    assert!(on.distinct_states <= on.nodes_expanded);
    assert!(on.r_min <= on.clean_reward);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn search_matches_brute_force(seed in any::<u64>(), agents in 1usize..4, actions in 1usize..4, depth in 1usize..6, tags in 1u64..6) {
        let toy = Toy { agents, actions, depth, tags, seed };
        let (r_min, eps) = toy.enumerate();
        let count_on = Counting { inner: &toy, calls: RefCell::new(HashMap::new()) };
        let count_off = Counting { inner: &toy, calls: RefCell::new(HashMap::new()) };
        let on = tree_search(&count_on, SearchOptions::default()).unwrap();
        let off = tree_search(&count_off, SearchOptions { pruning: false, max_expansions: None }).unwrap();
        prop_assert_eq!(on.r_min, r_min);
        prop_assert_eq!(on.epsilon_cert, eps);
        prop_assert_eq!(off.epsilon_cert, eps);
        prop_assert!(count_on.calls.borrow().len() <= count_off.calls.borrow().len());
        prop_assert!(r_min <= toy_clean_reward(&toy));
    }

    #[test]
    fn importance_correction_dominates_plain_bh(counts in proptest::collection::vec(500u64..1000, 1..6), raw in proptest::collection::vec(-5.0f64..5.0, 6)) {
        let rows: Vec<[u64; 5]> = counts.iter().map(|&c| [c, 1000 - c, 0, 0, 0]).collect();
        let tally = ActionTally::from_per_agent(rows).unwrap();
        let weights = normalize_importance(&raw[..counts.len()]);
        let c = cfg(0.05);
        let plain = crsc_from_tally(&tally, &vec![1.0; counts.len()], &c).unwrap();
        let corrected = crsc_from_tally(&tally, &weights, &c).unwrap();
        for n in &plain.certified_set {
            prop_assert!(corrected.certified_set.contains(n));
        }
        for w in &weights {
            prop_assert!((IF_FLOOR..=1.0).contains(w));
        }
    }

    #[test]
    fn radii_are_non_negative_and_bounded(counts in proptest::collection::vec(0u64..1000, 1..5), alpha in 0.001f64..0.2) {
        let rows: Vec<[u64; 5]> = counts.iter().map(|&c| [c, 1000 - c, 0, 0, 0]).collect();
        let tally = ActionTally::from_per_agent(rows).unwrap();
        let c = cfg(alpha);
        let cap = 0.1 * std_normal_quantile(alpha.powf(1e-3)).unwrap();
        let node = node_from_tally(&tally, &vec![1.0; counts.len()], &c).unwrap();
        let r = crsc_from_tally(&tally, &vec![1.0; counts.len()], &c).unwrap();
        for d in node.agent_radius.iter().chain(&r.per_agent_radius) {
            prop_assert!(*d >= 0.0 && *d <= cap + 1e-12);
        }
        prop_assert!(r.corrected_pvalues.iter().all(|p: &PValue| (0.0..=1.0).contains(&p.get())));
    }

    #[test]
    fn node_radius_monotone_in_alpha_for_committed_sets(c1 in 600u64..1000, a1 in 0.001f64..0.01, a2 in 0.01f64..0.2) {
        // With the candidate set fixed, a larger alpha loosens the bound.
        let tally = ActionTally::from_per_agent(vec![[c1, 1000 - c1, 0, 0, 0]]).unwrap();
        let lo = node_from_tally(&tally, &[1.0], &cfg(a1)).unwrap();
        let hi = node_from_tally(&tally, &[1.0], &cfg(a2)).unwrap();
        prop_assume!(lo.action_sets == hi.action_sets);
        prop_assert!(hi.radius >= lo.radius);
    }
}
