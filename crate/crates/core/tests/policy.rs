use marlcert_core::envs::{
    episode_reward, observe, reset, step, Action, GridSpec, JointAction, ACTION_COUNT,
};
use marlcert_core::nn::{Activation, Dense, Mlp};
use marlcert_core::policy::{train, JointPolicy, Mixer, MixerKind, TrainConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_policy(name: &str, kind: MixerKind, seed: u64) -> (GridSpec, JointPolicy) {
    let spec = GridSpec::builtin(name).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = JointPolicy::random(&spec, kind, &[16], 8, 4, &mut rng).unwrap();
    (spec, policy)
}

fn zero_policy(spec: &GridSpec) -> JointPolicy {
    let obs = marlcert_core::envs::observation_len(spec);
    let nets = (0..spec.n_agents())
        .map(|_| Mlp::zeros(&[obs, ACTION_COUNT], Activation::Relu).unwrap())
        .collect();
    JointPolicy::new(nets, Mixer::Vdn, marlcert_core::policy::global_state_len(spec)).unwrap()
}

/// Linear net whose value for action a is `offset[a] + Σ obs`.
fn linear_net(obs_len: usize, offset: [f64; ACTION_COUNT]) -> Mlp {
    let layer = Dense {
        inputs: obs_len,
        outputs: ACTION_COUNT,
        weights: vec![1.0; obs_len * ACTION_COUNT],
        biases: offset.to_vec(),
    };
    Mlp::from_layers(Activation::Relu, vec![layer]).unwrap()
}

#[test]
fn zero_nets_give_zero_values_and_action_zero() {
    let spec = GridSpec::builtin("checkers").unwrap();
    let policy = zero_policy(&spec);
    let state = reset(&spec).unwrap();
    let obs = observe(&spec, &state, 0).unwrap();
    assert_eq!(policy.agent_values(&obs, 0).unwrap(), vec![0.0; ACTION_COUNT]);
    let joint = policy.greedy_joint_action(&spec, &state).unwrap();
    assert_eq!(joint.indices(), vec![0, 0]);
}

#[test]
fn vdn_hand_summed_toy() {
    let spec = GridSpec::builtin("checkers").unwrap();
    let len = marlcert_core::envs::observation_len(&spec);
    let state = reset(&spec).unwrap();
    let nets = vec![
        linear_net(len, [1.0, 2.0, 3.0, 4.0, 5.0]),
        linear_net(len, [-1.0, 0.5, 0.0, 0.25, 2.0]),
    ];
    let policy = JointPolicy::new(nets, Mixer::Vdn, marlcert_core::policy::global_state_len(&spec)).unwrap();
    let s0: f64 = observe(&spec, &state, 0).unwrap().iter().sum();
    let s1: f64 = observe(&spec, &state, 1).unwrap().iter().sum();
    let a = JointAction(vec![Action::Left, Action::Right]);
    let q = policy.q_total(&spec, &state, &a).unwrap();
    assert!((q - (3.0 + s0 + 0.25 + s1)).abs() < 1e-12);
    assert_eq!(policy.greedy_joint_action(&spec, &state).unwrap().indices(), vec![4, 4]);

    let cf = policy.counterfactual_values(&spec, &state, &a, 1).unwrap();
    let expected = [-1.0, 0.5, 0.0, 0.25, 2.0].map(|v| 3.0 + s0 + v + s1);
    for (c, e) in cf.iter().zip(expected) {
        assert!((c - e).abs() < 1e-12);
    }
}

#[test]
fn vdn_with_identical_values_is_n_times() {
    let spec = GridSpec::builtin("switch").unwrap();
    let len = marlcert_core::envs::observation_len(&spec);
    let layer = |_| Dense {
        inputs: len,
        outputs: ACTION_COUNT,
        weights: vec![0.0; len * ACTION_COUNT],
        biases: vec![1.5; ACTION_COUNT],
    };
    let nets = (0..4).map(|i| Mlp::from_layers(Activation::Relu, vec![layer(i)]).unwrap()).collect();
    let policy = JointPolicy::new(nets, Mixer::Vdn, marlcert_core::policy::global_state_len(&spec)).unwrap();
    let state = reset(&spec).unwrap();
    let a = JointAction(vec![Action::Stay; 4]);
    assert_eq!(policy.q_total(&spec, &state, &a).unwrap(), 6.0);
}

#[test]
fn decentralized_execution() {
    let (spec, policy) = random_policy("checkers", MixerKind::QmixMono, 3);
    let state = reset(&spec).unwrap();
    let obs1 = observe(&spec, &state, 1).unwrap();
    let before = policy.agent_values(&obs1, 1).unwrap();
    let mut perturbed = observe(&spec, &state, 0).unwrap();
    perturbed.iter_mut().for_each(|v| *v += 0.7);
    let _ = policy.agent_values(&perturbed, 0).unwrap();
    assert_eq!(before, policy.agent_values(&obs1, 1).unwrap());
}

#[test]
fn greedy_matches_brute_force_argmax() {
    for seed in 0..10 {
        let (spec, policy) = random_policy("switch", MixerKind::Vdn, seed);
        let state = reset(&spec).unwrap();
        let chosen = policy.greedy_joint_action(&spec, &state).unwrap();
        for n in 0..spec.n_agents() {
            let values = policy.agent_values(&observe(&spec, &state, n).unwrap(), n).unwrap();
            let mut best = 0;
            for a in 1..ACTION_COUNT {
                if values[a] > values[best] {
                    best = a;
                }
            }
            assert_eq!(chosen.0[n].index(), best);
            // Under VDN the per-agent argmax is the best single-agent deviation.
            let cf = policy.counterfactual_values(&spec, &state, &chosen, n).unwrap();
            assert!(cf.iter().all(|&v| v <= cf[best]));
        }
    }
}

#[test]
fn counterfactual_matches_enumeration() {
    for kind in [MixerKind::Vdn, MixerKind::QmixMono] {
        let (spec, policy) = random_policy("checkers", kind, 11);
        let state = reset(&spec).unwrap();
        let a = JointAction(vec![Action::Down, Action::Up]);
        for agent in 0..2 {
            let cf = policy.counterfactual_values(&spec, &state, &a, agent).unwrap();
            for alt in 0..ACTION_COUNT {
                let mut b = a.clone();
                b.0[agent] = Action::ALL[alt];
                assert_eq!(cf[alt], policy.q_total(&spec, &state, &b).unwrap());
            }
            assert_eq!(cf[a.0[agent].index()], policy.q_total(&spec, &state, &a).unwrap());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vdn_difference_depends_only_on_own_values(seed in 0u64..1000, agent in 0usize..2, alt in 0usize..5, walk in proptest::collection::vec(0usize..5, 0..6)) {
        let (spec, policy) = random_policy("checkers", MixerKind::Vdn, seed);
        let mut state = reset(&spec).unwrap();
        for a in walk.chunks(2) {
            if state.done || a.len() < 2 { break; }
            state = step(&spec, &state, &JointAction::from_indices(a).unwrap()).unwrap().next_state;
        }
        let a = policy.greedy_joint_action(&spec, &state).unwrap();
        let mut b = a.clone();
        b.0[agent] = Action::ALL[alt];
        let values = policy.agent_values(&observe(&spec, &state, agent).unwrap(), agent).unwrap();
        let diff = policy.q_total(&spec, &state, &a).unwrap() - policy.q_total(&spec, &state, &b).unwrap();
        prop_assert!((diff - (values[a.0[agent].index()] - values[alt])).abs() < 1e-12);
    }

    #[test]
    fn qmix_monotone_in_each_chosen_value(seed in 0u64..1000, agent in 0usize..4, bump in 0.0f64..5.0, base in proptest::collection::vec(-3.0f64..3.0, 4)) {
        let (spec, policy) = random_policy("switch", MixerKind::QmixMono, seed);
        let global = marlcert_core::policy::global_state(&spec, &reset(&spec).unwrap());
        let before = policy.mix(&base, &global).unwrap();
        let mut raised = base.clone();
        raised[agent] += bump;
        prop_assert!(policy.mix(&raised, &global).unwrap() >= before - 1e-12);
    }
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    for kind in [MixerKind::Vdn, MixerKind::QmixMono] {
        let (spec, policy) = random_policy("switch", kind, 5);
        let dir = tempfile::tempdir().unwrap();
        policy.save(dir.path()).unwrap();
        let back = JointPolicy::load(dir.path()).unwrap();
        assert_eq!(back, policy);
        assert_eq!(back.fingerprint(), policy.fingerprint());
        let state = reset(&spec).unwrap();
        let a = policy.greedy_joint_action(&spec, &state).unwrap();
        assert_eq!(
            back.q_total(&spec, &state, &a).unwrap().to_bits(),
            policy.q_total(&spec, &state, &a).unwrap().to_bits()
        );
    }
}

#[test]
fn missing_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let err = JointPolicy::load(dir.path().join("nope")).unwrap_err();
    assert!(matches!(err, marlcert_core::Error::MissingArtifact(_)));
}

#[test]
fn zero_episodes_returns_initial_policy() {
    let spec = GridSpec::builtin("checkers").unwrap();
    let cfg = TrainConfig { episodes: 0, seed: 9, ..TrainConfig::default() };
    let report = train(&spec, &cfg, MixerKind::QmixMono).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let init = JointPolicy::random(&spec, MixerKind::QmixMono, &cfg.hidden, cfg.hyper_hidden, cfg.mixer_embed, &mut rng).unwrap();
    assert_eq!(report.policy, init);
    assert!(report.episode_rewards.is_empty());
}

fn corridor_config(seed: u64) -> TrainConfig {
    TrainConfig {
        episodes: 150,
        warmup: 100,
        epsilon_decay_episodes: 100,
        hidden: vec![16],
        target_sync: 50,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn corridor_agent_learns_the_apple() {
    let spec = GridSpec::builtin("corridor").unwrap();
    let report = train(&spec, &corridor_config(1), MixerKind::Vdn).unwrap();
    let reward = episode_reward(&spec, &report.policy, spec.step_cap).unwrap();
    assert_eq!(reward, 10.0);
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let spec = GridSpec::builtin("corridor").unwrap();
    let cfg = TrainConfig { episodes: 30, ..corridor_config(4) };
    let a = train(&spec, &cfg, MixerKind::QmixMono).unwrap().policy;
    let b = train(&spec, &cfg, MixerKind::QmixMono).unwrap().policy;
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    a.save(da.path()).unwrap();
    b.save(db.path()).unwrap();
    for file in ["manifest.toml", "agent_0.mlp", "hypernet.mlp"] {
        assert_eq!(
            std::fs::read(da.path().join(file)).unwrap(),
            std::fs::read(db.path().join(file)).unwrap()
        );
    }
}
