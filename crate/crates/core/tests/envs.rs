use marlcert_core::envs::*;
use marlcert_core::Error;
use proptest::prelude::*;

fn rollout(spec: &GridSpec, actions: &[Vec<usize>]) -> Vec<(EnvState, f64)> {
    let mut state = reset(spec).unwrap();
    let mut out = Vec::new();
    for a in actions {
        if state.done {
            break;
        }
        let ja = JointAction::from_indices(&a[..spec.n_agents()]).unwrap();
        let o = step(spec, &state, &ja).unwrap();
        state = o.next_state.clone();
        out.push((o.next_state, o.team_reward));
    }
    out
}

fn permuted(spec: &GridSpec, perm: &[usize]) -> GridSpec {
    let mut s = spec.clone();
    s.agent_starts = perm.iter().map(|&i| spec.agent_starts[i]).collect();
    s.agent_goals = spec.agent_goals.as_ref().map(|g| perm.iter().map(|&i| g[i]).collect());
    s
}

fn actions_strategy(agents: usize) -> impl Strategy<Value = Vec<Vec<usize>>> {
    proptest::collection::vec(proptest::collection::vec(0usize..ACTION_COUNT, agents), 0..60)
}

#[test]
fn builtins_load_and_validate() {
    for name in GridSpec::builtin_names() {
        let spec = GridSpec::builtin(name).unwrap();
        spec.validate().unwrap();
        assert!(spec.rewards_non_negative());
    }
    assert_eq!(GridSpec::builtin("checkers").unwrap().n_agents(), 2);
    assert_eq!(GridSpec::builtin("switch").unwrap().n_agents(), 4);
    assert_eq!(GridSpec::builtin("corridor").unwrap().n_agents(), 1);
    assert!(matches!(GridSpec::load("/nonexistent/layout.toml"), Err(Error::MissingArtifact(_))));
}

#[test]
fn malformed_maps_are_rejected() {
    let r = GridSpec::builtin("checkers").unwrap().reward_table;
    assert!(matches!(GridSpec::from_map("x", "0.\n...", 5, r), Err(Error::InvalidSpec(_))));
    assert!(matches!(GridSpec::from_map("x", "0?A", 5, r), Err(Error::InvalidSpec(_))));
    assert!(matches!(GridSpec::from_map("x", "1.A", 5, r), Err(Error::InvalidSpec(_))));
    assert!(matches!(GridSpec::from_map("x", "0a1", 5, r), Err(Error::InvalidSpec(_))));
}

#[test]
fn corridor_walk_collects_apple() {
    let spec = GridSpec::builtin("corridor").unwrap();
    let right = Action::Right;
    let walk = |_: &GridSpec, _: &EnvState| Ok(JointAction(vec![right]));
    let r = episode_reward(&spec, &walk, 100).unwrap();
    assert_eq!(r, 10.0);
    let mut state = reset(&spec).unwrap();
    for _ in 0..4 {
        state = step(&spec, &state, &JointAction(vec![right])).unwrap().next_state;
    }
    assert!(state.done);
    assert!(matches!(step(&spec, &state, &JointAction(vec![right])), Err(Error::InvalidStep(_))));
}

#[test]
fn wrong_arity_is_rejected() {
    let spec = GridSpec::builtin("checkers").unwrap();
    let state = reset(&spec).unwrap();
    assert!(step(&spec, &state, &JointAction::from_indices(&[0]).unwrap()).is_err());
    assert!(Action::from_index(ACTION_COUNT).is_err());
    assert!(observe(&spec, &state, 5).is_err());
}

#[test]
fn state_serializes_to_json_and_toml() {
    let spec = GridSpec::builtin("switch").unwrap();
    let mut state = reset(&spec).unwrap();
    state = step(&spec, &state, &JointAction::from_indices(&[2, 1, 3, 4]).unwrap()).unwrap().next_state;
    let json = serde_json::to_string(&state).unwrap();
    assert_eq!(serde_json::from_str::<EnvState>(&json).unwrap(), state);
    let toml_text = toml::to_string(&state).unwrap();
    assert_eq!(toml::from_str::<EnvState>(&toml_text).unwrap(), state);
}

#[test]
fn observations_have_fixed_length() {
    for name in GridSpec::builtin_names() {
        let spec = GridSpec::builtin(name).unwrap();
        let state = reset(&spec).unwrap();
        for a in 0..spec.n_agents() {
            let o = observe(&spec, &state, a).unwrap();
            assert_eq!(o.len(), observation_len(&spec));
            assert_eq!(o.len(), 9 * CHANNELS + 2);
            assert!(o.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

proptest! {
    #[test]
    fn rewards_are_non_negative_and_capped(actions in actions_strategy(4), which in 0usize..3) {
        let name = ["checkers", "switch", "corridor"][which];
        let spec = GridSpec::builtin(name).unwrap();
        let trace = rollout(&spec, &actions);
        let total: f64 = trace.iter().map(|(_, r)| r).sum();
        prop_assert!(trace.iter().all(|(_, r)| *r >= 0.0));
        let max: f64 = spec.items.values().map(|k| spec.reward_table.get(*k)).sum();
        prop_assert!(total <= max);
        for (s, _) in &trace {
            prop_assert!(s.step_count <= spec.step_cap);
            let mut seen = std::collections::BTreeSet::new();
            for p in &s.agent_positions {
                prop_assert!(spec.is_open(*p));
                prop_assert!(seen.insert(*p), "two agents share a cell");
            }
        }
    }

    #[test]
    fn step_is_pure(actions in actions_strategy(4)) {
        let spec = GridSpec::builtin("switch").unwrap();
        let a = rollout(&spec, &actions);
        let b = rollout(&spec, &actions);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn agent_relabelling_is_a_symmetry(actions in actions_strategy(4), perm_idx in 0usize..24) {
        let spec = GridSpec::builtin("switch").unwrap();
        let mut perms = Vec::new();
        for a in 0..4 { for b in 0..4 { for c in 0..4 { for d in 0..4 {
            let p = [a, b, c, d];
            let mut s = p.to_vec(); s.sort();
            if s == [0, 1, 2, 3] { perms.push(p); }
        }}}}
        let perm = perms[perm_idx];
        let pspec = permuted(&spec, &perm);
        let pactions: Vec<Vec<usize>> = actions.iter().map(|a| perm.iter().map(|&i| a[i]).collect()).collect();
        let base = rollout(&spec, &actions);
        let moved = rollout(&pspec, &pactions);
        prop_assert_eq!(base.len(), moved.len());
        for ((s, r), (ps, pr)) in base.iter().zip(&moved) {
            prop_assert_eq!(r, pr);
            prop_assert_eq!(&s.remaining_items, &ps.remaining_items);
            for (k, &i) in perm.iter().enumerate() {
                prop_assert_eq!(ps.agent_positions[k], s.agent_positions[i]);
            }
        }
    }

    #[test]
    fn state_round_trips_through_json(actions in actions_strategy(2)) {
        let spec = GridSpec::builtin("checkers").unwrap();
        if let Some((s, _)) = rollout(&spec, &actions).last() {
            let text = serde_json::to_string(s).unwrap();
            prop_assert_eq!(&serde_json::from_str::<EnvState>(&text).unwrap(), s);
        }
    }
}
