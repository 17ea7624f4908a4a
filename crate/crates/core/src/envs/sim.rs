//! Pure simultaneous-move dynamics and local observations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::spec::{Cell, GridSpec, ItemKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

pub const ACTION_COUNT: usize = 5;

impl Action {
    pub const ALL: [Action; ACTION_COUNT] =
        [Action::Up, Action::Down, Action::Left, Action::Right, Action::Stay];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Action> {
        Action::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::InvalidStep(format!("action index {i} out of range")))
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Stay => (0, 0),
        }
    }
}

/// One action per agent.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JointAction(pub Vec<Action>);

impl JointAction {
    pub fn from_indices(indices: &[usize]) -> Result<Self> {
        indices.iter().map(|&i| Action::from_index(i)).collect::<Result<_>>().map(JointAction)
    }

    pub fn indices(&self) -> Vec<usize> {
        self.0.iter().map(|a| a.index()).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvState {
    pub agent_positions: Vec<Cell>,
    #[serde(with = "item_list")]
    pub remaining_items: BTreeMap<Cell, ItemKind>,
    pub step_count: usize,
    pub done: bool,
}

/// Items serialize as a list of `[cell, kind]` pairs in cell order, so any
/// text format can carry them.
mod item_list {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::envs::{Cell, ItemKind};

    pub fn serialize<S: Serializer>(items: &BTreeMap<Cell, ItemKind>, s: S) -> Result<S::Ok, S::Error> {
        items.iter().collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Cell, ItemKind>, D::Error> {
        Ok(Vec::<(Cell, ItemKind)>::deserialize(d)?.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub next_state: EnvState,
    pub team_reward: f64,
    pub done: bool,
}

pub fn reset(spec: &GridSpec) -> Result<EnvState> {
    spec.validate()?;
    Ok(EnvState {
        agent_positions: spec.agent_starts.clone(),
        remaining_items: spec.items.clone(),
        step_count: 0,
        done: false,
    })
}

fn target_cell(spec: &GridSpec, from: Cell, action: Action) -> Cell {
    let (dr, dc) = action.delta();
    let (r, c) = (from.row as isize + dr, from.col as isize + dc);
    if !spec.in_bounds(r, c) {
        return from;
    }
    let to = Cell::new(r as usize, c as usize);
    if spec.walls.contains(&to) {
        from
    } else {
        to
    }
}

/// Resolves simultaneous moves: agents contesting a cell, swapping places,
/// or walking into a blocked agent all stay, repeated to a fixed point.
fn resolve_moves(current: &[Cell], mut target: Vec<Cell>) -> Vec<Cell> {
    let n = current.len();
    loop {
        let mut blocked = vec![false; n];
        for i in 0..n {
            if target[i] == current[i] {
                continue;
            }
            for j in 0..n {
                if i == j {
                    continue;
                }
                let contested = target[j] == target[i];
                let swapped = target[i] == current[j] && target[j] == current[i];
                if contested || swapped {
                    blocked[i] = true;
                    break;
                }
            }
        }
        if !blocked.iter().any(|&b| b) {
            return target;
        }
        for i in 0..n {
            if blocked[i] {
                target[i] = current[i];
            }
        }
    }
}

pub fn step(spec: &GridSpec, state: &EnvState, action: &JointAction) -> Result<StepOutcome> {
    if state.done {
        return Err(Error::InvalidStep("cannot step a finished episode".into()));
    }
    let n = spec.n_agents();
    if action.len() != n || state.agent_positions.len() != n {
        return Err(Error::InvalidStep(format!(
            "joint action has {} entries for {n} agents",
            action.len()
        )));
    }
    let intended: Vec<Cell> = state
        .agent_positions
        .iter()
        .zip(&action.0)
        .map(|(&p, &a)| target_cell(spec, p, a))
        .collect();
    let positions = resolve_moves(&state.agent_positions, intended);

    let mut remaining = state.remaining_items.clone();
    let mut reward = 0.0;
    for (agent, cell) in positions.iter().enumerate() {
        match remaining.get(cell) {
            Some(ItemKind::Goal) => {
                let owns = spec.agent_goals.as_ref().is_some_and(|g| g[agent] == *cell);
                if owns {
                    remaining.remove(cell);
                    reward += spec.reward_table.goal;
                }
            }
            Some(&kind) => {
                remaining.remove(cell);
                reward += spec.reward_table.get(kind);
            }
            None => {}
        }
    }

    let step_count = state.step_count + 1;
    let apples_gone =
        spec.has_apples() && !remaining.values().any(|k| *k == ItemKind::Apple);
    let all_home = spec
        .agent_goals
        .as_ref()
        .is_some_and(|goals| goals.iter().zip(&positions).all(|(g, p)| g == p));
    let done = step_count >= spec.step_cap || apples_gone || all_home;

    Ok(StepOutcome {
        next_state: EnvState {
            agent_positions: positions,
            remaining_items: remaining,
            step_count,
            done,
        },
        team_reward: reward,
        done,
    })
}

/// Channels per window cell: wall, apple, lemon, goal, other agent.
pub const CHANNELS: usize = 5;
const WINDOW: usize = 9;

pub fn observation_len(_spec: &GridSpec) -> usize {
    WINDOW * CHANNELS + 2
}

/// Local 3x3 one-hot window around the agent (row-major, out-of-bounds
/// cells read as walls) followed by the agent's normalized (row, col).
pub fn observe(spec: &GridSpec, state: &EnvState, agent: usize) -> Result<Vec<f64>> {
    let Some(&me) = state.agent_positions.get(agent) else {
        return Err(Error::InvalidStep(format!("no agent with index {agent}")));
    };
    let mut obs = vec![0.0; observation_len(spec)];
    for (k, (dr, dc)) in (-1isize..=1)
        .flat_map(|dr| (-1isize..=1).map(move |dc| (dr, dc)))
        .enumerate()
    {
        let base = k * CHANNELS;
        let (r, c) = (me.row as isize + dr, me.col as isize + dc);
        if !spec.in_bounds(r, c) {
            obs[base] = 1.0;
            continue;
        }
        let cell = Cell::new(r as usize, c as usize);
        if spec.walls.contains(&cell) {
            obs[base] = 1.0;
        }
        match state.remaining_items.get(&cell) {
            Some(ItemKind::Apple) => obs[base + 1] = 1.0,
            Some(ItemKind::Lemon) => obs[base + 2] = 1.0,
            Some(ItemKind::Goal) => obs[base + 3] = 1.0,
            None => {}
        }
        if state
            .agent_positions
            .iter()
            .enumerate()
            .any(|(j, &p)| j != agent && p == cell)
        {
            obs[base + 4] = 1.0;
        }
    }
    let norm = |v: usize, extent: usize| if extent > 1 { v as f64 / (extent - 1) as f64 } else { 0.0 };
    obs[WINDOW * CHANNELS] = norm(me.row, spec.height);
    obs[WINDOW * CHANNELS + 1] = norm(me.col, spec.width);
    Ok(obs)
}

/// Anything that can pick a joint action in a state.
pub trait Controller {
    fn joint_action(&self, spec: &GridSpec, state: &EnvState) -> Result<JointAction>;
}

impl<F> Controller for F
where
    F: Fn(&GridSpec, &EnvState) -> Result<JointAction>,
{
    fn joint_action(&self, spec: &GridSpec, state: &EnvState) -> Result<JointAction> {
        self(spec, state)
    }
}

/// Undiscounted team return of a rollout from the reset state.
pub fn episode_reward(spec: &GridSpec, controller: &dyn Controller, max_steps: usize) -> Result<f64> {
    let mut state = reset(spec)?;
    let mut total = 0.0;
    for _ in 0..max_steps {
        if state.done {
            break;
        }
        let action = controller.joint_action(spec, &state)?;
        let out = step(spec, &state, &action)?;
        total += out.team_reward;
        state = out.next_state;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::RewardTable;

    fn rewards() -> RewardTable {
        RewardTable { apple: 10.0, lemon: 0.0, goal: 5.0 }
    }

    fn joint(actions: &[Action]) -> JointAction {
        JointAction(actions.to_vec())
    }

    #[test]
    fn reset_is_deterministic() {
        let spec = GridSpec::builtin("switch").unwrap();
        let a = reset(&spec).unwrap();
        assert_eq!(a, reset(&spec).unwrap());
        assert_eq!(a.agent_positions.len(), 4);
        assert_eq!(a.step_count, 0);
        assert!(!a.done);
    }

    #[test]
    fn wall_bump_keeps_position() {
        let spec = GridSpec::from_map("w", "#0.A", 5, rewards()).unwrap();
        let s = reset(&spec).unwrap();
        let out = step(&spec, &s, &joint(&[Action::Left])).unwrap();
        assert_eq!(out.next_state.agent_positions[0], Cell::new(0, 1));
        assert_eq!(out.team_reward, 0.0);
        let out = step(&spec, &s, &joint(&[Action::Up])).unwrap();
        assert_eq!(out.next_state.agent_positions[0], Cell::new(0, 1));
    }

    #[test]
    fn apple_is_consumed() {
        let spec = GridSpec::from_map("a", "0AA", 5, rewards()).unwrap();
        let s = reset(&spec).unwrap();
        let out = step(&spec, &s, &joint(&[Action::Right])).unwrap();
        assert_eq!(out.team_reward, 10.0);
        assert!(!out.next_state.remaining_items.contains_key(&Cell::new(0, 1)));
        assert!(!out.done);
    }

    #[test]
    fn step_cap_finishes() {
        let spec = GridSpec::from_map("c", "0..", 2, rewards()).unwrap();
        let s = reset(&spec).unwrap();
        let s1 = step(&spec, &s, &joint(&[Action::Stay])).unwrap();
        assert!(!s1.done);
        let s2 = step(&spec, &s1.next_state, &joint(&[Action::Stay])).unwrap();
        assert!(s2.done && s2.next_state.done);
        assert!(step(&spec, &s2.next_state, &joint(&[Action::Stay])).is_err());
    }

    #[test]
    fn contested_cell_both_stay() {
        let spec = GridSpec::from_map("x", "0.1", 5, rewards()).unwrap();
        let s = reset(&spec).unwrap();
        let out = step(&spec, &s, &joint(&[Action::Right, Action::Left])).unwrap();
        assert_eq!(out.next_state.agent_positions, s.agent_positions);
    }

    #[test]
    fn swap_and_chain_block() {
        let spec = GridSpec::from_map("x", "01.", 5, rewards()).unwrap();
        let s = reset(&spec).unwrap();
        let out = step(&spec, &s, &joint(&[Action::Right, Action::Left])).unwrap();
        assert_eq!(out.next_state.agent_positions, s.agent_positions);
        // follower may move into a cell its leader vacates
        let out = step(&spec, &s, &joint(&[Action::Right, Action::Right])).unwrap();
        assert_eq!(out.next_state.agent_positions, vec![Cell::new(0, 1), Cell::new(0, 2)]);
        // ...but not into one whose occupant is blocked
        let spec = GridSpec::from_map("x", "01#", 5, rewards()).unwrap();
        let s = reset(&spec).unwrap();
        let out = step(&spec, &s, &joint(&[Action::Right, Action::Right])).unwrap();
        assert_eq!(out.next_state.agent_positions, s.agent_positions);
    }

    #[test]
    fn goals_pay_once_and_finish() {
        let spec = GridSpec::from_map("g", "0a.\n1b.", 9, rewards()).unwrap();
        let s = reset(&spec).unwrap();
        let out = step(&spec, &s, &joint(&[Action::Right, Action::Stay])).unwrap();
        assert_eq!(out.team_reward, 5.0);
        assert!(!out.done);
        let out = step(&spec, &out.next_state, &joint(&[Action::Stay, Action::Right])).unwrap();
        assert_eq!(out.team_reward, 5.0);
        assert!(out.done);
    }

    #[test]
    fn foreign_goal_not_consumed() {
        let spec = GridSpec::from_map("g", "0b.\n1a.", 9, rewards()).unwrap();
        let s = reset(&spec).unwrap();
        let out = step(&spec, &s, &joint(&[Action::Right, Action::Stay])).unwrap();
        assert_eq!(out.team_reward, 0.0);
        assert_eq!(out.next_state.remaining_items.len(), 2);
    }

    #[test]
    fn boxed_in_agent_sees_walls() {
        let spec = GridSpec::from_map("b", "###\n#0#\n###", 3, rewards()).unwrap();
        let s = reset(&spec).unwrap();
        let obs = observe(&spec, &s, 0).unwrap();
        for k in 0..9 {
            let expected = if k == 4 { 0.0 } else { 1.0 };
            assert_eq!(obs[k * CHANNELS], expected);
        }
        assert!(observe(&spec, &s, 1).is_err());
    }

    #[test]
    fn scripted_corridor_collects_apple() {
        let spec = GridSpec::builtin("corridor").unwrap();
        let right = |_: &GridSpec, _: &EnvState| Ok(JointAction(vec![Action::Right]));
        assert_eq!(episode_reward(&spec, &right, 100).unwrap(), 10.0);
        let idle = |_: &GridSpec, _: &EnvState| Ok(JointAction(vec![Action::Stay]));
        assert_eq!(episode_reward(&spec, &idle, 100).unwrap(), 0.0);
    }
}
