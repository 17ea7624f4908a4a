//! Depth-first search over the tree of candidate joint actions.
//!
//! Every non-terminal node contributes its radius; the tree's reward lower
//! bound is the smallest terminal return. With non-negative rewards, leaving
//! the tree at a node whose accumulated reward already exceeds that bound
//! cannot produce a lower return, so the reported ε is the smallest radius
//! among nodes with accumulated reward ≤ R_min. This set is exactly the set
//! of nodes that pruning never removes, so pruning does not change ε.

use std::collections::HashMap;
use std::hash::Hash;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::crsc::NodeInfo;
use crate::error::{Error, Result};

pub struct Transition<S> {
    pub state: S,
    pub reward: f64,
    pub done: bool,
}

/// A deterministic multi-agent decision problem the search can branch on.
pub trait SearchProblem {
    type State: Clone + Eq + Hash;

    fn root(&self) -> Result<Self::State>;

    /// Candidate action sets and radius of a non-terminal state. Called at
    /// most once per distinct state.
    fn expand(&self, state: &Self::State) -> Result<NodeInfo>;

    fn transition(&self, state: &Self::State, action: &[usize]) -> Result<Transition<Self::State>>;

    fn rewards_non_negative(&self) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub pruning: bool,
    pub max_expansions: Option<usize>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { pruning: true, max_expansions: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub epsilon_cert: f64,
    pub r_min: f64,
    /// Return of the all-modal path through the tree.
    pub clean_reward: f64,
    pub nodes_expanded: usize,
    pub nodes_pruned: usize,
    pub trajectories_completed: usize,
    pub memo_hits: usize,
}

struct Summary {
    /// Smallest reward still to collect before a terminal state; only
    /// values that could beat the incumbent are exact.
    min_to_go: f64,
    /// (reward from this node, radius) pairs: for every node below, the
    /// smallest radius reachable without exceeding that reward.
    frontier: Vec<(f64, f64)>,
    explored_with: f64,
}

fn pareto(mut points: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for p in points {
        if out.last().is_none_or(|last| p.1 < last.1) {
            out.push(p);
        }
    }
    out
}

fn tol(x: f64) -> f64 {
    1e-9 * (1.0 + if x.is_finite() { x.abs() } else { 0.0 })
}

struct Searcher<'p, P: SearchProblem> {
    problem: &'p P,
    options: SearchOptions,
    nodes: HashMap<P::State, Rc<NodeInfo>>,
    memo: HashMap<P::State, Rc<Summary>>,
    incumbent: f64,
    expanded: usize,
    pruned: usize,
    trajectories: usize,
    memo_hits: usize,
}

fn cartesian(sets: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::with_capacity(sets.len())];
    for set in sets {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                set.iter().map(move |&a| {
                    let mut next = prefix.clone();
                    next.push(a);
                    next
                })
            })
            .collect();
    }
    out
}

impl<P: SearchProblem> Searcher<'_, P> {
    fn node(&mut self, state: &P::State) -> Result<Rc<NodeInfo>> {
        if let Some(info) = self.nodes.get(state) {
            return Ok(info.clone());
        }
        let info = Rc::new(self.problem.expand(state)?);
        if info.action_sets.iter().any(|s| s.is_empty()) {
            return Err(Error::domain("node with an empty candidate action set"));
        }
        self.nodes.insert(state.clone(), info.clone());
        Ok(info)
    }

    fn explore(&mut self, state: &P::State, r_in: f64) -> Result<Rc<Summary>> {
        if let Some(summary) = self.memo.get(state) {
            if !self.options.pruning || r_in >= summary.explored_with {
                let summary = summary.clone();
                self.memo_hits += 1;
                self.incumbent = self.incumbent.min(r_in + summary.min_to_go);
                return Ok(summary);
            }
        }
        self.expanded += 1;
        if let Some(cap) = self.options.max_expansions {
            if self.expanded > cap {
                return Err(Error::SearchBudget(cap));
            }
        }
        let info = self.node(state)?;
        let mut frontier = vec![(0.0, info.radius)];
        let mut min_to_go = f64::INFINITY;
        for joint in cartesian(&info.action_sets) {
            let t = self.problem.transition(state, &joint)?;
            let r_child = r_in + t.reward;
            if t.done {
                self.trajectories += 1;
                self.incumbent = self.incumbent.min(r_child);
                min_to_go = min_to_go.min(t.reward);
                continue;
            }
            if self.options.pruning && r_child > self.incumbent + tol(self.incumbent) {
                self.pruned += 1;
                continue;
            }
            let child = self.explore(&t.state, r_child)?;
            min_to_go = min_to_go.min(t.reward + child.min_to_go);
            frontier.extend(child.frontier.iter().map(|&(r, d)| (r + t.reward, d)));
        }
        let summary = Rc::new(Summary {
            min_to_go,
            frontier: pareto(frontier),
            explored_with: r_in,
        });
        self.memo.insert(state.clone(), summary.clone());
        Ok(summary)
    }

    fn clean_reward(&mut self, root: &P::State) -> Result<f64> {
        let mut state = root.clone();
        let mut total = 0.0;
        loop {
            let info = self.node(&state)?;
            let modal: Vec<usize> = info.action_sets.iter().map(|s| s[0]).collect();
            let t = self.problem.transition(&state, &modal)?;
            total += t.reward;
            if t.done {
                return Ok(total);
            }
            state = t.state;
        }
    }
}

/// Runs the search from the problem's root.
pub fn tree_search<P: SearchProblem>(problem: &P, options: SearchOptions) -> Result<SearchOutcome> {
    let non_negative = problem.rewards_non_negative();
    if options.pruning && !non_negative {
        return Err(Error::config(
            "pruning",
            "pruning requires non-negative rewards; disable it for this environment",
        ));
    }
    let root = problem.root()?;
    let mut s = Searcher {
        problem,
        options,
        nodes: HashMap::new(),
        memo: HashMap::new(),
        incumbent: f64::INFINITY,
        expanded: 0,
        pruned: 0,
        trajectories: 0,
        memo_hits: 0,
    };
    let summary = s.explore(&root, 0.0)?;
    let r_min = s.incumbent;
    if !r_min.is_finite() {
        return Err(Error::NonFinite("search reached no terminal state".into()));
    }
    let threshold = if non_negative { r_min + tol(r_min) } else { f64::INFINITY };
    let epsilon_cert = summary
        .frontier
        .iter()
        .filter(|(r, _)| *r <= threshold)
        .map(|&(_, d)| d)
        .fold(f64::INFINITY, f64::min);
    let clean_reward = s.clean_reward(&root)?;
    Ok(SearchOutcome {
        epsilon_cert,
        r_min,
        clean_reward,
        nodes_expanded: s.expanded,
        nodes_pruned: s.pruned,
        trajectories_completed: s.trajectories,
        memo_hits: s.memo_hits,
    })
}
