//! Grid layouts and their TOML config format.
//!
//! ```toml
//! name = "checkers"
//! step_cap = 50
//! map = """
//! 0.ALALAL
//! ..LALALA
//! 1.ALALAL
//! """
//! allow_negative_rewards = false   # optional
//!
//! [rewards]
//! apple = 10.0
//! lemon = 0.0
//! goal = 5.0
//! ```
//!
//! Map legend: `#` wall, `.` floor, `A` apple, `L` lemon, `0`-`9` start cell
//! of agent n, `a`-`j` goal cell of agent n. Rows are read top to bottom;
//! blank lines and surrounding whitespace are ignored. Agent indices must be
//! contiguous from 0. Goals are optional but, if present, every agent needs
//! exactly one.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemKind {
    Apple,
    Lemon,
    Goal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardTable {
    #[serde(default)]
    pub apple: f64,
    #[serde(default)]
    pub lemon: f64,
    #[serde(default)]
    pub goal: f64,
}

impl RewardTable {
    pub fn get(&self, kind: ItemKind) -> f64 {
        match kind {
            ItemKind::Apple => self.apple,
            ItemKind::Lemon => self.lemon,
            ItemKind::Goal => self.goal,
        }
    }

    pub fn is_non_negative(&self) -> bool {
        self.apple >= 0.0 && self.lemon >= 0.0 && self.goal >= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub walls: BTreeSet<Cell>,
    pub items: BTreeMap<Cell, ItemKind>,
    pub agent_starts: Vec<Cell>,
    pub agent_goals: Option<Vec<Cell>>,
    pub step_cap: usize,
    pub reward_table: RewardTable,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    name: String,
    step_cap: usize,
    map: String,
    rewards: RewardTable,
    #[serde(default)]
    allow_negative_rewards: bool,
}

const BUILTINS: [(&str, &str); 3] = [
    ("checkers", include_str!("../../configs/checkers.toml")),
    ("switch", include_str!("../../configs/switch.toml")),
    ("corridor", include_str!("../../configs/corridor.toml")),
];

impl GridSpec {
    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTINS.iter().map(|(n, _)| *n)
    }

    pub fn builtin(name: &str) -> Option<GridSpec> {
        BUILTINS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(n, text)| Self::from_toml_str(text, Path::new(n)).expect("bundled layout is valid"))
    }

    /// A built-in layout name, or else a path to a TOML layout file.
    pub fn load(name_or_path: &str) -> Result<GridSpec> {
        match Self::builtin(name_or_path) {
            Some(spec) => Ok(spec),
            None => Self::from_file(name_or_path),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<GridSpec> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<GridSpec> {
        let file: GridFile = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        let spec = Self::from_map(&file.name, &file.map, file.step_cap, file.rewards)?;
        if !file.allow_negative_rewards && !spec.reward_table.is_non_negative() {
            return Err(Error::InvalidSpec(
                "negative rewards require `allow_negative_rewards = true`".into(),
            ));
        }
        Ok(spec)
    }

    /// Builds a spec from a character map (see module docs for the legend).
    pub fn from_map(name: &str, map: &str, step_cap: usize, rewards: RewardTable) -> Result<GridSpec> {
        let rows: Vec<&str> = map.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        if rows.is_empty() {
            return Err(Error::InvalidSpec("empty map".into()));
        }
        let width = rows[0].chars().count();
        let mut walls = BTreeSet::new();
        let mut items = BTreeMap::new();
        let mut starts = BTreeMap::new();
        let mut goals = BTreeMap::new();
        for (r, line) in rows.iter().enumerate() {
            if line.chars().count() != width {
                return Err(Error::InvalidSpec(format!(
                    "row {r} has {} cells, expected {width}",
                    line.chars().count()
                )));
            }
            for (c, ch) in line.chars().enumerate() {
                let cell = Cell::new(r, c);
                match ch {
                    '#' => {
                        walls.insert(cell);
                    }
                    '.' => {}
                    'A' => {
                        items.insert(cell, ItemKind::Apple);
                    }
                    'L' => {
                        items.insert(cell, ItemKind::Lemon);
                    }
                    '0'..='9' => {
                        let idx = ch as usize - '0' as usize;
                        if starts.insert(idx, cell).is_some() {
                            return Err(Error::InvalidSpec(format!("agent {idx} placed twice")));
                        }
                    }
                    'a'..='j' => {
                        let idx = ch as usize - 'a' as usize;
                        if goals.insert(idx, cell).is_some() {
                            return Err(Error::InvalidSpec(format!("goal of agent {idx} placed twice")));
                        }
                        items.insert(cell, ItemKind::Goal);
                    }
                    other => {
                        return Err(Error::InvalidSpec(format!(
                            "unknown map character {other:?} at row {r}, col {c}"
                        )))
                    }
                }
            }
        }
        let agent_starts: Vec<Cell> = starts.values().copied().collect();
        if starts.keys().copied().ne(0..agent_starts.len()) {
            return Err(Error::InvalidSpec("agent indices must be contiguous from 0".into()));
        }
        let agent_goals = if goals.is_empty() {
            None
        } else if goals.keys().copied().eq(0..agent_starts.len()) {
            Some(goals.values().copied().collect())
        } else {
            return Err(Error::InvalidSpec("every agent needs exactly one goal".into()));
        };
        let spec = GridSpec {
            name: name.to_string(),
            width,
            height: rows.len(),
            walls,
            items,
            agent_starts,
            agent_goals,
            step_cap,
            reward_table: rewards,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidSpec("grid must be non-empty".into()));
        }
        if self.step_cap == 0 {
            return Err(Error::InvalidSpec("step_cap must be at least 1".into()));
        }
        if self.agent_starts.is_empty() {
            return Err(Error::InvalidSpec("at least one agent is required".into()));
        }
        let rt = &self.reward_table;
        if ![rt.apple, rt.lemon, rt.goal].iter().all(|r| r.is_finite()) {
            return Err(Error::InvalidSpec("rewards must be finite".into()));
        }
        let mut seen = BTreeSet::new();
        for &cell in &self.agent_starts {
            if !self.is_open(cell) {
                return Err(Error::InvalidSpec(format!("start {cell:?} is blocked")));
            }
            if !seen.insert(cell) {
                return Err(Error::InvalidSpec(format!("two agents start on {cell:?}")));
            }
        }
        for &cell in self.items.keys() {
            if !self.is_open(cell) {
                return Err(Error::InvalidSpec(format!("item at blocked cell {cell:?}")));
            }
        }
        if let Some(goals) = &self.agent_goals {
            if goals.len() != self.agent_starts.len() {
                return Err(Error::InvalidSpec("one goal per agent required".into()));
            }
            for g in goals {
                if self.items.get(g) != Some(&ItemKind::Goal) {
                    return Err(Error::InvalidSpec(format!("goal {g:?} has no goal item")));
                }
            }
        }
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.agent_starts.len()
    }

    pub fn in_bounds(&self, row: isize, col: isize) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width
    }

    /// In bounds and not a wall.
    pub fn is_open(&self, cell: Cell) -> bool {
        cell.row < self.height && cell.col < self.width && !self.walls.contains(&cell)
    }

    pub fn has_apples(&self) -> bool {
        self.items.values().any(|k| *k == ItemKind::Apple)
    }

    pub fn rewards_non_negative(&self) -> bool {
        self.reward_table.is_non_negative()
    }
}
