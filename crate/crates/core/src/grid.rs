//! Toy grid world: lawn tiles, an in-bounds rule set, lawn-avoiding social norms
//! and three fixed reference policies.
//!
//! Maps are plain text, one row per line, top row first: `.` free, `L` lawn,
//! `G` goal, `S` start. Cells are `(row, col)` with row 0 at the top.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::alignment::{recovery_steps, ActionSet, AlignmentValue, HavaEnv, NormModel};
use crate::error::{HavaError, Result};
use crate::mdp::{
    discounted_return, rollout, ActionId, ActionSequence, ActionValue, EnvState, Environment,
    Outcome, Trajectory,
};

/// The reference 7×7 layout.
pub const REFERENCE_MAP: &str = include_str!("../fixtures/grid.map");
/// The three reference policies on [`REFERENCE_MAP`].
pub const REFERENCE_POLICIES: &str = include_str!("../fixtures/grid_policies.txt");

pub const GOAL_REWARD: f64 = 100.0;
pub const STEP_REWARD: f64 = -1.0;

pub type Cell = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Move {
    Up,
    Down,
    Left,
    Right,
}

impl Move {
    pub const ALL: [Move; 4] = [Move::Up, Move::Down, Move::Left, Move::Right];

    pub fn id(self) -> ActionId {
        ActionId(self as usize)
    }

    pub fn from_id(a: ActionId) -> Result<Move> {
        Move::ALL
            .get(a.0)
            .copied()
            .ok_or(HavaError::UnknownAction(a.0))
    }

    pub fn from_char(c: char) -> Result<Move> {
        match c.to_ascii_uppercase() {
            'U' => Ok(Move::Up),
            'D' => Ok(Move::Down),
            'L' => Ok(Move::Left),
            'R' => Ok(Move::Right),
            _ => Err(HavaError::Format(format!("unknown move {c:?}"))),
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Move::Up => 'U',
            Move::Down => 'D',
            Move::Left => 'L',
            Move::Right => 'R',
        }
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Move::Up => (-1, 0),
            Move::Down => (1, 0),
            Move::Left => (0, -1),
            Move::Right => (0, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridWorld {
    width: usize,
    height: usize,
    lawn: BTreeSet<Cell>,
    goal: Cell,
    start: Cell,
}

impl GridWorld {
    pub fn new(
        width: usize,
        height: usize,
        lawn: BTreeSet<Cell>,
        goal: Cell,
        start: Cell,
    ) -> Result<Self> {
        let world = Self {
            width,
            height,
            lawn,
            goal,
            start,
        };
        if width == 0 || height == 0 {
            return Err(HavaError::InvalidParameter("grid must be non-empty".into()));
        }
        for &c in world.lawn.iter().chain([&goal, &start]) {
            if !world.in_bounds(c) {
                return Err(HavaError::InvalidParameter(format!(
                    "cell {c:?} out of bounds"
                )));
            }
        }
        if world.lawn.contains(&goal) || world.lawn.contains(&start) {
            return Err(HavaError::InvalidParameter(
                "goal and start must not be lawn".into(),
            ));
        }
        Ok(world)
    }

    pub fn reference() -> Self {
        REFERENCE_MAP.parse().expect("bundled grid map is valid")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    pub fn lawn(&self) -> &BTreeSet<Cell> {
        &self.lawn
    }

    pub fn goal(&self) -> Cell {
        self.goal
    }

    pub fn start(&self) -> Cell {
        self.start
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.0 < self.height && c.1 < self.width
    }

    pub fn is_lawn(&self, c: Cell) -> bool {
        self.lawn.contains(&c)
    }

    pub fn cell_index(&self, c: Cell) -> usize {
        c.0 * self.width + c.1
    }

    /// Successor cell, or `None` if the move leaves the grid.
    pub fn successor(&self, c: Cell, m: Move) -> Option<Cell> {
        let (dr, dc) = m.delta();
        let r = c.0.checked_add_signed(dr)?;
        let col = c.1.checked_add_signed(dc)?;
        let next = (r, col);
        self.in_bounds(next).then_some(next)
    }

    pub fn rb_moves(&self, c: Cell) -> Vec<Move> {
        Move::ALL
            .into_iter()
            .filter(|&m| self.successor(c, m).is_some())
            .collect()
    }

    pub fn dd_moves(&self, c: Cell) -> Vec<Move> {
        Move::ALL
            .into_iter()
            .filter(|&m| matches!(self.successor(c, m), Some(n) if !self.is_lawn(n)))
            .collect()
    }
}

impl FromStr for GridWorld {
    type Err = HavaError;

    fn from_str(s: &str) -> Result<Self> {
        let rows: Vec<&str> = s
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        let mut lawn = BTreeSet::new();
        let mut goal = None;
        let mut start = None;
        for (r, line) in rows.iter().enumerate() {
            if line.chars().count() != width {
                return Err(HavaError::Format(format!(
                    "map line {}: expected {width} cells, found {}",
                    r + 1,
                    line.chars().count()
                )));
            }
            for (c, ch) in line.chars().enumerate() {
                match ch {
                    '.' => {}
                    'L' => {
                        lawn.insert((r, c));
                    }
                    'G' | 'S' => {
                        let slot = if ch == 'G' { &mut goal } else { &mut start };
                        if slot.replace((r, c)).is_some() {
                            return Err(HavaError::Format(format!(
                                "map line {}: more than one {ch}",
                                r + 1
                            )));
                        }
                    }
                    other => {
                        return Err(HavaError::Format(format!(
                            "map line {}: unknown tile {other:?}",
                            r + 1
                        )))
                    }
                }
            }
        }
        let goal = goal.ok_or_else(|| HavaError::Format("map has no goal G".into()))?;
        let start = start.ok_or_else(|| HavaError::Format("map has no start S".into()))?;
        GridWorld::new(width, height, lawn, goal, start)
    }
}

impl fmt::Display for GridWorld {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.height {
            for c in 0..self.width {
                let ch = if (r, c) == self.goal {
                    'G'
                } else if (r, c) == self.start {
                    'S'
                } else if self.is_lawn((r, c)) {
                    'L'
                } else {
                    '.'
                };
                write!(f, "{ch}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// 100 if the move reaches the goal, −1 otherwise. Blind to norms.
pub fn grid_task_reward(world: &GridWorld, cell: Cell, m: Move) -> f64 {
    match world.successor(cell, m) {
        Some(n) if n == world.goal => GOAL_REWARD,
        _ => STEP_REWARD,
    }
}

fn cell_of(state: &EnvState) -> Result<Cell> {
    match state.features.as_slice() {
        [r, c, ..] if *r >= 0.0 && *c >= 0.0 => Ok((*r as usize, *c as usize)),
        _ => Err(HavaError::Format(
            "grid state needs (row, col) features".into(),
        )),
    }
}

/// Rule-based norms: stay inside the grid.
#[derive(Debug, Clone)]
pub struct GridRb(pub Arc<GridWorld>);

impl NormModel for GridRb {
    fn permitted(&self, state: &EnvState) -> Result<ActionSet> {
        let c = cell_of(state)?;
        Ok(ActionSet::discrete(
            self.0.rb_moves(c).into_iter().map(Move::id),
        ))
    }
}

/// Data-driven norms: stay inside the grid and off the lawn.
#[derive(Debug, Clone)]
pub struct GridDd(pub Arc<GridWorld>);

impl NormModel for GridDd {
    fn permitted(&self, state: &EnvState) -> Result<ActionSet> {
        let c = cell_of(state)?;
        Ok(ActionSet::discrete(
            self.0.dd_moves(c).into_iter().map(Move::id),
        ))
    }
}

/// Episodic grid MDP. A move off the grid leaves the agent in place.
#[derive(Debug, Clone)]
pub struct GridEnv {
    world: Arc<GridWorld>,
    start: Cell,
    pos: Cell,
}

impl GridEnv {
    pub fn new(world: Arc<GridWorld>) -> Self {
        let start = world.start();
        Self {
            world,
            start,
            pos: start,
        }
    }

    /// Start episodes from `start` instead of the map's `S`.
    pub fn with_start(world: Arc<GridWorld>, start: Cell) -> Result<Self> {
        if !world.in_bounds(start) {
            return Err(HavaError::InvalidParameter(format!(
                "start {start:?} out of bounds"
            )));
        }
        Ok(Self {
            world,
            start,
            pos: start,
        })
    }

    pub fn world(&self) -> &Arc<GridWorld> {
        &self.world
    }

    pub fn position(&self) -> Cell {
        self.pos
    }

    fn state(&self) -> EnvState {
        EnvState::new(
            vec![self.pos.0 as f64, self.pos.1 as f64],
            self.pos == self.world.goal(),
        )
    }
}

impl Environment for GridEnv {
    fn reset(&mut self) -> EnvState {
        self.pos = self.start;
        self.state()
    }

    fn observe(&self) -> EnvState {
        self.state()
    }

    fn action_count(&self) -> usize {
        Move::ALL.len()
    }

    fn propose(&self, action: ActionId) -> Result<ActionValue> {
        Move::from_id(action)?;
        Ok(ActionValue::Discrete(action))
    }

    fn apply(&mut self, action: ActionValue) -> Result<Outcome> {
        if self.pos == self.world.goal() {
            return Err(HavaError::Terminal);
        }
        let ActionValue::Discrete(id) = action else {
            return Err(HavaError::ActionKindMismatch {
                action: format!("{action:?}"),
                set: "grid moves".into(),
            });
        };
        let m = Move::from_id(id)?;
        let reward = grid_task_reward(&self.world, self.pos, m);
        if let Some(n) = self.world.successor(self.pos, m) {
            self.pos = n;
        }
        Ok(Outcome {
            next: self.state(),
            reward,
        })
    }

    fn feature_names(&self) -> Vec<String> {
        vec!["row".into(), "col".into()]
    }
}

/// HAVA configuration for a grid world. `tau` is unused for discrete moves.
pub fn grid_alignment(world: &Arc<GridWorld>, alpha: f64) -> Result<AlignmentValue> {
    AlignmentValue::hybrid(
        Arc::new(GridRb(world.clone())),
        Arc::new(GridDd(world.clone())),
        1.0,
        alpha,
    )
}

/// A fixed reference path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridPolicy {
    pub name: String,
    pub start: Cell,
    pub moves: Vec<Move>,
}

impl GridPolicy {
    /// Cells visited after each move.
    pub fn path(&self, world: &GridWorld) -> Result<Vec<Cell>> {
        let mut c = self.start;
        let mut out = Vec::with_capacity(self.moves.len());
        for (i, &m) in self.moves.iter().enumerate() {
            c = world.successor(c, m).ok_or_else(|| {
                HavaError::InvalidParameter(format!("{}: move {i} leaves the grid", self.name))
            })?;
            out.push(c);
        }
        Ok(out)
    }

    pub fn sequence(&self) -> ActionSequence {
        ActionSequence::new(self.moves.iter().map(|m| m.id()).collect())
    }

    /// Roll the policy out in the HAVA-wrapped grid.
    pub fn evaluate(&self, world: &Arc<GridWorld>, alpha: f64, gamma: f64) -> Result<Trajectory> {
        let env = GridEnv::with_start(world.clone(), self.start)?;
        let mut wrapped = HavaEnv::new(env, grid_alignment(world, alpha)?);
        rollout(&mut self.sequence(), &mut wrapped, self.moves.len(), gamma)
    }
}

/// Parse `name row,col MOVES` lines; `#` starts a comment.
pub fn parse_policies(text: &str) -> Result<Vec<GridPolicy>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| HavaError::Format(format!("policy line {}: {what}", lineno + 1));
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [name, start, moves] = parts[..] else {
            return Err(bad("expected `name row,col moves`"));
        };
        let (r, c) = start
            .split_once(',')
            .ok_or_else(|| bad("start must be row,col"))?;
        let start = (
            r.trim().parse().map_err(|_| bad("bad start row"))?,
            c.trim().parse().map_err(|_| bad("bad start column"))?,
        );
        let moves = moves
            .chars()
            .map(Move::from_char)
            .collect::<Result<Vec<_>>>()?;
        out.push(GridPolicy {
            name: name.to_string(),
            start,
            moves,
        });
    }
    Ok(out)
}

pub fn reference_policies() -> Vec<GridPolicy> {
    parse_policies(REFERENCE_POLICIES).expect("bundled policies are valid")
}

/// One row of the reference-policy return table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReturns {
    pub alpha: f64,
    pub recovery_steps: usize,
    pub names: Vec<String>,
    pub returns: Vec<f64>,
}

impl PolicyReturns {
    /// Index of the best policy; earlier wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &j) in self.returns.iter().enumerate() {
            if j > self.returns[best] {
                best = i;
            }
        }
        best
    }
}

/// Exact discounted returns of each policy under HAVA with the given `alpha`.
pub fn evaluate_reference_policies(
    world: &Arc<GridWorld>,
    policies: &[GridPolicy],
    alpha: f64,
    gamma: f64,
) -> Result<PolicyReturns> {
    let mut returns = Vec::with_capacity(policies.len());
    for p in policies {
        let traj = p.evaluate(world, alpha, gamma)?;
        if traj.truncated {
            return Err(HavaError::InvalidParameter(format!(
                "{} does not reach the goal",
                p.name
            )));
        }
        returns.push(discounted_return(&traj));
    }
    Ok(PolicyReturns {
        alpha,
        recovery_steps: recovery_steps(alpha)?,
        names: policies.iter().map(|p| p.name.clone()).collect(),
        returns,
    })
}
