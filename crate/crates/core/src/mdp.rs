//! Environment and policy abstractions, trajectory recording and discounted returns.
//!
//! Environments are deterministic given the executed action. An [`Environment`] exposes
//! a discrete action table to learners; each [`ActionId`] resolves to an [`ActionValue`]
//! in environment units (a grid move, a target speed) which is what actually gets
//! executed. Keeping the two apart lets an action-projection layer substitute a
//! different executed value for the one the policy proposed.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HavaError, Result};

/// Discount factor used throughout unless configured otherwise.
pub const DEFAULT_GAMMA: f64 = 0.99;

/// Observation of an environment: an opaque feature vector plus a terminal flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub features: Vec<f64>,
    pub terminal: bool,
}

impl EnvState {
    pub fn new(features: Vec<f64>, terminal: bool) -> Self {
        Self { features, terminal }
    }

    pub fn feature(&self, idx: usize) -> f64 {
        self.features[idx]
    }
}

/// Index into an environment's discrete action table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActionId(pub usize);

impl ActionId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An action expressed in environment units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ActionValue {
    /// A member of an unordered action table (grid moves).
    Discrete(ActionId),
    /// A point on a real action axis (speed in km/h for the junction).
    Continuous(f64),
}

impl ActionValue {
    /// Numeric form written to trajectory files.
    pub fn as_f64(self) -> f64 {
        match self {
            ActionValue::Discrete(a) => a.0 as f64,
            ActionValue::Continuous(v) => v,
        }
    }
}

/// Result of executing one action in a base environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub next: EnvState,
    pub reward: f64,
}

/// A deterministic episodic MDP with a discrete action table.
pub trait Environment {
    /// Reset to the initial state and return it.
    fn reset(&mut self) -> EnvState;

    /// Current state without advancing.
    fn observe(&self) -> EnvState;

    fn action_count(&self) -> usize;

    /// Resolve a discrete choice into the value it proposes in the current state.
    fn propose(&self, action: ActionId) -> Result<ActionValue>;

    /// Execute an action value and return the task reward `R_task(s_t, a_t)`.
    fn apply(&mut self, action: ActionValue) -> Result<Outcome>;

    /// Names for the features of [`EnvState`], used as CSV headers.
    fn feature_names(&self) -> Vec<String>;
}

/// One transition as seen by a learner or a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next: EnvState,
    pub executed: ActionValue,
    pub raw_reward: f64,
    /// Reward after reputation weighting; equals `raw_reward` for unwrapped environments.
    pub reward: f64,
    /// Reputation after the transition.
    pub next_reputation: f64,
}

/// Anything a policy can be run against: a base environment or a reputation wrapper.
pub trait Mdp {
    fn reset(&mut self) -> EnvState;
    fn observe(&self) -> EnvState;
    fn action_count(&self) -> usize;
    /// Reputation carried in the augmented state; 1 for unwrapped environments.
    fn reputation(&self) -> f64;
    fn step(&mut self, action: ActionId) -> Result<Step>;
    fn feature_names(&self) -> Vec<String>;
}

impl<E: Environment> Mdp for E {
    fn reset(&mut self) -> EnvState {
        Environment::reset(self)
    }

    fn observe(&self) -> EnvState {
        Environment::observe(self)
    }

    fn action_count(&self) -> usize {
        Environment::action_count(self)
    }

    fn reputation(&self) -> f64 {
        1.0
    }

    fn step(&mut self, action: ActionId) -> Result<Step> {
        let value = self.propose(action)?;
        let out = self.apply(value)?;
        Ok(Step {
            next: out.next,
            executed: value,
            raw_reward: out.reward,
            reward: out.reward,
            next_reputation: 1.0,
        })
    }

    fn feature_names(&self) -> Vec<String> {
        Environment::feature_names(self)
    }
}

/// A policy over the augmented state `(s, w)`.
///
/// Returning `None` means the policy has nothing left to do (a fixed action
/// sequence ran out); rollouts stop there.
pub trait Policy {
    fn act(&mut self, state: &EnvState, reputation: f64) -> Option<ActionId>;
}

impl<F> Policy for F
where
    F: FnMut(&EnvState, f64) -> Option<ActionId>,
{
    fn act(&mut self, state: &EnvState, reputation: f64) -> Option<ActionId> {
        self(state, reputation)
    }
}

/// A fixed, hand-specified sequence of actions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSequence {
    actions: Vec<ActionId>,
    cursor: usize,
}

impl ActionSequence {
    pub fn new(actions: Vec<ActionId>) -> Self {
        Self { actions, cursor: 0 }
    }

    pub fn actions(&self) -> &[ActionId] {
        &self.actions
    }

    pub fn rewind(&mut self) {
        self.cursor = 0;
    }
}

impl Policy for ActionSequence {
    fn act(&mut self, _state: &EnvState, _reputation: f64) -> Option<ActionId> {
        let a = self.actions.get(self.cursor).copied();
        self.cursor += 1;
        a
    }
}

/// A state-lookup policy keyed by a caller-supplied discretization.
pub struct LookupPolicy<K, F> {
    table: HashMap<K, ActionId>,
    key: F,
    fallback: ActionId,
}

impl<K, F> LookupPolicy<K, F>
where
    K: std::hash::Hash + Eq,
    F: Fn(&EnvState, f64) -> K,
{
    pub fn new(table: HashMap<K, ActionId>, key: F, fallback: ActionId) -> Self {
        Self {
            table,
            key,
            fallback,
        }
    }
}

impl<K, F> Policy for LookupPolicy<K, F>
where
    K: std::hash::Hash + Eq,
    F: Fn(&EnvState, f64) -> K,
{
    fn act(&mut self, state: &EnvState, reputation: f64) -> Option<ActionId> {
        let k = (self.key)(state, reputation);
        Some(self.table.get(&k).copied().unwrap_or(self.fallback))
    }
}

/// One recorded step: `(s_t, w_t, a_t, r_t)` with both raw and weighted reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub state: EnvState,
    /// Reputation `w_t` held when the action was chosen.
    pub reputation: f64,
    /// Executed action in environment units (action index for discrete tables).
    pub action: f64,
    pub raw_reward: f64,
    /// `R_AV(s_t, a_t, w_{t+1})`.
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub final_state: Option<EnvState>,
    pub discount: f64,
    /// Set when the rollout hit its step budget before reaching a terminal state.
    pub truncated: bool,
}

impl Trajectory {
    pub fn new(discount: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&discount) {
            return Err(HavaError::InvalidParameter(format!(
                "discount must lie in [0, 1), got {discount}"
            )));
        }
        Ok(Self {
            steps: Vec::new(),
            final_state: None,
            discount,
            truncated: false,
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// All visited states, including the final one.
    pub fn states(&self) -> Vec<&EnvState> {
        let mut out: Vec<&EnvState> = self.steps.iter().map(|s| &s.state).collect();
        if let Some(f) = &self.final_state {
            out.push(f);
        }
        out
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.reward)
    }

    /// Same trajectory with every weighted reward multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut t = self.clone();
        for s in &mut t.steps {
            s.reward *= c;
        }
        t
    }

    /// Write as CSV: `t,<state features...>,w,action,raw_reward,weighted_reward`.
    pub fn write_csv<W: Write>(&self, writer: W, feature_names: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend(feature_names.iter().cloned());
        header.extend(
            ["w", "action", "raw_reward", "weighted_reward"]
                .iter()
                .map(|s| s.to_string()),
        );
        w.write_record(&header)?;
        for (t, step) in self.steps.iter().enumerate() {
            if step.state.features.len() != feature_names.len() {
                return Err(HavaError::InvalidParameter(format!(
                    "state has {} features but {} names were given",
                    step.state.features.len(),
                    feature_names.len()
                )));
            }
            let mut row = vec![t.to_string()];
            row.extend(step.state.features.iter().map(|v| v.to_string()));
            row.push(step.reputation.to_string());
            row.push(step.action.to_string());
            row.push(step.raw_reward.to_string());
            row.push(step.reward.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, feature_names: &[String]) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| HavaError::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file), feature_names)
    }

    /// Read a trajectory written by [`Trajectory::write_csv`]. Returns the feature names too.
    ///
    /// Terminal flags and the final state are not part of the file format; every
    /// state is read back as non-terminal.
    pub fn read_csv<R: Read>(reader: R, discount: f64) -> Result<(Self, Vec<String>)> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(|s| s.to_string()).collect();
        if header.len() < 5
            || header[0] != "t"
            || header[header.len() - 4..] != ["w", "action", "raw_reward", "weighted_reward"]
        {
            return Err(HavaError::Format(format!(
                "unexpected trajectory header: {}",
                header.join(",")
            )));
        }
        let n_features = header.len() - 5;
        let names = header[1..1 + n_features].to_vec();
        let mut traj = Trajectory::new(discount)?;
        for rec in r.records() {
            let rec = rec?;
            let nums: Vec<f64> = rec
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| HavaError::Format(format!("not a number: {f:?}")))
                })
                .collect::<Result<_>>()?;
            if nums.len() != header.len() {
                return Err(HavaError::Format("ragged trajectory row".into()));
            }
            let k = 1 + n_features;
            traj.steps.push(TrajectoryStep {
                state: EnvState::new(nums[1..k].to_vec(), false),
                reputation: nums[k],
                action: nums[k + 1],
                raw_reward: nums[k + 2],
                reward: nums[k + 3],
            });
        }
        Ok((traj, names))
    }

    pub fn load_csv(path: &Path, discount: f64) -> Result<(Self, Vec<String>)> {
        let file = std::fs::File::open(path).map_err(|e| HavaError::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file), discount)
    }
}

/// `Σ_t γ^t · r_t` over the weighted rewards.
pub fn discounted_return(trajectory: &Trajectory) -> f64 {
    let mut total = 0.0;
    let mut factor = 1.0;
    for r in trajectory.rewards() {
        total += factor * r;
        factor *= trajectory.discount;
    }
    total
}

/// Same quantity accumulated from the tail: `G_t = r_t + γ G_{t+1}`.
pub fn discounted_return_backward(trajectory: &Trajectory) -> f64 {
    trajectory
        .steps
        .iter()
        .rev()
        .fold(0.0, |tail, s| s.reward + trajectory.discount * tail)
}

/// Run `policy` from a fresh reset for at most `max_steps` actions.
///
/// The trajectory is marked `truncated` when the budget runs out (or the policy
/// stops acting) before a terminal state is reached.
pub fn rollout<M, P>(
    policy: &mut P,
    env: &mut M,
    max_steps: usize,
    discount: f64,
) -> Result<Trajectory>
where
    M: Mdp + ?Sized,
    P: Policy + ?Sized,
{
    let mut traj = Trajectory::new(discount)?;
    let mut state = env.reset();
    let mut finished = state.terminal;
    while !finished && traj.steps.len() < max_steps {
        let w = env.reputation();
        let Some(action) = policy.act(&state, w) else {
            break;
        };
        let step = env.step(action)?;
        traj.steps.push(TrajectoryStep {
            state,
            reputation: w,
            action: step.executed.as_f64(),
            raw_reward: step.raw_reward,
            reward: step.reward,
        });
        state = step.next;
        finished = state.terminal;
    }
    traj.truncated = !finished;
    traj.final_state = Some(state);
    Ok(traj)
}
