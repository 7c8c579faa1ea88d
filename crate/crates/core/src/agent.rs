//! Tabular Q-learning over a discretised augmented state `(s, w)`.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HavaError, Result};
use crate::junction::{F_PASSED, F_POSITION, F_SPEED};
use crate::mdp::{
    discounted_return, rollout, ActionId, EnvState, Mdp, Policy, Trajectory, TrajectoryStep,
    DEFAULT_GAMMA,
};

/// Discrete key of an augmented state.
pub type StateKey = [i32; 4];

/// How augmented states are discretised for the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateEncoder {
    /// `(row, col, w bucket)`.
    ///
    /// Needs far finer reputation buckets than the junction: after a lawn step
    /// at high `alpha` reputation runs 0, 0.001, 0.012, … and a coarse bucket
    /// would merge states whose futures differ.
    Grid { reputation_buckets: usize },
    /// `(position bucket, speed bucket, priority-passed flag, w bucket)`.
    Junction {
        position_bin_m: f64,
        speed_bin_kmh: f64,
        reputation_buckets: usize,
    },
}

impl StateEncoder {
    pub fn grid() -> Self {
        StateEncoder::Grid {
            reputation_buckets: 1001,
        }
    }

    pub fn junction() -> Self {
        StateEncoder::Junction {
            position_bin_m: 2.0,
            speed_bin_kmh: 1.0,
            reputation_buckets: 11,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let buckets = match self {
            StateEncoder::Grid { reputation_buckets } => *reputation_buckets,
            StateEncoder::Junction {
                position_bin_m,
                speed_bin_kmh,
                reputation_buckets,
            } => {
                if !(*position_bin_m > 0.0) || !(*speed_bin_kmh > 0.0) {
                    return Err(HavaError::InvalidParameter("bin sizes must be > 0".into()));
                }
                *reputation_buckets
            }
        };
        if buckets < 2 {
            return Err(HavaError::InvalidParameter(
                "need at least 2 reputation buckets".into(),
            ));
        }
        Ok(())
    }

    pub fn key(&self, state: &EnvState, w: f64) -> StateKey {
        let f = &state.features;
        match *self {
            StateEncoder::Grid { reputation_buckets } => [
                f[0] as i32,
                f[1] as i32,
                reputation_bucket(w, reputation_buckets),
                0,
            ],
            StateEncoder::Junction {
                position_bin_m,
                speed_bin_kmh,
                reputation_buckets,
            } => [
                (f[F_POSITION] / position_bin_m).floor() as i32,
                (f[F_SPEED] / speed_bin_kmh).round() as i32,
                i32::from(f[F_PASSED] != 0.0),
                reputation_bucket(w, reputation_buckets),
            ],
        }
    }
}

/// `⌊w · (n − 1)⌋`, so `n = 11` gives buckets 0, 0.1, …, 1.0 with `w = 1` alone in the last.
pub fn reputation_bucket(w: f64, buckets: usize) -> i32 {
    let top = (buckets - 1) as f64;
    // guard against 0.3 * 10 = 2.9999…
    ((w.clamp(0.0, 1.0) * top + 1e-9).floor()).min(top) as i32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct QEntry {
    key: StateKey,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredTable {
    actions: usize,
    initial: f64,
    encoder: StateEncoder,
    entries: Vec<QEntry>,
}

/// Action values per visited key; unvisited keys read as `initial`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    actions: usize,
    initial: f64,
    encoder: StateEncoder,
    table: HashMap<StateKey, Vec<f64>>,
}

impl QTable {
    pub fn new(actions: usize, initial: f64, encoder: StateEncoder) -> Result<Self> {
        if actions == 0 {
            return Err(HavaError::InvalidParameter(
                "need at least one action".into(),
            ));
        }
        if !initial.is_finite() {
            return Err(HavaError::InvalidParameter(
                "initial Q must be finite".into(),
            ));
        }
        encoder.validate()?;
        Ok(Self {
            actions,
            initial,
            encoder,
            table: HashMap::new(),
        })
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn encoder(&self) -> &StateEncoder {
        &self.encoder
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn key(&self, state: &EnvState, w: f64) -> StateKey {
        self.encoder.key(state, w)
    }

    pub fn values(&self, key: &StateKey) -> Option<&[f64]> {
        self.table.get(key).map(Vec::as_slice)
    }

    pub fn value(&self, key: &StateKey, a: ActionId) -> f64 {
        self.table.get(key).map_or(self.initial, |v| v[a.0])
    }

    pub fn set(&mut self, key: StateKey, a: ActionId, value: f64) {
        let (n, init) = (self.actions, self.initial);
        self.table.entry(key).or_insert_with(|| vec![init; n])[a.0] = value;
    }

    pub fn max_value(&self, key: &StateKey) -> f64 {
        match self.table.get(key) {
            Some(v) => v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            None => self.initial,
        }
    }

    /// Highest-valued action; the lowest index wins ties.
    pub fn best_action(&self, key: &StateKey) -> ActionId {
        match self.table.get(key) {
            Some(v) => ActionId(argmax(v)),
            None => ActionId(0),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut entries: Vec<QEntry> = self
            .table
            .iter()
            .map(|(k, v)| QEntry {
                key: *k,
                values: v.clone(),
            })
            .collect();
        entries.sort_by(|a, b| a.key.cmp(&b.key));
        Ok(serde_json::to_string(&StoredTable {
            actions: self.actions,
            initial: self.initial,
            encoder: self.encoder.clone(),
            entries,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let stored: StoredTable = serde_json::from_str(text)?;
        let mut q = QTable::new(stored.actions, stored.initial, stored.encoder)?;
        for e in stored.entries {
            if e.values.len() != q.actions || e.values.iter().any(|v| !v.is_finite()) {
                return Err(HavaError::Format(format!("bad Q entry for {:?}", e.key)));
            }
            q.table.insert(e.key, e.values);
        }
        Ok(q)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| HavaError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HavaError::io(path, e))?;
        Self::from_json(&text)
    }
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub max_steps: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Multiplicative decay of epsilon per episode.
    pub epsilon_decay: f64,
    pub initial_q: f64,
    pub seed: u64,
    /// Trailing episodes from which evaluation trajectories are drawn.
    pub sample_window: usize,
    pub sample_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 30_000,
            max_steps: 400,
            learning_rate: 0.1,
            gamma: DEFAULT_GAMMA,
            epsilon_start: 1.0,
            epsilon_end: 0.02,
            epsilon_decay: 0.9997,
            initial_q: 0.0,
            seed: 0,
            sample_window: 500,
            sample_count: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
            ("epsilon_decay", self.epsilon_decay),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(HavaError::InvalidParameter(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(HavaError::InvalidParameter(format!(
                "learning_rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(HavaError::InvalidParameter(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        if self.max_steps == 0 {
            return Err(HavaError::InvalidParameter("max_steps must be > 0".into()));
        }
        if !self.initial_q.is_finite() {
            return Err(HavaError::InvalidParameter(
                "initial_q must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn epsilon(&self, episode: usize) -> f64 {
        let decayed = self.epsilon_start * self.epsilon_decay.powf(episode as f64);
        decayed.max(self.epsilon_end)
    }
}

/// One learning-curve row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    /// Steps taken; equals the step budget when the episode was cut off.
    pub finish_time: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub mean_w: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub q: QTable,
    pub curve: Vec<CurvePoint>,
    /// Greedy rollouts of the policy snapshots taken after episodes drawn at
    /// random from the last `sample_window`.
    pub samples: Vec<Trajectory>,
}

pub fn write_curve_csv<W: std::io::Write>(curve: &[CurvePoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in curve {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// Run epsilon-greedy Q-learning on `env`, continuing from `q`.
pub fn train<M: Mdp + ?Sized>(
    env: &mut M,
    mut q: QTable,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if env.action_count() != q.actions() {
        return Err(HavaError::InvalidParameter(format!(
            "environment has {} actions, table has {}",
            env.action_count(),
            q.actions()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let window = cfg.sample_window.min(cfg.episodes);
    let first = cfg.episodes - window;
    let mut picked: Vec<usize> = sample(&mut rng, window, cfg.sample_count.min(window))
        .into_iter()
        .map(|i| first + i)
        .collect();
    picked.sort_unstable();

    let mut curve = Vec::with_capacity(cfg.episodes);
    let mut samples = Vec::with_capacity(picked.len());
    let n_actions = q.actions();
    for episode in 0..cfg.episodes {
        let eps = cfg.epsilon(episode);
        let mut traj = Trajectory::new(cfg.gamma)?;
        let mut state = env.reset();
        let mut w = env.reputation();
        let mut w_sum = 0.0;
        while !state.terminal && traj.len() < cfg.max_steps {
            let key = q.key(&state, w);
            let a = if rng.gen::<f64>() < eps {
                ActionId(rng.gen_range(0..n_actions))
            } else {
                q.best_action(&key)
            };
            let step = env.step(a)?;
            let next_key = q.key(&step.next, step.next_reputation);
            let bootstrap = if step.next.terminal {
                0.0
            } else {
                q.max_value(&next_key)
            };
            let old = q.value(&key, a);
            let target = step.reward + cfg.gamma * bootstrap;
            let new = old + cfg.learning_rate * (target - old);
            if !new.is_finite() {
                return Err(HavaError::Divergence { episode });
            }
            q.set(key, a, new);
            w_sum += w;
            traj.steps.push(TrajectoryStep {
                state: EnvState::new(Vec::new(), false),
                reputation: w,
                action: step.executed.as_f64(),
                raw_reward: step.raw_reward,
                reward: step.reward,
            });
            state = step.next;
            w = step.next_reputation;
        }
        traj.truncated = !state.terminal;
        let n = traj.len();
        curve.push(CurvePoint {
            episode,
            finish_time: n,
            ret: discounted_return(&traj),
            mean_w: if n == 0 { w } else { w_sum / n as f64 },
        });
        if picked.binary_search(&episode).is_ok() {
            samples.push(rollout(
                &mut greedy_policy(&q),
                env,
                cfg.max_steps,
                cfg.gamma,
            )?);
        }
    }
    Ok(TrainOutput { q, curve, samples })
}

/// Deterministic argmax policy over a table.
#[derive(Debug, Clone)]
pub struct GreedyPolicy<'a> {
    q: &'a QTable,
}

impl<'a> Policy for GreedyPolicy<'a> {
    fn act(&mut self, state: &EnvState, reputation: f64) -> Option<ActionId> {
        Some(self.q.best_action(&self.q.key(state, reputation)))
    }
}

pub fn greedy_policy(q: &QTable) -> GreedyPolicy<'_> {
    GreedyPolicy { q }
}
