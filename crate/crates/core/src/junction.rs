//! One-dimensional junction: the ego vehicle drives west to east over a
//! crossing that a single priority vehicle traverses north to south.
//!
//! Kinematics are point-mass with a 0.1 s tick. The ego's action picks the next
//! speed relative to the current one; the executed speed holds for the whole
//! tick. Distances are metres, speeds km/h unless a name says otherwise.
//!
//! The safe-speed rule is Krauss-like. Before the stop line the ego either
//! commits to *go*, which means clearing the crossing at least one headway
//! before the priority vehicle arrives, or *yields*: it keeps a speed from
//! which braking at `decel_ms2` after one tick of reaction stops it at the
//! line. Once the priority vehicle has passed, only the speed limit applies.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::{ActionSet, NormModel};
use crate::error::{HavaError, Result};
use crate::mdp::{
    ActionId, ActionValue, EnvState, Environment, Outcome, Trajectory, TrajectoryStep,
};

pub const ACTION_COUNT: usize = 11;
/// Action index that keeps the current speed.
pub const HOLD_ACTION: usize = 5;
/// Distance between reward boundaries.
pub const REWARD_SPACING_M: f64 = 2.0;

pub const FEATURE_NAMES: [&str; 8] = [
    "ego_position",
    "ego_speed",
    "distance_to_junction",
    "crossing_position",
    "crossing_speed",
    "junction_occupied",
    "priority_passed",
    "time_step",
];
pub const F_POSITION: usize = 0;
pub const F_SPEED: usize = 1;
pub const F_PASSED: usize = 6;
pub const F_TIME: usize = 7;

pub fn kmh_to_ms(v: f64) -> f64 {
    v / 3.6
}

pub fn ms_to_kmh(v: f64) -> f64 {
    v * 3.6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossingSchedule {
    pub spawn_tick: u32,
    pub speed_kmh: f64,
    /// Distance from the spawn point to the edge of the crossing.
    pub approach_m: f64,
    pub length_m: f64,
}

impl Default for CrossingSchedule {
    fn default() -> Self {
        Self {
            spawn_tick: 0,
            speed_kmh: 20.0,
            approach_m: 48.0,
            length_m: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub tick_s: f64,
    /// Speed change per action step.
    pub delta_kmh: f64,
    pub stop_line_m: f64,
    /// Length of road shared with the crossing street.
    pub junction_width_m: f64,
    pub ego_length_m: f64,
    pub route_length_m: f64,
    pub speed_limit_kmh: f64,
    /// Physical cap on any commanded speed.
    pub max_speed_kmh: f64,
    pub decel_ms2: f64,
    pub headway_s: f64,
    pub initial_speed_kmh: f64,
    pub max_ticks: usize,
    pub crossing: CrossingSchedule,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            tick_s: 0.1,
            delta_kmh: 1.0,
            stop_line_m: 80.0,
            junction_width_m: 10.0,
            ego_length_m: 5.0,
            route_length_m: 180.0,
            speed_limit_kmh: 50.0,
            max_speed_kmh: 70.0,
            decel_ms2: 4.5,
            headway_s: 1.0,
            initial_speed_kmh: 0.0,
            max_ticks: 400,
            crossing: CrossingSchedule::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tick_s", self.tick_s),
            ("delta_kmh", self.delta_kmh),
            ("junction_width_m", self.junction_width_m),
            ("ego_length_m", self.ego_length_m),
            ("speed_limit_kmh", self.speed_limit_kmh),
            ("max_speed_kmh", self.max_speed_kmh),
            ("decel_ms2", self.decel_ms2),
            ("crossing.speed_kmh", self.crossing.speed_kmh),
            ("crossing.length_m", self.crossing.length_m),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(HavaError::InvalidParameter(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        let non_negative = [
            ("stop_line_m", self.stop_line_m),
            ("headway_s", self.headway_s),
            ("initial_speed_kmh", self.initial_speed_kmh),
            ("crossing.approach_m", self.crossing.approach_m),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(HavaError::InvalidParameter(format!(
                    "{name} must be >= 0, got {v}"
                )));
            }
        }
        if self.route_length_m <= self.junction_exit_m() {
            return Err(HavaError::InvalidParameter(
                "route must extend past the junction".into(),
            ));
        }
        if kmh_to_ms(self.max_speed_kmh) * self.tick_s >= REWARD_SPACING_M {
            return Err(HavaError::InvalidParameter(
                "max_speed_kmh lets the ego skip a reward boundary in one tick".into(),
            ));
        }
        if self.max_ticks == 0 {
            return Err(HavaError::InvalidParameter("max_ticks must be > 0".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HavaError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Position the ego's front must reach for its rear to have left the crossing.
    pub fn junction_exit_m(&self) -> f64 {
        self.stop_line_m + self.junction_width_m + self.ego_length_m
    }

    /// Time (s) the priority vehicle's front enters the crossing.
    pub fn arrival_s(&self) -> f64 {
        let c = &self.crossing;
        c.spawn_tick as f64 * self.tick_s + c.approach_m / kmh_to_ms(c.speed_kmh)
    }

    /// Time (s) its rear leaves the crossing.
    pub fn clear_s(&self) -> f64 {
        let c = &self.crossing;
        self.arrival_s() + (self.junction_width_m + c.length_m) / kmh_to_ms(c.speed_kmh)
    }

    pub fn time_s(&self, tick: usize) -> f64 {
        tick as f64 * self.tick_s
    }

    /// Distance travelled by the priority vehicle's front since spawning.
    pub fn crossing_position(&self, tick: usize) -> f64 {
        let c = &self.crossing;
        let since = (tick as f64 - c.spawn_tick as f64).max(0.0) * self.tick_s;
        since * kmh_to_ms(c.speed_kmh)
    }

    pub fn crossing_spawned(&self, tick: usize) -> bool {
        tick >= self.crossing.spawn_tick as usize
    }

    pub fn junction_occupied(&self, tick: usize) -> bool {
        let t = self.time_s(tick);
        self.arrival_s() < t && t < self.clear_s()
    }

    pub fn priority_passed(&self, tick: usize) -> bool {
        self.time_s(tick) >= self.clear_s()
    }

    /// Whether an ego with its front at `x` overlaps the crossing.
    pub fn ego_in_junction(&self, x: f64) -> bool {
        x > self.stop_line_m && x - self.ego_length_m < self.stop_line_m + self.junction_width_m
    }

    /// Next speed proposed by action `a` from current speed `v`.
    pub fn proposed_speed(&self, v: f64, a: ActionId) -> Result<f64> {
        if a.0 >= ACTION_COUNT {
            return Err(HavaError::UnknownAction(a.0));
        }
        let step = a.0 as f64 - HOLD_ACTION as f64;
        Ok((v + step * self.delta_kmh).clamp(0.0, self.max_speed_kmh))
    }
}

/// Highest speed (m/s) from which one tick of travel plus braking at `decel`
/// still stops within `gap`: solves `v·dt + v²/(2b) = gap`.
pub fn stopping_speed(gap_m: f64, decel_ms2: f64, tick_s: f64) -> f64 {
    if gap_m <= 0.0 {
        return 0.0;
    }
    let b = decel_ms2;
    b * (-tick_s + (tick_s * tick_s + 2.0 * gap_m / b).sqrt())
}

/// Which constraint the priority vehicle currently puts on the ego.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regime {
    /// Priority vehicle gone, or ego already past the crossing.
    Open,
    /// Ego commits to clearing first; speeds below `min_kmh` would strand it.
    Go { min_kmh: f64 },
    /// Ego must be able to stop at the line.
    Yield { max_kmh: f64 },
    /// Ego is inside the crossing ahead of the priority vehicle.
    InJunction { min_kmh: f64 },
}

/// Classify the situation of an ego at `x` doing `v_kmh` at `tick`.
/// `limit_kmh` bounds the speeds the driver is willing to use when going.
pub fn regime(cfg: &ScenarioConfig, x: f64, v_kmh: f64, tick: usize, limit_kmh: f64) -> Regime {
    if cfg.priority_passed(tick) || x >= cfg.junction_exit_m() {
        return Regime::Open;
    }
    let window = cfg.arrival_s() - cfg.time_s(tick) - cfg.headway_s;
    let remaining = cfg.junction_exit_m() - x;
    let needed = if window > 0.0 {
        ms_to_kmh(remaining / window)
    } else {
        f64::INFINITY
    };
    if x > cfg.stop_line_m {
        return Regime::InJunction {
            min_kmh: needed.min(limit_kmh),
        };
    }
    let v_stop = ms_to_kmh(stopping_speed(
        cfg.stop_line_m - x,
        cfg.decel_ms2,
        cfg.tick_s,
    ));
    if needed <= limit_kmh && v_kmh >= needed {
        Regime::Go {
            min_kmh: if v_stop >= needed { 0.0 } else { needed },
        }
    } else {
        Regime::Yield { max_kmh: v_stop }
    }
}

/// Upper bound imposed by the priority vehicle alone; infinite when unconstrained.
pub fn safe_speed(cfg: &ScenarioConfig, x: f64, v_kmh: f64, tick: usize) -> f64 {
    match regime(cfg, x, v_kmh, tick, cfg.speed_limit_kmh) {
        Regime::Yield { max_kmh } => max_kmh,
        _ => f64::INFINITY,
    }
}

/// Permitted speed interval `[lo, hi]` for a driver with speed cap `limit_kmh`.
pub fn permitted_speeds(
    cfg: &ScenarioConfig,
    x: f64,
    v_kmh: f64,
    tick: usize,
    limit_kmh: f64,
) -> (f64, f64) {
    match regime(cfg, x, v_kmh, tick, limit_kmh) {
        Regime::Open => (0.0, limit_kmh),
        Regime::Go { min_kmh } | Regime::InJunction { min_kmh } => {
            (min_kmh.min(limit_kmh), limit_kmh)
        }
        Regime::Yield { max_kmh } => (0.0, max_kmh.min(limit_kmh)),
    }
}

/// `10 + mean(last three speeds)` when a 2 m boundary was crossed, −1 otherwise.
pub fn junction_task_reward(prev_x: f64, x: f64, speeds: [f64; 3]) -> f64 {
    let crossed = (x / REWARD_SPACING_M).floor() > (prev_x / REWARD_SPACING_M).floor();
    if crossed {
        10.0 + speeds.iter().sum::<f64>() / 3.0
    } else {
        -1.0
    }
}

/// Decoded view of a junction [`EnvState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JunctionState {
    pub ego_position: f64,
    pub ego_speed: f64,
    pub distance_to_junction: f64,
    pub crossing_position: f64,
    pub crossing_speed: f64,
    pub junction_occupied: bool,
    pub priority_passed: bool,
    pub time_step: usize,
}

impl JunctionState {
    pub fn from_env(state: &EnvState) -> Result<Self> {
        let f = &state.features;
        if f.len() != FEATURE_NAMES.len() {
            return Err(HavaError::Format(format!(
                "junction state needs {} features, got {}",
                FEATURE_NAMES.len(),
                f.len()
            )));
        }
        Ok(Self {
            ego_position: f[0],
            ego_speed: f[1],
            distance_to_junction: f[2],
            crossing_position: f[3],
            crossing_speed: f[4],
            junction_occupied: f[5] != 0.0,
            priority_passed: f[6] != 0.0,
            time_step: f[7].max(0.0).round() as usize,
        })
    }

    pub fn to_features(&self) -> Vec<f64> {
        vec![
            self.ego_position,
            self.ego_speed,
            self.distance_to_junction,
            self.crossing_position,
            self.crossing_speed,
            f64::from(u8::from(self.junction_occupied)),
            f64::from(u8::from(self.priority_passed)),
            self.time_step as f64,
        ]
    }
}

/// The ego's episode. Terminal once the ego's front reaches the end of the route.
///
/// Collisions are recorded but do not end the episode, so an unconstrained
/// agent can drive through an occupied crossing and keep going.
#[derive(Debug, Clone)]
pub struct JunctionEnv {
    cfg: Arc<ScenarioConfig>,
    x: f64,
    v: f64,
    tick: usize,
    speeds: [f64; 3],
    collisions: usize,
}

impl JunctionEnv {
    pub fn new(cfg: Arc<ScenarioConfig>) -> Result<Self> {
        cfg.validate()?;
        let v0 = cfg.initial_speed_kmh;
        Ok(Self {
            cfg,
            x: 0.0,
            v: v0,
            tick: 0,
            speeds: [v0; 3],
            collisions: 0,
        })
    }

    pub fn config(&self) -> &Arc<ScenarioConfig> {
        &self.cfg
    }

    pub fn position(&self) -> f64 {
        self.x
    }

    pub fn speed(&self) -> f64 {
        self.v
    }

    pub fn tick(&self) -> usize {
        self.tick
    }

    pub fn collided(&self) -> bool {
        self.collisions > 0
    }

    /// Ticks spent inside the crossing together with the priority vehicle.
    pub fn collision_ticks(&self) -> usize {
        self.collisions
    }

    pub fn finished(&self) -> bool {
        self.x >= self.cfg.route_length_m
    }

    pub fn junction_state(&self) -> JunctionState {
        let cfg = &self.cfg;
        JunctionState {
            ego_position: self.x,
            ego_speed: self.v,
            distance_to_junction: cfg.stop_line_m - self.x,
            crossing_position: cfg.crossing_position(self.tick),
            crossing_speed: if cfg.crossing_spawned(self.tick) {
                cfg.crossing.speed_kmh
            } else {
                0.0
            },
            junction_occupied: cfg.junction_occupied(self.tick),
            priority_passed: cfg.priority_passed(self.tick),
            time_step: self.tick,
        }
    }
}

impl Environment for JunctionEnv {
    fn reset(&mut self) -> EnvState {
        let v0 = self.cfg.initial_speed_kmh;
        self.x = 0.0;
        self.v = v0;
        self.tick = 0;
        self.speeds = [v0; 3];
        self.collisions = 0;
        self.observe()
    }

    fn observe(&self) -> EnvState {
        EnvState::new(self.junction_state().to_features(), self.finished())
    }

    fn action_count(&self) -> usize {
        ACTION_COUNT
    }

    fn propose(&self, action: ActionId) -> Result<ActionValue> {
        Ok(ActionValue::Continuous(
            self.cfg.proposed_speed(self.v, action)?,
        ))
    }

    fn apply(&mut self, action: ActionValue) -> Result<Outcome> {
        if self.finished() {
            return Err(HavaError::Terminal);
        }
        let ActionValue::Continuous(v) = action else {
            return Err(HavaError::ActionKindMismatch {
                action: format!("{action:?}"),
                set: "speed".into(),
            });
        };
        if !(v >= 0.0) || v > self.cfg.max_speed_kmh {
            return Err(HavaError::InvalidParameter(format!(
                "speed {v} outside [0, {}]",
                self.cfg.max_speed_kmh
            )));
        }
        let prev = self.x;
        self.v = v;
        self.x += kmh_to_ms(v) * self.cfg.tick_s;
        self.tick += 1;
        self.speeds = [self.speeds[1], self.speeds[2], v];
        if self.cfg.ego_in_junction(self.x) && self.cfg.junction_occupied(self.tick) {
            self.collisions += 1;
        }
        Ok(Outcome {
            next: self.observe(),
            reward: junction_task_reward(prev, self.x, self.speeds),
        })
    }

    fn feature_names(&self) -> Vec<String> {
        FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
    }
}

/// Rule-based norms: the safe-speed rule plus the speed limit.
#[derive(Debug, Clone)]
pub struct JunctionRb(pub Arc<ScenarioConfig>);

impl NormModel for JunctionRb {
    fn permitted(&self, state: &EnvState) -> Result<ActionSet> {
        let s = JunctionState::from_env(state)?;
        let (lo, hi) = permitted_speeds(
            &self.0,
            s.ego_position,
            s.ego_speed,
            s.time_step,
            self.0.speed_limit_kmh,
        );
        ActionSet::interval(lo, hi)
    }
}

/// A simulated driver style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanProfile {
    /// Desired cruising speed; may exceed the legal limit.
    pub max_speed_kmh: f64,
    /// Largest speed gain per tick.
    pub max_accel_kmh: f64,
    /// Krauss dawdling factor in `[0, 1]`.
    #[serde(default = "default_dawdle")]
    pub dawdle: f64,
    /// Shortest distance kept to the stop line when yielding.
    #[serde(default = "default_min_gap")]
    pub min_gap_m: f64,
    /// Extra stopping distance drawn uniformly per episode.
    #[serde(default = "default_gap_jitter")]
    pub gap_jitter_m: f64,
}

fn default_dawdle() -> f64 {
    0.5
}

fn default_min_gap() -> f64 {
    0.5
}

fn default_gap_jitter() -> f64 {
    3.0
}

impl HumanProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_speed_kmh > 0.0) || !(self.max_accel_kmh > 0.0) {
            return Err(HavaError::InvalidParameter(
                "human profile speeds must be > 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.dawdle) {
            return Err(HavaError::InvalidParameter(
                "dawdle must lie in [0, 1]".into(),
            ));
        }
        if !(self.min_gap_m >= 0.0) || !(self.gap_jitter_m >= 0.0) {
            return Err(HavaError::InvalidParameter(
                "stopping gaps must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Krauss step: accelerate towards the safe bound, then dawdle randomly.
    /// `gap_m` is how far before the line this driver stops.
    pub fn next_speed<R: Rng + ?Sized>(
        &self,
        cfg: &ScenarioConfig,
        x: f64,
        v: f64,
        tick: usize,
        gap_m: f64,
        rng: &mut R,
    ) -> f64 {
        // a driver keeping a gap behaves as if the line were that much closer
        let (lo, hi) = permitted_speeds(cfg, x + gap_m, v, tick, self.max_speed_kmh);
        let desired = (v + self.max_accel_kmh).min(hi);
        let noise = self.dawdle * self.max_accel_kmh * rng.gen::<f64>();
        (desired - noise).max(lo).max(0.0).min(cfg.max_speed_kmh)
    }
}

/// Ten driving styles crossing cruise speeds 47–55 km/h with three
/// acceleration levels; episodes finish between roughly 213 and 237 ticks.
pub fn default_profiles() -> Vec<HumanProfile> {
    [
        (47.0, 0.9),
        (49.0, 1.5),
        (51.0, 1.2),
        (53.0, 0.9),
        (55.0, 1.5),
        (47.0, 1.2),
        (49.0, 0.9),
        (51.0, 1.5),
        (53.0, 1.2),
        (55.0, 0.9),
    ]
    .into_iter()
    .map(|(max_speed_kmh, max_accel_kmh)| HumanProfile {
        max_speed_kmh,
        max_accel_kmh,
        dawdle: default_dawdle(),
        min_gap_m: default_min_gap(),
        gap_jitter_m: default_gap_jitter(),
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub scenario: ScenarioConfig,
    pub profiles: Vec<HumanProfile>,
    pub episodes_per_profile: usize,
    pub seed: u64,
    pub files: Vec<String>,
    pub finish_ticks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HumanDataset {
    pub manifest: DatasetManifest,
    pub trajectories: Vec<Trajectory>,
}

pub const HUMAN_PREFIX: &str = "human_";

impl HumanDataset {
    /// Write `trajectories/human_NNNN.csv` and `humans_manifest.json` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let tdir = dir.join("trajectories");
        std::fs::create_dir_all(&tdir).map_err(|e| HavaError::io(&tdir, e))?;
        let names = feature_names();
        for (file, traj) in self.manifest.files.iter().zip(&self.trajectories) {
            traj.save_csv(&tdir.join(file), &names)?;
        }
        let path = dir.join("humans_manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&path, text).map_err(|e| HavaError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("humans_manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| HavaError::io(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        let tdir = dir.join("trajectories");
        let mut trajectories = Vec::with_capacity(manifest.files.len());
        for file in &manifest.files {
            let (traj, names) = Trajectory::load_csv(&tdir.join(file), crate::mdp::DEFAULT_GAMMA)?;
            if names != feature_names() {
                return Err(HavaError::Format(format!(
                    "{file}: not a junction trajectory"
                )));
            }
            trajectories.push(traj);
        }
        Ok(Self {
            manifest,
            trajectories,
        })
    }

    pub fn finish_ticks(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.len() as f64).collect()
    }
}

pub fn feature_names() -> Vec<String> {
    FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Drive one episode with a simulated human.
pub fn simulate_human<R: Rng + ?Sized>(
    cfg: &Arc<ScenarioConfig>,
    profile: &HumanProfile,
    rng: &mut R,
) -> Result<(Trajectory, bool)> {
    let mut env = JunctionEnv::new(cfg.clone())?;
    let mut traj = Trajectory::new(crate::mdp::DEFAULT_GAMMA)?;
    let mut state = env.reset();
    let gap = profile.min_gap_m + profile.gap_jitter_m * rng.gen::<f64>();
    while !state.terminal && traj.len() < cfg.max_ticks {
        let v = profile.next_speed(cfg, env.position(), env.speed(), env.tick(), gap, rng);
        let out = env.apply(ActionValue::Continuous(v))?;
        traj.steps.push(TrajectoryStep {
            state,
            reputation: 1.0,
            action: v,
            raw_reward: out.reward,
            reward: out.reward,
        });
        state = out.next;
    }
    traj.truncated = !state.terminal;
    traj.final_state = Some(state);
    Ok((traj, env.collided()))
}

/// Simulate `episodes_per_profile` episodes for every profile, deterministically in `seed`.
pub fn generate_human_dataset(
    cfg: &ScenarioConfig,
    profiles: &[HumanProfile],
    episodes_per_profile: usize,
    seed: u64,
) -> Result<HumanDataset> {
    if profiles.is_empty() {
        return Err(HavaError::InvalidParameter(
            "no human profiles given".into(),
        ));
    }
    cfg.validate()?;
    for p in profiles {
        p.validate()?;
    }
    let cfg = Arc::new(cfg.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trajectories = Vec::new();
    let mut files = Vec::new();
    for profile in profiles {
        for _ in 0..episodes_per_profile {
            let (traj, collided) = simulate_human(&cfg, profile, &mut rng)?;
            if collided || traj.truncated {
                return Err(HavaError::InvalidParameter(format!(
                    "human profile {profile:?} does not complete the scenario safely"
                )));
            }
            files.push(format!("{HUMAN_PREFIX}{:04}.csv", trajectories.len()));
            trajectories.push(traj);
        }
    }
    Ok(HumanDataset {
        manifest: DatasetManifest {
            scenario: (*cfg).clone(),
            profiles: profiles.to_vec(),
            episodes_per_profile,
            seed,
            finish_ticks: trajectories.iter().map(Trajectory::len).collect(),
            files,
        },
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ScenarioConfig {
        ScenarioConfig::default()
    }

    #[test]
    fn default_config_is_valid() {
        cfg().validate().unwrap();
        let mut bad = cfg();
        bad.max_speed_kmh = 80.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn stopping_speed_inverts_braking_distance() {
        let v = stopping_speed(20.0, 100.0 / 38.0, 0.1);
        assert!((ms_to_kmh(v) - 36.0).abs() < 1e-9);
        assert_eq!(stopping_speed(0.0, 4.5, 0.1), 0.0);
    }

    #[test]
    fn open_road_after_priority_passes() {
        let c = cfg();
        let tick = (c.clear_s() / c.tick_s).ceil() as usize + 1;
        assert_eq!(permitted_speeds(&c, 40.0, 30.0, tick, 50.0), (0.0, 50.0));
        assert!(safe_speed(&c, 40.0, 30.0, tick).is_infinite());
    }

    #[test]
    fn at_the_line_with_vehicle_approaching() {
        let c = cfg();
        let tick = (c.arrival_s() / c.tick_s) as usize - 2;
        assert_eq!(safe_speed(&c, c.stop_line_m, 0.0, tick), 0.0);
        assert_eq!(
            permitted_speeds(&c, c.stop_line_m, 0.0, tick, 50.0),
            (0.0, 0.0)
        );
    }

    #[test]
    fn early_fast_ego_may_go() {
        let c = cfg();
        match regime(&c, 20.0, 50.0, 10, 50.0) {
            Regime::Go { .. } => {}
            other => panic!("expected go, got {other:?}"),
        }
        match regime(&c, 20.0, 10.0, 10, 50.0) {
            Regime::Yield { .. } => {}
            other => panic!("expected yield, got {other:?}"),
        }
    }

    #[test]
    fn reward_examples() {
        assert_eq!(junction_task_reward(0.5, 1.5, [30.0; 3]), -1.0);
        assert_eq!(junction_task_reward(1.5, 2.5, [30.0; 3]), 40.0);
        assert_eq!(junction_task_reward(1.99, 2.0, [0.0; 3]), 10.0);
    }

    #[test]
    fn action_table() {
        let c = cfg();
        assert_eq!(c.proposed_speed(10.0, ActionId(0)).unwrap(), 5.0);
        assert_eq!(c.proposed_speed(10.0, ActionId(5)).unwrap(), 10.0);
        assert_eq!(c.proposed_speed(10.0, ActionId(10)).unwrap(), 15.0);
        assert_eq!(c.proposed_speed(2.0, ActionId(0)).unwrap(), 0.0);
        assert!(c.proposed_speed(2.0, ActionId(11)).is_err());
    }

    #[test]
    fn state_round_trip() {
        let env = JunctionEnv::new(Arc::new(cfg())).unwrap();
        let s = env.observe();
        assert_eq!(
            JunctionState::from_env(&s).unwrap().to_features(),
            s.features
        );
        assert!(JunctionState::from_env(&EnvState::new(vec![1.0], false)).is_err());
    }

    #[test]
    fn human_yields_and_stops() {
        let c = Arc::new(cfg());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (t, collided) = simulate_human(&c, &default_profiles()[2], &mut rng).unwrap();
        assert!(!collided && !t.truncated);
        let waiting = t
            .steps
            .iter()
            .filter(|s| s.state.features[F_PASSED] == 0.0 && s.state.features[F_POSITION] > 70.0)
            .map(|s| s.action)
            .fold(f64::INFINITY, f64::min);
        assert!(waiting < 0.5, "minimum speed near the line {waiting}");
    }

    #[test]
    fn generation_rejects_empty_profiles() {
        assert!(generate_human_dataset(&cfg(), &[], 1, 0).is_err());
    }
}
