//! Alignment Value, reputation dynamics, reward weighting and action projection.
//!
//! An [`AlignmentValue`] pairs a mandatory rule-based norm source (RB) with a
//! tentative data-driven one (DD). Each step the proposed action is scored
//! against both sets, the worse score caps the agent's reputation, the
//! reputation weights the task reward, and the executed action is projected
//! into the RB set. Either source may be absent, which gives the two ablations.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{HavaError, Result};
use crate::mdp::{ActionId, ActionValue, EnvState, Environment, Mdp, Step};

/// Constant floor of the reputation increment.
pub const REPUTATION_FLOOR_STEP: f64 = 0.001;

/// Upper bound on iterations in [`recovery_steps`].
pub const RECOVERY_CAP: usize = 1_000_000;

/// Permitted actions for a state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActionSet {
    /// Sorted, deduplicated subset of a discrete action table.
    Discrete(Vec<ActionId>),
    /// Closed interval on a continuous action axis.
    Interval { lo: f64, hi: f64 },
}

impl ActionSet {
    pub fn discrete<I: IntoIterator<Item = ActionId>>(actions: I) -> Self {
        let mut v: Vec<ActionId> = actions.into_iter().collect();
        v.sort();
        v.dedup();
        ActionSet::Discrete(v)
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(HavaError::InvalidParameter(format!(
                "interval needs lo <= hi, got [{lo}, {hi}]"
            )));
        }
        Ok(ActionSet::Interval { lo, hi })
    }

    pub fn is_empty(&self) -> bool {
        match self {
            ActionSet::Discrete(v) => v.is_empty(),
            ActionSet::Interval { .. } => false,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSet::Discrete(_))
    }

    pub fn contains(&self, action: ActionValue) -> bool {
        match (self, action) {
            (ActionSet::Discrete(v), ActionValue::Discrete(a)) => v.binary_search(&a).is_ok(),
            (ActionSet::Interval { lo, hi }, ActionValue::Continuous(x)) => *lo <= x && x <= *hi,
            _ => false,
        }
    }
}

impl fmt::Display for ActionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionSet::Discrete(v) => {
                let ids: Vec<String> = v.iter().map(|a| a.0.to_string()).collect();
                write!(f, "{{{}}}", ids.join(","))
            }
            ActionSet::Interval { lo, hi } => write!(f, "[{lo}, {hi}]"),
        }
    }
}

fn kind_mismatch(action: ActionValue, set: &ActionSet) -> HavaError {
    HavaError::ActionKindMismatch {
        action: format!("{action:?}"),
        set: set.to_string(),
    }
}

/// Reputation `w ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Reputation(f64);

impl Reputation {
    pub const FULL: Reputation = Reputation(1.0);

    pub fn new(w: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w) {
            return Err(HavaError::InvalidParameter(format!(
                "reputation must lie in [0, 1], got {w}"
            )));
        }
        Ok(Reputation(w))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// A norm source: maps a state to the set of actions it permits.
pub trait NormModel: Send + Sync {
    fn permitted(&self, state: &EnvState) -> Result<ActionSet>;
}

impl<F> NormModel for F
where
    F: Fn(&EnvState) -> Result<ActionSet> + Send + Sync,
{
    fn permitted(&self, state: &EnvState) -> Result<ActionSet> {
        self(state)
    }
}

/// `⟨RB, DD⟩` plus the tolerance `tau` and forgiveness rate `alpha`.
#[derive(Clone)]
pub struct AlignmentValue {
    rb: Option<Arc<dyn NormModel>>,
    dd: Option<Arc<dyn NormModel>>,
    tau: f64,
    alpha: f64,
}

impl fmt::Debug for AlignmentValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AlignmentValue")
            .field("rb", &self.rb.is_some())
            .field("dd", &self.dd.is_some())
            .field("tau", &self.tau)
            .field("alpha", &self.alpha)
            .finish()
    }
}

impl AlignmentValue {
    pub fn new(
        rb: Option<Arc<dyn NormModel>>,
        dd: Option<Arc<dyn NormModel>>,
        tau: f64,
        alpha: f64,
    ) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(HavaError::InvalidParameter(format!(
                "tau must be > 0, got {tau}"
            )));
        }
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(HavaError::InvalidParameter(format!(
                "alpha must be >= 0, got {alpha}"
            )));
        }
        Ok(Self { rb, dd, tau, alpha })
    }

    /// Full hybrid configuration.
    pub fn hybrid(
        rb: Arc<dyn NormModel>,
        dd: Arc<dyn NormModel>,
        tau: f64,
        alpha: f64,
    ) -> Result<Self> {
        Self::new(Some(rb), Some(dd), tau, alpha)
    }

    /// Rule-based ablation: no data-driven norms.
    pub fn rules_only(rb: Arc<dyn NormModel>, tau: f64, alpha: f64) -> Result<Self> {
        Self::new(Some(rb), None, tau, alpha)
    }

    /// Data-driven ablation: no rule-based norms and therefore no projection.
    pub fn data_only(dd: Arc<dyn NormModel>, tau: f64, alpha: f64) -> Result<Self> {
        Self::new(None, Some(dd), tau, alpha)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn has_rb(&self) -> bool {
        self.rb.is_some()
    }

    pub fn has_dd(&self) -> bool {
        self.dd.is_some()
    }

    pub fn rb_set(&self, state: &EnvState) -> Result<Option<ActionSet>> {
        self.rb.as_ref().map(|m| m.permitted(state)).transpose()
    }

    pub fn dd_set(&self, state: &EnvState) -> Result<Option<ActionSet>> {
        self.dd.as_ref().map(|m| m.permitted(state)).transpose()
    }
}

/// `al(τ, d) = max((τ − d)/τ, 0)`.
pub fn alignment_score(tau: f64, d: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(HavaError::InvalidParameter(format!(
            "tau must be > 0, got {tau}"
        )));
    }
    if !(d >= 0.0) {
        return Err(HavaError::InvalidParameter(format!(
            "distance must be >= 0, got {d}"
        )));
    }
    Ok(((tau - d) / tau).max(0.0))
}

/// Distance from `action` to the nearest member of `allowed`.
///
/// Intervals use the distance to the nearest endpoint. Discrete sets use an
/// indicator: 0 for members, `+∞` otherwise, since grid moves carry no metric.
pub fn min_distance(action: ActionValue, allowed: &ActionSet) -> Result<f64> {
    if allowed.is_empty() {
        return Err(HavaError::EmptyActionSet);
    }
    match (allowed, action) {
        (ActionSet::Interval { lo, hi }, ActionValue::Continuous(x)) => Ok(if x < *lo {
            lo - x
        } else if x > *hi {
            x - hi
        } else {
            0.0
        }),
        (ActionSet::Discrete(v), ActionValue::Discrete(a)) => Ok(if v.binary_search(&a).is_ok() {
            0.0
        } else {
            f64::INFINITY
        }),
        _ => Err(kind_mismatch(action, allowed)),
    }
}

/// `δ = min(al_RB, al_DD)`.
pub fn worst_alignment(al_rb: f64, al_dd: f64) -> f64 {
    al_rb.min(al_dd)
}

/// `w_inc(w) = α(e^w − 1) + 0.001`.
pub fn reputation_increment(w: f64, alpha: f64) -> f64 {
    alpha * w.exp_m1() + REPUTATION_FLOOR_STEP
}

/// `w' = min(w + w_inc(w), δ)`.
pub fn update_reputation(w: f64, delta: f64, alpha: f64) -> f64 {
    (w + reputation_increment(w, alpha)).min(delta)
}

/// Consecutive fully aligned steps needed to bring reputation from 0 back to 1.
pub fn recovery_steps(alpha: f64) -> Result<usize> {
    if !(alpha >= 0.0) {
        return Err(HavaError::InvalidParameter(format!(
            "alpha must be >= 0, got {alpha}"
        )));
    }
    let mut w = 0.0;
    for n in 1..=RECOVERY_CAP {
        w = update_reputation(w, 1.0, alpha);
        if w >= 1.0 {
            return Ok(n);
        }
    }
    Err(HavaError::InvalidParameter(format!(
        "reputation not recovered within {RECOVERY_CAP} steps for alpha = {alpha}"
    )))
}

/// Reputation trace for `steps` aligned updates starting from `w0`.
pub fn reputation_trace(w0: f64, alpha: f64, deltas: &[f64]) -> Vec<f64> {
    let mut w = w0;
    deltas
        .iter()
        .map(|&d| {
            w = update_reputation(w, d, alpha);
            w
        })
        .collect()
}

/// Weighted task reward `R_AV(s, a, w')`.
pub fn transform_reward(raw: f64, w_next: f64) -> f64 {
    if raw >= 0.0 {
        w_next * raw
    } else {
        raw * (1.0 + (1.0 - w_next))
    }
}

/// Replace `proposed` by the closest member of `rb_set` if it is not already one.
///
/// Intervals clamp. Discrete sets have no metric, so a non-member maps to the
/// lowest-index permitted action.
pub fn project_action(proposed: ActionValue, rb_set: &ActionSet) -> Result<ActionValue> {
    if rb_set.is_empty() {
        return Err(HavaError::EmptyActionSet);
    }
    match (rb_set, proposed) {
        (ActionSet::Interval { lo, hi }, ActionValue::Continuous(x)) => {
            Ok(ActionValue::Continuous(x.clamp(*lo, *hi)))
        }
        (ActionSet::Discrete(v), ActionValue::Discrete(a)) => {
            if v.binary_search(&a).is_ok() {
                Ok(proposed)
            } else {
                Ok(ActionValue::Discrete(v[0]))
            }
        }
        _ => Err(kind_mismatch(proposed, rb_set)),
    }
}

/// Per-step judgement of a proposed action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentOutcome {
    pub d_rb: f64,
    pub d_dd: f64,
    pub al_rb: f64,
    pub al_dd: f64,
    pub delta: f64,
    pub w_next: Reputation,
    pub executed: ActionValue,
}

fn score(tau: f64, d: f64, discrete: bool) -> Result<f64> {
    if discrete {
        Ok(if d == 0.0 { 1.0 } else { 0.0 })
    } else {
        alignment_score(tau, d)
    }
}

/// Score `proposed` in `state`, update the reputation and pick the executed action.
///
/// Distances are measured on the proposed action, before projection.
pub fn hava_step(
    av: &AlignmentValue,
    state: &EnvState,
    w: Reputation,
    proposed: ActionValue,
) -> Result<AlignmentOutcome> {
    let (d_rb, al_rb, executed) = match av.rb_set(state)? {
        Some(rb) => {
            let d = min_distance(proposed, &rb)?;
            let al = score(av.tau, d, rb.is_discrete())?;
            (d, al, project_action(proposed, &rb)?)
        }
        None => (0.0, 1.0, proposed),
    };
    let (d_dd, al_dd) = match av.dd_set(state)? {
        // an empty DD set means every action breaks the social norms
        Some(dd) if dd.is_empty() => (f64::INFINITY, 0.0),
        Some(dd) => {
            let d = min_distance(proposed, &dd)?;
            (d, score(av.tau, d, dd.is_discrete())?)
        }
        None => (0.0, 1.0),
    };
    let delta = worst_alignment(al_rb, al_dd);
    let w_next = Reputation::new(update_reputation(w.value(), delta, av.alpha).clamp(0.0, 1.0))?;
    Ok(AlignmentOutcome {
        d_rb,
        d_dd,
        al_rb,
        al_dd,
        delta,
        w_next,
        executed,
    })
}

/// State of the augmented MDP: base state plus reputation.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub state: EnvState,
    pub reputation: f64,
}

/// The augmented MDP: reputation in the state, weighted rewards, RB-projected actions.
///
/// Every episode starts at full reputation.
pub struct HavaEnv<E> {
    env: E,
    av: AlignmentValue,
    w: Reputation,
    last: Option<AlignmentOutcome>,
}

impl<E: Environment> HavaEnv<E> {
    pub fn new(env: E, av: AlignmentValue) -> Self {
        Self {
            env,
            av,
            w: Reputation::FULL,
            last: None,
        }
    }

    pub fn inner(&self) -> &E {
        &self.env
    }

    pub fn inner_mut(&mut self) -> &mut E {
        &mut self.env
    }

    pub fn alignment_value(&self) -> &AlignmentValue {
        &self.av
    }

    pub fn augmented(&self) -> AugmentedState {
        AugmentedState {
            state: self.env.observe(),
            reputation: self.w.value(),
        }
    }

    /// Outcome of the most recent step.
    pub fn last_outcome(&self) -> Option<&AlignmentOutcome> {
        self.last.as_ref()
    }
}

impl<E: Environment> Mdp for HavaEnv<E> {
    fn reset(&mut self) -> EnvState {
        self.w = Reputation::FULL;
        self.last = None;
        self.env.reset()
    }

    fn observe(&self) -> EnvState {
        self.env.observe()
    }

    fn action_count(&self) -> usize {
        self.env.action_count()
    }

    fn reputation(&self) -> f64 {
        self.w.value()
    }

    fn step(&mut self, action: ActionId) -> Result<Step> {
        let state = self.env.observe();
        if state.terminal {
            return Err(HavaError::Terminal);
        }
        let proposed = self.env.propose(action)?;
        let outcome = hava_step(&self.av, &state, self.w, proposed)?;
        let out = self.env.apply(outcome.executed)?;
        let w_next = outcome.w_next.value();
        let step = Step {
            next: out.next,
            executed: outcome.executed,
            raw_reward: out.reward,
            reward: transform_reward(out.reward, w_next),
            next_reputation: w_next,
        };
        self.w = outcome.w_next;
        self.last = Some(outcome);
        Ok(step)
    }

    fn feature_names(&self) -> Vec<String> {
        self.env.feature_names()
    }
}
