//! Reputation-weighted value alignment for sequential decision making.
//!
//! Rule-based and data-driven norm sources judge each proposed action; the
//! resulting reputation scales the task reward, and unsafe actions are
//! projected back into the rule-based set before execution.

pub mod agent;
pub mod alignment;
pub mod dd;
pub mod error;
pub mod grid;
pub mod junction;
pub mod mdp;
pub mod stats;

pub use alignment::{
    alignment_score, hava_step, min_distance, project_action, recovery_steps, reputation_increment,
    transform_reward, update_reputation, worst_alignment, ActionSet, AlignmentOutcome,
    AlignmentValue, AugmentedState, HavaEnv, NormModel, Reputation,
};
pub use error::{HavaError, Result};
pub use mdp::{
    discounted_return, rollout, ActionId, ActionSequence, ActionValue, EnvState, Environment, Mdp,
    Outcome, Policy, Step, Trajectory, TrajectoryStep, DEFAULT_GAMMA,
};
