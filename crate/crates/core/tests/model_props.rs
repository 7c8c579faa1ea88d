//! Properties of the envelope model, trajectory maths and the Q-table.

use std::sync::Arc;

use hava_core::agent::{argmax, train, QTable, StateEncoder, TrainConfig};
use hava_core::alignment::{ActionSet, AlignmentValue, HavaEnv};
use hava_core::dd::{BinConfig, SpeedEnvelopeModel};
use hava_core::grid::{GridEnv, GridWorld};
use hava_core::junction::{feature_names, FEATURE_NAMES, F_PASSED, F_POSITION};
use hava_core::mdp::*;
use proptest::prelude::*;

fn step(x: f64, phase: bool, v: f64) -> TrajectoryStep {
    let mut f = vec![0.0; FEATURE_NAMES.len()];
    f[F_POSITION] = x;
    f[F_PASSED] = if phase { 1.0 } else { 0.0 };
    TrajectoryStep {
        state: EnvState::new(f, false),
        reputation: 1.0,
        action: v,
        raw_reward: -1.0,
        reward: -1.0,
    }
}

fn trajectories() -> impl Strategy<Value = Vec<Trajectory>> {
    let s = (0.0..180.0f64, any::<bool>(), 0.0..70.0f64).prop_map(|(x, p, v)| step(x, p, v));
    let t = proptest::collection::vec(s, 1..40).prop_map(|steps| {
        let mut t = Trajectory::new(0.99).unwrap();
        t.steps = steps;
        t
    });
    proptest::collection::vec(t, 1..6)
}

fn fit(ts: &[Trajectory]) -> SpeedEnvelopeModel {
    SpeedEnvelopeModel::fit(ts, &feature_names(), BinConfig::default()).unwrap()
}

fn rewards_trajectory(rewards: &[f64], gamma: f64) -> Trajectory {
    let mut t = Trajectory::new(gamma).unwrap();
    t.steps = rewards
        .iter()
        .map(|&r| TrajectoryStep {
            state: EnvState::new(vec![], false),
            reputation: 1.0,
            action: 0.0,
            raw_reward: r,
            reward: r,
        })
        .collect();
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn envelope_covers_every_training_sample(ts in trajectories()) {
        let m = fit(&ts);
        for t in &ts {
            for s in &t.steps {
                prop_assert_eq!(m.distance(s.action, &s.state).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn envelope_never_shrinks_with_more_data(ts in trajectories(), extra in trajectories()) {
        let small = fit(&ts);
        let mut all = ts.clone();
        all.extend(extra);
        let big = fit(&all);
        for e in small.bins() {
            let grown = big.bin(e.phase, e.index).unwrap();
            prop_assert!(grown.v_min <= e.envelope.v_min);
            prop_assert!(grown.v_max >= e.envelope.v_max);
        }
    }

    #[test]
    fn fit_is_byte_deterministic(ts in trajectories()) {
        prop_assert_eq!(fit(&ts).to_json().unwrap(), fit(&ts).to_json().unwrap());
        let back = SpeedEnvelopeModel::from_json(&fit(&ts).to_json().unwrap()).unwrap();
        prop_assert_eq!(back, fit(&ts));
    }

    #[test]
    fn return_is_linear(rs in proptest::collection::vec(-100.0..100.0f64, 0..80), c in -10.0..10.0f64, gamma in 0.0..=1.0f64) {
        let t = rewards_trajectory(&rs, gamma);
        let scaled = discounted_return(&t.scaled(c));
        let expected = c * discounted_return(&t);
        prop_assert!((scaled - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
    }

    #[test]
    fn forward_equals_backward(rs in proptest::collection::vec(-100.0..100.0f64, 0..200), gamma in 0.0..=1.0f64) {
        let t = rewards_trajectory(&rs, gamma);
        let (f, b) = (discounted_return(&t), discounted_return_backward(&t));
        prop_assert!((f - b).abs() <= 1e-9 * (1.0 + f.abs().max(b.abs())));
    }

    #[test]
    fn rollout_respects_budget(max_steps in 0usize..60, moves in proptest::collection::vec(0usize..4, 0..80)) {
        let world = Arc::new(GridWorld::reference());
        let mut env = GridEnv::new(world);
        let mut seq = ActionSequence::new(moves.into_iter().map(ActionId).collect());
        let t = rollout(&mut seq, &mut env, max_steps, 0.99).unwrap();
        // recorded states plus the final one
        prop_assert!(t.states().len() <= max_steps + 1);
        prop_assert!(t.len() <= max_steps);
    }

    #[test]
    fn greedy_choice_survives_affine_maps(
        values in proptest::collection::vec(-1e3..1e3f64, 1..12),
        scale in 1e-3..1e3f64,
        shift in -1e3..1e3f64,
    ) {
        let mapped: Vec<f64> = values.iter().map(|v| scale * v + shift).collect();
        // affine images can collapse near-ties through rounding; compare values, not indices
        let (a, b) = (argmax(&values), argmax(&mapped));
        prop_assert!(a == b || (values[a] - values[b]).abs() <= 1e-9 * values[a].abs().max(1.0));
    }
}

#[test]
fn greedy_action_survives_affine_maps_in_table() {
    let mut q = QTable::new(4, 0.0, StateEncoder::grid()).unwrap();
    let s = EnvState::new(vec![2.0, 3.0], false);
    let k = q.key(&s, 1.0);
    for (a, v) in [3.0, -1.0, 7.5, 2.0].into_iter().enumerate() {
        q.set(k, ActionId(a), v);
    }
    let best = q.best_action(&k);
    for a in 0..4 {
        let v = q.value(&k, ActionId(a));
        q.set(k, ActionId(a), 0.25 * v - 40.0);
    }
    assert_eq!(q.best_action(&k), best);
}

#[test]
fn wrapping_is_transparent_when_norms_permit_everything() {
    let world = Arc::new(GridWorld::reference());
    let everything = |_: &EnvState| Ok(ActionSet::discrete((0..4).map(ActionId)));
    let av = AlignmentValue::hybrid(Arc::new(everything), Arc::new(everything), 1.0, 1.0).unwrap();
    let cfg = TrainConfig {
        episodes: 300,
        max_steps: 60,
        epsilon_decay: 0.99,
        seed: 5,
        ..TrainConfig::default()
    };
    let q0 = QTable::new(4, 0.0, StateEncoder::grid()).unwrap();

    let mut plain = GridEnv::new(world.clone());
    let a = train(&mut plain, q0.clone(), &cfg).unwrap();
    let mut wrapped = HavaEnv::new(GridEnv::new(world), av);
    let b = train(&mut wrapped, q0, &cfg).unwrap();
    assert!(b.curve.iter().all(|c| c.mean_w == 1.0));
    assert_eq!(a.q.to_json().unwrap(), b.q.to_json().unwrap());
    assert_eq!(a.curve, b.curve);
}
