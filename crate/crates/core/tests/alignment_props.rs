use std::sync::Arc;

use hava_core::alignment::*;
use hava_core::grid::{grid_alignment, GridEnv, GridWorld, Move};
use hava_core::mdp::*;
use proptest::prelude::*;

const CASES: u32 = 10_000;

fn cfg() -> ProptestConfig {
    ProptestConfig::with_cases(CASES)
}

fn interval() -> impl Strategy<Value = (f64, f64)> {
    (-100.0..100.0f64, 0.0..100.0f64).prop_map(|(lo, w)| (lo, lo + w))
}

fn discrete_set() -> impl Strategy<Value = Vec<usize>> {
    proptest::collection::btree_set(0usize..8, 1..=8).prop_map(|s| s.into_iter().collect())
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn score_is_one_at_zero_distance(tau in 1e-6..1e3f64) {
        prop_assert_eq!(alignment_score(tau, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn score_non_increasing_and_clamped(tau in 1e-3..1e3f64, d1 in 0.0..2e3f64, d2 in 0.0..2e3f64) {
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let (a, b) = (alignment_score(tau, lo).unwrap(), alignment_score(tau, hi).unwrap());
        prop_assert!(a >= b);
        prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        if hi >= tau {
            prop_assert_eq!(b, 0.0);
        }
    }

    #[test]
    fn reputation_capped_and_in_unit_range(w in 0.0..=1.0f64, delta in 0.0..=1.0f64, alpha in 0.0..50.0f64) {
        let next = update_reputation(w, delta, alpha);
        prop_assert!(next <= delta);
        prop_assert!((0.0..=1.0).contains(&next));
    }

    #[test]
    fn reputation_monotone_in_w_when_aligned(w1 in 0.0..=1.0f64, w2 in 0.0..=1.0f64, alpha in 0.0..50.0f64) {
        let (lo, hi) = if w1 <= w2 { (w1, w2) } else { (w2, w1) };
        prop_assert!(update_reputation(lo, 1.0, alpha) <= update_reputation(hi, 1.0, alpha));
    }

    #[test]
    fn increment_strictly_positive(w in 0.0..=1.0f64, alpha in 0.0..50.0f64) {
        prop_assert!(reputation_increment(w, alpha) > 0.0);
    }

    #[test]
    fn reward_sign_preserved(raw in -1e3..1e3f64, w in 0.0..=1.0f64) {
        let t = transform_reward(raw, w);
        if raw > 0.0 {
            prop_assert!(t >= 0.0);
        } else if raw < 0.0 {
            prop_assert!(t < 0.0);
        } else {
            prop_assert_eq!(t, 0.0);
        }
    }

    #[test]
    fn reward_weighting_direction(raw in -1e3..1e3f64, w in 0.0..=1.0f64) {
        let t = transform_reward(raw, w);
        if raw < 0.0 {
            prop_assert!(t.abs() >= raw.abs());
            prop_assert_eq!(t == raw, w == 1.0);
        } else if raw > 0.0 {
            prop_assert!(t <= raw);
            prop_assert_eq!(t == raw, w == 1.0);
        }
    }

    #[test]
    fn full_reputation_is_identity(raw in -1e6..1e6f64) {
        prop_assert_eq!(transform_reward(raw, 1.0), raw);
    }

    #[test]
    fn interval_projection_idempotent_and_member((lo, hi) in interval(), x in -300.0..300.0f64) {
        let set = ActionSet::interval(lo, hi).unwrap();
        let once = project_action(ActionValue::Continuous(x), &set).unwrap();
        prop_assert!(set.contains(once));
        prop_assert_eq!(project_action(once, &set).unwrap(), once);
        if set.contains(ActionValue::Continuous(x)) {
            prop_assert_eq!(once, ActionValue::Continuous(x));
        }
        // clamping is the nearest member
        let ActionValue::Continuous(p) = once else { unreachable!() };
        prop_assert!(((x - p).abs() - min_distance(ActionValue::Continuous(x), &set).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn discrete_projection_idempotent_and_member(ids in discrete_set(), a in 0usize..8) {
        let set = ActionSet::discrete(ids.iter().map(|&i| ActionId(i)));
        let once = project_action(ActionValue::Discrete(ActionId(a)), &set).unwrap();
        prop_assert!(set.contains(once));
        prop_assert_eq!(project_action(once, &set).unwrap(), once);
        if !ids.contains(&a) {
            prop_assert_eq!(once, ActionValue::Discrete(ActionId(ids[0])));
        }
    }

    #[test]
    fn hava_step_executes_rb_member(
        (lo, hi) in interval(),
        (dlo, dhi) in interval(),
        x in -300.0..300.0f64,
        w in 0.0..=1.0f64,
        tau in 0.1..10.0f64,
        alpha in 0.0..20.0f64,
    ) {
        let rb: Arc<dyn NormModel> = Arc::new(move |_: &EnvState| ActionSet::interval(lo, hi));
        let dd: Arc<dyn NormModel> = Arc::new(move |_: &EnvState| ActionSet::interval(dlo, dhi));
        let av = AlignmentValue::hybrid(rb, dd, tau, alpha).unwrap();
        let s = EnvState::new(vec![], false);
        let out = hava_step(&av, &s, Reputation::new(w).unwrap(), ActionValue::Continuous(x)).unwrap();
        let rb_set = ActionSet::interval(lo, hi).unwrap();
        prop_assert!(rb_set.contains(out.executed));
        prop_assert!(out.w_next.value() <= out.delta);
        prop_assert_eq!(out.delta, out.al_rb.min(out.al_dd));
        // damage follows the proposal, not the executed action
        prop_assert_eq!(out.d_rb, min_distance(ActionValue::Continuous(x), &rb_set).unwrap());
    }

    #[test]
    fn ablations_neutralise_missing_source(
        (lo, hi) in interval(),
        x in -300.0..300.0f64,
        w in 0.0..=1.0f64,
        alpha in 0.0..20.0f64,
    ) {
        let set: Arc<dyn NormModel> = Arc::new(move |_: &EnvState| ActionSet::interval(lo, hi));
        let s = EnvState::new(vec![], false);
        let w = Reputation::new(w).unwrap();
        let p = ActionValue::Continuous(x);

        let rb_only = hava_step(&AlignmentValue::rules_only(set.clone(), 1.0, alpha).unwrap(), &s, w, p).unwrap();
        prop_assert_eq!(rb_only.al_dd, 1.0);
        prop_assert_eq!(rb_only.delta, rb_only.al_rb);

        let dd_only = hava_step(&AlignmentValue::data_only(set, 1.0, alpha).unwrap(), &s, w, p).unwrap();
        prop_assert_eq!(dd_only.al_rb, 1.0);
        prop_assert_eq!(dd_only.executed, p);
        prop_assert_eq!(dd_only.delta, dd_only.al_dd);
    }
}

#[test]
fn recovery_non_increasing_in_alpha() {
    let grid = [0.1, 0.5, 1.0, 1.2, 1.6, 2.0, 4.0, 5.0, 10.0];
    let steps: Vec<usize> = grid.iter().map(|&a| recovery_steps(a).unwrap()).collect();
    assert!(steps.windows(2).all(|p| p[0] >= p[1]), "{steps:?}");
}

/// Moves from `start` that stay on path cells in the reference grid.
fn compliant_walk(world: &GridWorld, picks: &[u8]) -> Vec<Move> {
    let mut cell = world.start();
    let mut moves = Vec::new();
    for &p in picks {
        if cell == world.goal() {
            break;
        }
        let ok: Vec<Move> = world
            .rb_moves(cell)
            .into_iter()
            .filter(|m| world.dd_moves(cell).contains(m))
            .collect();
        let m = ok[p as usize % ok.len()];
        cell = world.successor(cell, m).unwrap();
        moves.push(m);
    }
    moves
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn compliant_grid_episode_keeps_full_reputation(picks in proptest::collection::vec(any::<u8>(), 1..40), alpha in 0.1..10.0f64) {
        let world = Arc::new(GridWorld::reference());
        let moves = compliant_walk(&world, &picks);
        let seq: Vec<ActionId> = moves.iter().map(|m| m.id()).collect();

        let mut plain = GridEnv::new(world.clone());
        let raw = rollout(&mut ActionSequence::new(seq.clone()), &mut plain, seq.len(), 0.99).unwrap();

        let av = grid_alignment(&world, alpha).unwrap();
        let mut wrapped = HavaEnv::new(GridEnv::new(world.clone()), av);
        let weighted = rollout(&mut ActionSequence::new(seq.clone()), &mut wrapped, seq.len(), 0.99).unwrap();

        prop_assert!(weighted.steps.iter().all(|s| s.reputation == 1.0));
        prop_assert_eq!(wrapped.augmented().reputation, 1.0);
        prop_assert_eq!(discounted_return(&weighted), discounted_return(&raw));
    }
}
