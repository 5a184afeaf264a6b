mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcdst_core::corpus::Schema;
use tcdst_core::tracker::{
    evaluate_predictions, intent_accuracy, joint_goal_accuracy, slot_f1, update_state,
    DialogueState, SlotOutcome, TurnPrediction,
};
use tcdst_core::Error;

fn random_corpus(
    seed: u64,
    dialogues: usize,
) -> (Schema, Vec<(Vec<TurnPrediction>, Vec<TurnPrediction>)>) {
    let schema = Schema::travel();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = (0..dialogues)
        .map(|_| {
            let n = rng.random_range(1..6);
            let gold = common::random_dialogue(&schema, n, &mut rng);
            let pred = common::corrupt(&schema, &gold, &mut rng);
            (pred, gold)
        })
        .collect();
    (schema, pairs)
}

/// Marks `key` wrong from each turn in `turns` onward and removes every
/// later mention of it, so nothing can repair the damage.
fn corrupt_unrepaired(pred: &[TurnPrediction], key: &str, turns: &[usize]) -> Vec<TurnPrediction> {
    let first = turns.iter().copied().min();
    pred.iter()
        .enumerate()
        .map(|(t, turn)| {
            let mut turn = turn.clone();
            if turns.contains(&t) {
                turn.slots
                    .insert(key.to_string(), SlotOutcome::Value("corrupted".into()));
            } else if first.is_some_and(|f| t > f) {
                turn.slots.remove(key);
            }
            turn
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn joint_goal_matches_rebuild_oracle(seed: u64, dialogues in 0usize..6) {
        let (schema, pairs) = random_corpus(seed, dialogues);
        prop_assert_eq!(joint_goal_accuracy(&pairs, &schema).unwrap(), common::joint_goal(&pairs));
    }

    #[test]
    fn gold_against_itself_is_perfect(seed: u64, dialogues in 1usize..6) {
        let (schema, pairs) = random_corpus(seed, dialogues);
        let gold: Vec<_> = pairs.into_iter().map(|(_, g)| (g.clone(), g)).collect();
        prop_assert_eq!(joint_goal_accuracy(&gold, &schema).unwrap(), Some(1.0));
    }

    #[test]
    fn repeated_turn_is_idempotent(seed: u64) {
        let schema = Schema::travel();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = update_state(&DialogueState::new(), &common::random_turn(&schema, &mut rng), &schema).unwrap();
        let turn = common::random_turn(&schema, &mut rng);
        let once = update_state(&start, &turn, &schema).unwrap();
        let twice = update_state(&once, &turn, &schema).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn state_matches_rebuild_oracle(seed: u64, n in 1usize..8) {
        let schema = Schema::travel();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let turns = common::random_dialogue(&schema, n, &mut rng);
        let mut state = DialogueState::new();
        for t in 0..n {
            state = update_state(&state, &turns[t], &schema).unwrap();
            prop_assert_eq!(&state.0, &common::state_at(&turns, t));
        }
    }

    #[test]
    fn unrepaired_corruption_never_raises_joint_goal(seed: u64, dialogues in 1usize..5) {
        let (schema, pairs) = random_corpus(seed, dialogues);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let gold: Vec<_> = pairs.into_iter().map(|(_, g)| g).collect();
        let keys: Vec<String> = gold.iter().map(|_| schema.slots[rng.random_range(0..schema.slots.len())].key.clone()).collect();
        let mut order: Vec<(usize, usize)> = gold.iter().enumerate().flat_map(|(d, g)| (0..g.len()).map(move |t| (d, t))).collect();
        order.shuffle(&mut rng);
        let mut last = 1.0;
        for k in 0..=order.len() {
            let chosen = &order[..k];
            let scored: Vec<_> = gold
                .iter()
                .enumerate()
                .map(|(d, g)| {
                    let turns: Vec<usize> = chosen.iter().filter(|(cd, _)| *cd == d).map(|&(_, t)| t).collect();
                    (corrupt_unrepaired(g, &keys[d], &turns), g.clone())
                })
                .collect();
            let jg = joint_goal_accuracy(&scored, &schema).unwrap().unwrap();
            prop_assert!(jg <= last, "{} corrupted turns: {} > {}", k, jg, last);
            last = jg;
        }
        prop_assert_eq!(last, 0.0);
    }

    #[test]
    fn slot_f1_and_intent_accuracy_ignore_turn_order(seed: u64, n in 1usize..12) {
        let schema = Schema::travel();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gold = common::random_dialogue(&schema, n, &mut rng);
        let pred = common::corrupt(&schema, &gold, &mut rng);
        let pred_int: Vec<Option<String>> = gold.iter().map(|_| Some(schema.intents[rng.random_range(0..3)].clone())).collect();
        let gold_int: Vec<String> = gold.iter().map(|t| t.intent.clone().unwrap()).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let f1 = slot_f1(&pred, &gold).unwrap();
        let ia = intent_accuracy(&pred_int, &gold_int).unwrap();
        let pick = |xs: &[TurnPrediction]| perm.iter().map(|&i| xs[i].clone()).collect::<Vec<_>>();
        let pp: Vec<Option<String>> = perm.iter().map(|&i| pred_int[i].clone()).collect();
        let gp: Vec<String> = perm.iter().map(|&i| gold_int[i].clone()).collect();
        prop_assert_eq!(f1, slot_f1(&pick(&pred), &pick(&gold)).unwrap());
        prop_assert_eq!(ia, intent_accuracy(&pp, &gp).unwrap());
    }

    #[test]
    fn report_agrees_with_individual_metrics(seed: u64, dialogues in 1usize..5) {
        let (schema, pairs) = random_corpus(seed, dialogues);
        let report = evaluate_predictions(&pairs, &schema, false).unwrap();
        let pred: Vec<_> = pairs.iter().flat_map(|(p, _)| p.clone()).collect();
        let gold: Vec<_> = pairs.iter().flat_map(|(_, g)| g.clone()).collect();
        prop_assert_eq!(report.joint_goal, common::joint_goal(&pairs));
        prop_assert_eq!(report.slot_f1, Some(slot_f1(&pred, &gold).unwrap()));
        prop_assert_eq!(report.turn_count, gold.len());
        prop_assert!(report.intent_accuracy.is_none());
    }
}

#[test]
fn none_leaves_state_untouched_and_values_normalize() {
    let schema = Schema::toy();
    let s = update_state(
        &DialogueState::new(),
        &common::turn(&[("hotel-price", common::value(" Cheap "))]),
        &schema,
    )
    .unwrap();
    assert_eq!(s.get("hotel-price"), Some("cheap"));
    let s = update_state(
        &s,
        &common::turn(&[("hotel-price", SlotOutcome::None)]),
        &schema,
    )
    .unwrap();
    assert_eq!(s.get("hotel-price"), Some("cheap"));
    let s = update_state(
        &s,
        &common::turn(&[("hotel-price", SlotOutcome::Dontcare)]),
        &schema,
    )
    .unwrap();
    assert_eq!(s.get("hotel-price"), Some("dontcare"));
}

#[test]
fn replacement_rule() {
    let schema = Schema::travel();
    let s = update_state(
        &DialogueState::new(),
        &common::turn(&[("hotel-price", common::value("cheap"))]),
        &schema,
    )
    .unwrap();
    let s = update_state(
        &s,
        &common::turn(&[
            ("hotel-price", common::value("moderate")),
            ("hotel-area", common::value("north")),
        ]),
        &schema,
    )
    .unwrap();
    assert_eq!(s.0.len(), 2);
    assert_eq!(s.get("hotel-price"), Some("moderate"));
    assert_eq!(s.get("hotel-area"), Some("north"));
}

#[test]
fn unknown_key_and_misalignment_are_errors() {
    let schema = Schema::toy();
    let bad = common::turn(&[("taxi-dest", common::value("x"))]);
    assert!(matches!(
        update_state(&DialogueState::new(), &bad, &schema),
        Err(Error::Schema(_))
    ));
    let pairs = vec![(vec![TurnPrediction::default()], vec![])];
    assert!(matches!(
        joint_goal_accuracy(&pairs, &schema),
        Err(Error::Alignment(_))
    ));
    assert!(matches!(
        slot_f1(&[TurnPrediction::default()], &[]),
        Err(Error::Alignment(_))
    ));
}

#[test]
fn empty_corpus_has_no_metrics() {
    let report = evaluate_predictions(&[], &Schema::toy(), true).unwrap();
    assert_eq!(report.turn_count, 0);
    assert_eq!(report.joint_goal, None);
    assert_eq!(report.slot_f1, None);
    assert_eq!(report.intent_accuracy, Some(None));
    let json = serde_json::to_value(&report).unwrap();
    assert!(json["intent_accuracy"].is_null() && json.get("intent_accuracy").is_some());
}
