mod common;

use patchboard::harness::random_blueprint;
use patchboard::kernel::{committed_states, render_log, replay, Counters};
use patchboard::state::diff;
use proptest::prelude::*;
use serde_json::Value as Json;

/// Checks one invariant transition straight from the blueprint text.
fn invariant_holds(rule: &Json, before: &Json, after: &Json) -> bool {
    let path = rule["path"].as_str().unwrap();
    let (b, a) = (before.pointer(path), after.pointer(path));
    match rule["predicate"]["kind"].as_str().unwrap() {
        "non_decreasing_number" => match (b.and_then(Json::as_f64), a) {
            (Some(b), Some(a)) => a.as_f64().is_some_and(|a| a >= b),
            (Some(_), None) => false,
            _ => true,
        },
        "append_only_array" => match (b.and_then(Json::as_array), a) {
            (Some(b), Some(a)) => a.as_array().is_some_and(|a| a.len() >= b.len() && a[..b.len()] == b[..]),
            (Some(_), None) => false,
            _ => true,
        },
        "immutable_once_set" => match b {
            Some(b) if !b.is_null() => a == Some(b),
            _ => true,
        },
        "enum_transition" => match (b, a) {
            (Some(b), Some(a)) if a != b => rule["predicate"]["allowed"]
                .as_array()
                .unwrap()
                .iter()
                .any(|pair| pair[0] == *b && pair[1] == *a),
            _ => true,
        },
        other => panic!("unexpected predicate {other}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn committed_states_satisfy_schema_and_invariants(seed in 0u64..100_000) {
        let (bp, result) = common::random_run(seed);
        let doc = random_blueprint(seed).to_json();
        let states = committed_states(&result.initial_state, &result.log).unwrap();
        let mut prev = result.initial_state.to_json();
        for (seq, state) in &states {
            let report = bp.schema.validate(state);
            prop_assert!(report.ok(), "seed {} seq {}: {}", seed, seq, report.summary());
            let next = state.to_json();
            for rule in doc["invariants"].as_array().unwrap() {
                prop_assert!(invariant_holds(rule, &prev, &next), "seed {} seq {} broke {}", seed, seq, rule["name"]);
            }
            prev = next;
        }
    }

    #[test]
    fn every_change_is_covered_by_the_writer(seed in 0u64..100_000) {
        let (bp, result) = common::random_run(seed);
        let states = committed_states(&result.initial_state, &result.log).unwrap();
        let mut prev = result.initial_state.clone();
        for (seq, state) in states.into_iter().skip(1) {
            let txn = result.log.iter().find(|t| t.seq == seq).unwrap();
            if txn.worker != "kernel" {
                let spec = bp.workers.iter().find(|w| w.name == txn.worker).unwrap();
                for change in diff(&prev, &state) {
                    prop_assert!(spec.write.attributes(&change.path), "seed {} seq {}: {} wrote {}", seed, seq, txn.worker, change.path);
                }
            }
            prev = state;
        }
    }

    #[test]
    fn runs_replay_exactly_and_repeat_exactly(seed in 0u64..100_000) {
        let (bp, result) = common::random_run(seed);
        let report = replay(&bp, result.initial_state.clone(), &result.log);
        prop_assert!(report.ok(), "seed {}: {:?}", seed, report.divergences.first());
        prop_assert!(!report.truncated);
        prop_assert_eq!(report.final_hash(), result.final_hash());
        let (_, again) = common::random_run(seed);
        prop_assert_eq!(render_log(&again.log), render_log(&result.log));
    }

    #[test]
    fn every_invocation_is_logged(seed in 0u64..100_000) {
        let (_, result) = common::random_run(seed);
        let from_log = Counters::from_log(&result.log);
        prop_assert_eq!(&from_log, &result.counters);
        let workers = result.log.iter().filter(|t| t.worker != "kernel").count() as u64;
        prop_assert_eq!(workers, result.counters.invocations);
        let seqs: Vec<u64> = result.log.iter().map(|t| t.seq).collect();
        prop_assert_eq!(seqs, (1..=result.log.len() as u64).collect::<Vec<_>>());
        prop_assert_eq!(result.halt_reason.is_some(), result.log.last().is_some_and(|t| t.worker == "kernel"));
        let halted_at = result.final_state.get("runtime").and_then(|r| r.get("halt_reason")).cloned();
        prop_assert_eq!(halted_at.is_some(), result.halt_reason.is_some());
    }
}
