//! Builds the extractor's view of a claims state at shrinking budgets and
//! shows how fields turn into handles as space runs out.

use patchboard::harness::Scenario;
use patchboard::scheduler::Event;
use patchboard::schema::validate_blueprint;
use patchboard::state::{OpKind, Pointer, Value};
use patchboard::views::{slice, SliceRequest, WriteHistory};

fn main() {
    let scenario = Scenario::builtin("claims").unwrap();
    let bp = validate_blueprint(&scenario.blueprint).unwrap();
    let mut state = bp.initial_state_for(scenario.request.as_ref()).unwrap();
    if let Value::Object(map) = &mut state {
        let sources = (1..=6)
            .map(|i| {
                Value::parse(&format!(r#"{{"id": "s{i}", "subject": "subject {i}", "fact": "a fairly long fact number {i}"}}"#))
                    .unwrap()
            })
            .collect();
        map.insert("sources".into(), Value::Array(sources));
    }
    let worker = bp.workers.iter().find(|w| w.name == "extractor").unwrap();
    let event = Event { seq: 1, source: "collector".into(), path: Pointer::parse("/sources/5").unwrap(), op: OpKind::Add };
    let history = WriteHistory::default();

    for budget in [4000, 900, 600, 400, 200] {
        let req = SliceRequest {
            state: &state,
            worker,
            budget,
            schema: &bp.schema,
            active: &bp.active_paths,
            event: &event,
            log_tail: &[],
            history: &history,
            expansions: &[],
        };
        match slice(&req) {
            Ok(view) => println!(
                "budget {budget:>4}: used {:>4}, {} handles, sources shown in full: {}",
                view.budget_used,
                view.handles.len(),
                view.field(&Pointer::parse("/sources").unwrap()).and_then(Value::as_array).map_or(0, |a| a
                    .iter()
                    .filter(|s| s.get("fact").is_some())
                    .count())
            ),
            Err(e) => println!("budget {budget:>4}: {e}"),
        }
    }
}
