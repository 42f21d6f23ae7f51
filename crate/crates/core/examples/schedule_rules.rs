//! Turns a patch into change events and shows which workflow rules fire.

use patchboard::scheduler::{extract_events, schedule, Condition, WorkflowRule};
use patchboard::state::{apply_patch, OpKind, Patch, Value};

fn main() {
    let rules = vec![
        WorkflowRule::new("/claims/-", "verifier").with_op(OpKind::Add),
        WorkflowRule::new("/claims/*/status", "synthesizer")
            .with_condition(Condition::equals(".", Value::string("verified")).unwrap()),
        WorkflowRule::new("/answer", "auditor").with_condition(Condition::not_equals("/answer", Value::Null).unwrap()),
    ];

    let state = Value::parse(r#"{"claims": [{"status": "draft"}], "answer": null}"#).unwrap();
    let patch = Patch::parse(
        r#"[
            {"op": "replace", "path": "/claims/0/status", "value": "verified"},
            {"op": "add", "path": "/claims/-", "value": {"status": "draft"}}
        ]"#,
    )
    .unwrap();
    let next = apply_patch(&state, &patch).unwrap();

    let mut seq = 1;
    let events = extract_events(&state, &patch, "extractor", &mut seq);
    for e in &events {
        println!("event {e}");
    }
    for inv in schedule(&events, &rules, &next) {
        println!("  -> {} (on {})", inv.worker, inv.event.path);
    }
}
