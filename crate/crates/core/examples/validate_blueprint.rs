//! Validates the built-in blueprints, then a broken one, printing every
//! violation the validator finds.

use patchboard::harness::Scenario;
use patchboard::schema::validate_blueprint;
use patchboard::state::Value;

fn main() {
    for name in Scenario::BUILTIN_NAMES {
        let scenario = Scenario::builtin(name).expect("built-in scenario loads");
        match validate_blueprint(&scenario.blueprint) {
            Ok(bp) => println!("{name}: ok, {} workers, {} rules", bp.workers.len(), bp.rules.len()),
            Err(report) => println!("{name}: {}", report.summary()),
        }
    }

    let broken = Value::parse(
        r#"{
            "version": 1,
            "schema": {"type": "object", "properties": {"a": {"type": "integer"}}},
            "initial_state": {"a": "one"},
            "workers": [{"name": "w", "view_budget": 100, "read": [{"path": "/a"}], "write": [{"path": "/b", "ops": ["replace"]}]}],
            "rules": [{"trigger": {"path": "/a"}, "action": "ghost"}]
        }"#,
    )
    .unwrap();
    match validate_blueprint(&broken) {
        Ok(_) => println!("broken blueprint accepted?"),
        Err(report) => {
            println!("broken blueprint: {} violations", report.violations.len());
            for v in &report.violations {
                println!("  {v}");
            }
        }
    }
}
