//! Records a run as NDJSON, replays it, then flips one byte of a logged
//! value and replays again.

use patchboard::harness::Scenario;
use patchboard::kernel::{read_log, render_log, replay, run_blueprint};
use patchboard::schema::validate_blueprint;

fn main() {
    let scenario = Scenario::builtin("claims").unwrap();
    let bp = validate_blueprint(&scenario.blueprint).unwrap();
    let mut registry = scenario.registry(0).unwrap();
    let result = run_blueprint(&bp, scenario.request.as_ref(), &mut registry).unwrap();
    let text = render_log(&result.log);
    println!("recorded {} transactions, {} bytes", result.log.len(), text.len());

    let recorded = read_log(text.as_bytes()).unwrap();
    let report = replay(&bp, result.initial_state.clone(), &recorded);
    println!("clean replay: {} divergences", report.divergences.len());

    let tampered = text.replacen("Paris", "Parys", 1);
    let recorded = read_log(tampered.as_bytes()).unwrap();
    let report = replay(&bp, result.initial_state.clone(), &recorded);
    println!("tampered replay: {} divergences", report.divergences.len());
    if let Some(first) = report.divergences.first() {
        println!("  first: {first}");
    }
}
