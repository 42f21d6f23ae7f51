//! Runs the household scenario and prints the action trace, including the
//! placement the verifier turns down and the repaired retry.

use patchboard::harness::Scenario;
use patchboard::kernel::{run, Outcome};

fn main() {
    let scenario = Scenario::builtin("clean_and_place").unwrap();
    let mut registry = scenario.registry(0).unwrap();
    let result = run(&scenario.blueprint, scenario.request.as_ref(), &mut registry).expect("blueprint is valid");

    for txn in &result.log {
        let status = match &txn.outcome {
            Outcome::Accepted { .. } => "accepted".to_owned(),
            Outcome::Rejected { stage, reason } => format!("rejected at {}: {reason}", stage.as_str()),
        };
        println!("{:>3} {:<9} on {:<22} {status}", txn.seq, txn.worker, txn.event.path.to_string());
    }
    let actions = result.final_state.get("actions").and_then(|a| a.as_array()).cloned().unwrap_or_default();
    for a in actions {
        println!(
            "  {} [{}]",
            a.get("cmd").and_then(|c| c.as_str()).unwrap_or("?"),
            a.get("status").and_then(|c| c.as_str()).unwrap_or("?")
        );
    }
    let done = result.final_state.get("env").and_then(|e| e.get("done")).and_then(|d| d.as_bool());
    println!("done: {:?}, halt: {:?}", done, result.halt_reason);
}
