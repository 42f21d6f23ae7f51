//! Runs random blueprints against random workers and checks every committed
//! state against the blueprint's schema.
//!
//! `cargo run --release --example fuzz -- 200` runs 200 scenarios.

use patchboard::harness::{random_blueprint, worker_names, RandomWorker};
use patchboard::kernel::{committed_states, run_blueprint, WorkerRegistry};
use patchboard::schema::validate_blueprint;

fn main() {
    let scenarios: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(50);
    let (mut proposals, mut commits, mut violations) = (0u64, 0usize, 0usize);
    for seed in 0..scenarios {
        let doc = random_blueprint(seed);
        let bp = validate_blueprint(&doc).expect("generated blueprints are valid");
        let mut registry = WorkerRegistry::new();
        for (i, name) in worker_names(&doc).iter().enumerate() {
            registry.register(name, RandomWorker::new(seed * 1000 + i as u64));
        }
        let result = run_blueprint(&bp, None, &mut registry).unwrap();
        proposals += result.counters.invocations;
        let states = committed_states(&result.initial_state, &result.log).expect("log re-applies");
        commits += states.len();
        violations += states.iter().filter(|(_, s)| !bp.schema.validate(s).ok()).count();
    }
    println!("{scenarios} scenarios, {proposals} proposals, {commits} committed states, {violations} violations");
}
