//! Generators and reference oracles shared by the integration tests.

#![allow(dead_code)]

use patchboard::harness::{random_blueprint, worker_names, RandomWorker};
use patchboard::kernel::{run_blueprint, RunResult, WorkerRegistry};
use patchboard::schema::{validate_blueprint, Blueprint};
use patchboard::state::{canonical_string, escape_segment, Value};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const KEYS: &[&str] = &["a", "b", "c", "id", "x/y", "m~n", "", "0", "01"];

/// Random JSON with integer numbers only: the reference applier compares
/// numbers by representation, so `1` and `1.0` must not both appear.
pub fn random_value(rng: &mut ChaCha8Rng, depth: u32) -> Value {
    let top = if depth == 0 { 4 } else { 6 };
    match rng.gen_range(0..top) {
        0 => Value::Null,
        1 => Value::Bool(rng.gen()),
        2 => Value::int(rng.gen_range(-3..10)),
        3 => Value::string(["", "a", "b", "~", "/"][rng.gen_range(0..5)]),
        4 => Value::Array((0..rng.gen_range(0..4)).map(|_| random_value(rng, depth - 1)).collect()),
        _ => Value::Object(
            (0..rng.gen_range(0..4))
                .map(|_| (KEYS.choose(rng).unwrap().to_string(), random_value(rng, depth - 1)))
                .collect(),
        ),
    }
}

/// Every pointer into `v`, root included, as escaped text.
pub fn pointers(v: &Value, at: String, out: &mut Vec<String>) {
    out.push(at.clone());
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                pointers(child, format!("{at}/{}", escape_segment(k)), out);
            }
        }
        Value::Array(items) => {
            for (i, child) in items.iter().enumerate() {
                pointers(child, format!("{at}/{i}"), out);
            }
        }
        _ => {}
    }
}

fn random_path(rng: &mut ChaCha8Rng, state: &Value) -> String {
    let mut all = Vec::new();
    pointers(state, String::new(), &mut all);
    let base = all.choose(rng).unwrap().clone();
    match rng.gen_range(0..20) {
        0..=12 => base,
        13..=14 => format!("{base}/-"),
        15 => format!("{base}/{}", rng.gen_range(0..5)),
        16..=17 => format!("{base}/{}", escape_segment(KEYS.choose(rng).unwrap())),
        18 => format!("{base}/01"),
        _ => format!("{base}/missing/deeper"),
    }
}

/// A random patch document of add, replace, test and remove operations,
/// mostly aimed at locations that exist in `state`.
pub fn random_patch(rng: &mut ChaCha8Rng, state: &Value) -> Value {
    let mut scratch = state.clone();
    let mut ops = Vec::new();
    for _ in 0..rng.gen_range(1..=3) {
        let path = random_path(rng, &scratch);
        let kind = ["add", "replace", "test", "remove"][rng.gen_range(0..4)];
        let mut op = patchboard::state::Map::new();
        op.insert("op".into(), Value::string(kind));
        op.insert("path".into(), Value::string(path.clone()));
        if kind != "remove" {
            let current = serde_json::Value::from(&scratch).pointer(&path).cloned();
            let value = match (kind, current) {
                ("test", Some(v)) if rng.gen_bool(0.85) => Value::try_from(v).unwrap(),
                _ => random_value(rng, 2),
            };
            op.insert("value".into(), value);
        }
        let op = Value::Object(op);
        if let Some(next) = reference_apply(&scratch, &Value::Array(vec![op.clone()])) {
            scratch = next;
        }
        ops.push(op);
    }
    Value::Array(ops)
}

/// The `json-patch` crate's result, or `None` when it refuses the patch.
pub fn reference_apply(state: &Value, patch: &Value) -> Option<Value> {
    let ops: json_patch::Patch = serde_json::from_value(patch.to_json()).ok()?;
    let mut doc = state.to_json();
    json_patch::patch(&mut doc, &ops).ok()?;
    Some(Value::try_from(doc).expect("finite numbers"))
}

/// Blueprint, run result and worker seeds for fuzz scenario `seed`.
pub fn random_run(seed: u64) -> (Blueprint, RunResult) {
    let doc = random_blueprint(seed);
    let bp = validate_blueprint(&doc).expect("generated blueprints are valid");
    let mut registry = WorkerRegistry::new();
    for (i, name) in worker_names(&doc).iter().enumerate() {
        registry.register(name, RandomWorker::new(seed.wrapping_mul(1000).wrapping_add(i as u64)));
    }
    let result = run_blueprint(&bp, None, &mut registry).expect("initial state is valid");
    (bp, result)
}

/// Flips one byte inside the value of the last operation of the patch on
/// log line `line`, keeping the line parseable. Returns `None` when that
/// value has no byte that can be changed safely.
pub fn tamper_last_value(line: &str, last_op: &Value, rng: &mut ChaCha8Rng) -> Option<String> {
    let op_text = canonical_string(last_op);
    let value_text = canonical_string(last_op.get("value")?);
    let op_at = line.rfind(&op_text)?;
    let start = op_at + op_text.len() - 1 - value_text.len();
    let bytes = value_text.as_bytes();
    let mut candidates = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    let mut hex_left = 0;
    for (i, &b) in bytes.iter().enumerate() {
        if hex_left > 0 {
            hex_left -= 1;
        } else if in_string {
            if escaped {
                escaped = false;
                if b == b'u' {
                    hex_left = 4;
                }
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            } else if b.is_ascii_alphanumeric() {
                candidates.push(i);
            }
        } else if b == b'"' {
            in_string = true;
        } else if b.is_ascii_digit() {
            candidates.push(i);
        }
    }
    let &i = candidates.choose(rng)?;
    let replacement = match bytes[i] {
        b'0'..=b'8' => bytes[i] + 1,
        b'9' => b'1',
        b'z' | b'Z' => bytes[i] - 1,
        other => other + 1,
    };
    let mut out = line.as_bytes().to_vec();
    out[start + i] = replacement;
    Some(String::from_utf8(out).expect("ASCII substitution"))
}
