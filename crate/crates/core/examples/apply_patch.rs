//! Applies an RFC 6902 patch to a document and prints the canonical form and
//! hash before and after. A failing `test` leaves the document untouched.

use patchboard::state::{apply_patch, canonical_string, hash_state, Patch, Value};

fn main() {
    let state = Value::parse(r#"{"task": {"status": "planning"}, "notes": []}"#).expect("valid JSON");
    println!("before {} {}", hash_state(&state).to_hex(), canonical_string(&state));

    let patch = Patch::parse(
        r#"[
            {"op": "test", "path": "/task/status", "value": "planning"},
            {"op": "replace", "path": "/task/status", "value": "acting"},
            {"op": "add", "path": "/notes/-", "value": "started"}
        ]"#,
    )
    .expect("valid patch");
    let next = apply_patch(&state, &patch).expect("patch applies");
    println!("after  {} {}", hash_state(&next).to_hex(), canonical_string(&next));

    let stale = Patch::parse(r#"[{"op": "test", "path": "/task/status", "value": "planning"}]"#).unwrap();
    match apply_patch(&next, &stale) {
        Ok(_) => println!("stale test unexpectedly passed"),
        Err(e) => println!("stale test refused: {e}"),
    }
}
