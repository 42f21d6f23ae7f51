mod common;

use patchboard::state::{apply_patch, canonical_string, hash_state, Patch, Pointer, Value};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ours(state: &Value, doc: &Value) -> Option<Value> {
    let patch = Patch::from_value(doc).ok()?;
    apply_patch(state, &patch).ok()
}

#[test]
fn agrees_with_reference_applier_on_seeded_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(6902);
    let (mut applied, mut refused) = (0, 0);
    for i in 0..3000 {
        let state = common::random_value(&mut rng, 3);
        let patch = common::random_patch(&mut rng, &state);
        let expected = common::reference_apply(&state, &patch);
        assert_eq!(
            ours(&state, &patch),
            expected,
            "pair {i}\nstate {}\npatch {}",
            canonical_string(&state),
            canonical_string(&patch)
        );
        if expected.is_some() {
            applied += 1;
        } else {
            refused += 1;
        }
    }
    assert!(applied > 500 && refused > 500, "{applied} applied, {refused} refused");
}

#[test]
fn rfc_appendix_examples() {
    let cases = [
        (r#"{"foo": "bar"}"#, r#"[{"op": "add", "path": "/baz", "value": "qux"}]"#, Some(r#"{"baz": "qux", "foo": "bar"}"#)),
        (r#"{"foo": ["bar", "baz"]}"#, r#"[{"op": "add", "path": "/foo/1", "value": "qux"}]"#, Some(r#"{"foo": ["bar", "qux", "baz"]}"#)),
        (r#"{"baz": "qux", "foo": "bar"}"#, r#"[{"op": "remove", "path": "/baz"}]"#, Some(r#"{"foo": "bar"}"#)),
        (r#"{"foo": ["bar", "qux", "baz"]}"#, r#"[{"op": "remove", "path": "/foo/1"}]"#, Some(r#"{"foo": ["bar", "baz"]}"#)),
        (r#"{"baz": "qux", "foo": "bar"}"#, r#"[{"op": "replace", "path": "/baz", "value": "boo"}]"#, Some(r#"{"baz": "boo", "foo": "bar"}"#)),
        (
            r#"{"baz": "qux", "foo": ["a", 2, "c"]}"#,
            r#"[{"op": "test", "path": "/baz", "value": "qux"}, {"op": "test", "path": "/foo/1", "value": 2}]"#,
            Some(r#"{"baz": "qux", "foo": ["a", 2, "c"]}"#),
        ),
        (r#"{"baz": "qux"}"#, r#"[{"op": "test", "path": "/baz", "value": "bar"}]"#, None),
        (r#"{"foo": "bar"}"#, r#"[{"op": "add", "path": "/child", "value": {"grandchild": {}}}]"#, Some(r#"{"child": {"grandchild": {}}, "foo": "bar"}"#)),
        (r#"{"foo": "bar"}"#, r#"[{"op": "add", "path": "/baz/bat", "value": "qux"}]"#, None),
        (r#"{"/": 9, "~1": 10}"#, r#"[{"op": "test", "path": "/~01", "value": 10}]"#, Some(r#"{"/": 9, "~1": 10}"#)),
        (r#"{"foo": ["bar"]}"#, r#"[{"op": "add", "path": "/foo/-", "value": ["abc", "def"]}]"#, Some(r#"{"foo": ["bar", ["abc", "def"]]}"#)),
    ];
    for (state, patch, expected) in cases {
        let state = Value::parse(state).unwrap();
        let patch = Value::parse(patch).unwrap();
        assert_eq!(ours(&state, &patch), expected.map(|e| Value::parse(e).unwrap()), "{}", canonical_string(&patch));
    }
}

fn arb_value() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        (-50i64..50).prop_map(Value::int),
        "[a-c~/]{0,3}".prop_map(Value::string),
    ];
    leaf.prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(Value::Array),
            prop::collection::btree_map("[a-c~/]{0,2}", inner, 0..4).prop_map(Value::Object),
        ]
    })
}

proptest! {
    #[test]
    fn failed_patches_leave_the_input_alone(state in arb_value(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let doc = common::random_patch(&mut rng, &state);
        let before = canonical_string(&state);
        if let Ok(patch) = Patch::from_value(&doc) {
            let _ = apply_patch(&state, &patch);
        }
        prop_assert_eq!(canonical_string(&state), before);
    }

    #[test]
    fn replace_then_test_round_trips(state in arb_value(), value in arb_value(), seed in any::<u64>()) {
        let mut all = Vec::new();
        common::pointers(&state, String::new(), &mut all);
        let path = all[(seed as usize) % all.len()].clone();
        let pointer = Pointer::parse(&path).unwrap();
        let patch = Patch::new(vec![
            patchboard::state::PatchOperation::replace(pointer.clone(), value.clone()),
            patchboard::state::PatchOperation::test(pointer, value.clone()),
        ]);
        let next = apply_patch(&state, &patch).unwrap();
        prop_assert_eq!(serde_json::Value::from(&next).pointer(&path).cloned(), Some(value.to_json()));
    }

    #[test]
    fn hashing_ignores_key_order_and_whitespace(state in arb_value()) {
        let pretty = serde_json::to_string_pretty(&state.to_json()).unwrap();
        let reparsed = Value::parse(&pretty).unwrap();
        prop_assert_eq!(hash_state(&reparsed), hash_state(&state));
        prop_assert_eq!(Value::parse(&canonical_string(&state)).unwrap(), state);
    }
}
