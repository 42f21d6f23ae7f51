//! Structural differences between two values, reported at the shallowest
//! location where they part ways.

use super::pointer::Pointer;
use super::value::Value;

#[derive(Clone, Debug, PartialEq)]
pub struct Change {
    pub path: Pointer,
    pub before: Option<Value>,
    pub after: Option<Value>,
}

/// Every location where `before` and `after` differ. Objects are compared
/// key by key and arrays index by index; elements present on only one side
/// are reported whole, as is any location whose type changed.
pub fn diff(before: &Value, after: &Value) -> Vec<Change> {
    let mut out = Vec::new();
    diff_into(before, after, Pointer::root(), &mut out);
    out
}

fn diff_into(before: &Value, after: &Value, at: Pointer, out: &mut Vec<Change>) {
    match (before, after) {
        (Value::Object(a), Value::Object(b)) => {
            for (key, av) in a {
                match b.get(key) {
                    Some(bv) => diff_into(av, bv, at.child(key.clone()), out),
                    None => out.push(Change { path: at.child(key.clone()), before: Some(av.clone()), after: None }),
                }
            }
            for (key, bv) in b {
                if !a.contains_key(key) {
                    out.push(Change { path: at.child(key.clone()), before: None, after: Some(bv.clone()) });
                }
            }
        }
        (Value::Array(a), Value::Array(b)) => {
            for i in 0..a.len().max(b.len()) {
                match (a.get(i), b.get(i)) {
                    (Some(av), Some(bv)) => diff_into(av, bv, at.index_child(i), out),
                    (av, bv) => out.push(Change { path: at.index_child(i), before: av.cloned(), after: bv.cloned() }),
                }
            }
        }
        (a, b) if a != b => out.push(Change { path: at, before: Some(a.clone()), after: Some(b.clone()) }),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value;

    fn paths(a: Value, b: Value) -> Vec<String> {
        diff(&a, &b).into_iter().map(|c| c.path.to_string()).collect()
    }

    #[test]
    fn equal_values_have_no_changes() {
        let v = value!({"a": [1, {"b": null}], "c": "x"});
        assert!(diff(&v, &v).is_empty());
    }

    #[test]
    fn reports_leaves_and_whole_new_elements() {
        assert_eq!(
            paths(value!({"a": {"x": 1, "y": 2}, "l": [1]}), value!({"a": {"x": 1, "y": 3, "z": 0}, "l": [1, {"k": 1}]})),
            ["/a/y", "/a/z", "/l/1"]
        );
        assert_eq!(paths(value!({"a": [1, 2]}), value!({"a": {"0": 1}})), ["/a"]);
        let removed = diff(&value!({"a": 1, "b": 2}), &value!({"b": 2}));
        assert_eq!(removed, [Change { path: Pointer::parse("/a").unwrap(), before: Some(value!(1)), after: None }]);
    }

    #[test]
    fn integer_and_float_forms_compare_equal() {
        assert!(diff(&value!({"n": 1}), &Value::parse(r#"{"n": 1.0}"#).unwrap()).is_empty());
    }
}
