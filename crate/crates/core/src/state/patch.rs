//! The restricted JSON Patch subset: `add`, `replace`, `test`, `remove`.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::pointer::{parse_index, Pointer, PointerError, APPEND};
use super::value::{Map, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Add,
    Replace,
    Test,
    Remove,
}

impl OpKind {
    pub const ALL: [OpKind; 4] = [OpKind::Add, OpKind::Replace, OpKind::Test, OpKind::Remove];

    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Replace => "replace",
            OpKind::Test => "test",
            OpKind::Remove => "remove",
        }
    }

    pub fn parse(name: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|k| k.as_str() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One operation. `value` is `None` exactly for `Remove`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchOperation {
    kind: OpKind,
    path: Pointer,
    value: Option<Value>,
}

impl PatchOperation {
    pub fn add(path: Pointer, value: Value) -> Self {
        PatchOperation { kind: OpKind::Add, path, value: Some(value) }
    }

    pub fn replace(path: Pointer, value: Value) -> Self {
        PatchOperation { kind: OpKind::Replace, path, value: Some(value) }
    }

    pub fn test(path: Pointer, value: Value) -> Self {
        PatchOperation { kind: OpKind::Test, path, value: Some(value) }
    }

    pub fn remove(path: Pointer) -> Self {
        PatchOperation { kind: OpKind::Remove, path, value: None }
    }

    pub fn kind(&self) -> OpKind {
        self.kind
    }

    pub fn path(&self) -> &Pointer {
        &self.path
    }

    pub fn value(&self) -> Option<&Value> {
        self.value.as_ref()
    }

    pub fn to_value(&self) -> Value {
        let mut map = Map::new();
        map.insert("op".into(), Value::string(self.kind.as_str()));
        map.insert("path".into(), Value::String(self.path.to_string()));
        if let Some(v) = &self.value {
            map.insert("value".into(), v.clone());
        }
        Value::Object(map)
    }
}

/// Ordered list of operations proposed by one worker invocation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Patch(pub Vec<PatchOperation>);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PatchSyntaxError {
    #[error("patch must be a JSON array of operations, got {0}")]
    NotAnArray(&'static str),
    #[error("operation {0} is not an object")]
    NotAnObject(usize),
    #[error("operation {0} has no string \"op\" member")]
    MissingOp(usize),
    #[error("operation {index}: unsupported op {op:?}")]
    UnsupportedOp { index: usize, op: String },
    #[error("operation {0} has no string \"path\" member")]
    MissingPath(usize),
    #[error("operation {index}: {source}")]
    BadPath { index: usize, source: PointerError },
    #[error("operation {0} requires a \"value\" member")]
    MissingValue(usize),
    #[error("operation {0}: remove must not carry a value")]
    UnexpectedValue(usize),
}

impl Patch {
    pub fn new(ops: Vec<PatchOperation>) -> Self {
        Patch(ops)
    }

    pub fn ops(&self) -> &[PatchOperation] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Decodes an RFC 6902 operation array. `move` and `copy` are refused.
    pub fn from_value(doc: &Value) -> Result<Patch, PatchSyntaxError> {
        let items = doc
            .as_array()
            .ok_or(PatchSyntaxError::NotAnArray(doc.type_name()))?;
        items
            .iter()
            .enumerate()
            .map(|(index, item)| {
                let obj = item.as_object().ok_or(PatchSyntaxError::NotAnObject(index))?;
                let op = obj
                    .get("op")
                    .and_then(Value::as_str)
                    .ok_or(PatchSyntaxError::MissingOp(index))?;
                let kind = OpKind::parse(op).ok_or_else(|| PatchSyntaxError::UnsupportedOp {
                    index,
                    op: op.to_owned(),
                })?;
                let path = obj
                    .get("path")
                    .and_then(Value::as_str)
                    .ok_or(PatchSyntaxError::MissingPath(index))?;
                let path = Pointer::parse(path)
                    .map_err(|source| PatchSyntaxError::BadPath { index, source })?;
                let value = obj.get("value").cloned();
                match (kind, value) {
                    (OpKind::Remove, None) => Ok(PatchOperation::remove(path)),
                    (OpKind::Remove, Some(_)) => Err(PatchSyntaxError::UnexpectedValue(index)),
                    (_, None) => Err(PatchSyntaxError::MissingValue(index)),
                    (kind, Some(value)) => Ok(PatchOperation { kind, path, value: Some(value) }),
                }
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Patch)
    }

    pub fn parse(text: &str) -> Result<Patch, PatchDecodeError> {
        let doc = Value::parse(text).map_err(|e| PatchDecodeError::Json(e.to_string()))?;
        Ok(Patch::from_value(&doc)?)
    }

    pub fn to_value(&self) -> Value {
        Value::Array(self.0.iter().map(PatchOperation::to_value).collect())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PatchDecodeError {
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error(transparent)]
    Syntax(#[from] PatchSyntaxError),
}

impl FromIterator<PatchOperation> for Patch {
    fn from_iter<T: IntoIterator<Item = PatchOperation>>(iter: T) -> Self {
        Patch(iter.into_iter().collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ApplyCause {
    PathMissing,
    ParentMissing,
    TestMismatch,
    TypeMismatch,
    IndexOutOfRange,
}

/// Failed patch application, naming the first failing operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("operation {index} failed: {cause:?}")]
pub struct ApplyFailure {
    pub index: usize,
    pub cause: ApplyCause,
}

/// Applies `patch` to a copy of `state`, operation by operation. The input
/// is never mutated; any failing operation discards the whole copy.
pub fn apply_patch(state: &Value, patch: &Patch) -> Result<Value, ApplyFailure> {
    let mut doc = state.clone();
    for (index, op) in patch.ops().iter().enumerate() {
        apply_op(&mut doc, op).map_err(|cause| ApplyFailure { index, cause })?;
    }
    Ok(doc)
}

/// Applies a single operation in place. Exposed for callers that need the
/// intermediate states (event extraction, diffing).
pub(crate) fn apply_op(doc: &mut Value, op: &PatchOperation) -> Result<(), ApplyCause> {
    let value = op.value.as_ref();
    match op.kind {
        OpKind::Test => {
            let target = lookup(doc, &op.path)?;
            if Some(target) == value {
                Ok(())
            } else {
                Err(ApplyCause::TestMismatch)
            }
        }
        OpKind::Replace => {
            let slot = lookup_mut(doc, &op.path)?;
            *slot = value.cloned().unwrap_or_default();
            Ok(())
        }
        OpKind::Add => {
            let value = value.cloned().unwrap_or_default();
            let Some((parent, last)) = split(&op.path) else {
                *doc = value;
                return Ok(());
            };
            match container_mut(doc, parent)? {
                Value::Object(map) => {
                    map.insert(last.to_owned(), value);
                    Ok(())
                }
                Value::Array(items) => {
                    if last == APPEND {
                        items.push(value);
                        return Ok(());
                    }
                    let idx = parse_index(last).ok_or(ApplyCause::TypeMismatch)?;
                    if idx > items.len() {
                        return Err(ApplyCause::IndexOutOfRange);
                    }
                    items.insert(idx, value);
                    Ok(())
                }
                _ => Err(ApplyCause::TypeMismatch),
            }
        }
        OpKind::Remove => {
            let Some((parent, last)) = split(&op.path) else {
                // Removing the whole document leaves nothing to address.
                return Err(ApplyCause::PathMissing);
            };
            match container_mut(doc, parent)? {
                Value::Object(map) => map.remove(last).map(drop).ok_or(ApplyCause::PathMissing),
                Value::Array(items) => {
                    let idx = array_index(last)?;
                    if idx >= items.len() {
                        return Err(ApplyCause::IndexOutOfRange);
                    }
                    items.remove(idx);
                    Ok(())
                }
                _ => Err(ApplyCause::TypeMismatch),
            }
        }
    }
}

fn split(path: &Pointer) -> Option<(&[String], &str)> {
    let segments = path.segments();
    let (last, parent) = segments.split_last()?;
    Some((parent, last.as_str()))
}

fn array_index(token: &str) -> Result<usize, ApplyCause> {
    if token == APPEND {
        return Err(ApplyCause::PathMissing);
    }
    parse_index(token).ok_or(ApplyCause::TypeMismatch)
}

/// Walks to the container at `segments`. Missing intermediates are
/// `ParentMissing`; walking through a scalar is `TypeMismatch`.
fn container_mut<'v>(doc: &'v mut Value, segments: &[String]) -> Result<&'v mut Value, ApplyCause> {
    let mut current = doc;
    for segment in segments {
        current = match current {
            Value::Object(map) => map.get_mut(segment).ok_or(ApplyCause::ParentMissing)?,
            Value::Array(items) => {
                let idx = parse_index(segment).ok_or(ApplyCause::ParentMissing)?;
                items.get_mut(idx).ok_or(ApplyCause::ParentMissing)?
            }
            _ => return Err(ApplyCause::TypeMismatch),
        };
    }
    Ok(current)
}

fn lookup_mut<'v>(doc: &'v mut Value, path: &Pointer) -> Result<&'v mut Value, ApplyCause> {
    let Some((parent, last)) = split(path) else {
        return Ok(doc);
    };
    match container_mut(doc, parent)? {
        Value::Object(map) => map.get_mut(last).ok_or(ApplyCause::PathMissing),
        Value::Array(items) => {
            let idx = array_index(last)?;
            let len = items.len();
            items.get_mut(idx).ok_or(if idx >= len {
                ApplyCause::IndexOutOfRange
            } else {
                ApplyCause::PathMissing
            })
        }
        _ => Err(ApplyCause::TypeMismatch),
    }
}

fn lookup<'v>(doc: &'v mut Value, path: &Pointer) -> Result<&'v Value, ApplyCause> {
    lookup_mut(doc, path).map(|v| &*v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::hash_state;
    use crate::value;

    fn ptr(s: &str) -> Pointer {
        Pointer::parse(s).unwrap()
    }

    #[test]
    fn append_to_empty_array() {
        let state = value!({"xs": []});
        let patch = Patch::new(vec![PatchOperation::add(ptr("/xs/-"), Value::int(5))]);
        assert_eq!(apply_patch(&state, &patch).unwrap(), value!({"xs": [5]}));
    }

    #[test]
    fn failed_test_blocks_later_ops() {
        let state = value!({"a": 1});
        let patch = Patch::new(vec![
            PatchOperation::test(ptr("/a"), Value::int(2)),
            PatchOperation::replace(ptr("/a"), Value::int(3)),
        ]);
        assert_eq!(
            apply_patch(&state, &patch),
            Err(ApplyFailure { index: 0, cause: ApplyCause::TestMismatch })
        );
    }

    #[test]
    fn replaces_nested_status() {
        // Cross-checked against the json-patch crate in tests/rfc6902.rs.
        let state = value!({"claims": [{"status": "draft"}]});
        let patch = Patch::new(vec![PatchOperation::replace(
            ptr("/claims/0/status"),
            Value::string("verified"),
        )]);
        assert_eq!(
            apply_patch(&state, &patch).unwrap(),
            value!({"claims": [{"status": "verified"}]})
        );
    }

    #[test]
    fn input_is_untouched_on_success_and_failure() {
        let state = value!({"a": {"b": [1, 2]}});
        let before = hash_state(&state);
        let ok = Patch::new(vec![PatchOperation::add(ptr("/a/b/0"), Value::int(0))]);
        let bad = Patch::new(vec![
            PatchOperation::add(ptr("/a/c"), Value::int(1)),
            PatchOperation::remove(ptr("/zzz")),
        ]);
        apply_patch(&state, &ok).unwrap();
        apply_patch(&state, &bad).unwrap_err();
        assert_eq!(hash_state(&state), before);
    }

    #[test]
    fn failure_causes() {
        let state = value!({"a": 1, "xs": [1]});
        let cases = [
            (PatchOperation::replace(ptr("/missing"), Value::Null), ApplyCause::PathMissing),
            (PatchOperation::add(ptr("/no/such"), Value::Null), ApplyCause::ParentMissing),
            (PatchOperation::add(ptr("/a/b"), Value::Null), ApplyCause::TypeMismatch),
            (PatchOperation::add(ptr("/xs/5"), Value::Null), ApplyCause::IndexOutOfRange),
            (PatchOperation::remove(ptr("/xs/1")), ApplyCause::IndexOutOfRange),
            (PatchOperation::replace(ptr("/xs/-"), Value::Null), ApplyCause::PathMissing),
            (PatchOperation::add(ptr("/xs/x"), Value::Null), ApplyCause::TypeMismatch),
            (PatchOperation::remove(ptr("")), ApplyCause::PathMissing),
        ];
        for (op, cause) in cases {
            let err = apply_patch(&state, &Patch::new(vec![op.clone()])).unwrap_err();
            assert_eq!(err.cause, cause, "{op:?}");
        }
    }

    #[test]
    fn duplicate_paths_apply_sequentially() {
        let state = value!({"a": 0});
        let patch = Patch::new(vec![
            PatchOperation::replace(ptr("/a"), Value::int(1)),
            PatchOperation::test(ptr("/a"), Value::int(1)),
            PatchOperation::replace(ptr("/a"), Value::int(2)),
        ]);
        assert_eq!(apply_patch(&state, &patch).unwrap(), value!({"a": 2}));
    }

    #[test]
    fn decodes_and_refuses_move_copy() {
        let p = Patch::parse(r#"[{"op":"add","path":"/a","value":1},{"op":"remove","path":"/b"}]"#)
            .unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(Patch::from_value(&p.to_value()).unwrap(), p);
        let err = Patch::parse(r#"[{"op":"move","from":"/a","path":"/b"}]"#).unwrap_err();
        assert!(matches!(
            err,
            PatchDecodeError::Syntax(PatchSyntaxError::UnsupportedOp { index: 0, .. })
        ));
        assert!(matches!(
            Patch::parse(r#"[{"op":"remove","path":"/b","value":1}]"#),
            Err(PatchDecodeError::Syntax(PatchSyntaxError::UnexpectedValue(0)))
        ));
        assert!(matches!(
            Patch::parse(r#"[{"op":"add","path":"/b"}]"#),
            Err(PatchDecodeError::Syntax(PatchSyntaxError::MissingValue(0)))
        ));
        assert!(matches!(Patch::parse("[{"), Err(PatchDecodeError::Json(_))));
    }
}
