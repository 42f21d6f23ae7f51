//! State-transition invariants registered by a blueprint.
//!
//! Predicates come from a closed vocabulary so blueprints stay data.

use std::collections::BTreeSet;

use crate::contracts::PathPattern;
use crate::state::{resolve_pointer, Patch, Pointer, Value, APPEND};

use super::validate::{SchemaNode, ValidationReport};

#[derive(Clone, Debug, PartialEq)]
pub enum Predicate {
    /// A number present before and after may not decrease.
    NonDecreasingNumber,
    /// Once non-null, the value may not change or disappear.
    ImmutableOnceSet,
    /// Changes of an existing value must follow one of the listed pairs.
    EnumTransition { allowed: Vec<(Value, Value)> },
    /// The previous array must be a prefix of the next one.
    AppendOnlyArray,
    /// In each scoped object, `field` must be present whenever `sibling`
    /// equals `sibling_value`.
    RequiredWhenSibling { field: String, sibling: String, sibling_value: Value },
}

impl Predicate {
    pub fn kind(&self) -> &'static str {
        match self {
            Predicate::NonDecreasingNumber => "non_decreasing_number",
            Predicate::ImmutableOnceSet => "immutable_once_set",
            Predicate::EnumTransition { .. } => "enum_transition",
            Predicate::AppendOnlyArray => "append_only_array",
            Predicate::RequiredWhenSibling { .. } => "required_when_sibling",
        }
    }

    /// Parses the blueprint encoding `{"kind": ..., <params>}`.
    pub fn from_value(doc: &Value) -> Result<Predicate, String> {
        let kind = doc.get("kind").and_then(Value::as_str).ok_or("predicate needs a \"kind\"")?;
        Ok(match kind {
            "non_decreasing_number" => Predicate::NonDecreasingNumber,
            "immutable_once_set" => Predicate::ImmutableOnceSet,
            "append_only_array" => Predicate::AppendOnlyArray,
            "enum_transition" => {
                let pairs = doc
                    .get("allowed")
                    .and_then(Value::as_array)
                    .ok_or("enum_transition needs an \"allowed\" list")?;
                let allowed = pairs
                    .iter()
                    .map(|p| match p.as_array().map(Vec::as_slice) {
                        Some([from, to]) => Ok((from.clone(), to.clone())),
                        _ => Err("each allowed transition is a [from, to] pair".to_owned()),
                    })
                    .collect::<Result<_, _>>()?;
                Predicate::EnumTransition { allowed }
            }
            "required_when_sibling" => {
                let text = |k: &str| {
                    doc.get(k)
                        .and_then(Value::as_str)
                        .map(str::to_owned)
                        .ok_or(format!("required_when_sibling needs string {k:?}"))
                };
                Predicate::RequiredWhenSibling {
                    field: text("field")?,
                    sibling: text("sibling")?,
                    sibling_value: doc
                        .get("sibling_value")
                        .cloned()
                        .ok_or("required_when_sibling needs \"sibling_value\"")?,
                }
            }
            other => return Err(format!("unknown predicate kind {other:?}")),
        })
    }

    /// Checks the predicate's parameters against the schema node(s) at its
    /// scope. Returns a message on mismatch.
    pub fn type_check(&self, nodes: &[&SchemaNode]) -> Result<(), String> {
        for node in nodes {
            match self {
                Predicate::NonDecreasingNumber if !node.allows_type(&["number", "integer"]) => {
                    return Err("non_decreasing_number needs a numeric location".into());
                }
                Predicate::AppendOnlyArray if !node.allows_type(&["array"]) => {
                    return Err("append_only_array needs an array location".into());
                }
                Predicate::RequiredWhenSibling { field, sibling, .. } => {
                    if !node.allows_type(&["object"]) {
                        return Err("required_when_sibling needs an object location".into());
                    }
                    for name in [field, sibling] {
                        if node.property(name).is_none() {
                            return Err(format!("scoped object declares no property {name:?}"));
                        }
                    }
                }
                Predicate::EnumTransition { allowed } if allowed.is_empty() => {
                    return Err("enum_transition needs at least one pair".into());
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvariantRule {
    pub name: String,
    pub scope: PathPattern,
    pub predicate: Predicate,
}

/// True when an operation path and a scope location overlap (one is a prefix
/// of the other). An append token stands for any index.
fn overlaps(op_path: &Pointer, location: &Pointer) -> bool {
    op_path
        .segments()
        .iter()
        .zip(location.segments())
        .all(|(a, b)| a == b || a == APPEND)
}

/// Evaluates every rule touched by `patch` (append-only rules always) over
/// the transition `prev -> next`.
pub fn check_invariants(
    rules: &[InvariantRule],
    prev: &Value,
    patch: &Patch,
    next: &Value,
) -> ValidationReport {
    let mut report = ValidationReport::default();
    for rule in rules {
        let mut locations: BTreeSet<Pointer> = rule.scope.expand(prev).into_iter().collect();
        locations.extend(rule.scope.expand(next));
        for location in locations {
            let touched = patch.ops().iter().any(|op| overlaps(op.path(), &location));
            if !touched && rule.predicate != Predicate::AppendOnlyArray {
                continue;
            }
            let before = resolve_pointer(prev, &location);
            let after = resolve_pointer(next, &location);
            if let Err(message) = evaluate(&rule.predicate, before, after) {
                report.push(location, rule.name.clone(), message);
            }
        }
    }
    report
}

fn evaluate(predicate: &Predicate, before: Option<&Value>, after: Option<&Value>) -> Result<(), String> {
    match predicate {
        Predicate::NonDecreasingNumber => match (before.and_then(Value::as_f64), after) {
            (Some(b), Some(a)) => match a.as_f64() {
                Some(a) if a >= b => Ok(()),
                Some(a) => Err(format!("decreased from {b} to {a}")),
                None => Err(format!("changed from number {b} to {}", a.type_name())),
            },
            (Some(b), None) => Err(format!("number {b} was removed")),
            _ => Ok(()),
        },
        Predicate::ImmutableOnceSet => match before {
            Some(b) if !b.is_null() && after != Some(b) => {
                Err(format!("value {b} is immutable once set"))
            }
            _ => Ok(()),
        },
        Predicate::EnumTransition { allowed } => match (before, after) {
            (Some(b), Some(a)) if a != b => {
                if allowed.iter().any(|(from, to)| from == b && to == a) {
                    Ok(())
                } else {
                    Err(format!("transition {b} -> {a} is not allowed"))
                }
            }
            _ => Ok(()),
        },
        Predicate::AppendOnlyArray => match (before.and_then(Value::as_array), after) {
            (Some(b), Some(a)) => match a.as_array() {
                Some(a) if a.len() >= b.len() && a[..b.len()] == b[..] => Ok(()),
                Some(_) => Err("existing elements were modified or removed".into()),
                None => Err("array was replaced by a non-array".into()),
            },
            (Some(_), None) => Err("array was removed".into()),
            _ => Ok(()),
        },
        Predicate::RequiredWhenSibling { field, sibling, sibling_value } => {
            match after.and_then(Value::as_object) {
                Some(obj) if obj.get(sibling) == Some(sibling_value) && !obj.contains_key(field) => {
                    Err(format!("{field:?} is required when {sibling:?} is {sibling_value}"))
                }
                _ => Ok(()),
            }
        }
    }
}
