//! Blueprint loading: meta-schema structure first, then cross-checks.
//!
//! Violations point into the blueprint document, e.g. `/rules/0/action`.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::circuit::CircuitConfig;
use crate::contracts::{PathPattern, PatternSegment};
use crate::harness::WorkerSpec;
use crate::scheduler::{Condition, ConditionPath, Expectation, Trigger, WorkflowRule};
use crate::state::{apply_patch, OpKind, Patch, PatchOperation, Pointer, Value};

use super::invariants::{InvariantRule, Predicate};
use super::validate::{Schema, ValidationReport};

/// The shipped blueprint meta-schema document.
pub const META_SCHEMA_JSON: &str = include_str!("../../schemas/blueprint.meta.json");

/// Default hard cap on any single view budget, in characters.
pub const DEFAULT_BUDGET_CAP: u64 = 1_000_000;

/// Top-level state member reserved for kernel writes.
pub const RUNTIME_KEY: &str = "runtime";

pub fn meta_schema() -> &'static Schema {
    static META: OnceLock<Schema> = OnceLock::new();
    META.get_or_init(|| {
        let doc = Value::parse(META_SCHEMA_JSON).expect("meta-schema is valid JSON");
        Schema::compile(&doc).expect("meta-schema uses the supported keywords")
    })
}

fn default_invocations() -> u64 {
    200
}

fn default_timeout() -> u64 {
    60_000
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budgets {
    #[serde(default = "default_invocations")]
    pub max_worker_invocations: u64,
    #[serde(default = "default_timeout")]
    pub worker_timeout_ms: u64,
    #[serde(default)]
    pub circuit: CircuitConfig,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            max_worker_invocations: default_invocations(),
            worker_timeout_ms: default_timeout(),
            circuit: CircuitConfig::default(),
        }
    }
}

/// Limits applied while checking a blueprint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlueprintLimits {
    pub budget_cap: u64,
}

impl Default for BlueprintLimits {
    fn default() -> Self {
        BlueprintLimits { budget_cap: DEFAULT_BUDGET_CAP }
    }
}

/// A checked blueprint.
#[derive(Clone, Debug)]
pub struct Blueprint {
    /// The document as supplied.
    pub doc: Value,
    /// The task schema with the reserved runtime region added.
    pub schema: Schema,
    pub initial_state: Value,
    pub request_path: Option<Pointer>,
    pub active_paths: Vec<PathPattern>,
    pub workers: Vec<WorkerSpec>,
    pub rules: Vec<WorkflowRule>,
    pub invariants: Vec<InvariantRule>,
    pub budgets: Budgets,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InitError {
    #[error("request given but the blueprint names no request_path")]
    NoRequestPath,
    #[error("cannot place request at {path}: {message}")]
    Placement { path: Pointer, message: String },
    #[error("initial state is not schema-valid: {0}")]
    Invalid(ValidationReport),
}

impl Blueprint {
    pub fn worker(&self, name: &str) -> Option<&WorkerSpec> {
        self.workers.iter().find(|w| w.name == name)
    }

    pub fn worker_map(&self) -> BTreeMap<String, WorkerSpec> {
        self.workers.iter().map(|w| (w.name.clone(), w.clone())).collect()
    }

    /// The initial state with `request` inserted at `request_path`.
    pub fn initial_state_for(&self, request: Option<&Value>) -> Result<Value, InitError> {
        let state = match (request, &self.request_path) {
            (None, _) => self.initial_state.clone(),
            (Some(_), None) => return Err(InitError::NoRequestPath),
            (Some(req), Some(path)) => {
                let patch = Patch::new(vec![PatchOperation::add(path.clone(), req.clone())]);
                apply_patch(&self.initial_state, &patch)
                    .map_err(|e| InitError::Placement { path: path.clone(), message: e.to_string() })?
            }
        };
        let report = self.schema.validate(&state);
        if report.ok() {
            Ok(state)
        } else {
            Err(InitError::Invalid(report))
        }
    }
}

fn ptr(segments: &[&str]) -> Pointer {
    Pointer::from_segments(segments.iter().copied())
}

fn at(base: &Pointer, tail: &[&str]) -> Pointer {
    let mut p = base.clone();
    for s in tail {
        p.push(*s);
    }
    p
}

/// Adds the kernel-owned `runtime` member to a root object schema.
fn with_runtime(schema_doc: &Value) -> Value {
    let mut doc = schema_doc.clone();
    if let Value::Object(root) = &mut doc {
        let props = root.entry("properties".to_owned()).or_insert_with(Value::object);
        if let Value::Object(props) = props {
            props.insert(
                RUNTIME_KEY.to_owned(),
                crate::value!({
                    "type": "object",
                    "additionalProperties": false,
                    "properties": {"halt_reason": {"type": "string"}}
                }),
            );
        }
    }
    doc
}

fn touches_runtime(pattern: &PathPattern, subtree: bool) -> bool {
    match pattern.segments().first() {
        Some(PatternSegment::Literal(first)) => first == RUNTIME_KEY,
        None => subtree,
        _ => false,
    }
}

/// Checks a blueprint document with the default limits.
pub fn validate_blueprint(doc: &Value) -> Result<Blueprint, ValidationReport> {
    validate_blueprint_with(doc, BlueprintLimits::default())
}

pub fn validate_blueprint_with(doc: &Value, limits: BlueprintLimits) -> Result<Blueprint, ValidationReport> {
    let structural = meta_schema().validate(doc);
    if !structural.ok() {
        return Err(structural);
    }
    let mut report = ValidationReport::default();
    let get = |k: &str| doc.get(k).cloned();

    let schema_doc = get("schema").unwrap_or_else(Value::object);
    if schema_doc.get("properties").and_then(|p| p.get(RUNTIME_KEY)).is_some() {
        report.push(ptr(&["schema", "properties", RUNTIME_KEY]), "ReservedPath", "the runtime member is reserved for the kernel");
    }
    let schema = match Schema::compile(&with_runtime(&schema_doc)) {
        Ok(s) => s,
        Err(e) => {
            let path = Pointer::from_segments(["schema".to_owned()].into_iter().chain(e.path.segments().iter().cloned()));
            report.push(path, "SchemaError", e.message);
            return Err(report);
        }
    };
    if !schema.root().allows_type(&["object"]) || schema.root().type_names().is_none() {
        report.push(ptr(&["schema", "type"]), "RootNotObject", "the state schema must declare type object");
    }
    let resolves = |pattern: &PathPattern| pattern.segments().is_empty() || schema.resolves(pattern);

    // Workers.
    let mut workers = Vec::new();
    let mut names = BTreeSet::new();
    for (i, raw) in get("workers").and_then(|w| w.as_array().cloned()).unwrap_or_default().iter().enumerate() {
        let base = ptr(&["workers", &i.to_string()]);
        let spec: WorkerSpec = match serde_json::from_value(raw.to_json()) {
            Ok(s) => s,
            Err(e) => {
                report.push(base, "WorkerSpec", e.to_string());
                continue;
            }
        };
        if !names.insert(spec.name.clone()) {
            report.push(at(&base, &["name"]), "DuplicateWorker", format!("worker {:?} is declared twice", spec.name));
        }
        for (j, entry) in spec.read.entries.iter().enumerate() {
            if !resolves(&entry.pattern) {
                report.push(
                    at(&base, &["read", &j.to_string(), "path"]),
                    "UnresolvedPath",
                    format!("{} is not a schema location", entry.pattern),
                );
            }
        }
        for (j, entry) in spec.write.entries.iter().enumerate() {
            let here = at(&base, &["write", &j.to_string()]);
            if !resolves(&entry.pattern) {
                report.push(at(&here, &["path"]), "UnresolvedPath", format!("{} is not a schema location", entry.pattern));
            }
            if touches_runtime(&entry.pattern, entry.subtree) {
                report.push(at(&here, &["path"]), "ReservedPath", "workers may not write under /runtime");
            }
            if entry.ops.contains(&OpKind::Remove) && !spec.privileged {
                report.push(at(&here, &["ops"]), "RemoveNotPrivileged", "remove needs a privileged worker");
            }
        }
        if spec.allowed_ops.contains(&OpKind::Remove) && !spec.privileged {
            report.push(at(&base, &["allowed_ops"]), "RemoveNotPrivileged", "remove needs a privileged worker");
        }
        if spec.view_budget > limits.budget_cap {
            report.push(
                at(&base, &["view_budget"]),
                "BudgetCap",
                format!("view budget {} exceeds the cap of {}", spec.view_budget, limits.budget_cap),
            );
        }
        workers.push((base, spec));
    }
    let declared: BTreeSet<String> = workers.iter().map(|(_, w)| w.name.clone()).collect();
    for (base, spec) in &workers {
        for (field, target) in [("repair_worker", &spec.repair_worker), ("fallback_worker", &spec.fallback_worker)] {
            if let Some(name) = target {
                if !declared.contains(name) {
                    report.push(at(base, &[field]), "UndeclaredWorker", format!("{name:?} is not a declared worker"));
                }
            }
        }
    }

    // Rules.
    let mut rules = Vec::new();
    for (i, raw) in get("rules").and_then(|r| r.as_array().cloned()).unwrap_or_default().iter().enumerate() {
        let base = ptr(&["rules", &i.to_string()]);
        let trigger_doc = raw.get("trigger").cloned().unwrap_or(Value::Null);
        let trigger: Trigger = match serde_json::from_value(trigger_doc.to_json()) {
            Ok(t) => t,
            Err(e) => {
                report.push(at(&base, &["trigger"]), "Trigger", e.to_string());
                continue;
            }
        };
        if !resolves(&trigger.path) {
            report.push(at(&base, &["trigger", "path"]), "UnresolvedPath", format!("{} is not a schema location", trigger.path));
        }
        let condition = match raw.get("condition") {
            None | Some(Value::Null) => None,
            Some(c) => match parse_condition(c) {
                Ok(cond) => {
                    match cond.path.static_pattern(&trigger.path) {
                        Some(p) if resolves(&p) => {}
                        _ => report.push(
                            at(&base, &["condition", "path"]),
                            "UnresolvedPath",
                            format!("{} does not reach a schema location from trigger {}", cond.path, trigger.path),
                        ),
                    }
                    Some(cond)
                }
                Err(message) => {
                    report.push(at(&base, &["condition"]), "Condition", message);
                    None
                }
            },
        };
        let action = raw.get("action").and_then(Value::as_str).unwrap_or_default().to_owned();
        if !declared.contains(&action) {
            report.push(at(&base, &["action"]), "UndeclaredWorker", format!("{action:?} is not a declared worker"));
        }
        let on_init = raw.get("on_init").and_then(Value::as_bool).unwrap_or(false);
        rules.push(WorkflowRule { trigger, condition, action, on_init });
    }

    // Invariants.
    let mut invariants = Vec::new();
    for (i, raw) in get("invariants").and_then(|r| r.as_array().cloned()).unwrap_or_default().iter().enumerate() {
        let base = ptr(&["invariants", &i.to_string()]);
        let name = raw.get("name").and_then(Value::as_str).unwrap_or_default().to_owned();
        let scope = match PathPattern::parse(raw.get("path").and_then(Value::as_str).unwrap_or_default()) {
            Ok(p) => p,
            Err(e) => {
                report.push(at(&base, &["path"]), "Pattern", e.to_string());
                continue;
            }
        };
        let predicate = match Predicate::from_value(raw.get("predicate").unwrap_or(&Value::Null)) {
            Ok(p) => p,
            Err(message) => {
                report.push(at(&base, &["predicate"]), "Predicate", message);
                continue;
            }
        };
        let nodes = schema.nodes_at(&scope);
        if nodes.is_empty() && !scope.segments().is_empty() {
            report.push(at(&base, &["path"]), "UnresolvedPath", format!("{scope} is not a schema location"));
        } else if let Err(message) = predicate.type_check(&nodes) {
            report.push(at(&base, &["predicate"]), "PredicateType", message);
        }
        invariants.push(InvariantRule { name, scope, predicate });
    }

    // Request and active paths.
    let request_path = match doc.get("request_path").and_then(Value::as_str) {
        None => None,
        Some(text) => match Pointer::parse(text) {
            Ok(p) if resolves(&PathPattern::exact(&p)) && !p.ends_with_append() => Some(p),
            Ok(p) => {
                report.push(ptr(&["request_path"]), "UnresolvedPath", format!("{p} is not a schema location"));
                None
            }
            Err(e) => {
                report.push(ptr(&["request_path"]), "Pointer", e.to_string());
                None
            }
        },
    };
    let mut active_paths = Vec::new();
    for (i, raw) in get("active_paths").and_then(|a| a.as_array().cloned()).unwrap_or_default().iter().enumerate() {
        let here = ptr(&["active_paths", &i.to_string()]);
        match PathPattern::parse(raw.as_str().unwrap_or_default()) {
            Ok(p) if resolves(&p) => active_paths.push(p),
            Ok(p) => report.push(here, "UnresolvedPath", format!("{p} is not a schema location")),
            Err(e) => report.push(here, "Pattern", e.to_string()),
        }
    }

    let budgets: Budgets = match get("budgets") {
        None => Budgets::default(),
        Some(b) => match serde_json::from_value(b.to_json()) {
            Ok(b) => b,
            Err(e) => {
                report.push(ptr(&["budgets"]), "Budgets", e.to_string());
                Budgets::default()
            }
        },
    };

    let initial_state = get("initial_state").unwrap_or_else(Value::object);
    if initial_state.get(RUNTIME_KEY).is_some() {
        report.push(ptr(&["initial_state", RUNTIME_KEY]), "ReservedPath", "the runtime member is reserved for the kernel");
    }
    if request_path.is_none() {
        for v in schema.validate(&initial_state).violations {
            let path = Pointer::from_segments(["initial_state".to_owned()].into_iter().chain(v.path.segments().iter().cloned()));
            report.push(path, v.keyword, v.message);
        }
    }

    if !report.ok() {
        return Err(report);
    }
    Ok(Blueprint {
        doc: doc.clone(),
        schema,
        initial_state,
        request_path,
        active_paths,
        workers: workers.into_iter().map(|(_, w)| w).collect(),
        rules,
        invariants,
        budgets,
    })
}

fn parse_condition(doc: &Value) -> Result<Condition, String> {
    let path = doc.get("path").and_then(Value::as_str).ok_or("condition needs a path")?;
    let path = ConditionPath::parse(path).map_err(|e| e.to_string())?;
    let expect = match (doc.get("equals"), doc.get("not_equals")) {
        (Some(v), None) => Expectation::Equals(v.clone()),
        (None, Some(v)) => Expectation::NotEquals(v.clone()),
        _ => return Err("condition needs exactly one of equals and not_equals".into()),
    };
    Ok(Condition { path, expect })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value;

    /// One worker, one rule, a one-field schema. Checked by hand against
    /// schemas/blueprint.meta.json: every required key is present, every
    /// key is declared, every enum value is listed.
    fn minimal() -> Value {
        value!({
            "schema": {
                "type": "object",
                "required": ["query"],
                "properties": {
                    "query": {"type": "string"},
                    "answer": {"type": ["string", "null"]}
                }
            },
            "initial_state": {"query": "", "answer": null},
            "workers": [{
                "name": "answerer",
                "read": [{"path": "/query"}],
                "write": [{"path": "/answer", "ops": ["replace"]}],
                "view_budget": 1000
            }],
            "rules": [{"trigger": {"path": ""}, "action": "answerer", "on_init": true}]
        })
    }

    fn set(doc: &mut Value, path: &str, v: Value) {
        let patch = Patch::new(vec![PatchOperation::add(Pointer::parse(path).unwrap(), v)]);
        *doc = apply_patch(doc, &patch).unwrap();
    }

    fn violation_paths(doc: &Value) -> Vec<String> {
        validate_blueprint(doc)
            .err()
            .expect("blueprint should be rejected")
            .violations
            .iter()
            .map(|v| v.path.to_string())
            .collect()
    }

    #[test]
    fn minimal_blueprint_is_accepted() {
        let bp = validate_blueprint(&minimal()).unwrap();
        assert_eq!(bp.workers.len(), 1);
        assert_eq!(bp.rules[0].action, "answerer");
        assert_eq!(bp.budgets, Budgets::default());
        assert!(bp.schema.resolves(&PathPattern::parse("/runtime/halt_reason").unwrap()));
    }

    #[test]
    fn undeclared_action_names_rule_index() {
        let mut doc = minimal();
        set(&mut doc, "/rules/-", value!({"trigger": {"path": "/answer"}, "action": "ghost"}));
        assert_eq!(violation_paths(&doc), ["/rules/1/action"]);
    }

    #[test]
    fn unresolvable_write_path() {
        let mut doc = minimal();
        set(&mut doc, "/workers/0/write/-", value!({"path": "/nope/*", "ops": ["add"]}));
        assert_eq!(violation_paths(&doc), ["/workers/0/write/1/path"]);
    }

    #[test]
    fn meta_schema_catches_structure() {
        let mut doc = minimal();
        set(&mut doc, "/colour", value!("red"));
        assert_eq!(violation_paths(&doc), ["/colour"]);
        let mut doc = minimal();
        set(&mut doc, "/workers/0/view_budget", value!(0));
        assert_eq!(violation_paths(&doc), ["/workers/0/view_budget"]);
    }

    #[test]
    fn every_cross_check_mutation_is_rejected() {
        let mutations: Vec<(&str, Value)> = vec![
            ("/workers/-", value!({"name": "answerer", "read": [], "write": [], "view_budget": 10})),
            ("/workers/0/read/-", value!({"path": "/missing"})),
            ("/workers/0/write/-", value!({"path": "/answer", "ops": ["remove"]})),
            ("/workers/0/allowed_ops", value!(["add", "remove"])),
            ("/workers/0/write/-", value!({"path": "/runtime/halt_reason", "ops": ["replace"]})),
            ("/workers/0/view_budget", value!(2_000_000)),
            ("/workers/0/repair_worker", value!("ghost")),
            ("/workers/0/fallback_worker", value!("ghost")),
            ("/rules/0/action", value!("ghost")),
            ("/rules/0/trigger/path", value!("/elsewhere")),
            ("/rules/0/condition", value!({"path": "/nowhere", "equals": 1})),
            ("/rules/0/condition", value!({"path": "/query", "equals": 1, "not_equals": 2})),
            ("/invariants", value!([{"name": "n", "path": "/gone", "predicate": {"kind": "immutable_once_set"}}])),
            ("/invariants", value!([{"name": "n", "path": "/query", "predicate": {"kind": "non_decreasing_number"}}])),
            ("/request_path", value!("/absent")),
            ("/active_paths", value!(["/absent"])),
            ("/initial_state/query", value!(5)),
            ("/initial_state/runtime", value!({})),
            ("/schema/properties/runtime", value!({"type": "object"})),
            ("/schema/type", value!("array")),
            ("/schema/properties/query/pattern", value!("(a)\\1")),
        ];
        for (path, v) in mutations {
            let mut doc = minimal();
            set(&mut doc, path, v);
            assert!(validate_blueprint(&doc).is_err(), "mutation at {path} was accepted");
        }
    }

    #[test]
    fn initial_state_places_request() {
        let mut doc = minimal();
        set(&mut doc, "/request_path", value!("/query"));
        doc = apply_patch(&doc, &Patch::parse(r#"[{"op":"replace","path":"/initial_state","value":{"answer":null}}]"#).unwrap()).unwrap();
        let bp = validate_blueprint(&doc).unwrap();
        let state = bp.initial_state_for(Some(&value!("what is up"))).unwrap();
        assert_eq!(state, value!({"query": "what is up", "answer": null}));
        assert!(matches!(bp.initial_state_for(Some(&value!(3))), Err(InitError::Invalid(_))));
        assert!(matches!(bp.initial_state_for(None), Err(InitError::Invalid(_))));
    }

    #[test]
    fn relative_condition_resolves_from_trigger() {
        let mut doc = minimal();
        set(&mut doc, "/schema/properties/items", value!({
            "type": "array",
            "items": {"type": "object", "properties": {"status": {"type": "string"}, "ok": {"type": "boolean"}}}
        }));
        set(&mut doc, "/rules/-", value!({
            "trigger": {"path": "/items/*/status"},
            "condition": {"path": "../ok", "equals": true},
            "action": "answerer"
        }));
        assert!(validate_blueprint(&doc).is_ok());
        set(&mut doc, "/rules/1/condition/path", value!("../nope"));
        assert_eq!(violation_paths(&doc), ["/rules/1/condition/path"]);
    }
}
