use std::collections::BTreeMap;
use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::contracts::{PathPattern, PatternSegment};
use crate::state::{Map, Pointer, Value};

/// Keywords understood by the validator. Anything else is a load error.
pub const KEYWORDS: &[&str] = &[
    "type",
    "properties",
    "required",
    "additionalProperties",
    "items",
    "enum",
    "const",
    "minimum",
    "maximum",
    "minLength",
    "maxLength",
    "pattern",
    "minItems",
    "maxItems",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub path: Pointer,
    #[serde(rename = "keyword")]
    pub keyword: String,
    pub message: String,
}

impl Violation {
    pub fn new(path: Pointer, keyword: impl Into<String>, message: impl Into<String>) -> Self {
        Violation { path, keyword: keyword.into(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = if self.path.is_root() { "(root)".to_owned() } else { self.path.to_string() };
        write!(f, "{path}: [{}] {}", self.keyword, self.message)
    }
}

/// Outcome of a validation pass; `ok()` iff no violations were recorded.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn push(&mut self, path: Pointer, keyword: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation::new(path, keyword, message));
    }

    pub fn extend(&mut self, other: ValidationReport) {
        self.violations.extend(other.violations);
    }

    /// One-line summary of the first violation, for rejection reasons.
    pub fn summary(&self) -> String {
        match self.violations.as_slice() {
            [] => "ok".to_owned(),
            [only] => only.to_string(),
            [first, rest @ ..] => format!("{first} (+{} more)", rest.len()),
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok() {
            return f.write_str("ok");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JsonType {
    Null,
    Boolean,
    Number,
    Integer,
    String,
    Array,
    Object,
}

impl JsonType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "null" => JsonType::Null,
            "boolean" => JsonType::Boolean,
            "number" => JsonType::Number,
            "integer" => JsonType::Integer,
            "string" => JsonType::String,
            "array" => JsonType::Array,
            "object" => JsonType::Object,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            JsonType::Null => "null",
            JsonType::Boolean => "boolean",
            JsonType::Number => "number",
            JsonType::Integer => "integer",
            JsonType::String => "string",
            JsonType::Array => "array",
            JsonType::Object => "object",
        }
    }

    fn admits(self, value: &Value) -> bool {
        match (self, value) {
            (JsonType::Null, Value::Null)
            | (JsonType::Boolean, Value::Bool(_))
            | (JsonType::Number, Value::Number(_))
            | (JsonType::String, Value::String(_))
            | (JsonType::Array, Value::Array(_))
            | (JsonType::Object, Value::Object(_)) => true,
            (JsonType::Integer, Value::Number(n)) => n.is_integer(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("schema error at {path}: {message}")]
pub struct SchemaError {
    pub path: Pointer,
    pub message: String,
}

/// One compiled schema node.
#[derive(Clone, Debug, Default)]
pub struct SchemaNode {
    types: Option<Vec<JsonType>>,
    properties: BTreeMap<String, SchemaNode>,
    required: Vec<String>,
    additional_properties: Option<bool>,
    items: Option<Box<SchemaNode>>,
    enumeration: Option<Vec<Value>>,
    constant: Option<Value>,
    minimum: Option<f64>,
    maximum: Option<f64>,
    min_length: Option<usize>,
    max_length: Option<usize>,
    pattern: Option<Regex>,
    min_items: Option<usize>,
    max_items: Option<usize>,
}

/// A compiled schema document over the supported keyword subset.
#[derive(Clone, Debug)]
pub struct Schema {
    doc: Value,
    root: SchemaNode,
}

impl Schema {
    pub fn compile(doc: &Value) -> Result<Schema, SchemaError> {
        Ok(Schema { doc: doc.clone(), root: compile_node(doc, &Pointer::root())? })
    }

    pub fn document(&self) -> &Value {
        &self.doc
    }

    pub fn root(&self) -> &SchemaNode {
        &self.root
    }

    pub fn validate(&self, value: &Value) -> ValidationReport {
        validate_value(self, value)
    }

    /// Schema nodes that a pattern can address. Literal segments must be
    /// declared properties (or indices of an array with `items`), `*`
    /// fans out over declared properties or `items`, and `-` needs `items`.
    pub fn nodes_at(&self, pattern: &PathPattern) -> Vec<&SchemaNode> {
        let mut current = vec![&self.root];
        for segment in pattern.segments() {
            let mut next = Vec::new();
            for node in current {
                match segment {
                    PatternSegment::Literal(key) => {
                        if let Some(child) = node.properties.get(key) {
                            next.push(child);
                        } else if let (Some(items), Some(_)) =
                            (&node.items, crate::state::parse_index(key))
                        {
                            next.push(items.as_ref());
                        }
                    }
                    PatternSegment::Any => {
                        next.extend(node.properties.values());
                        if let Some(items) = &node.items {
                            next.push(items.as_ref());
                        }
                    }
                    PatternSegment::Append => {
                        if let Some(items) = &node.items {
                            next.push(items.as_ref());
                        }
                    }
                }
            }
            current = next;
        }
        current
    }

    pub fn resolves(&self, pattern: &PathPattern) -> bool {
        !self.nodes_at(pattern).is_empty()
    }

    /// True when every object member along `path` is listed in its parent's
    /// `required`. Paths through array elements are never required.
    pub fn is_required_path(&self, path: &Pointer) -> bool {
        if path.is_root() {
            return true;
        }
        let mut node = &self.root;
        for segment in path.segments() {
            if !node.required.iter().any(|r| r == segment) {
                return false;
            }
            match node.properties.get(segment) {
                Some(child) => node = child,
                None => return false,
            }
        }
        true
    }

    /// Declared required member names of the node at `path`, if resolvable.
    pub fn required_members(&self, path: &Pointer) -> Vec<String> {
        self.nodes_at(&PathPattern::exact(path))
            .first()
            .map(|n| n.required.clone())
            .unwrap_or_default()
    }

    /// Projects the schema document onto the given patterns: structural
    /// keywords along each path are kept, subtrees at matched nodes are
    /// kept whole.
    pub fn fragment(&self, patterns: &[PathPattern]) -> Value {
        let mut out = Value::Null;
        for pattern in patterns {
            let piece = project_doc(&self.doc, pattern.segments());
            out = merge_fragments(out, piece);
        }
        if out.is_null() {
            Value::object()
        } else {
            out
        }
    }
}

impl SchemaNode {
    pub fn type_names(&self) -> Option<Vec<&'static str>> {
        self.types.as_ref().map(|ts| ts.iter().map(|t| t.name()).collect())
    }

    /// True when the node's declared types (if any) include one of `names`.
    pub fn allows_type(&self, names: &[&str]) -> bool {
        match &self.types {
            None => true,
            Some(ts) => ts.iter().any(|t| names.contains(&t.name())),
        }
    }

    pub fn property(&self, name: &str) -> Option<&SchemaNode> {
        self.properties.get(name)
    }

    pub fn items(&self) -> Option<&SchemaNode> {
        self.items.as_deref()
    }

    pub fn required(&self) -> &[String] {
        &self.required
    }
}

fn err(path: &Pointer, message: impl Into<String>) -> SchemaError {
    SchemaError { path: path.clone(), message: message.into() }
}

fn compile_node(doc: &Value, at: &Pointer) -> Result<SchemaNode, SchemaError> {
    let map = doc.as_object().ok_or_else(|| err(at, "schema node must be an object"))?;
    if let Some(unknown) = map.keys().find(|k| !KEYWORDS.contains(&k.as_str())) {
        return Err(err(at, format!("unsupported keyword {unknown:?}")));
    }
    let mut node = SchemaNode::default();
    if let Some(t) = map.get("type") {
        let names: Vec<&Value> = match t {
            Value::String(_) => vec![t],
            Value::Array(items) if !items.is_empty() => items.iter().collect(),
            _ => return Err(err(at, "\"type\" must be a type name or non-empty list")),
        };
        node.types = Some(
            names
                .into_iter()
                .map(|n| {
                    n.as_str()
                        .and_then(JsonType::parse)
                        .ok_or_else(|| err(at, format!("unknown type {n}")))
                })
                .collect::<Result<_, _>>()?,
        );
    }
    if let Some(props) = map.get("properties") {
        let props = props
            .as_object()
            .ok_or_else(|| err(at, "\"properties\" must be an object"))?;
        let base = at.child("properties");
        for (name, sub) in props {
            node.properties.insert(name.clone(), compile_node(sub, &base.child(name.clone()))?);
        }
    }
    if let Some(req) = map.get("required") {
        node.required = req
            .as_array()
            .and_then(|items| items.iter().map(|i| i.as_str().map(str::to_owned)).collect())
            .ok_or_else(|| err(at, "\"required\" must be a list of strings"))?;
    }
    if let Some(ap) = map.get("additionalProperties") {
        node.additional_properties = Some(
            ap.as_bool()
                .ok_or_else(|| err(at, "\"additionalProperties\" must be a boolean"))?,
        );
    }
    if let Some(items) = map.get("items") {
        node.items = Some(Box::new(compile_node(items, &at.child("items"))?));
    }
    if let Some(e) = map.get("enum") {
        node.enumeration = Some(
            e.as_array()
                .cloned()
                .ok_or_else(|| err(at, "\"enum\" must be a list"))?,
        );
    }
    node.constant = map.get("const").cloned();
    node.minimum = number_kw(map, "minimum", at)?;
    node.maximum = number_kw(map, "maximum", at)?;
    node.min_length = count_kw(map, "minLength", at)?;
    node.max_length = count_kw(map, "maxLength", at)?;
    node.min_items = count_kw(map, "minItems", at)?;
    node.max_items = count_kw(map, "maxItems", at)?;
    if let Some(p) = map.get("pattern") {
        let source = p.as_str().ok_or_else(|| err(at, "\"pattern\" must be a string"))?;
        node.pattern = Some(
            Regex::new(source).map_err(|e| err(at, format!("invalid pattern {source:?}: {e}")))?,
        );
    }
    Ok(node)
}

fn number_kw(map: &Map, key: &str, at: &Pointer) -> Result<Option<f64>, SchemaError> {
    map.get(key)
        .map(|v| v.as_f64().ok_or_else(|| err(at, format!("{key:?} must be a number"))))
        .transpose()
}

fn count_kw(map: &Map, key: &str, at: &Pointer) -> Result<Option<usize>, SchemaError> {
    map.get(key)
        .map(|v| {
            v.as_u64()
                .map(|n| n as usize)
                .ok_or_else(|| err(at, format!("{key:?} must be a non-negative integer")))
        })
        .transpose()
}

/// Validates `value` against `schema`, listing every violation in document
/// order.
pub fn validate_value(schema: &Schema, value: &Value) -> ValidationReport {
    let mut report = ValidationReport::default();
    check(&schema.root, value, &Pointer::root(), &mut report);
    report
}

fn check(node: &SchemaNode, value: &Value, at: &Pointer, report: &mut ValidationReport) {
    if let Some(types) = &node.types {
        if !types.iter().any(|t| t.admits(value)) {
            let expected: Vec<_> = types.iter().map(|t| t.name()).collect();
            report.push(
                at.clone(),
                "type",
                format!("expected {}, found {}", expected.join(" or "), value.type_name()),
            );
            return;
        }
    }
    if let Some(options) = &node.enumeration {
        if !options.contains(value) {
            report.push(at.clone(), "enum", format!("{value} is not one of the allowed values"));
        }
    }
    if let Some(c) = &node.constant {
        if c != value {
            report.push(at.clone(), "const", format!("expected {c}, found {value}"));
        }
    }
    match value {
        Value::Number(n) => {
            let x = n.get();
            if let Some(min) = node.minimum.filter(|m| x < *m) {
                report.push(at.clone(), "minimum", format!("{x} is less than {min}"));
            }
            if let Some(max) = node.maximum.filter(|m| x > *m) {
                report.push(at.clone(), "maximum", format!("{x} is greater than {max}"));
            }
        }
        Value::String(s) => {
            let len = s.chars().count();
            if let Some(min) = node.min_length.filter(|m| len < *m) {
                report.push(at.clone(), "minLength", format!("length {len} is below {min}"));
            }
            if let Some(max) = node.max_length.filter(|m| len > *m) {
                report.push(at.clone(), "maxLength", format!("length {len} exceeds {max}"));
            }
            if let Some(re) = node.pattern.as_ref().filter(|re| !re.is_match(s)) {
                report.push(at.clone(), "pattern", format!("{s:?} does not match {}", re.as_str()));
            }
        }
        Value::Array(items) => {
            if let Some(min) = node.min_items.filter(|m| items.len() < *m) {
                report.push(at.clone(), "minItems", format!("{} items, need {min}", items.len()));
            }
            if let Some(max) = node.max_items.filter(|m| items.len() > *m) {
                report.push(at.clone(), "maxItems", format!("{} items, limit {max}", items.len()));
            }
            if let Some(item_schema) = &node.items {
                for (i, item) in items.iter().enumerate() {
                    check(item_schema, item, &at.index_child(i), report);
                }
            }
        }
        Value::Object(map) => {
            for name in &node.required {
                if !map.contains_key(name) {
                    report.push(at.clone(), "required", format!("missing required member {name:?}"));
                }
            }
            for (key, member) in map {
                let child = at.child(key.clone());
                match node.properties.get(key) {
                    Some(sub) => check(sub, member, &child, report),
                    None if node.additional_properties == Some(false) => {
                        report.push(child, "additionalProperties", format!("member {key:?} is not allowed"));
                    }
                    None => {}
                }
            }
        }
        _ => {}
    }
}

fn project_doc(doc: &Value, rest: &[PatternSegment]) -> Value {
    let Some((head, tail)) = rest.split_first() else {
        return doc.clone();
    };
    let Some(map) = doc.as_object() else {
        return Value::Null;
    };
    let mut out = Map::new();
    if let Some(t) = map.get("type") {
        out.insert("type".into(), t.clone());
    }
    let props = map.get("properties").and_then(Value::as_object);
    let mut kept = Map::new();
    match head {
        PatternSegment::Literal(key) => {
            if let Some(sub) = props.and_then(|p| p.get(key)) {
                kept.insert(key.clone(), project_doc(sub, tail));
            }
        }
        PatternSegment::Any => {
            for (key, sub) in props.into_iter().flatten() {
                kept.insert(key.clone(), project_doc(sub, tail));
            }
        }
        PatternSegment::Append => {}
    }
    let required: Vec<Value> = map
        .get("required")
        .and_then(Value::as_array)
        .map(|r| r.iter().filter(|n| n.as_str().is_some_and(|n| kept.contains_key(n))).cloned().collect())
        .unwrap_or_default();
    if !kept.is_empty() {
        out.insert("properties".into(), Value::Object(kept));
    }
    if !required.is_empty() {
        out.insert("required".into(), Value::Array(required));
    }
    let index_like = matches!(head, PatternSegment::Any | PatternSegment::Append)
        || matches!(head, PatternSegment::Literal(k) if crate::state::parse_index(k).is_some());
    if index_like {
        if let Some(items) = map.get("items") {
            out.insert("items".into(), project_doc(items, tail));
        }
    }
    Value::Object(out)
}

fn merge_fragments(a: Value, b: Value) -> Value {
    match (a, b) {
        (Value::Null, b) => b,
        (a, Value::Null) => a,
        (Value::Object(mut left), Value::Object(right)) => {
            for (key, rv) in right {
                let merged = match left.remove(&key) {
                    Some(lv) if key == "required" => union_lists(lv, rv),
                    Some(lv) => merge_fragments(lv, rv),
                    None => rv,
                };
                left.insert(key, merged);
            }
            Value::Object(left)
        }
        (a, _) => a,
    }
}

fn union_lists(a: Value, b: Value) -> Value {
    let mut items = a.as_array().cloned().unwrap_or_default();
    for v in b.as_array().into_iter().flatten() {
        if !items.contains(v) {
            items.push(v.clone());
        }
    }
    Value::Array(items)
}
