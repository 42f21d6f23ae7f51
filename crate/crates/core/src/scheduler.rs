//! Event extraction, rule matching and the invocation queue.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::contracts::{PathPattern, PatternSegment};
use crate::state::{apply_op, resolve_pointer, OpKind, Patch, Pointer, PointerError, Value, APPEND};

/// Source name used for events the kernel itself emits.
pub const KERNEL: &str = "kernel";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub source: String,
    pub path: Pointer,
    pub op: OpKind,
}

impl Event {
    /// The synthetic event that seeds the initial queue.
    pub fn init() -> Event {
        Event { seq: 0, source: KERNEL.to_owned(), path: Pointer::root(), op: OpKind::Add }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{} {} {} {:?}", self.seq, self.source, self.op.as_str(), self.path.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub path: PathPattern,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<OpKind>,
    #[serde(default)]
    pub subtree: bool,
}

impl Trigger {
    pub fn matches(&self, event: &Event) -> bool {
        self.op.map_or(true, |op| op == event.op)
            && self.path.matches_event(&event.path, event.op, self.subtree)
    }
}

/// Where a condition reads its value from.
#[derive(Clone, Debug, PartialEq)]
pub enum ConditionPath {
    /// An absolute pattern. Wildcards (and a trailing `-`) range over all
    /// existing matches, and the condition holds if any of them satisfies it.
    Absolute(PathPattern),
    /// Anchored at the event path: climb `up` levels, then descend `rest`.
    Relative { up: usize, rest: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConditionPathError {
    #[error("relative condition path must start with '.' or '..': {0:?}")]
    BadRelative(String),
    #[error(transparent)]
    Pointer(#[from] PointerError),
    #[error("{0}")]
    Pattern(String),
}

impl ConditionPath {
    /// Parses `/abs/*/path`, `.`, `./child`, `../sibling`, `../../x`.
    pub fn parse(text: &str) -> Result<ConditionPath, ConditionPathError> {
        if text.is_empty() || text.starts_with('/') {
            return PathPattern::parse(text)
                .map(ConditionPath::Absolute)
                .map_err(|e| ConditionPathError::Pattern(e.to_string()));
        }
        let mut parts = text.splitn(2, '/');
        let mut up = match parts.next() {
            Some(".") => 0,
            Some("..") => 1,
            _ => return Err(ConditionPathError::BadRelative(text.to_owned())),
        };
        let mut rest = parts.next().unwrap_or("");
        while let Some(tail) = rest.strip_prefix("..") {
            if tail.is_empty() || tail.starts_with('/') {
                up += 1;
                rest = tail.trim_start_matches('/');
            } else {
                break;
            }
        }
        let rest = if rest.is_empty() {
            Vec::new()
        } else {
            Pointer::parse(&format!("/{rest}"))?.segments().to_vec()
        };
        Ok(ConditionPath::Relative { up, rest })
    }

    /// Concrete locations this path refers to for `event` in `state`.
    /// Absent literal locations are still returned (they read as null).
    pub fn locations(&self, event: &Event, state: &Value) -> Vec<Pointer> {
        match self {
            ConditionPath::Absolute(pattern) if pattern.has_wildcard() => {
                let any: Vec<PatternSegment> = pattern
                    .segments()
                    .iter()
                    .map(|s| match s {
                        PatternSegment::Append => PatternSegment::Any,
                        other => other.clone(),
                    })
                    .collect();
                PathPattern::from_segments(any).expand(state)
            }
            ConditionPath::Absolute(pattern) => {
                let segments = pattern.segments().iter().map(|s| match s {
                    PatternSegment::Literal(lit) => lit.clone(),
                    _ => APPEND.to_owned(),
                });
                vec![Pointer::from_segments(segments)]
            }
            ConditionPath::Relative { up, rest } => {
                let anchor = event.path.segments();
                if *up > anchor.len() {
                    return Vec::new();
                }
                let base = &anchor[..anchor.len() - up];
                vec![Pointer::from_segments(base.iter().chain(rest).cloned())]
            }
        }
    }

    /// The schema-level pattern this path can reach when anchored at the
    /// given trigger, used to check blueprints before running them.
    pub fn static_pattern(&self, trigger: &PathPattern) -> Option<PathPattern> {
        match self {
            ConditionPath::Absolute(pattern) => Some(pattern.clone()),
            ConditionPath::Relative { up, rest } => {
                let mut segments: Vec<PatternSegment> = trigger
                    .segments()
                    .iter()
                    .map(|s| match s {
                        PatternSegment::Append => PatternSegment::Any,
                        other => other.clone(),
                    })
                    .collect();
                if *up > segments.len() {
                    return None;
                }
                segments.truncate(segments.len() - up);
                segments.extend(rest.iter().cloned().map(PatternSegment::Literal));
                Some(PathPattern::from_segments(segments))
            }
        }
    }
}

impl fmt::Display for ConditionPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConditionPath::Absolute(p) => write!(f, "{p}"),
            ConditionPath::Relative { up, rest } => {
                if *up == 0 {
                    f.write_str(".")?;
                } else {
                    f.write_str(&vec![".."; *up].join("/"))?;
                }
                write!(f, "{}", Pointer::from_segments(rest.clone()))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expectation {
    Equals(Value),
    NotEquals(Value),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub path: ConditionPath,
    pub expect: Expectation,
}

impl Condition {
    pub fn equals(path: &str, value: Value) -> Result<Condition, ConditionPathError> {
        Ok(Condition { path: ConditionPath::parse(path)?, expect: Expectation::Equals(value) })
    }

    pub fn not_equals(path: &str, value: Value) -> Result<Condition, ConditionPathError> {
        Ok(Condition { path: ConditionPath::parse(path)?, expect: Expectation::NotEquals(value) })
    }

    /// True when some referenced location satisfies the expectation.
    /// Missing locations read as null.
    pub fn holds(&self, event: &Event, state: &Value) -> bool {
        self.path.locations(event, state).iter().any(|loc| {
            let actual = resolve_pointer(state, loc).unwrap_or(&Value::Null);
            match &self.expect {
                Expectation::Equals(v) => actual == v,
                Expectation::NotEquals(v) => actual != v,
            }
        })
    }

    pub fn to_value(&self) -> Value {
        let mut map = crate::state::Map::new();
        map.insert("path".into(), Value::string(self.path.to_string()));
        match &self.expect {
            Expectation::Equals(v) => map.insert("equals".into(), v.clone()),
            Expectation::NotEquals(v) => map.insert("not_equals".into(), v.clone()),
        };
        Value::Object(map)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkflowRule {
    pub trigger: Trigger,
    pub condition: Option<Condition>,
    pub action: String,
    pub on_init: bool,
}

impl WorkflowRule {
    pub fn new(trigger: &str, action: &str) -> WorkflowRule {
        WorkflowRule {
            trigger: Trigger {
                path: PathPattern::parse(trigger).expect("valid trigger pattern"),
                op: None,
                subtree: false,
            },
            condition: None,
            action: action.to_owned(),
            on_init: false,
        }
    }

    pub fn with_op(mut self, op: OpKind) -> Self {
        self.trigger.op = Some(op);
        self
    }

    pub fn with_condition(mut self, condition: Condition) -> Self {
        self.condition = Some(condition);
        self
    }

    pub fn on_init(mut self) -> Self {
        self.on_init = true;
        self
    }

    fn condition_holds(&self, event: &Event, state: &Value) -> bool {
        self.condition.as_ref().map_or(true, |c| c.holds(event, state))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invocation {
    pub worker: String,
    pub event: Event,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InvocationQueue {
    items: VecDeque<Invocation>,
}

impl InvocationQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_back(&mut self, invocation: Invocation) {
        self.items.push_back(invocation);
    }

    pub fn push_front(&mut self, invocation: Invocation) {
        self.items.push_front(invocation);
    }

    pub fn pop(&mut self) -> Option<Invocation> {
        self.items.pop_front()
    }

    pub fn peek(&self) -> Option<&Invocation> {
        self.items.front()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    pub fn iter(&self) -> impl Iterator<Item = &Invocation> {
        self.items.iter()
    }
}

impl Extend<Invocation> for InvocationQueue {
    fn extend<T: IntoIterator<Item = Invocation>>(&mut self, iter: T) {
        self.items.extend(iter);
    }
}

impl FromIterator<Invocation> for InvocationQueue {
    fn from_iter<T: IntoIterator<Item = Invocation>>(iter: T) -> Self {
        InvocationQueue { items: iter.into_iter().collect() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScheduleWarning {
    /// No `on_init` rule fired, so the run ends immediately.
    EmptyInitialQueue,
}

/// Events for a committed patch, numbered from `*next_seq`. Appends are
/// resolved to the index they landed on by replaying the operations on a
/// scratch copy of the pre-state.
pub fn extract_events(prev: &Value, patch: &Patch, source: &str, next_seq: &mut u64) -> Vec<Event> {
    let mut scratch = prev.clone();
    let mut events = Vec::new();
    for op in patch.ops() {
        if op.kind() != OpKind::Test {
            let mut path = op.path().clone();
            if path.ends_with_append() {
                let parent = path.parent().unwrap_or_default();
                let len = resolve_pointer(&scratch, &parent)
                    .and_then(Value::as_array)
                    .map_or(0, Vec::len);
                path = parent.index_child(len);
            }
            events.push(Event { seq: *next_seq, source: source.to_owned(), path, op: op.kind() });
            *next_seq += 1;
        }
        // The patch was accepted, so every op applies.
        let _ = apply_op(&mut scratch, op);
    }
    events
}

/// Wake-ups for `events` against the post-commit state: events in order,
/// rules in declaration order within each event.
pub fn schedule(events: &[Event], rules: &[WorkflowRule], state: &Value) -> Vec<Invocation> {
    let mut out = Vec::new();
    for event in events {
        for rule in rules {
            if rule.trigger.matches(event) && rule.condition_holds(event, state) {
                out.push(Invocation { worker: rule.action.clone(), event: event.clone() });
            }
        }
    }
    out
}

/// One invocation per `on_init` rule whose condition holds on `state`.
pub fn initial_queue(rules: &[WorkflowRule], state: &Value) -> (InvocationQueue, Option<ScheduleWarning>) {
    let init = Event::init();
    let queue: InvocationQueue = rules
        .iter()
        .filter(|r| r.on_init && r.condition_holds(&init, state))
        .map(|r| Invocation { worker: r.action.clone(), event: init.clone() })
        .collect();
    let warning = queue.is_empty().then_some(ScheduleWarning::EmptyInitialQueue);
    (queue, warning)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value;

    fn ev(seq: u64, path: &str, op: OpKind) -> Event {
        Event { seq, source: "w".into(), path: Pointer::parse(path).unwrap(), op }
    }

    #[test]
    fn tests_emit_no_events() {
        let patch = Patch::parse(r#"[{"op":"test","path":"/a","value":1},{"op":"replace","path":"/a","value":2}]"#).unwrap();
        let mut seq = 1;
        let events = extract_events(&value!({"a": 1}), &patch, "w", &mut seq);
        assert_eq!(events, vec![ev(1, "/a", OpKind::Replace)]);
        assert_eq!(seq, 2);
    }

    #[test]
    fn append_resolves_to_pre_op_length() {
        // Oracle: the array has 3 elements before the add, so the new one
        // lands at index 3; a second append in the same patch lands at 4.
        let patch = Patch::parse(
            r#"[{"op":"add","path":"/evidence/-","value":"e"},{"op":"add","path":"/evidence/-","value":"f"}]"#,
        )
        .unwrap();
        let mut seq = 7;
        let events = extract_events(&value!({"evidence": [1, 2, 3]}), &patch, "w", &mut seq);
        assert_eq!(events[0].path.to_string(), "/evidence/3");
        assert_eq!(events[1].path.to_string(), "/evidence/4");
        assert_eq!((events[0].seq, events[1].seq), (7, 8));
    }

    #[test]
    fn empty_patch_emits_nothing() {
        let mut seq = 0;
        assert!(extract_events(&value!({}), &Patch::default(), "kernel", &mut seq).is_empty());
    }

    #[test]
    fn source_wakes_extractor() {
        let rules = [WorkflowRule::new("/sources/*", "extractor")];
        let e = ev(1, "/sources/0", OpKind::Add);
        let out = schedule(&[e.clone()], &rules, &value!({"sources": ["s"]}));
        assert_eq!(out, vec![Invocation { worker: "extractor".into(), event: e }]);
    }

    #[test]
    fn condition_gates_invocation() {
        let rules = [WorkflowRule::new("/claims/-", "verifier")
            .with_condition(Condition::equals("/claims/0/status", value!("unverified")).unwrap())];
        let e = ev(1, "/claims/0", OpKind::Add);
        assert!(schedule(&[e.clone()], &rules, &value!({"claims": [{"status": "verified"}]})).is_empty());
        assert_eq!(schedule(&[e], &rules, &value!({"claims": [{"status": "unverified"}]})).len(), 1);
    }

    #[test]
    fn rule_event_matrix_order() {
        // Hand-enumerated matrix: e1 matches r1 and r2, e2 matches r2 only.
        // Expected order: (e1,r1) (e1,r2) (e2,r2).
        let rules = [WorkflowRule::new("/a", "first"), WorkflowRule::new("/*", "second")];
        let e1 = ev(1, "/a", OpKind::Replace);
        let e2 = ev(2, "/b", OpKind::Replace);
        let out = schedule(&[e1.clone(), e2.clone()], &rules, &value!({}));
        let got: Vec<_> = out.iter().map(|i| (i.worker.as_str(), i.event.seq)).collect();
        assert_eq!(got, [("first", 1), ("second", 1), ("second", 2)]);
    }

    #[test]
    fn op_filter_and_append_trigger() {
        let rule = WorkflowRule::new("/claims/-", "verifier").with_op(OpKind::Add);
        assert!(rule.trigger.matches(&ev(1, "/claims/4", OpKind::Add)));
        assert!(!rule.trigger.matches(&ev(1, "/claims/4", OpKind::Replace)));
        assert!(!rule.trigger.matches(&ev(1, "/claims/x", OpKind::Add)));
    }

    #[test]
    fn initial_queue_respects_conditions() {
        // Condition evaluated by hand on the initial state: mode is "fast",
        // so only the first rule fires.
        let state = value!({"mode": "fast"});
        let rules = [
            WorkflowRule::new("", "planner").on_init(),
            WorkflowRule::new("", "auditor")
                .on_init()
                .with_condition(Condition::equals("/mode", value!("slow")).unwrap()),
            WorkflowRule::new("/x", "never"),
        ];
        let (queue, warning) = initial_queue(&rules, &state);
        assert_eq!(queue.len(), 1);
        assert_eq!(queue.peek().unwrap().worker, "planner");
        assert_eq!(queue.peek().unwrap().event, Event::init());
        assert_eq!(warning, None);
        let (empty, warning) = initial_queue(&rules[2..], &state);
        assert!(empty.is_empty());
        assert_eq!(warning, Some(ScheduleWarning::EmptyInitialQueue));
    }

    #[test]
    fn relative_conditions() {
        let c = Condition::equals("../approved", value!(true)).unwrap();
        let e = ev(3, "/actions/0/status", OpKind::Replace);
        assert!(c.holds(&e, &value!({"actions": [{"status": "x", "approved": true}]})));
        assert!(!c.holds(&e, &value!({"actions": [{"status": "x", "approved": false}]})));
        let here = Condition::not_equals(".", Value::Null).unwrap();
        assert!(here.holds(&e, &value!({"actions": [{"status": "x"}]})));
        assert_eq!(ConditionPath::parse("../../a/b").unwrap(), ConditionPath::Relative {
            up: 2,
            rest: vec!["a".into(), "b".into()]
        });
        assert!(ConditionPath::parse("x/y").is_err());
        assert_eq!(ConditionPath::parse("../../a").unwrap().to_string(), "../../a");
    }

    #[test]
    fn missing_literal_reads_as_null() {
        let c = Condition::equals("/hint", Value::Null).unwrap();
        assert!(c.holds(&Event::init(), &value!({})));
        let wild = Condition::equals("/xs/*", Value::Null).unwrap();
        assert!(!wild.holds(&Event::init(), &value!({"xs": []})));
    }

    #[test]
    fn queue_front_and_back() {
        let mut q = InvocationQueue::new();
        q.push_back(Invocation { worker: "a".into(), event: Event::init() });
        q.push_front(Invocation { worker: "b".into(), event: Event::init() });
        assert_eq!(q.pop().unwrap().worker, "b");
        assert_eq!(q.pop().unwrap().worker, "a");
        assert!(q.pop().is_none());
    }
}
