//! Budgeted worker views.
//!
//! A view starts as the worker's readable projection of the state. When it
//! is larger than the worker's character budget it is shrunk in steps:
//!
//! 1. arrays are collapsed to `{"$count": n}` (lowest priority first),
//!    keeping pinned elements under their index;
//! 2. whole non-active members are dropped, lowest priority first;
//! 3. expanded elements are cut down to their required members and `id`;
//! 4. as a last resort only the active fields are kept.
//!
//! Everything removed along the way becomes a handle candidate. Handles
//! are then added most recent first while they fit.
//!
//! Priority tiers: active fields (blueprint `active_paths` plus the event
//! path), then schema-required fields, then fields written within the
//! rejection-feedback window, then the rest.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contracts::{PathPattern, ReadContract};
use crate::harness::WorkerSpec;
use crate::kernel::{Outcome, Stage, Transaction};
use crate::schema::Schema;
use crate::scheduler::Event;
use crate::state::{canonical_chars, canonical_string, hash_state, resolve_pointer, Map, Pointer, StateHash, Value};

/// Number of trailing transactions scanned for rejection feedback.
pub const FEEDBACK_WINDOW: usize = 10;
pub const SUMMARY_MAX_CHARS: usize = 120;
/// Marker key of a collapsed array.
pub const COUNT_KEY: &str = "$count";
/// Where workers append expansion requests.
pub const EXPANSION_PATH: &str = "/requests/expansions/-";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handle {
    pub id: String,
    pub path: Pointer,
    pub summary: String,
}

impl Handle {
    fn to_value(&self) -> Value {
        crate::value!({"id": self.id.clone(), "path": self.path.to_string(), "summary": self.summary.clone()})
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionNote {
    pub seq: u64,
    pub stage: Stage,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub fields: Value,
    pub schema_fragment: Value,
    pub rejections: Vec<RejectionNote>,
    pub handles: Vec<Handle>,
    pub budget_limit: u64,
    pub budget_used: u64,
}

impl View {
    pub fn empty(budget_limit: u64) -> View {
        View {
            fields: Value::object(),
            schema_fragment: Value::object(),
            rejections: Vec::new(),
            handles: Vec::new(),
            budget_limit,
            budget_used: canonical_chars(&Value::object()) as u64 + 2,
        }
    }

    /// The document handed to workers.
    pub fn to_value(&self) -> Value {
        let rejections = self
            .rejections
            .iter()
            .map(|r| crate::value!({"seq": r.seq, "stage": r.stage.as_str(), "reason": r.reason.clone()}))
            .collect::<Vec<_>>();
        let mut map = Map::new();
        map.insert("fields".into(), self.fields.clone());
        map.insert("schema_fragment".into(), self.schema_fragment.clone());
        map.insert("rejections".into(), Value::Array(rejections));
        map.insert("handles".into(), handles_value(&self.handles));
        map.insert(
            "budget".into(),
            crate::value!({"limit": self.budget_limit, "used": self.budget_used}),
        );
        Value::Object(map)
    }

    /// Field value at `path`, if present in the view.
    pub fn field(&self, path: &Pointer) -> Option<&Value> {
        resolve_pointer(&self.fields, path)
    }
}

fn handles_value(handles: &[Handle]) -> Value {
    Value::Array(handles.iter().map(Handle::to_value).collect())
}

pub fn view_hash(view: &View) -> StateHash {
    hash_state(&view.to_value())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SliceError {
    #[error("view for {worker} needs {needed} characters of active fields but its budget is {budget}")]
    BudgetInfeasible { worker: String, needed: u64, budget: u64 },
}

/// Last write (transaction seq) per concrete path. Initial content counts
/// as written by transaction 0.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WriteHistory {
    last: BTreeMap<Pointer, u64>,
}

impl WriteHistory {
    pub fn record(&mut self, path: Pointer, txn_seq: u64) {
        self.last.insert(path, txn_seq);
    }

    /// Latest write at, above or below `path`.
    pub fn last_touch(&self, path: &Pointer) -> u64 {
        let below = self
            .last
            .range(path.clone()..)
            .take_while(|(p, _)| p.starts_with(path))
            .map(|(_, s)| *s)
            .max()
            .unwrap_or(0);
        let mut above = 0;
        let mut cursor = path.parent();
        while let Some(p) = cursor {
            above = above.max(self.last.get(&p).copied().unwrap_or(0));
            cursor = p.parent();
        }
        below.max(above)
    }
}

/// Stable handle id: first 12 hex chars of SHA-256 over the path, a NUL
/// byte, and the element's `id` member (or its state hash).
pub fn handle_id(path: &Pointer, element: &Value) -> String {
    let identity = match element.get("id") {
        Some(id) => canonical_string(id),
        None => hash_state(element).to_hex(),
    };
    let mut hasher = Sha256::new();
    hasher.update(path.to_string().as_bytes());
    hasher.update([0u8]);
    hasher.update(identity.as_bytes());
    hex::encode(hasher.finalize())[..12].to_owned()
}

/// `"<type> id=<identifier> from txn #<seq>"`, capped at 120 characters.
pub fn summarize(path: &Pointer, element: &Value, seq: u64) -> String {
    let ident = match element.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(v @ Value::Number(_)) => canonical_string(v),
        _ => path.last().unwrap_or("").to_owned(),
    };
    let text = format!("{} id={} from txn #{}", element.type_name(), ident, seq);
    if text.chars().count() <= SUMMARY_MAX_CHARS {
        text
    } else {
        text.chars().take(SUMMARY_MAX_CHARS).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Cover {
    None,
    Below,
    Exact,
    Full,
}

fn read_cover(read: &ReadContract, path: &Pointer) -> Cover {
    read.entries
        .iter()
        .map(|e| {
            if e.subtree && e.pattern.matches(path, true) {
                Cover::Full
            } else if e.pattern.matches(path, false) {
                Cover::Exact
            } else if e.pattern.is_below(path) {
                Cover::Below
            } else {
                Cover::None
            }
        })
        .max()
        .unwrap_or(Cover::None)
}

fn pattern_cover(patterns: &[PathPattern], path: &Pointer) -> Cover {
    if patterns.iter().any(|p| p.matches(path, true)) {
        Cover::Full
    } else if patterns.iter().any(|p| p.is_below(path)) {
        Cover::Below
    } else {
        Cover::None
    }
}

/// Projects `node` onto the paths accepted by `cover`. Containers that are
/// only partially covered keep their shape; array slots in front of a kept
/// element are padded with null.
fn project(node: &Value, at: &Pointer, cover: &dyn Fn(&Pointer) -> Cover) -> Option<Value> {
    match cover(at) {
        Cover::None => None,
        Cover::Full => Some(node.clone()),
        c => match node {
            Value::Object(map) => Some(Value::Object(
                map.iter()
                    .filter_map(|(k, v)| Some((k.clone(), project(v, &at.child(k.clone()), cover)?)))
                    .collect(),
            )),
            Value::Array(items) => {
                let mut out: Vec<Value> = Vec::new();
                for (i, item) in items.iter().enumerate() {
                    if let Some(v) = project(item, &at.index_child(i), cover) {
                        out.resize(i, Value::Null);
                        out.push(v);
                    }
                }
                Some(Value::Array(out))
            }
            scalar if c == Cover::Exact => Some(scalar.clone()),
            _ => None,
        },
    }
}

/// The readable projection of `state` under `read`.
pub fn readable_projection(state: &Value, read: &ReadContract) -> Value {
    project(state, &Pointer::root(), &|p| read_cover(read, p)).unwrap_or_else(Value::object)
}

/// Everything needed to build one view.
pub struct SliceRequest<'a> {
    pub state: &'a Value,
    pub worker: &'a WorkerSpec,
    pub budget: u64,
    pub schema: &'a Schema,
    /// Blueprint-declared active paths.
    pub active: &'a [PathPattern],
    pub event: &'a Event,
    pub log_tail: &'a [Transaction],
    pub history: &'a WriteHistory,
    /// Handle paths the worker asked to expand.
    pub expansions: &'a [Pointer],
}

struct Candidate {
    path: Pointer,
    handle: Handle,
    touched: u64,
}

struct Shrinker<'r, 'a> {
    req: &'r SliceRequest<'a>,
    active: Vec<PathPattern>,
    pins: Vec<Pointer>,
    recent_floor: Option<u64>,
    fields: Value,
    candidates: Vec<Candidate>,
}

impl<'r, 'a> Shrinker<'r, 'a> {
    fn is_active(&self, path: &Pointer) -> bool {
        self.active.iter().any(|p| p.matches(path, true))
    }

    /// True when `path` is an ancestor of (or equal to) active or pinned
    /// content, so removing it would remove that content.
    fn protects(&self, path: &Pointer) -> bool {
        self.active.iter().any(|p| p.is_below(path) || p.matches(path, true))
            || self.pins.iter().any(|pin| pin.starts_with(path))
    }

    fn is_pinned_within(&self, path: &Pointer) -> bool {
        self.pins.iter().any(|pin| path.starts_with(pin))
    }

    fn tier(&self, path: &Pointer) -> u8 {
        if self.is_active(path) {
            1
        } else if self.req.schema.is_required_path(path) {
            2
        } else if self.recent_floor.is_some_and(|f| self.req.history.last_touch(path) >= f) {
            3
        } else {
            4
        }
    }

    fn fields_size(&self) -> u64 {
        canonical_chars(&self.fields) as u64
    }

    fn fits(&self) -> bool {
        // An empty handle list still serializes as `[]`.
        self.fields_size() + 2 <= self.req.budget
    }

    fn candidate(&mut self, path: Pointer) {
        let Some(element) = resolve_pointer(self.req.state, &path) else { return };
        let touched = self.req.history.last_touch(&path);
        let handle = Handle {
            id: handle_id(&path, element),
            summary: summarize(&path, element, touched),
            path: path.clone(),
        };
        self.candidates.push(Candidate { path, handle, touched });
    }

    fn collapse_arrays(&mut self) {
        while !self.fits() {
            let mut arrays = Vec::new();
            collect(&self.fields, &Pointer::root(), &mut |p, v| {
                if matches!(v, Value::Array(_)) {
                    arrays.push(p.clone());
                }
            });
            let pick = arrays
                .into_iter()
                .filter(|p| !self.is_active(p) && !self.is_pinned_within(p))
                .min_by_key(|p| (Reverse(self.tier(p)), self.req.history.last_touch(p), Reverse(p.len()), p.clone()));
            let Some(path) = pick else { return };
            let items = match resolve_pointer(&self.fields, &path) {
                Some(Value::Array(items)) => items.clone(),
                _ => return,
            };
            let mut collapsed = Map::new();
            collapsed.insert(COUNT_KEY.into(), Value::int(items.len() as i64));
            for (i, item) in items.into_iter().enumerate() {
                let child = path.index_child(i);
                if self.protects(&child) {
                    collapsed.insert(i.to_string(), item);
                } else {
                    self.candidate(child);
                }
            }
            set(&mut self.fields, &path, Value::Object(collapsed));
        }
    }

    fn drop_members(&mut self) {
        while !self.fits() {
            let mut members = Vec::new();
            collect(&self.fields, &Pointer::root(), &mut |p, _| {
                if !p.is_root() && p.last() != Some(COUNT_KEY) {
                    members.push(p.clone());
                }
            });
            let pick = members
                .into_iter()
                .filter(|p| !self.protects(p) && !self.is_pinned_within(p))
                .min_by_key(|p| (Reverse(self.tier(p)), p.len(), self.req.history.last_touch(p), p.clone()));
            let Some(path) = pick else { return };
            remove(&mut self.fields, &path);
            self.candidate(path);
        }
    }

    /// Cuts expanded elements down to their required members plus `id`.
    fn truncate_pins(&mut self) {
        for pin in self.pins.clone() {
            if self.fits() {
                return;
            }
            let keep: BTreeSet<String> = self
                .req
                .schema
                .required_members(&pin)
                .into_iter()
                .chain(["id".to_owned()])
                .collect();
            let Some(Value::Object(map)) = resolve_pointer(&self.fields, &pin).cloned() else { continue };
            let mut kept = Map::new();
            for (k, v) in map {
                if keep.contains(&k) {
                    kept.insert(k, v);
                } else {
                    self.candidate(pin.child(k));
                }
            }
            set(&mut self.fields, &pin, Value::Object(kept));
        }
    }
}

/// Visits every node below the root in document order.
fn collect(node: &Value, at: &Pointer, visit: &mut dyn FnMut(&Pointer, &Value)) {
    let children: Vec<(String, &Value)> = match node {
        Value::Object(map) => map.iter().map(|(k, v)| (k.clone(), v)).collect(),
        Value::Array(items) => items.iter().enumerate().map(|(i, v)| (i.to_string(), v)).collect(),
        _ => return,
    };
    for (key, child) in children {
        let path = at.child(key);
        visit(&path, child);
        collect(child, &path, visit);
    }
}

fn get_mut<'v>(node: &'v mut Value, path: &Pointer) -> Option<&'v mut Value> {
    let mut current = node;
    for segment in path.segments() {
        current = match current {
            Value::Object(map) => map.get_mut(segment)?,
            Value::Array(items) => items.get_mut(crate::state::parse_index(segment)?)?,
            _ => return None,
        };
    }
    Some(current)
}

fn set(node: &mut Value, path: &Pointer, value: Value) {
    if let Some(slot) = get_mut(node, path) {
        *slot = value;
    }
}

fn remove(node: &mut Value, path: &Pointer) {
    let (Some(parent), Some(key)) = (path.parent(), path.last()) else { return };
    match get_mut(node, &parent) {
        Some(Value::Object(map)) => {
            map.remove(key);
        }
        Some(Value::Array(items)) => {
            if let Some(slot) = crate::state::parse_index(key).and_then(|i| items.get_mut(i)) {
                *slot = Value::Null;
            }
        }
        _ => {}
    }
}

/// Paths named by the operations of a logged patch, as far as they parse.
fn logged_paths(patch: &Value) -> Vec<Pointer> {
    patch
        .as_array()
        .map(|ops| {
            ops.iter()
                .filter_map(|op| op.get("path")?.as_str().and_then(|p| Pointer::parse(p).ok()))
                .collect()
        })
        .unwrap_or_default()
}

fn rejection_feedback(worker: &WorkerSpec, tail: &[Transaction]) -> Vec<RejectionNote> {
    let start = tail.len().saturating_sub(FEEDBACK_WINDOW);
    tail[start..]
        .iter()
        .filter_map(|txn| match &txn.outcome {
            Outcome::Rejected { stage, reason }
                if txn.worker == worker.name
                    || logged_paths(&txn.patch).iter().any(|p| read_cover(&worker.read, p) >= Cover::Exact) =>
            {
                Some(RejectionNote { seq: txn.seq, stage: *stage, reason: reason.clone() })
            }
            _ => None,
        })
        .collect()
}

/// Builds the view for one invocation.
pub fn slice(req: &SliceRequest<'_>) -> Result<View, SliceError> {
    let mut active = req.active.to_vec();
    if !req.event.path.is_root() {
        active.push(PathPattern::exact(&req.event.path));
    }
    let read = &req.worker.read;
    let readable = readable_projection(req.state, read);
    let pins: Vec<Pointer> = req
        .expansions
        .iter()
        .filter(|p| read_cover(read, p) >= Cover::Exact && resolve_pointer(req.state, p).is_some())
        .cloned()
        .collect();
    let tail_start = req.log_tail.len().saturating_sub(FEEDBACK_WINDOW);
    let recent_floor = req.log_tail.get(tail_start).map(|t| t.seq);
    let mut shrinker = Shrinker { req, active, pins, recent_floor, fields: readable, candidates: Vec::new() };

    // Expanded elements are restored in full before shrinking starts.
    for pin in shrinker.pins.clone() {
        let element = resolve_pointer(req.state, &pin).cloned().unwrap_or(Value::Null);
        set(&mut shrinker.fields, &pin, element);
    }

    shrinker.collapse_arrays();
    shrinker.drop_members();
    shrinker.truncate_pins();
    if !shrinker.fits() {
        let active = shrinker.active.clone();
        let fallback = project(req.state, &Pointer::root(), &|p| read_cover(read, p).min(pattern_cover(&active, p)))
            .unwrap_or_else(Value::object);
        shrinker.fields = fallback;
        shrinker.candidates.clear();
        if !shrinker.fits() {
            return Err(SliceError::BudgetInfeasible {
                worker: req.worker.name.clone(),
                needed: shrinker.fields_size() + 2,
                budget: req.budget,
            });
        }
    }

    let mut candidates = std::mem::take(&mut shrinker.candidates);
    candidates.sort_by(|a, b| b.touched.cmp(&a.touched).then_with(|| a.path.cmp(&b.path)));
    let mut used = shrinker.fields_size() + 2;
    let mut handles = Vec::new();
    let mut seen = BTreeSet::new();
    for c in candidates {
        if !seen.insert(c.handle.id.clone()) {
            continue;
        }
        let cost = canonical_chars(&c.handle.to_value()) as u64 + u64::from(!handles.is_empty());
        if used + cost <= req.budget {
            used += cost;
            handles.push(c.handle);
        }
    }
    handles.sort_by(|a, b| a.path.cmp(&b.path));

    let patterns: Vec<PathPattern> = read.entries.iter().map(|e| e.pattern.clone()).collect();
    Ok(View {
        fields: shrinker.fields,
        schema_fragment: req.schema.fragment(&patterns),
        rejections: rejection_feedback(req.worker, req.log_tail),
        handles,
        budget_limit: req.budget,
        budget_used: used,
    })
}

/// A parsed `{worker, handle_id}` request.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionRequest {
    pub worker: String,
    pub handle_id: String,
}

impl ExpansionRequest {
    pub fn from_value(value: &Value) -> Option<ExpansionRequest> {
        Some(ExpansionRequest {
            worker: value.get("worker")?.as_str()?.to_owned(),
            handle_id: value.get("handle_id")?.as_str()?.to_owned(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("UnknownHandle: {handle_id} was not issued to {worker}")]
pub struct UnknownHandle {
    pub worker: String,
    pub handle_id: String,
}

/// Per-worker record of issued handles and pending expansions.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExpansionLedger {
    issued: BTreeMap<String, BTreeMap<String, Pointer>>,
    pending: BTreeMap<String, Vec<Pointer>>,
}

impl ExpansionLedger {
    pub fn issue(&mut self, worker: &str, handles: &[Handle]) {
        let slot = self.issued.entry(worker.to_owned()).or_default();
        for h in handles {
            slot.insert(h.id.clone(), h.path.clone());
        }
    }

    /// Resolves a request made by `requester` to the handle's path.
    pub fn lookup(&self, requester: &str, request: &ExpansionRequest) -> Result<Pointer, UnknownHandle> {
        let unknown = || UnknownHandle { worker: request.worker.clone(), handle_id: request.handle_id.clone() };
        if request.worker != requester {
            return Err(unknown());
        }
        self.issued
            .get(requester)
            .and_then(|m| m.get(&request.handle_id))
            .cloned()
            .ok_or_else(unknown)
    }

    /// Queues an expansion for the worker's next view.
    pub fn expand(&mut self, requester: &str, request: &ExpansionRequest) -> Result<(), UnknownHandle> {
        let path = self.lookup(requester, request)?;
        let queue = self.pending.entry(requester.to_owned()).or_default();
        if !queue.contains(&path) {
            queue.push(path);
        }
        Ok(())
    }

    pub fn take_pending(&mut self, worker: &str) -> Vec<Pointer> {
        self.pending.remove(worker).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contracts::ReadEntry;
    use crate::kernel::Outcome;
    use crate::value;

    fn reader(paths: &[(&str, bool)], budget: u64) -> WorkerSpec {
        let mut spec = WorkerSpec::new("reader", budget);
        spec.read = ReadContract {
            entries: paths
                .iter()
                .map(|(p, subtree)| ReadEntry { pattern: PathPattern::parse(p).unwrap(), subtree: *subtree })
                .collect(),
        };
        spec
    }

    fn any_schema() -> Schema {
        Schema::compile(&value!({"type": "object"})).unwrap()
    }

    fn build(state: &Value, worker: &WorkerSpec, schema: &Schema, tail: &[Transaction]) -> Result<View, SliceError> {
        slice(&SliceRequest {
            state,
            worker,
            budget: worker.view_budget,
            schema,
            active: &[],
            event: &Event::init(),
            log_tail: tail,
            history: &WriteHistory::default(),
            expansions: &[],
        })
    }

    fn evidence(n: usize) -> Value {
        let items: Vec<Value> = (0..n)
            .map(|i| value!({"id": format!("ev-{i}"), "text": "observed fact number ".repeat(2)}))
            .collect();
        let mut map = Map::new();
        map.insert("evidence".into(), Value::Array(items));
        Value::Object(map)
    }

    #[test]
    fn small_state_is_copied_whole() {
        let state = value!({"q": "apple", "xs": [1, 2]});
        let worker = reader(&[("", true)], 1000);
        let view = build(&state, &worker, &any_schema(), &[]).unwrap();
        assert_eq!(view.fields, state);
        assert!(view.handles.is_empty());
        assert!(view.budget_used <= view.budget_limit);
    }

    #[test]
    fn large_array_becomes_handles() {
        // Oracle: budget arithmetic and a reverse map from handle ids to
        // array elements.
        let state = evidence(100);
        let worker = reader(&[("/evidence", true)], 1000);
        let view = build(&state, &worker, &any_schema(), &[]).unwrap();
        assert!(view.budget_used <= 1000);
        assert_eq!(
            view.budget_used,
            canonical_chars(&view.fields) as u64 + canonical_chars(&handles_value(&view.handles)) as u64
        );
        assert_eq!(view.fields, value!({"evidence": {"$count": 100}}));
        assert!(!view.handles.is_empty());
        let items = state.get("evidence").unwrap().as_array().unwrap();
        let mut seen = BTreeSet::new();
        for h in &view.handles {
            let i: usize = h.path.last().unwrap().parse().unwrap();
            assert_eq!(h.id, handle_id(&h.path, &items[i]));
            assert!(h.summary.contains(&format!("id=ev-{i}")), "{}", h.summary);
            assert!(seen.insert(i));
        }
    }

    #[test]
    fn read_contract_bounds_fields() {
        let state = value!({"task": {"goal": "g", "secret": 1}, "claims": [{"status": "a", "text": "t"}]});
        let worker = reader(&[("/task/goal", false), ("/claims/*/status", false)], 1000);
        let view = build(&state, &worker, &any_schema(), &[]).unwrap();
        assert_eq!(view.fields, value!({"task": {"goal": "g"}, "claims": [{"status": "a"}]}));
    }

    #[test]
    fn non_subtree_container_is_a_shell() {
        let state = value!({"task": {"goal": "g"}});
        let worker = reader(&[("/task", false)], 1000);
        assert_eq!(build(&state, &worker, &any_schema(), &[]).unwrap().fields, value!({"task": {}}));
    }

    #[test]
    fn rejection_feedback_for_same_worker() {
        let txn = Transaction {
            seq: 4,
            worker: "reader".into(),
            event: Event::init(),
            view_hash: hash_state(&Value::Null),
            patch: value!([{"op": "replace", "path": "/x", "value": 1}]),
            outcome: Outcome::Rejected { stage: Stage::Auth, reason: "UnauthorizedWrite at /x".into() },
        };
        let worker = reader(&[("/q", false)], 1000);
        let view = build(&value!({"q": 1}), &worker, &any_schema(), &[txn.clone()]).unwrap();
        assert_eq!(view.rejections, vec![RejectionNote { seq: 4, stage: Stage::Auth, reason: txn.outcome.reason().unwrap().into() }]);
        let mut other = txn;
        other.worker = "someone".into();
        assert!(build(&value!({"q": 1}), &worker, &any_schema(), &[other]).unwrap().rejections.is_empty());
    }

    #[test]
    fn active_fields_survive_and_infeasible_budget_is_reported() {
        let state = value!({"task": {"goal": "put a clean apple on the dining table"}, "log": "x".repeat(400)});
        let worker = reader(&[("", true)], 80);
        let active = [PathPattern::parse("/task").unwrap()];
        let schema = any_schema();
        let history = WriteHistory::default();
        let init = Event::init();
        let req = |budget| SliceRequest {
            state: &state,
            worker: &worker,
            budget,
            schema: &schema,
            active: &active,
            event: &init,
            log_tail: &[],
            history: &history,
            expansions: &[],
        };
        let view = slice(&req(200)).unwrap();
        assert_eq!(view.fields.get("task"), state.get("task"));
        assert!(view.fields.get("log").is_none());
        assert!(matches!(slice(&req(20)), Err(SliceError::BudgetInfeasible { .. })));
    }

    #[test]
    fn expansion_pins_element_and_oversized_one_is_truncated() {
        let state = evidence(30);
        let schema = Schema::compile(&value!({
            "type": "object",
            "properties": {"evidence": {"type": "array", "items": {"type": "object", "required": ["id"]}}}
        }))
        .unwrap();
        let worker = reader(&[("/evidence", true)], 400);
        let pin = Pointer::parse("/evidence/7").unwrap();
        let mk = |budget: u64, worker: &WorkerSpec| {
            slice(&SliceRequest {
                state: &state,
                worker,
                budget,
                schema: &schema,
                active: &[],
                event: &Event::init(),
                log_tail: &[],
                history: &WriteHistory::default(),
                expansions: std::slice::from_ref(&pin),
            })
            .unwrap()
        };
        let view = mk(400, &worker);
        assert_eq!(view.field(&Pointer::parse("/evidence/7").unwrap()), resolve_pointer(&state, &pin));
        // Budget arithmetic: the full element is 64 chars; {"evidence":{"$count":30,"7":...}}
        // wrapping it needs ~30 more, so a 60-char budget cannot hold it but
        // can hold the element cut down to its id.
        let tight = mk(60, &worker);
        assert_eq!(tight.field(&pin), Some(&value!({"id": "ev-7"})));
        assert!(tight.budget_used <= 60);
    }

    #[test]
    fn ledger_is_per_worker() {
        let mut ledger = ExpansionLedger::default();
        let h = Handle { id: "abc".into(), path: Pointer::parse("/e/0").unwrap(), summary: String::new() };
        ledger.issue("a", &[h.clone()]);
        let req = ExpansionRequest { worker: "a".into(), handle_id: "abc".into() };
        assert!(ledger.expand("a", &req).is_ok());
        assert_eq!(ledger.take_pending("a"), vec![h.path]);
        let foreign = ExpansionRequest { worker: "b".into(), handle_id: "abc".into() };
        assert!(ledger.expand("b", &foreign).is_err());
        assert!(ledger.lookup("a", &foreign).is_err());
    }

    #[test]
    fn handle_ids_are_stable_and_summaries_bounded() {
        let p = Pointer::parse("/evidence/3").unwrap();
        let e = value!({"id": "x", "v": 1});
        assert_eq!(handle_id(&p, &e), handle_id(&p, &e.clone()));
        assert_eq!(handle_id(&p, &e).len(), 12);
        assert_ne!(handle_id(&p, &e), handle_id(&Pointer::parse("/evidence/4").unwrap(), &e));
        assert_eq!(summarize(&p, &e, 5), "object id=x from txn #5");
        let long = value!({"id": "y".repeat(300)});
        assert_eq!(summarize(&p, &long, 1).chars().count(), SUMMARY_MAX_CHARS);
    }

    #[test]
    fn write_history_sees_ancestors_and_descendants() {
        let mut h = WriteHistory::default();
        h.record(Pointer::parse("/a/b/c").unwrap(), 3);
        h.record(Pointer::parse("/x").unwrap(), 5);
        assert_eq!(h.last_touch(&Pointer::parse("/a").unwrap()), 3);
        assert_eq!(h.last_touch(&Pointer::parse("/x/y").unwrap()), 5);
        assert_eq!(h.last_touch(&Pointer::parse("/ab").unwrap()), 0);
    }

    #[test]
    fn views_differing_in_budget_used_hash_differently() {
        let mut a = View::empty(10);
        let b = a.clone();
        assert_eq!(view_hash(&a), view_hash(&b));
        a.budget_used += 1;
        assert_ne!(view_hash(&a), view_hash(&b));
    }
}
