//! Seeded random blueprints and workers for fuzzing the kernel.
//!
//! Every blueprint shares one state schema but draws its workers, contracts,
//! rules and invariants from pools. [`RandomWorker`] mostly mutates what it
//! can see, so a useful share of its proposals pass validation, and it mixes
//! in malformed text, unauthorized paths and type errors.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scheduler::Event;
use crate::state::{Pointer, Value};
use crate::value;
use crate::views::View;

use super::worker::{Proposal, Worker, WorkerError};

fn schema() -> Value {
    value!({
        "type": "object",
        "required": ["title", "count", "flag", "mode", "items", "log", "meta"],
        "additionalProperties": false,
        "properties": {
            "title": {"type": "string", "maxLength": 24},
            "count": {"type": "integer", "minimum": 0, "maximum": 100},
            "flag": {"type": "boolean"},
            "mode": {"enum": ["a", "b", "c"]},
            "items": {
                "type": "array",
                "maxItems": 8,
                "items": {
                    "type": "object",
                    "required": ["id", "score"],
                    "additionalProperties": false,
                    "properties": {
                        "id": {"type": "string", "pattern": "^i[0-9]+$"},
                        "score": {"type": "number", "minimum": 0, "maximum": 1},
                        "tag": {"type": ["string", "null"]}
                    }
                }
            },
            "log": {"type": "array", "maxItems": 12, "items": {"type": "string", "maxLength": 16}},
            "meta": {
                "type": "object",
                "required": ["owner"],
                "properties": {
                    "owner": {"type": "string", "minLength": 1},
                    "version": {"type": "integer", "minimum": 0}
                }
            }
        }
    })
}

fn initial_state() -> Value {
    value!({
        "title": "start",
        "count": 0,
        "flag": false,
        "mode": "a",
        "items": [{"id": "i0", "score": 0.5, "tag": null}],
        "log": [],
        "meta": {"owner": "root", "version": 0}
    })
}

const WRITE_POOL: &[(&str, &[&str], bool)] = &[
    ("/title", &["replace"], false),
    ("/count", &["replace"], false),
    ("/flag", &["replace"], false),
    ("/mode", &["replace"], false),
    ("/items/-", &["add"], false),
    ("/items/*/score", &["replace"], false),
    ("/items/*/tag", &["replace", "add"], false),
    ("/log/-", &["add"], false),
    ("/meta/version", &["replace"], false),
    ("/meta", &["replace", "add"], true),
    ("/items", &["add", "replace"], true),
];

const READ_POOL: &[(&str, bool)] = &[
    ("", true),
    ("/items", true),
    ("/meta", true),
    ("/title", false),
    ("/count", false),
    ("/log", true),
    ("/mode", false),
];

const TRIGGER_POOL: &[&str] = &["", "/items/-", "/log/-", "/count", "/meta", "/items/*/score", "/flag"];

/// A random but always valid blueprint for `seed`.
pub fn random_blueprint(seed: u64) -> Value {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=5);
    let names: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
    let mut workers = Vec::new();
    for name in &names {
        let mut write = Vec::new();
        let k = rng.gen_range(1..=3);
        for &(path, ops, subtree) in WRITE_POOL.choose_multiple(&mut rng, k) {
            write.push(value!({"path": path, "ops": ops.to_vec(), "subtree": subtree}));
        }
        // Workers see what they may write, plus one or two other regions.
        let mut read: Vec<Value> = write
            .iter()
            .filter_map(|w| w.get("path").and_then(Value::as_str))
            .map(|p| value!({"path": p.strip_suffix("/-").unwrap_or(p), "subtree": true}))
            .collect();
        let k = rng.gen_range(1..=2);
        for &(path, subtree) in READ_POOL.choose_multiple(&mut rng, k) {
            read.push(value!({"path": path, "subtree": subtree}));
        }
        let privileged = rng.gen_bool(0.1);
        let mut worker = value!({
            "name": name.clone(),
            "read": Value::Array(read),
            "write": Value::Array(write),
            "view_budget": rng.gen_range(300u64..3000)
        });
        if privileged {
            if let Value::Object(m) = &mut worker {
                m.insert("privileged".into(), Value::Bool(true));
                m.insert("allowed_ops".into(), value!(["add", "replace", "test", "remove"]));
                if let Some(Value::Array(w)) = m.get_mut("write") {
                    w.push(value!({"path": "/items/*", "ops": ["remove"]}));
                }
            }
        }
        workers.push(worker);
    }
    let mut rules: Vec<Value> =
        names.iter().map(|name| value!({"trigger": {"path": ""}, "action": name.clone(), "on_init": true})).collect();
    rules.push(value!({"trigger": {"path": "", "subtree": true}, "action": names.choose(&mut rng).expect("non-empty").clone()}));
    for _ in 0..rng.gen_range(n..=2 * n) {
        let path = *TRIGGER_POOL.choose(&mut rng).expect("non-empty");
        let mut trigger = value!({"path": path, "subtree": path.is_empty() || rng.gen_bool(0.3)});
        if rng.gen_bool(0.3) {
            if let Value::Object(m) = &mut trigger {
                m.insert("op".into(), value!(["add", "replace"][rng.gen_range(0..2)]));
            }
        }
        let mut rule = value!({"trigger": trigger, "action": names.choose(&mut rng).expect("non-empty").clone()});
        if rng.gen_bool(0.2) {
            if let Value::Object(m) = &mut rule {
                m.insert("condition".into(), value!({"path": "/flag", "equals": rng.gen_bool(0.5)}));
            }
        }
        rules.push(rule);
    }
    let pool = [
        value!({"name": "version-up", "path": "/meta/version", "predicate": {"kind": "non_decreasing_number"}}),
        value!({"name": "log-append", "path": "/log", "predicate": {"kind": "append_only_array"}}),
        value!({"name": "owner-fixed", "path": "/meta/owner", "predicate": {"kind": "immutable_once_set"}}),
        value!({"name": "mode-cycle", "path": "/mode", "predicate": {"kind": "enum_transition", "allowed": [["a", "b"], ["b", "c"], ["c", "a"]]}}),
        value!({"name": "items-append", "path": "/items", "predicate": {"kind": "append_only_array"}}),
    ];
    let k = rng.gen_range(0..=pool.len());
    let invariants: Vec<Value> = pool.choose_multiple(&mut rng, k).cloned().collect();
    value!({
        "version": 1,
        "schema": schema(),
        "initial_state": initial_state(),
        "workers": Value::Array(workers),
        "rules": Value::Array(rules),
        "invariants": Value::Array(invariants),
        "budgets": {
            "max_worker_invocations": rng.gen_range(100u64..=140),
            "circuit": {"invalid_threshold": 50, "noop_threshold": 6, "cycle_window": 3}
        }
    })
}

/// Names of the workers in a blueprint, in declaration order.
pub fn worker_names(blueprint: &Value) -> Vec<String> {
    blueprint
        .get("workers")
        .and_then(Value::as_array)
        .map(|ws| ws.iter().filter_map(|w| w.get("name")?.as_str().map(str::to_owned)).collect())
        .unwrap_or_default()
}

/// A seeded worker proposing random patches against whatever it can see.
pub struct RandomWorker {
    rng: ChaCha8Rng,
}

impl RandomWorker {
    pub fn new(seed: u64) -> Self {
        RandomWorker { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn scalar(&mut self) -> Value {
        match self.rng.gen_range(0..6) {
            0 => Value::Null,
            1 => Value::Bool(self.rng.gen()),
            2 => Value::int(self.rng.gen_range(-5..120)),
            3 => Value::number((self.rng.gen_range(0..=10) as f64) / 10.0).expect("finite"),
            4 => Value::string(["a", "b", "c", "d"][self.rng.gen_range(0..4)]),
            _ => Value::string(format!("i{}", self.rng.gen_range(0..30))),
        }
    }

    fn mutate(&mut self, v: &Value) -> Value {
        match v {
            Value::Bool(b) => Value::Bool(!b),
            Value::Number(n) => {
                let delta = [-1.0, 1.0, 2.0, 0.25][self.rng.gen_range(0..4)];
                Value::number(n.get() + delta).unwrap_or(Value::int(0))
            }
            Value::String(s) => {
                let mut s = s.clone();
                if s.len() > 12 || self.rng.gen_bool(0.3) {
                    s.clear();
                }
                s.push(['x', 'y', 'z', '7'][self.rng.gen_range(0..4)]);
                Value::String(s)
            }
            Value::Object(m) if !m.is_empty() => {
                let mut m = m.clone();
                let keys: Vec<String> = m.keys().cloned().collect();
                let k = keys.choose(&mut self.rng).expect("non-empty").clone();
                let next = self.mutate(&m[&k]);
                m.insert(k, next);
                Value::Object(m)
            }
            Value::Array(items) if !items.is_empty() => {
                let pick = items.choose(&mut self.rng).expect("non-empty").clone();
                self.mutate(&pick)
            }
            _ => self.scalar(),
        }
    }

    fn element_for(&mut self, array: &[Value], at: &Pointer) -> Value {
        if let Some(sample) = array.choose(&mut self.rng) {
            let mut v = sample.clone();
            if let Value::Object(m) = &mut v {
                m.insert("id".into(), Value::string(format!("i{}", self.rng.gen_range(1..40))));
                if self.rng.gen_bool(0.5) {
                    let s = Value::number(self.rng.gen_range(0..=10) as f64 / 10.0).expect("finite");
                    m.insert("score".into(), s);
                }
            } else {
                v = self.mutate(&v);
            }
            return v;
        }
        match at.last() {
            Some("log") => Value::string(format!("entry {}", self.rng.gen_range(0..99))),
            _ => value!({"id": format!("i{}", self.rng.gen_range(1..40)), "score": 0.5}),
        }
    }

    fn op(&mut self, locations: &[(Pointer, Value)]) -> Value {
        let outside = ["/title", "/count", "/flag", "/mode", "/items/-", "/log/-", "/meta/owner", "/meta/version", "/runtime/halt_reason", "/nope"];
        if locations.is_empty() || self.rng.gen_bool(0.15) {
            let path = *outside.choose(&mut self.rng).expect("non-empty");
            let op = ["add", "replace", "test"][self.rng.gen_range(0..3)];
            return value!({"op": op, "path": path, "value": self.scalar()});
        }
        let (path, current) = locations.choose(&mut self.rng).expect("non-empty").clone();
        let roll = self.rng.gen_range(0..100);
        match (&current, roll) {
            (Value::Array(items), 0..=54) => {
                let el = self.element_for(items, &path);
                value!({"op": "add", "path": path.child("-").to_string(), "value": el})
            }
            (_, 0..=59) => value!({"op": "replace", "path": path.to_string(), "value": self.mutate(&current)}),
            (_, 60..=74) => {
                let expected = if self.rng.gen_bool(0.8) { current.clone() } else { self.mutate(&current) };
                value!({"op": "test", "path": path.to_string(), "value": expected})
            }
            (_, 75..=84) => value!({"op": "replace", "path": path.to_string(), "value": self.scalar()}),
            (_, 85..=91) => value!({"op": "remove", "path": path.to_string()}),
            _ => {
                let key = ["tag", "extra", "owner", "version"][self.rng.gen_range(0..4)];
                value!({"op": "add", "path": path.child(key).to_string(), "value": self.scalar()})
            }
        }
    }
}

fn locations(v: &Value, at: Pointer, out: &mut Vec<(Pointer, Value)>) {
    if !at.is_root() {
        out.push((at.clone(), v.clone()));
    }
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                locations(child, at.child(k.clone()), out);
            }
        }
        Value::Array(items) => {
            for (i, child) in items.iter().enumerate() {
                // Arrays padded for partial readability hold nulls.
                if !child.is_null() {
                    locations(child, at.index_child(i), out);
                }
            }
        }
        _ => {}
    }
}

impl Worker for RandomWorker {
    fn invoke(&mut self, view: &View, _event: &Event) -> Result<Proposal, WorkerError> {
        let mut locs = Vec::new();
        locations(&view.fields, Pointer::root(), &mut locs);
        let roll = self.rng.gen_range(0..100);
        if roll < 4 {
            let text = format!("[{{\"op\":\"add\",\"path\":\"/log/-\",\"value\":\"{}", self.rng.gen_range(0..9));
            return Ok(Proposal::Raw(text));
        }
        if roll < 7 {
            let doc = [value!({"op": "add"}), value!([{"op": "move", "from": "/title", "path": "/log/-"}]), value!("nope")]
                [self.rng.gen_range(0..3)]
            .clone();
            return Ok(Proposal::Document(doc));
        }
        if roll < 8 {
            return Ok(Proposal::empty());
        }
        let n = self.rng.gen_range(1..=3);
        let ops: Vec<Value> = (0..n).map(|_| self.op(&locs)).collect();
        Ok(Proposal::Document(Value::Array(ops)))
    }
}
