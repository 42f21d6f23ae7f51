//! Scenario files: a blueprint, a request, and a worker implementation for
//! every blueprint worker.
//!
//! ```json
//! {
//!   "name": "claims",
//!   "blueprint": "blueprint.json",
//!   "request": "...",
//!   "workers": {
//!     "extractor": {"script": "extractor.json"},
//!     "verifier": {"native": "minienv-verifier"},
//!     "fuzzer": {"random": {"seed": 3}},
//!     "external": {"command": ["python3", "worker.py"], "timeout_ms": 5000},
//!     "quiet": {"idle": true}
//!   },
//!   "ground_truth": {...},
//!   "faults": {...}
//! }
//! ```
//!
//! File references are resolved against the scenario's directory. The two
//! scenarios shipped in `scenarios/` are also compiled in and available
//! through [`Scenario::builtin`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use crate::kernel::WorkerRegistry;
use crate::state::{Pointer, Value};

use super::env::{EnvExecutor, EnvVerifier};
use super::fault::{FaultKind, FaultPayload};
use super::random::RandomWorker;
use super::scripted::ScriptedWorker;
use super::worker::{CommandWorker, IdleWorker, Worker};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{file}: {message}")]
    Parse { file: String, message: String },
    #[error("scenario: {0}")]
    Invalid(String),
}

/// How one blueprint worker is implemented.
#[derive(Clone, Debug)]
pub enum Binding {
    Script(ScriptedWorker),
    Native(String),
    Random { seed: u64 },
    Command { argv: Vec<String>, timeout: Duration },
    Idle,
}

impl Binding {
    /// Instantiates the worker. `seed` offsets random workers.
    pub fn instantiate(&self, seed: u64) -> Result<Box<dyn Worker>, ScenarioError> {
        Ok(match self {
            Binding::Script(s) => Box::new(s.clone()),
            Binding::Native(name) => match name.as_str() {
                "minienv-verifier" => Box::new(EnvVerifier),
                "minienv-executor" => Box::new(EnvExecutor),
                other => return Err(ScenarioError::Invalid(format!("unknown native worker {other:?}"))),
            },
            Binding::Random { seed: base } => Box::new(RandomWorker::new(base.wrapping_add(seed))),
            Binding::Command { argv, timeout } => {
                let args: Vec<&str> = argv[1..].iter().map(String::as_str).collect();
                Box::new(CommandWorker::new(&argv[0], &args, *timeout))
            }
            Binding::Idle => Box::new(IdleWorker),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub path: Pointer,
    pub subject: String,
    pub value: String,
    pub facts: BTreeMap<String, String>,
}

impl GroundTruth {
    /// Records under `path` whose subject is known and whose value differs
    /// from the table.
    pub fn false_claims<'a>(&self, state: &'a Value) -> Vec<&'a Value> {
        let Some(records) = crate::state::resolve_pointer(state, &self.path).and_then(Value::as_array) else {
            return Vec::new();
        };
        records
            .iter()
            .filter(|r| {
                let subject = r.get(&self.subject).and_then(Value::as_str);
                let value = r.get(&self.value).and_then(Value::as_str);
                match (subject.and_then(|s| self.facts.get(s)), value) {
                    (Some(truth), Some(v)) => truth != v,
                    _ => false,
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToggleSpec {
    pub path: Pointer,
    pub values: (Value, Value),
}

/// Where and how one fault type is injected in a scenario.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultPlan {
    pub worker: String,
    /// Half-open range of invocation indices to pick the firing one from.
    pub fire_range: (u64, u64),
    #[serde(default)]
    pub payloads: Vec<Value>,
    #[serde(default)]
    pub toggle: Option<ToggleSpec>,
}

pub const MARKER: &str = "${marker}";

fn mark(v: &Value, marker: &str) -> Value {
    match v {
        Value::String(s) => Value::String(s.replace(MARKER, marker)),
        Value::Array(items) => Value::Array(items.iter().map(|x| mark(x, marker)).collect()),
        Value::Object(m) => Value::Object(m.iter().map(|(k, x)| (k.clone(), mark(x, marker))).collect()),
        other => other.clone(),
    }
}

impl FaultPlan {
    /// Number of payload variants to choose from.
    pub fn variants(&self) -> usize {
        if self.toggle.is_some() {
            1
        } else {
            self.payloads.len()
        }
    }

    /// The payload for `variant` with `${marker}` replaced. Strings become
    /// raw bytes and anything else a JSON document.
    pub fn payload(&self, variant: usize, marker: &str) -> Option<FaultPayload> {
        if let Some(t) = &self.toggle {
            return Some(FaultPayload::Toggle { path: t.path.clone(), a: mark(&t.values.0, marker), b: mark(&t.values.1, marker) });
        }
        Some(match mark(self.payloads.get(variant)?, marker) {
            Value::String(text) => FaultPayload::Raw(text),
            doc => FaultPayload::Document(doc),
        })
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub blueprint: Value,
    pub request: Option<Value>,
    pub bindings: BTreeMap<String, Binding>,
    pub ground_truth: Option<GroundTruth>,
    pub faults: BTreeMap<FaultKind, FaultPlan>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default)]
    name: Option<String>,
    blueprint: Value,
    #[serde(default)]
    request: Option<Value>,
    workers: BTreeMap<String, Value>,
    #[serde(default)]
    ground_truth: Option<GroundTruth>,
    #[serde(default)]
    faults: BTreeMap<FaultKind, FaultPlan>,
}

const BUILTIN: &[(&str, &str, &str)] = &[
    ("clean_and_place", "scenario.json", include_str!("../../scenarios/clean_and_place/scenario.json")),
    ("clean_and_place", "blueprint.json", include_str!("../../scenarios/clean_and_place/blueprint.json")),
    ("clean_and_place", "planner.json", include_str!("../../scenarios/clean_and_place/planner.json")),
    ("clean_and_place", "actor.json", include_str!("../../scenarios/clean_and_place/actor.json")),
    ("claims", "scenario.json", include_str!("../../scenarios/claims/scenario.json")),
    ("claims", "blueprint.json", include_str!("../../scenarios/claims/blueprint.json")),
    ("claims", "collector.json", include_str!("../../scenarios/claims/collector.json")),
    ("claims", "extractor.json", include_str!("../../scenarios/claims/extractor.json")),
    ("claims", "verifier.json", include_str!("../../scenarios/claims/verifier.json")),
    ("claims", "synthesizer.json", include_str!("../../scenarios/claims/synthesizer.json")),
    ("random_walk", "scenario.json", include_str!("../../scenarios/random_walk/scenario.json")),
    ("random_walk", "blueprint.json", include_str!("../../scenarios/random_walk/blueprint.json")),
];

fn parse(file: &str, text: &str) -> Result<Value, ScenarioError> {
    Value::parse(text).map_err(|e| ScenarioError::Parse { file: file.to_owned(), message: e.to_string() })
}

impl Scenario {
    pub const BUILTIN_NAMES: [&'static str; 3] = ["clean_and_place", "claims", "random_walk"];

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let read = |file: &str| -> Result<Value, ScenarioError> {
            let p = dir.join(file);
            let text = fs::read_to_string(&p).map_err(|source| ScenarioError::Io { path: p.clone(), source })?;
            parse(&p.display().to_string(), &text)
        };
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_owned(), source })?;
        let doc = parse(&path.display().to_string(), &text)?;
        let fallback = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Scenario::from_value(&doc, &fallback, &read)
    }

    /// One of the scenarios shipped with the crate.
    pub fn builtin(name: &str) -> Result<Scenario, ScenarioError> {
        let read = |file: &str| -> Result<Value, ScenarioError> {
            let (_, _, text) = BUILTIN
                .iter()
                .find(|(n, f, _)| *n == name && *f == file)
                .ok_or_else(|| ScenarioError::Invalid(format!("builtin scenario {name:?} has no file {file:?}")))?;
            parse(file, text)
        };
        let doc = read("scenario.json")?;
        Scenario::from_value(&doc, name, &read)
    }

    /// Builds a scenario, loading file references through `read`.
    pub fn from_value(
        doc: &Value,
        fallback_name: &str,
        read: &dyn Fn(&str) -> Result<Value, ScenarioError>,
    ) -> Result<Scenario, ScenarioError> {
        let raw: RawScenario = serde_json::from_value(doc.to_json())
            .map_err(|e| ScenarioError::Parse { file: fallback_name.to_owned(), message: e.to_string() })?;
        let load = |v: Value| match v {
            Value::String(file) => read(&file),
            other => Ok(other),
        };
        let blueprint = load(raw.blueprint)?;
        let mut bindings = BTreeMap::new();
        for (name, spec) in raw.workers {
            let bad = |m: &str| ScenarioError::Invalid(format!("worker {name:?}: {m}"));
            let obj = spec.as_object().ok_or_else(|| bad("binding must be an object"))?;
            let binding = if let Some(script) = obj.get("script") {
                let doc = load(script.clone())?;
                Binding::Script(ScriptedWorker::from_value(&doc).map_err(|e| bad(&e.to_string()))?)
            } else if let Some(native) = obj.get("native") {
                Binding::Native(native.as_str().ok_or_else(|| bad("native must name a worker"))?.to_owned())
            } else if let Some(random) = obj.get("random") {
                Binding::Random { seed: random.get("seed").and_then(Value::as_u64).unwrap_or(0) }
            } else if let Some(cmd) = obj.get("command") {
                let argv: Vec<String> = cmd
                    .as_array()
                    .map(|a| a.iter().filter_map(|s| s.as_str().map(str::to_owned)).collect())
                    .filter(|a: &Vec<String>| !a.is_empty())
                    .ok_or_else(|| bad("command must be a non-empty list of strings"))?;
                let ms = obj.get("timeout_ms").and_then(Value::as_u64).unwrap_or(60_000);
                Binding::Command { argv, timeout: Duration::from_millis(ms) }
            } else if obj.contains_key("idle") {
                Binding::Idle
            } else {
                return Err(bad("expected one of script, native, random, command, idle"));
            };
            bindings.insert(name, binding);
        }
        for (kind, plan) in &raw.faults {
            if !bindings.contains_key(&plan.worker) {
                return Err(ScenarioError::Invalid(format!("fault {kind} targets unbound worker {:?}", plan.worker)));
            }
            if plan.fire_range.0 >= plan.fire_range.1 || plan.variants() == 0 {
                return Err(ScenarioError::Invalid(format!("fault {kind} needs a non-empty fire_range and a payload")));
            }
        }
        Ok(Scenario {
            name: raw.name.unwrap_or_else(|| fallback_name.to_owned()),
            blueprint,
            request: raw.request,
            bindings,
            ground_truth: raw.ground_truth,
            faults: raw.faults,
        })
    }

    /// Every bound worker, with `replace` substituted for the named one.
    pub fn registry_with(&self, seed: u64, mut replace: Option<(&str, Box<dyn Worker>)>) -> Result<WorkerRegistry, ScenarioError> {
        let mut registry = WorkerRegistry::new();
        for (name, binding) in &self.bindings {
            let worker = match replace.take_if(|(n, _)| n == name) {
                Some((_, w)) => w,
                None => binding.instantiate(seed)?,
            };
            registry.register_boxed(name, worker);
        }
        Ok(registry)
    }

    pub fn registry(&self, seed: u64) -> Result<WorkerRegistry, ScenarioError> {
        self.registry_with(seed, None)
    }
}
