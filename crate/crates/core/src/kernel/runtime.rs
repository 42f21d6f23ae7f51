//! The kernel loop: pop, slice, invoke, validate, commit or reject, schedule,
//! then consult the circuit policy.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::circuit::{apply_policy, circuit_policy, halt_patch, CircuitAction, HaltReason, PolicyInput, RuntimeTables};
use crate::harness::{Proposal, Worker, WorkerError};
use crate::schema::{validate_blueprint, Blueprint, InitError, ValidationReport};
use crate::scheduler::{extract_events, initial_queue, schedule, Event, Invocation, ScheduleWarning, KERNEL};
use crate::state::{hash_state, StateHash, Value};
use crate::views::{slice, view_hash, ExpansionLedger, SliceRequest, View, WriteHistory, FEEDBACK_WINDOW};

use super::log::{Outcome, Stage, Transaction};
use super::pipeline::{valid_patch, Decision, PipelineContext};

/// Prefix of the rejection reason logged when a worker errors or times out.
pub const WORKER_FAILURE: &str = "WorkerFailure: ";

/// Where proposals come from: live workers, or a recorded log.
pub trait ProposalSource {
    /// The proposal of `worker` for this view, or `None` to stop the run
    /// without a transaction.
    fn propose(&mut self, worker: &str, view: &View, event: &Event) -> Option<Result<Proposal, WorkerError>>;
}

/// Live worker implementations keyed by blueprint worker name.
#[derive(Default)]
pub struct WorkerRegistry {
    workers: BTreeMap<String, Box<dyn Worker>>,
    timeout: Option<Duration>,
}

impl WorkerRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, worker: impl Worker + 'static) -> &mut Self {
        self.workers.insert(name.to_owned(), Box::new(worker));
        self
    }

    pub fn register_boxed(&mut self, name: &str, worker: Box<dyn Worker>) -> &mut Self {
        self.workers.insert(name.to_owned(), worker);
        self
    }

    pub fn with(mut self, name: &str, worker: impl Worker + 'static) -> Self {
        self.register(name, worker);
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.workers.contains_key(name)
    }

    /// Overrides the blueprint's per-invocation timeout.
    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = Some(timeout);
    }
}

impl ProposalSource for WorkerRegistry {
    fn propose(&mut self, worker: &str, view: &View, event: &Event) -> Option<Result<Proposal, WorkerError>> {
        let Some(imp) = self.workers.get_mut(worker) else {
            return Some(Err(WorkerError::Failed(format!("no implementation registered for {worker}"))));
        };
        let started = Instant::now();
        let result = imp.invoke(view, event);
        match self.timeout {
            Some(limit) if started.elapsed() > limit => Some(Err(WorkerError::Timeout(limit))),
            _ => Some(result),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub invocations: u64,
    pub accepted: u64,
    pub rejected: BTreeMap<Stage, u64>,
    pub kernel: u64,
}

impl Counters {
    pub fn rejected_total(&self) -> u64 {
        self.rejected.values().sum()
    }

    pub fn rejected_at(&self, stage: Stage) -> u64 {
        self.rejected.get(&stage).copied().unwrap_or(0)
    }

    /// Recounts a log.
    pub fn from_log(log: &[Transaction]) -> Counters {
        let mut c = Counters::default();
        for txn in log {
            if txn.worker == KERNEL {
                c.kernel += 1;
                continue;
            }
            c.invocations += 1;
            match &txn.outcome {
                Outcome::Accepted { .. } => c.accepted += 1,
                Outcome::Rejected { stage, .. } => *c.rejected.entry(*stage).or_default() += 1,
            }
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub initial_state: Value,
    pub final_state: Value,
    pub log: Vec<Transaction>,
    pub halt_reason: Option<HaltReason>,
    pub counters: Counters,
    pub warnings: Vec<String>,
    /// True when the proposal source asked to stop early.
    pub stopped: bool,
}

impl RunResult {
    pub fn final_hash(&self) -> StateHash {
        hash_state(&self.final_state)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RunError {
    #[error("blueprint rejected: {0}")]
    BlueprintRejected(ValidationReport),
    #[error(transparent)]
    InitialState(#[from] InitError),
}

/// Checks the blueprint, builds the initial state and runs to completion.
pub fn run(blueprint_doc: &Value, request: Option<&Value>, workers: &mut WorkerRegistry) -> Result<RunResult, RunError> {
    let blueprint = validate_blueprint(blueprint_doc).map_err(RunError::BlueprintRejected)?;
    run_blueprint(&blueprint, request, workers)
}

pub fn run_blueprint(blueprint: &Blueprint, request: Option<&Value>, workers: &mut WorkerRegistry) -> Result<RunResult, RunError> {
    let initial = blueprint.initial_state_for(request)?;
    if workers.timeout.is_none() {
        workers.timeout = Some(Duration::from_millis(blueprint.budgets.worker_timeout_ms));
    }
    Ok(execute(blueprint, initial, workers))
}

struct Engine {
    workers: BTreeMap<String, crate::harness::WorkerSpec>,
    state: Value,
    log: Vec<Transaction>,
    committed: Vec<StateHash>,
    tables: RuntimeTables,
    ledger: ExpansionLedger,
    history: WriteHistory,
    next_event: u64,
}

impl Engine {
    fn next_seq(&self) -> u64 {
        self.log.len() as u64 + 1
    }

    fn halt(&mut self, reason: HaltReason, event: Event) {
        let patch = halt_patch(&self.state, &reason);
        let (_, next) = apply_policy(
            &CircuitAction::Halt(reason),
            &Invocation { worker: KERNEL.into(), event: event.clone() },
            Default::default(),
            &self.state,
            &mut self.tables,
        );
        self.commit_kernel(patch.to_value(), next, event);
    }

    fn commit_kernel(&mut self, patch: Value, next: Value, event: Event) {
        let seq = self.next_seq();
        let hash = hash_state(&next);
        for op in crate::state::Patch::from_value(&patch).map(|p| p.0).unwrap_or_default() {
            self.history.record(op.path().clone(), seq);
        }
        self.log.push(Transaction {
            seq,
            worker: KERNEL.into(),
            event,
            view_hash: hash_state(&Value::Null),
            patch,
            outcome: Outcome::Accepted { state_hash: hash },
        });
        self.state = next;
        self.committed.push(hash);
    }
}

/// Runs the loop from `initial` with proposals from `source`.
pub fn execute(blueprint: &Blueprint, initial: Value, source: &mut dyn ProposalSource) -> RunResult {
    let mut engine = Engine {
        workers: blueprint.worker_map(),
        state: initial.clone(),
        log: Vec::new(),
        committed: vec![hash_state(&initial)],
        tables: RuntimeTables::for_workers(&blueprint.workers),
        ledger: ExpansionLedger::default(),
        history: WriteHistory::default(),
        next_event: 1,
    };
    let mut warnings = Vec::new();
    let (mut queue, warning) = initial_queue(&blueprint.rules, &initial);
    if warning == Some(ScheduleWarning::EmptyInitialQueue) {
        warnings.push("EmptyInitialQueue: no on_init rule fired".to_owned());
    }
    let mut halt_reason = None;
    let mut stopped = false;
    let mut total_invocations = 0u64;

    while let Some(popped) = queue.pop() {
        let name = engine.tables.route(&popped.worker);
        let invocation = Invocation { worker: name.clone(), event: popped.event.clone() };
        if total_invocations >= blueprint.budgets.max_worker_invocations {
            halt_reason = Some(HaltReason::InvocationBudgetExceeded);
            engine.halt(HaltReason::InvocationBudgetExceeded, invocation.event);
            break;
        }
        let Some(spec) = engine.workers.get(&name).cloned() else {
            warnings.push(format!("skipped wake-up of undeclared worker {name}"));
            continue;
        };
        if spec.max_invocations.is_some_and(|max| engine.tables.invocations_of(&name) >= max) {
            match spec.fallback_worker.clone().filter(|f| *f != name) {
                Some(to) => {
                    engine.tables.reroutes.insert(name.clone(), to.clone());
                    queue.push_front(Invocation { worker: to, event: invocation.event });
                    continue;
                }
                None => {
                    let reason = HaltReason::WorkerBudgetExhausted(name.clone());
                    halt_reason = Some(reason.clone());
                    engine.halt(reason, invocation.event);
                    break;
                }
            }
        }

        let budget = engine.tables.view_budgets.get(&name).copied().unwrap_or(spec.view_budget);
        let expansions = engine.ledger.take_pending(&name);
        let tail_start = engine.log.len().saturating_sub(FEEDBACK_WINDOW);
        let view = slice(&SliceRequest {
            state: &engine.state,
            worker: &spec,
            budget,
            schema: &blueprint.schema,
            active: &blueprint.active_paths,
            event: &invocation.event,
            log_tail: &engine.log[tail_start..],
            history: &engine.history,
            expansions: &expansions,
        });
        let view = match view {
            Ok(v) => v,
            Err(_) => {
                let reason = HaltReason::BudgetInfeasible(name.clone());
                halt_reason = Some(reason.clone());
                engine.halt(reason, invocation.event);
                break;
            }
        };
        engine.ledger.issue(&name, &view.handles);
        let vh = view_hash(&view);

        let proposal = match source.propose(&name, &view, &invocation.event) {
            Some(p) => p,
            None => {
                stopped = true;
                break;
            }
        };
        total_invocations += 1;
        *engine.tables.invocations.entry(name.clone()).or_default() += 1;

        let seq = engine.next_seq();
        let (logged, decision) = match proposal {
            Ok(p) => {
                let ctx = PipelineContext {
                    worker: &spec,
                    schema: &blueprint.schema,
                    invariants: &blueprint.invariants,
                    ledger: &engine.ledger,
                };
                let decision = valid_patch(&engine.state, &p, &ctx);
                (p.logged(), decision)
            }
            Err(e) => (Value::Null, Decision::Reject { stage: Stage::Syntax, reason: format!("{WORKER_FAILURE}{e}") }),
        };
        let outcome = match decision {
            Decision::Accept { patch, next, expansions } => {
                let events = extract_events(&engine.state, &patch, &name, &mut engine.next_event);
                for e in &events {
                    engine.history.record(e.path.clone(), seq);
                }
                for request in &expansions {
                    let _ = engine.ledger.expand(&name, request);
                }
                let hash = hash_state(&next);
                engine.state = next;
                engine.committed.push(hash);
                queue.extend(schedule(&events, &blueprint.rules, &engine.state));
                Outcome::Accepted { state_hash: hash }
            }
            Decision::Reject { stage, reason } => Outcome::Rejected { stage, reason },
        };
        engine.log.push(Transaction {
            seq,
            worker: name.clone(),
            event: invocation.event.clone(),
            view_hash: vh,
            patch: logged,
            outcome,
        });

        let action = circuit_policy(&PolicyInput {
            log: &engine.log,
            committed: &engine.committed,
            queue: &queue,
            config: &blueprint.budgets.circuit,
            workers: &engine.workers,
            tables: &engine.tables,
        });
        if let CircuitAction::Halt(reason) = &action {
            halt_reason = Some(reason.clone());
            engine.halt(reason.clone(), invocation.event);
            queue.clear();
            break;
        }
        let (q, s) = apply_policy(&action, &invocation, queue, &engine.state, &mut engine.tables);
        queue = q;
        engine.state = s;
    }

    let counters = Counters::from_log(&engine.log);
    RunResult {
        initial_state: initial,
        final_state: engine.state,
        log: engine.log,
        halt_reason,
        counters,
        warnings,
        stopped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::Patch;
    use crate::value;

    fn blueprint(extra_worker: Value) -> Value {
        value!({
            "schema": {
                "type": "object",
                "properties": {
                    "count": {"type": "integer"},
                    "notes": {"type": "array", "items": {"type": "string"}}
                }
            },
            "initial_state": {"count": 0, "notes": []},
            "workers": [
                {"name": "counter", "read": [{"path": "/count"}], "write": [{"path": "/count", "ops": ["replace"]}], "view_budget": 500},
                extra_worker
            ],
            "rules": [
                {"trigger": {"path": ""}, "action": "counter", "on_init": true},
                {"trigger": {"path": "/count"}, "condition": {"path": "/count", "not_equals": 3}, "action": "counter"},
                {"trigger": {"path": "/count"}, "condition": {"path": "/count", "equals": 3}, "action": "noter"}
            ]
        })
    }

    fn noter() -> Value {
        value!({"name": "noter", "read": [{"path": "/notes", "subtree": true}], "write": [{"path": "/notes/-", "ops": ["add"]}], "view_budget": 500})
    }

    fn counting_worker(view: &View, _event: &Event) -> Result<Proposal, WorkerError> {
        let n = view.fields.get("count").and_then(Value::as_f64).unwrap_or(0.0) as i64;
        if n >= 3 {
            return Ok(Proposal::empty());
        }
        Ok(Proposal::Patch(Patch::parse(&format!(r#"[{{"op":"replace","path":"/count","value":{}}}]"#, n + 1)).unwrap()))
    }

    #[test]
    fn counts_to_three_and_notes() {
        let mut workers = WorkerRegistry::new()
            .with("counter", counting_worker)
            .with("noter", |_: &View, _: &Event| {
                Ok(Proposal::Raw(r#"[{"op":"add","path":"/notes/-","value":"reached three"}]"#.into()))
            });
        let result = run(&blueprint(noter()), None, &mut workers).unwrap();
        assert_eq!(result.final_state, value!({"count": 3, "notes": ["reached three"]}));
        assert_eq!(result.halt_reason, None);
        // Oracle: counter at 0, 1, 2, then the noter once.
        assert_eq!(result.counters.invocations, 4);
        let seqs: Vec<u64> = result.log.iter().map(|t| t.seq).collect();
        assert_eq!(seqs, [1, 2, 3, 4]);
        assert_eq!(result.log[3].outcome.state_hash(), Some(hash_state(&result.final_state)));
    }

    #[test]
    fn unauthorized_worker_halts_after_threshold() {
        // Oracle: threshold 2, no repair worker. First rejection -> Retry,
        // second -> Halt. Two worker transactions plus the halt record.
        let mut workers = WorkerRegistry::new()
            .with("counter", |_: &View, _: &Event| {
                Ok(Proposal::Raw(r#"[{"op":"add","path":"/notes/-","value":"sneaky"}]"#.into()))
            })
            .with("noter", crate::harness::IdleWorker);
        let result = run(&blueprint(noter()), None, &mut workers).unwrap();
        assert_eq!(result.halt_reason, Some(HaltReason::InvalidPatchStreak("counter".into())));
        assert_eq!(result.counters.rejected_at(Stage::Auth), 2);
        assert_eq!(result.log.len(), 3);
        assert_eq!(result.log[2].worker, KERNEL);
        assert_eq!(result.final_state.get("notes"), Some(&value!([])));
        assert_eq!(result.final_state.get("runtime"), Some(&value!({"halt_reason": "InvalidPatchStreak:counter"})));
    }

    #[test]
    fn empty_initial_queue_warns() {
        let mut doc = blueprint(noter());
        if let Value::Object(m) = &mut doc {
            m.insert("rules".into(), value!([]));
        }
        let result = run(&doc, None, &mut WorkerRegistry::new()).unwrap();
        assert!(result.log.is_empty());
        assert_eq!(result.warnings.len(), 1);
    }

    #[test]
    fn rejected_blueprint_never_runs() {
        let mut doc = blueprint(noter());
        if let Value::Object(m) = &mut doc {
            m.insert("rules".into(), value!([{"trigger": {"path": ""}, "action": "ghost"}]));
        }
        assert!(matches!(run(&doc, None, &mut WorkerRegistry::new()), Err(RunError::BlueprintRejected(_))));
    }

    #[test]
    fn worker_failure_is_logged_as_syntax_rejection() {
        let mut workers = WorkerRegistry::new()
            .with("counter", |_: &View, _: &Event| Err(WorkerError::Failed("boom".into())))
            .with("noter", crate::harness::IdleWorker);
        let result = run(&blueprint(noter()), None, &mut workers).unwrap();
        assert_eq!(result.log[0].patch, Value::Null);
        assert_eq!(result.log[0].outcome.stage(), Some(Stage::Syntax));
        assert!(result.log[0].outcome.reason().unwrap().starts_with(WORKER_FAILURE));
    }

    #[test]
    fn global_budget_halts() {
        let mut doc = blueprint(noter());
        if let Value::Object(m) = &mut doc {
            m.insert("budgets".into(), value!({"max_worker_invocations": 1}));
            m.insert(
                "rules".into(),
                value!([
                    {"trigger": {"path": ""}, "action": "counter", "on_init": true},
                    {"trigger": {"path": "/count"}, "action": "counter"}
                ]),
            );
        }
        let mut workers = WorkerRegistry::new().with("counter", counting_worker).with("noter", crate::harness::IdleWorker);
        let result = run(&doc, None, &mut workers).unwrap();
        assert_eq!(result.halt_reason, Some(HaltReason::InvocationBudgetExceeded));
        assert_eq!(result.counters.invocations, 1);
    }
}
