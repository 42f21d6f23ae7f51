//! Failure monitoring after every proposal.
//!
//! Triggers are checked in a fixed order: per-worker invocation budget,
//! rejection streak, no-op streak, then short state cycles.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::harness::WorkerSpec;
use crate::kernel::Transaction;
use crate::scheduler::{Invocation, InvocationQueue, KERNEL};
use crate::state::{apply_patch, Patch, PatchOperation, Pointer, StateHash, Value};

/// Smallest budget `TightenBudget` will shrink a view to.
pub const MIN_TIGHT_BUDGET: u64 = 256;

fn two() -> u32 {
    2
}

fn three() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitConfig {
    #[serde(default = "two")]
    pub invalid_threshold: u32,
    #[serde(default = "two")]
    pub noop_threshold: u32,
    #[serde(default = "three")]
    pub cycle_window: usize,
}

impl Default for CircuitConfig {
    fn default() -> Self {
        CircuitConfig { invalid_threshold: 2, noop_threshold: 2, cycle_window: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum HaltReason {
    CycleDetected,
    InvalidPatchStreak(String),
    NoOpStreak(String),
    WorkerBudgetExhausted(String),
    InvocationBudgetExceeded,
    BudgetInfeasible(String),
}

impl fmt::Display for HaltReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HaltReason::CycleDetected => f.write_str("CycleDetected"),
            HaltReason::InvalidPatchStreak(w) => write!(f, "InvalidPatchStreak:{w}"),
            HaltReason::NoOpStreak(w) => write!(f, "NoOpStreak:{w}"),
            HaltReason::WorkerBudgetExhausted(w) => write!(f, "WorkerBudgetExhausted:{w}"),
            HaltReason::InvocationBudgetExceeded => f.write_str("InvocationBudgetExceeded"),
            HaltReason::BudgetInfeasible(w) => write!(f, "BudgetInfeasible:{w}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CircuitAction {
    NoAction,
    Retry(String),
    Repair { failing: String, repair: String },
    SwitchWorker { from: String, to: String },
    TightenBudget { worker: String, budget: u64 },
    Halt(HaltReason),
}

/// Mutable per-run tables the policy reads and `apply_policy` updates.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RuntimeTables {
    /// Current view budget per worker.
    pub view_budgets: BTreeMap<String, u64>,
    /// Workers whose budget was already tightened.
    pub tightened: BTreeSet<String>,
    /// Invocations of each worker so far.
    pub invocations: BTreeMap<String, u64>,
    /// Wake-ups for a worker are redirected after `SwitchWorker`.
    pub reroutes: BTreeMap<String, String>,
}

impl RuntimeTables {
    pub fn for_workers<'a>(workers: impl IntoIterator<Item = &'a WorkerSpec>) -> RuntimeTables {
        RuntimeTables {
            view_budgets: workers.into_iter().map(|w| (w.name.clone(), w.view_budget)).collect(),
            ..RuntimeTables::default()
        }
    }

    pub fn invocations_of(&self, worker: &str) -> u64 {
        self.invocations.get(worker).copied().unwrap_or(0)
    }

    /// Follows reroutes to the worker that should actually run.
    pub fn route(&self, worker: &str) -> String {
        let mut current = worker.to_owned();
        let mut seen = BTreeSet::new();
        while let Some(next) = self.reroutes.get(&current) {
            if !seen.insert(current.clone()) {
                break;
            }
            current = next.clone();
        }
        current
    }
}

/// Inputs to one policy evaluation.
pub struct PolicyInput<'a> {
    pub log: &'a [Transaction],
    /// Committed state hashes, starting with the initial state.
    pub committed: &'a [StateHash],
    pub queue: &'a InvocationQueue,
    pub config: &'a CircuitConfig,
    pub workers: &'a BTreeMap<String, WorkerSpec>,
    pub tables: &'a RuntimeTables,
}

fn exhausted(input: &PolicyInput<'_>, worker: &str) -> bool {
    input
        .workers
        .get(worker)
        .and_then(|w| w.max_invocations)
        .is_some_and(|max| input.tables.invocations_of(worker) >= max)
}

/// Length of the trailing run of `worker`'s own transactions (by log
/// index) satisfying `pred`.
fn streak(log: &[Transaction], worker: &str, pred: impl Fn(usize) -> bool) -> u32 {
    let mut count = 0;
    for (i, txn) in log.iter().enumerate().rev() {
        if txn.worker != worker {
            continue;
        }
        if !pred(i) {
            break;
        }
        count += 1;
    }
    count
}

/// True when the last `window` entries of the committed hash sequence,
/// after collapsing consecutive duplicates, contain a repeated hash.
pub fn has_short_cycle(committed: &[StateHash], window: usize) -> bool {
    let mut collapsed: Vec<StateHash> = committed.to_vec();
    collapsed.dedup();
    let tail = &collapsed[collapsed.len().saturating_sub(window)..];
    let distinct: BTreeSet<&StateHash> = tail.iter().collect();
    distinct.len() < tail.len()
}

/// Decides what to do after the most recent transaction.
pub fn circuit_policy(input: &PolicyInput<'_>) -> CircuitAction {
    let Some(last) = input.log.last() else { return CircuitAction::NoAction };
    if last.worker == KERNEL {
        return CircuitAction::NoAction;
    }
    let worker = last.worker.as_str();
    let spec = input.workers.get(worker);

    if exhausted(input, worker) && input.queue.iter().any(|i| input.tables.route(&i.worker) == worker) {
        return match spec.and_then(|s| s.fallback_worker.clone()) {
            Some(to) if !exhausted(input, &to) && to != worker => CircuitAction::SwitchWorker { from: worker.to_owned(), to },
            _ => CircuitAction::Halt(HaltReason::WorkerBudgetExhausted(worker.to_owned())),
        };
    }

    if !last.outcome.is_accepted() {
        let rejected = streak(input.log, worker, |i| !input.log[i].outcome.is_accepted());
        let threshold = input.config.invalid_threshold;
        return if rejected < threshold {
            CircuitAction::Retry(worker.to_owned())
        } else {
            match spec.and_then(|s| s.repair_worker.clone()) {
                Some(repair) if rejected < 2 * threshold => CircuitAction::Repair { failing: worker.to_owned(), repair },
                _ => CircuitAction::Halt(HaltReason::InvalidPatchStreak(worker.to_owned())),
            }
        };
    }

    let committed_before = |i: usize| {
        input.log[..i]
            .iter()
            .rev()
            .find_map(|t| t.outcome.state_hash())
            .or_else(|| input.committed.first().copied())
    };
    let noops = streak(input.log, worker, |i| {
        let hash = input.log[i].outcome.state_hash();
        hash.is_some() && hash == committed_before(i)
    });
    if noops >= input.config.noop_threshold {
        if input.tables.tightened.contains(worker) {
            return CircuitAction::Halt(HaltReason::NoOpStreak(worker.to_owned()));
        }
        let current = input.tables.view_budgets.get(worker).copied().or(spec.map(|s| s.view_budget)).unwrap_or(0);
        let budget = (current / 2).max(MIN_TIGHT_BUDGET).min(current);
        return CircuitAction::TightenBudget { worker: worker.to_owned(), budget };
    }

    if has_short_cycle(input.committed, input.config.cycle_window) {
        return CircuitAction::Halt(HaltReason::CycleDetected);
    }
    CircuitAction::NoAction
}

/// The kernel-internal patch recording a halt.
pub fn halt_patch(state: &Value, reason: &HaltReason) -> Patch {
    let runtime = Pointer::from_segments(["runtime"]);
    let op = if state.get("runtime").is_some() {
        PatchOperation::replace(runtime.child("halt_reason"), Value::string(reason.to_string()))
    } else {
        PatchOperation::add(runtime, crate::value!({"halt_reason": reason.to_string()}))
    };
    Patch::new(vec![op])
}

/// Carries out `action` on the queue, the state and the runtime tables.
/// `current` is the invocation that produced the last transaction.
pub fn apply_policy(
    action: &CircuitAction,
    current: &Invocation,
    mut queue: InvocationQueue,
    state: &Value,
    tables: &mut RuntimeTables,
) -> (InvocationQueue, Value) {
    match action {
        CircuitAction::NoAction => (queue, state.clone()),
        CircuitAction::Retry(worker) => {
            queue.push_front(Invocation { worker: worker.clone(), event: current.event.clone() });
            (queue, state.clone())
        }
        CircuitAction::Repair { repair, .. } => {
            queue.push_front(Invocation { worker: repair.clone(), event: current.event.clone() });
            (queue, state.clone())
        }
        CircuitAction::SwitchWorker { from, to } => {
            tables.reroutes.insert(from.clone(), to.clone());
            let mut next = InvocationQueue::new();
            next.push_back(Invocation { worker: to.clone(), event: current.event.clone() });
            next.extend(queue.iter().map(|i| Invocation { worker: tables.route(&i.worker), event: i.event.clone() }));
            (next, state.clone())
        }
        CircuitAction::TightenBudget { worker, budget } => {
            tables.view_budgets.insert(worker.clone(), *budget);
            tables.tightened.insert(worker.clone());
            (queue, state.clone())
        }
        CircuitAction::Halt(reason) => {
            queue.clear();
            let next = apply_patch(state, &halt_patch(state, reason)).unwrap_or_else(|_| state.clone());
            (queue, next)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{Outcome, Stage};
    use crate::scheduler::Event;
    use crate::state::hash_state;
    use crate::value;

    fn h(n: i64) -> StateHash {
        hash_state(&Value::int(n))
    }

    fn accepted(seq: u64, worker: &str, hash: StateHash) -> Transaction {
        Transaction {
            seq,
            worker: worker.into(),
            event: Event::init(),
            view_hash: hash_state(&Value::Null),
            patch: value!([]),
            outcome: Outcome::Accepted { state_hash: hash },
        }
    }

    fn rejected(seq: u64, worker: &str) -> Transaction {
        Transaction {
            outcome: Outcome::Rejected { stage: Stage::Auth, reason: "UnauthorizedWrite".into() },
            ..accepted(seq, worker, h(0))
        }
    }

    fn workers(specs: &[WorkerSpec]) -> BTreeMap<String, WorkerSpec> {
        specs.iter().map(|s| (s.name.clone(), s.clone())).collect()
    }

    fn decide(log: &[Transaction], committed: &[StateHash], specs: &[WorkerSpec], tables: &RuntimeTables) -> CircuitAction {
        circuit_policy(&PolicyInput {
            log,
            committed,
            queue: &InvocationQueue::new(),
            config: &CircuitConfig::default(),
            workers: &workers(specs),
            tables,
        })
    }

    #[test]
    fn fresh_log_is_quiet() {
        assert_eq!(decide(&[], &[h(0)], &[], &RuntimeTables::default()), CircuitAction::NoAction);
    }

    #[test]
    fn rejection_streak_escalates() {
        let mut a = WorkerSpec::new("a", 1000);
        a.repair_worker = Some("fixer".into());
        let tables = RuntimeTables::default();
        let log1 = [rejected(0, "a")];
        assert_eq!(decide(&log1, &[h(0)], &[a.clone()], &tables), CircuitAction::Retry("a".into()));
        let log2 = [rejected(0, "a"), rejected(1, "a")];
        assert_eq!(
            decide(&log2, &[h(0)], &[a.clone()], &tables),
            CircuitAction::Repair { failing: "a".into(), repair: "fixer".into() }
        );
        let log4: Vec<_> = (0..4).map(|i| rejected(i, "a")).collect();
        assert_eq!(
            decide(&log4, &[h(0)], &[a.clone()], &tables),
            CircuitAction::Halt(HaltReason::InvalidPatchStreak("a".into()))
        );
        a.repair_worker = None;
        assert_eq!(
            decide(&log2, &[h(0)], &[a], &tables),
            CircuitAction::Halt(HaltReason::InvalidPatchStreak("a".into()))
        );
    }

    #[test]
    fn streak_counts_only_own_transactions_until_acceptance() {
        let a = WorkerSpec::new("a", 1000);
        let log = [rejected(0, "a"), accepted(1, "a", h(1)), accepted(2, "b", h(2)), rejected(3, "a")];
        assert_eq!(decide(&log, &[h(0), h(1), h(2)], &[a], &RuntimeTables::default()), CircuitAction::Retry("a".into()));
    }

    #[test]
    fn cycle_of_two_halts_in_window_three() {
        let a = WorkerSpec::new("a", 1000);
        let log = [accepted(0, "a", h(1)), accepted(1, "a", h(2)), accepted(2, "a", h(1))];
        let committed = [h(0), h(1), h(2), h(1)];
        assert_eq!(
            decide(&log, &committed, &[a], &RuntimeTables::default()),
            CircuitAction::Halt(HaltReason::CycleDetected)
        );
        assert!(has_short_cycle(&[h(1), h(2), h(1)], 3));
        assert!(!has_short_cycle(&[h(1), h(2), h(3), h(1)], 3));
        assert!(!has_short_cycle(&[h(1), h(1), h(1)], 3));
    }

    #[test]
    fn noops_tighten_then_halt() {
        let a = WorkerSpec::new("a", 1000);
        let mut tables = RuntimeTables::for_workers([&a]);
        let log = [accepted(0, "a", h(0)), accepted(1, "a", h(0))];
        let committed = [h(0), h(0), h(0)];
        let action = decide(&log, &committed, &[a.clone()], &tables);
        assert_eq!(action, CircuitAction::TightenBudget { worker: "a".into(), budget: 500 });
        apply_policy(&action, &Invocation { worker: "a".into(), event: Event::init() }, InvocationQueue::new(), &value!({}), &mut tables);
        assert_eq!(tables.view_budgets["a"], 500);
        assert_eq!(decide(&log, &committed, &[a], &tables), CircuitAction::Halt(HaltReason::NoOpStreak("a".into())));
    }

    #[test]
    fn tightened_budget_has_a_floor() {
        let a = WorkerSpec::new("a", 300);
        let tables = RuntimeTables::for_workers([&a]);
        let log = [accepted(0, "a", h(0)), accepted(1, "a", h(0))];
        assert_eq!(
            decide(&log, &[h(0), h(0), h(0)], &[a], &tables),
            CircuitAction::TightenBudget { worker: "a".into(), budget: 256 }
        );
    }

    #[test]
    fn exhausted_worker_switches_or_halts() {
        let mut a = WorkerSpec::new("a", 1000);
        a.max_invocations = Some(1);
        a.fallback_worker = Some("b".into());
        let b = WorkerSpec::new("b", 1000);
        let mut tables = RuntimeTables::default();
        tables.invocations.insert("a".into(), 1);
        let queue: InvocationQueue = [Invocation { worker: "a".into(), event: Event::init() }].into_iter().collect();
        let specs = workers(&[a.clone(), b.clone()]);
        let config = CircuitConfig::default();
        let input = |specs| PolicyInput {
            log: &[],
            committed: &[],
            queue: &queue,
            config: &config,
            workers: specs,
            tables: &tables,
        };
        let log = [accepted(0, "a", h(1))];
        let action = circuit_policy(&PolicyInput { log: &log, ..input(&specs) });
        assert_eq!(action, CircuitAction::SwitchWorker { from: "a".into(), to: "b".into() });
        a.fallback_worker = None;
        let specs = workers(&[a, b]);
        let action = circuit_policy(&PolicyInput { log: &log, ..input(&specs) });
        assert_eq!(action, CircuitAction::Halt(HaltReason::WorkerBudgetExhausted("a".into())));
    }

    #[test]
    fn apply_policy_queue_effects() {
        let inv = |w: &str| Invocation { worker: w.into(), event: Event::init() };
        let queue: InvocationQueue = [inv("x"), inv("a"), inv("y")].into_iter().collect();
        let state = value!({"k": 1});
        let mut tables = RuntimeTables::default();

        let (q, s) = apply_policy(&CircuitAction::NoAction, &inv("a"), queue.clone(), &state, &mut tables);
        assert_eq!((q, s), (queue.clone(), state.clone()));

        let (q, s) = apply_policy(
            &CircuitAction::Halt(HaltReason::CycleDetected),
            &inv("a"),
            queue.clone(),
            &state,
            &mut tables,
        );
        assert!(q.is_empty());
        assert_eq!(s, value!({"k": 1, "runtime": {"halt_reason": "CycleDetected"}}));

        // Queue order inspection: b first, then the old entries with a
        // rerouted to b.
        let (q, _) = apply_policy(
            &CircuitAction::SwitchWorker { from: "a".into(), to: "b".into() },
            &inv("a"),
            queue,
            &state,
            &mut tables,
        );
        let order: Vec<_> = q.iter().map(|i| i.worker.as_str()).collect();
        assert_eq!(order, ["b", "x", "b", "y"]);
        assert_eq!(tables.route("a"), "b");
    }
}
