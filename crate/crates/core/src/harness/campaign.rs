//! Fault campaigns: repeated runs of one scenario, each with a single
//! injected fault, summarised per fault type.
//!
//! A campaign file names the scenario (relative to the campaign file), the
//! fault types, how many injections of each, and a seed:
//!
//! ```json
//! {"fault_types": ["InvalidJSON", "CycleHalt"], "count": 200, "seed": 7, "scenario": "../scenarios/claims/scenario.json"}
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::HaltReason;
use crate::kernel::{committed_states, run_blueprint, Outcome, RunResult, Stage};
use crate::schema::{validate_blueprint, Blueprint};
use crate::state::{diff, Patch, Pointer, Value};

use super::fault::{FaultKind, FaultPayload, FaultWrapper};
use super::scenario::{Scenario, ScenarioError};

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{file}: {message}")]
    Config { file: String, message: String },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("scenario blueprint rejected: {0}")]
    Blueprint(String),
    #[error("scenario {scenario:?} has no plan for {kind}")]
    NoPlan { scenario: String, kind: FaultKind },
    #[error("injection {kind} #{index}: {message}")]
    Run { kind: FaultKind, index: u64, message: String },
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    #[serde(default)]
    pub fault_type: Option<FaultKind>,
    #[serde(default)]
    pub fault_types: Vec<FaultKind>,
    pub count: u64,
    #[serde(default)]
    pub seed: u64,
    pub scenario: String,
}

impl CampaignConfig {
    pub fn parse(file: &str, text: &str) -> Result<CampaignConfig, CampaignError> {
        let config: CampaignConfig =
            serde_json::from_str(text).map_err(|e| CampaignError::Config { file: file.to_owned(), message: e.to_string() })?;
        if config.kinds().is_empty() {
            return Err(CampaignError::Config { file: file.to_owned(), message: "no fault_type or fault_types given".into() });
        }
        Ok(config)
    }

    /// Reads the campaign file and the scenario it points at.
    pub fn load(path: &Path) -> Result<(CampaignConfig, Scenario), CampaignError> {
        let text = fs::read_to_string(path).map_err(|source| CampaignError::Io { path: path.display().to_string(), source })?;
        let config = CampaignConfig::parse(&path.display().to_string(), &text)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        let scenario = Scenario::load(&dir.join(&config.scenario))?;
        Ok((config, scenario))
    }

    /// The fault types in the order given, without repeats.
    pub fn kinds(&self) -> Vec<FaultKind> {
        let mut seen = BTreeSet::new();
        self.fault_type.iter().chain(&self.fault_types).copied().filter(|k| seen.insert(*k)).collect()
    }
}

/// What happened to one injected fault.
#[derive(Clone, Debug)]
pub struct Injection {
    pub kind: FaultKind,
    pub index: u64,
    /// Which invocation of the target worker was replaced.
    pub fire_index: u64,
    pub variant: usize,
    pub marker: String,
    /// Seq of the transaction carrying the first faulty output, if the
    /// target worker was invoked often enough to reach it.
    pub onset_seq: Option<u64>,
    pub outcome: Option<Outcome>,
    pub contaminated: bool,
    pub halt_reason: Option<HaltReason>,
    /// Accepted transactions from the onset up to the halt.
    pub commits_after_onset: u64,
    pub halted_within_bound: bool,
    pub false_claims: usize,
    /// The target worker's invocations all appear in the log.
    pub log_total: bool,
    pub result: RunResult,
}

impl Injection {
    pub fn fired(&self) -> bool {
        self.onset_seq.is_some()
    }

    pub fn accepted(&self) -> bool {
        self.outcome.as_ref().is_some_and(Outcome::is_accepted)
    }

    pub fn rejected_at(&self) -> Option<Stage> {
        match &self.outcome {
            Some(Outcome::Rejected { stage, .. }) => Some(*stage),
            _ => None,
        }
    }
}

/// One line of the campaign summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub fault_type: FaultKind,
    pub injections: u64,
    pub contaminated: u64,
    pub contamination_rate: f64,
    pub halted: u64,
    pub halt_rate: f64,
    pub accepted: u64,
    pub flagged_false_claims: u64,
    pub rejected_syntax: u64,
    pub rejected_auth: u64,
    pub rejected_apply: u64,
    pub rejected_schema: u64,
    pub rejected_invariant: u64,
    pub halted_within_bound: u64,
}

const CSV_HEADER: &str = "fault_type,injections,contaminated,contamination_rate,halted,halt_rate,accepted,flagged_false_claims,\
rejected_syntax,rejected_auth,rejected_apply,rejected_schema,rejected_invariant,halted_within_bound";

fn rate(n: u64, d: u64) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

impl ReportRow {
    pub fn summarize(kind: FaultKind, injections: &[Injection]) -> ReportRow {
        let of_kind: Vec<&Injection> = injections.iter().filter(|i| i.kind == kind).collect();
        let count = |f: &dyn Fn(&Injection) -> bool| of_kind.iter().filter(|i| f(i)).count() as u64;
        let n = of_kind.len() as u64;
        let contaminated = count(&|i| i.contaminated);
        let halted = count(&|i| i.halt_reason.is_some());
        let rejected = |stage| count(&|i| i.rejected_at() == Some(stage));
        ReportRow {
            fault_type: kind,
            injections: n,
            contaminated,
            contamination_rate: rate(contaminated, n),
            halted,
            halt_rate: rate(halted, n),
            accepted: count(&|i| i.accepted()),
            flagged_false_claims: count(&|i| i.false_claims > 0),
            rejected_syntax: rejected(Stage::Syntax),
            rejected_auth: rejected(Stage::Auth),
            rejected_apply: rejected(Stage::Apply),
            rejected_schema: rejected(Stage::Schema),
            rejected_invariant: rejected(Stage::Invariant),
            halted_within_bound: count(&|i| i.halted_within_bound),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CampaignReport {
    pub rows: Vec<ReportRow>,
    pub injections: Vec<Injection>,
}

impl CampaignReport {
    pub fn row(&self, kind: FaultKind) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.fault_type == kind)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.4},{},{:.4},{},{},{},{},{},{},{},{}",
                r.fault_type,
                r.injections,
                r.contaminated,
                r.contamination_rate,
                r.halted,
                r.halt_rate,
                r.accepted,
                r.flagged_false_claims,
                r.rejected_syntax,
                r.rejected_auth,
                r.rejected_apply,
                r.rejected_schema,
                r.rejected_invariant,
                r.halted_within_bound
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rows).expect("report rows serialize")
    }
}

/// Runs injections against a fixed scenario.
pub struct Campaign {
    scenario: Scenario,
    blueprint: Blueprint,
}

impl Campaign {
    pub fn new(scenario: Scenario) -> Result<Campaign, CampaignError> {
        let blueprint = validate_blueprint(&scenario.blueprint).map_err(|r| CampaignError::Blueprint(r.summary()))?;
        Ok(Campaign { scenario, blueprint })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn blueprint(&self) -> &Blueprint {
        &self.blueprint
    }

    /// Runs `count` injections of each kind and summarises them.
    pub fn run(&self, kinds: &[FaultKind], count: u64, seed: u64) -> Result<CampaignReport, CampaignError> {
        let mut injections = Vec::new();
        for &kind in kinds {
            for index in 0..count {
                injections.push(self.inject(kind, index, seed)?);
            }
        }
        let rows = kinds.iter().map(|&k| ReportRow::summarize(k, &injections)).collect();
        Ok(CampaignReport { rows, injections })
    }

    /// Runs the scenario once with injection `index` of `kind`.
    pub fn inject(&self, kind: FaultKind, index: u64, seed: u64) -> Result<Injection, CampaignError> {
        let plan = self
            .scenario
            .faults
            .get(&kind)
            .ok_or_else(|| CampaignError::NoPlan { scenario: self.scenario.name.clone(), kind })?;
        let kind_tag = FaultKind::ALL.iter().position(|k| *k == kind).unwrap_or(0) as u64 + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ kind_tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.rotate_left(17));
        let fire_index = rng.gen_range(plan.fire_range.0..plan.fire_range.1);
        let variant = rng.gen_range(0..plan.variants());
        let marker = format!("{kind}-{index}");
        let payload = plan.payload(variant, &marker).expect("variant drawn within range");

        // A cycle needs the faulty output to repeat, so it keeps firing.
        let fire_on: BTreeSet<u64> = match kind {
            FaultKind::CycleHalt => (fire_index..fire_index + 10_000).collect(),
            _ => [fire_index].into(),
        };
        let binding = &self.scenario.bindings[&plan.worker];
        let inner = binding.instantiate(seed)?;
        let wrapper = FaultWrapper::boxed(inner, kind, payload.clone(), fire_on);
        let calls = wrapper.call_counter();
        let mut registry = self.scenario.registry_with(seed, Some((&plan.worker, Box::new(wrapper))))?;
        let result = run_blueprint(&self.blueprint, self.scenario.request.as_ref(), &mut registry)
            .map_err(|e| CampaignError::Run { kind, index, message: e.to_string() })?;

        let worker_txns: Vec<_> = result.log.iter().filter(|t| t.worker == plan.worker).collect();
        let fired = worker_txns.get(fire_index as usize).copied();
        let onset_seq = fired.map(|t| t.seq);
        let committed = committed_states(&result.initial_state, &result.log)
            .map_err(|message| CampaignError::Run { kind, index, message })?;
        let contaminated = fired.is_some_and(|t| t.outcome.is_accepted())
            || committed_changes_carry(&committed, &payload_ops(&payload), &marker);
        let commits_after_onset = onset_seq.map_or(0, |onset| {
            result.log.iter().filter(|t| t.seq >= onset && t.worker != "kernel" && t.outcome.is_accepted()).count() as u64
        });
        let window = self.blueprint.budgets.circuit.cycle_window as u64;
        let halted_within_bound = matches!(result.halt_reason, Some(HaltReason::CycleDetected))
            && onset_seq.is_some()
            && commits_after_onset <= 2 + window;
        let false_claims = self.scenario.ground_truth.as_ref().map_or(0, |gt| gt.false_claims(&result.final_state).len());
        Ok(Injection {
            kind,
            index,
            fire_index,
            variant,
            marker,
            onset_seq,
            outcome: fired.map(|t| t.outcome.clone()),
            contaminated,
            halt_reason: result.halt_reason.clone(),
            commits_after_onset,
            halted_within_bound,
            false_claims,
            log_total: calls.get() == worker_txns.len() as u64,
            result,
        })
    }
}

/// `(path, value)` pairs the payload would write, when it parses at all.
fn payload_ops(payload: &FaultPayload) -> Vec<(Pointer, Option<Value>)> {
    let doc = match payload {
        FaultPayload::Raw(text) => match Value::parse(text) {
            Ok(v) => v,
            Err(_) => return Vec::new(),
        },
        FaultPayload::Document(doc) => doc.clone(),
        FaultPayload::Toggle { .. } => return Vec::new(),
    };
    if let Ok(patch) = Patch::from_value(&doc) {
        return patch.ops().iter().map(|op| (op.path().clone(), op.value().cloned())).collect();
    }
    let Some(items) = doc.as_array() else { return Vec::new() };
    items
        .iter()
        .filter_map(|op| {
            let path = Pointer::parse(op.get("path")?.as_str()?).ok()?;
            Some((path, op.get("value").cloned()))
        })
        .collect()
}

fn mentions(value: &Value, marker: &str) -> bool {
    match value {
        Value::String(s) => s.contains(marker),
        Value::Array(items) => items.iter().any(|v| mentions(v, marker)),
        Value::Object(map) => map.iter().any(|(k, v)| k.contains(marker) || mentions(v, marker)),
        _ => false,
    }
}

fn same_target(op_path: &Pointer, changed: &Pointer) -> bool {
    if op_path == changed {
        return true;
    }
    op_path.ends_with_append()
        && changed.last().and_then(crate::state::parse_index).is_some()
        && op_path.parent() == changed.parent()
}

/// Whether any change between consecutive committed states writes one of
/// the payload's values at its target, or mentions the marker.
fn committed_changes_carry(committed: &[(u64, Value)], ops: &[(Pointer, Option<Value>)], marker: &str) -> bool {
    committed.windows(2).any(|pair| {
        diff(&pair[0].1, &pair[1].1).iter().any(|change| {
            let Some(after) = &change.after else { return false };
            mentions(after, marker)
                || ops.iter().any(|(path, value)| same_target(path, &change.path) && value.as_ref() == Some(after))
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value;

    fn campaign() -> Campaign {
        Campaign::new(Scenario::builtin("claims").unwrap()).unwrap()
    }

    #[test]
    fn config_accepts_single_and_multiple_kinds() {
        let one = CampaignConfig::parse("c", r#"{"fault_type": "InvalidJSON", "count": 3, "scenario": "s.json"}"#).unwrap();
        assert_eq!(one.kinds(), [FaultKind::InvalidJson]);
        let many =
            CampaignConfig::parse("c", r#"{"fault_types": ["CycleHalt", "FalseClaim", "CycleHalt"], "count": 1, "seed": 2, "scenario": "s"}"#)
                .unwrap();
        assert_eq!(many.kinds(), [FaultKind::CycleHalt, FaultKind::FalseClaim]);
        assert!(CampaignConfig::parse("c", r#"{"count": 1, "scenario": "s"}"#).is_err());
        assert!(CampaignConfig::parse("c", r#"{"fault_type": "Gremlin", "count": 1, "scenario": "s"}"#).is_err());
    }

    #[test]
    fn structural_faults_are_rejected_and_leave_no_trace() {
        let c = campaign();
        for kind in [FaultKind::InvalidJson, FaultKind::BadPathType, FaultKind::UnauthorizedWrite] {
            for index in 0..6 {
                let inj = c.inject(kind, index, 11).unwrap();
                assert!(inj.fired(), "{kind} #{index} never fired");
                assert!(!inj.accepted(), "{kind} #{index}: {:?}", inj.outcome);
                assert!(!inj.contaminated, "{kind} #{index}");
                assert!(inj.log_total);
            }
        }
    }

    #[test]
    fn false_claims_pass_the_kernel_and_are_flagged() {
        let inj = campaign().inject(FaultKind::FalseClaim, 0, 5).unwrap();
        assert!(inj.accepted());
        assert_eq!(inj.false_claims, 1);
    }

    #[test]
    fn cycles_halt_soon_after_onset() {
        let c = campaign();
        for index in 0..4 {
            let inj = c.inject(FaultKind::CycleHalt, index, 3).unwrap();
            assert_eq!(inj.halt_reason, Some(HaltReason::CycleDetected), "{:?}", inj.halt_reason);
            assert!(inj.halted_within_bound, "{} commits after onset", inj.commits_after_onset);
        }
    }

    #[test]
    fn injections_are_reproducible() {
        let c = campaign();
        let a = c.inject(FaultKind::UnauthorizedWrite, 9, 42).unwrap();
        let b = c.inject(FaultKind::UnauthorizedWrite, 9, 42).unwrap();
        assert_eq!((a.fire_index, a.variant), (b.fire_index, b.variant));
        assert_eq!(crate::kernel::render_log(&a.result.log), crate::kernel::render_log(&b.result.log));
    }

    #[test]
    fn contamination_matches_appended_values_and_markers() {
        let before = value!({"claims": []});
        let after = value!({"claims": [{"id": "x"}]});
        let committed = [(0, before), (1, after)];
        let ops = [(Pointer::parse("/claims/-").unwrap(), Some(value!({"id": "x"})))];
        assert!(committed_changes_carry(&committed, &ops, "zzz"));
        assert!(committed_changes_carry(&committed, &[], "x"));
        assert!(!committed_changes_carry(&committed, &[], "zzz"));
    }

    #[test]
    fn report_renders_csv_and_json() {
        let report = campaign().run(&[FaultKind::InvalidJson], 3, 1).unwrap();
        let csv = report.to_csv();
        assert!(csv.starts_with("fault_type,injections,contaminated"));
        assert!(csv.lines().nth(1).unwrap().starts_with("InvalidJSON,3,0,0.0000,"));
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(json[0]["fault_type"], "InvalidJSON");
        assert_eq!(json[0]["injections"], 3);
    }
}
