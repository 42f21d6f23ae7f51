//! The five-stage acceptance check for one proposal.

use crate::contracts::authorize;
use crate::harness::{Proposal, WorkerSpec};
use crate::schema::{check_invariants, InvariantRule, Schema, ValidationReport};
use crate::state::{apply_patch, ApplyCause, OpKind, Patch, Pointer, Value};
use crate::views::{ExpansionLedger, ExpansionRequest, EXPANSION_PATH};

use super::log::Stage;

/// Everything the pipeline checks a proposal against.
pub struct PipelineContext<'a> {
    pub worker: &'a WorkerSpec,
    pub schema: &'a Schema,
    pub invariants: &'a [InvariantRule],
    pub ledger: &'a ExpansionLedger,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Decision {
    Accept {
        patch: Patch,
        next: Value,
        /// Expansion requests carried by the patch, already checked.
        expansions: Vec<ExpansionRequest>,
    },
    Reject {
        stage: Stage,
        reason: String,
    },
}

impl Decision {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Decision::Accept { .. })
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Decision::Reject { stage, .. } => Some(*stage),
            Decision::Accept { .. } => None,
        }
    }

    fn reject(stage: Stage, reason: impl Into<String>) -> Decision {
        Decision::Reject { stage, reason: reason.into() }
    }
}

fn decode(proposal: &Proposal) -> Result<Patch, String> {
    match proposal {
        Proposal::Patch(p) => Ok(p.clone()),
        Proposal::Document(Value::String(text)) | Proposal::Raw(text) => {
            let doc = Value::parse(text).map_err(|e| format!("InvalidJSON: {e}"))?;
            Patch::from_value(&doc).map_err(|e| format!("MalformedPatch: {e}"))
        }
        Proposal::Document(doc) => Patch::from_value(doc).map_err(|e| format!("MalformedPatch: {e}")),
    }
}

fn reserved(path: &Pointer) -> bool {
    path.segments().first().map(String::as_str) == Some(crate::schema::RUNTIME_KEY)
}

fn summary(report: &ValidationReport) -> String {
    report.summary()
}

/// Runs Syntax, Auth, Apply, Schema and Invariant in order, stopping at
/// the first failure. `state` is never modified.
pub fn valid_patch(state: &Value, proposal: &Proposal, ctx: &PipelineContext<'_>) -> Decision {
    // Syntax: a well-formed operation list using only this worker's kinds.
    let patch = match decode(proposal) {
        Ok(p) => p,
        Err(reason) => return Decision::reject(Stage::Syntax, reason),
    };
    if let Some((i, op)) = patch.ops().iter().enumerate().find(|(_, op)| !ctx.worker.allowed_ops.contains(&op.kind())) {
        return Decision::reject(
            Stage::Syntax,
            format!("OperationNotAllowed: op {i} is {} at {}", op.kind().as_str(), op.path()),
        );
    }

    // Auth: contract coverage, plus the kernel-owned runtime region.
    if let Some((i, op)) = patch.ops().iter().enumerate().find(|(_, op)| reserved(op.path()) && op.kind() != OpKind::Test) {
        return Decision::reject(Stage::Auth, format!("ReservedPath: op {i} writes {}", op.path()));
    }
    let auth = authorize(&patch, &ctx.worker.write, &ctx.worker.read, ctx.worker.privileged);
    if !auth.ok() {
        return Decision::reject(Stage::Auth, summary(&auth));
    }

    // Apply on a copy. Failed tests are stale-view preconditions.
    let next = match apply_patch(state, &patch) {
        Ok(next) => next,
        Err(failure) => {
            let op = &patch.ops()[failure.index];
            let reason = match failure.cause {
                ApplyCause::TestMismatch => format!("StaleView: test at {} failed (op {})", op.path(), failure.index),
                _ => failure.to_string(),
            };
            return Decision::reject(Stage::Apply, reason);
        }
    };

    let schema_report = ctx.schema.validate(&next);
    if !schema_report.ok() {
        return Decision::reject(Stage::Schema, summary(&schema_report));
    }

    let mut inv = check_invariants(ctx.invariants, state, &patch, &next);
    let mut expansions = Vec::new();
    let expansion_path = Pointer::parse(EXPANSION_PATH).expect("constant pointer");
    for (i, op) in patch.ops().iter().enumerate() {
        if op.kind() != OpKind::Add || op.path() != &expansion_path {
            continue;
        }
        let request = op.value().and_then(ExpansionRequest::from_value);
        match request.map(|r| ctx.ledger.lookup(&ctx.worker.name, &r).map(|_| r)) {
            Some(Ok(r)) => expansions.push(r),
            Some(Err(e)) => inv.push(op.path().clone(), "UnknownHandle", format!("op {i}: {e}")),
            None => inv.push(op.path().clone(), "UnknownHandle", format!("op {i}: request needs worker and handle_id")),
        }
    }
    if !inv.ok() {
        return Decision::reject(Stage::Invariant, summary(&inv));
    }
    Decision::Accept { patch, next, expansions }
}
