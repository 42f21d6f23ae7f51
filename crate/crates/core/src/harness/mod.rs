//! Worker implementations and the experiment harness around the kernel.

mod campaign;
mod env;
mod fault;
mod random;
mod scenario;
mod scripted;
mod worker;

pub use campaign::{Campaign, CampaignConfig, CampaignError, CampaignReport, Injection, ReportRow};
pub use env::{Action, EnvExecutor, EnvVerifier, MiniEnv, Step};
pub use fault::{FaultKind, FaultPayload, FaultWrapper};
pub use random::{random_blueprint, worker_names, RandomWorker};
pub use scenario::{Binding, FaultPlan, GroundTruth, Scenario, ScenarioError, ToggleSpec, MARKER};
pub use scripted::{MatchCheck, ScriptEntry, ScriptError, ScriptedWorker};
pub use worker::{CommandWorker, IdleWorker, Proposal, Worker, WorkerError, WorkerSpec};
