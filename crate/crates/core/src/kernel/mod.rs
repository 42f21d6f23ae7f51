//! The coordination kernel: acceptance pipeline, main loop and log.

mod log;
mod pipeline;
mod replay;
mod runtime;

pub use log::{read_log, render_log, write_log, LogError, Outcome, Stage, Transaction};
pub use pipeline::{valid_patch, Decision, PipelineContext};
pub use runtime::{
    execute, run, run_blueprint, Counters, ProposalSource, RunError, RunResult, WorkerRegistry,
    WORKER_FAILURE,
};
pub use replay::{committed_states, replay, replay_document, Divergence, ReplayReport};
