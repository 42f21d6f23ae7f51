use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::contracts::{ReadContract, WriteContract};
use crate::scheduler::Event;
use crate::state::{canonical_string, OpKind, Patch, Value};
use crate::views::View;

fn default_ops() -> BTreeSet<OpKind> {
    [OpKind::Add, OpKind::Replace, OpKind::Test].into_iter().collect()
}

/// A worker role as declared in a blueprint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkerSpec {
    pub name: String,
    #[serde(default)]
    pub role_instruction: String,
    #[serde(default)]
    pub read: ReadContract,
    #[serde(default)]
    pub write: WriteContract,
    /// View budget in characters of canonical serialization.
    pub view_budget: u64,
    #[serde(default = "default_ops")]
    pub allowed_ops: BTreeSet<OpKind>,
    #[serde(default)]
    pub privileged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repair_worker: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_worker: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_invocations: Option<u64>,
}

impl WorkerSpec {
    pub fn new(name: &str, view_budget: u64) -> WorkerSpec {
        WorkerSpec {
            name: name.to_owned(),
            role_instruction: String::new(),
            read: ReadContract::default(),
            write: WriteContract::default(),
            view_budget,
            allowed_ops: default_ops(),
            privileged: false,
            repair_worker: None,
            fallback_worker: None,
            max_invocations: None,
        }
    }
}

/// What a worker hands back to the kernel.
#[derive(Clone, Debug, PartialEq)]
pub enum Proposal {
    /// A decoded patch.
    Patch(Patch),
    /// A JSON document that should be a patch but has not been checked.
    Document(Value),
    /// Raw text, possibly not even JSON.
    Raw(String),
}

impl Proposal {
    pub fn empty() -> Proposal {
        Proposal::Patch(Patch::default())
    }

    /// The value recorded in the transaction log. Raw text is logged as a
    /// JSON string; a document that is itself a string is treated as raw
    /// text so the log stays unambiguous.
    pub fn logged(&self) -> Value {
        match self {
            Proposal::Patch(p) => p.to_value(),
            Proposal::Document(v) => v.clone(),
            Proposal::Raw(text) => Value::string(text.clone()),
        }
    }

    /// Rebuilds a proposal from its logged form.
    pub fn from_logged(value: &Value) -> Proposal {
        match value {
            Value::String(text) => Proposal::Raw(text.clone()),
            other => Proposal::Document(other.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorkerError {
    #[error("failed: {0}")]
    Failed(String),
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    /// A failure read back from a log, carrying its original message.
    #[error("{0}")]
    Replayed(String),
}

/// A role implementation. The kernel calls at most one worker at a time and
/// waits for its answer.
pub trait Worker {
    fn invoke(&mut self, view: &View, event: &Event) -> Result<Proposal, WorkerError>;
}

impl<F> Worker for F
where
    F: FnMut(&View, &Event) -> Result<Proposal, WorkerError>,
{
    fn invoke(&mut self, view: &View, event: &Event) -> Result<Proposal, WorkerError> {
        self(view, event)
    }
}

/// A worker that always proposes the empty patch.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdleWorker;

impl Worker for IdleWorker {
    fn invoke(&mut self, _view: &View, _event: &Event) -> Result<Proposal, WorkerError> {
        Ok(Proposal::empty())
    }
}

/// Runs an external program per invocation. The program receives
/// `{"view": ..., "event": ...}` on stdin and must print its patch on
/// stdout. It is killed when it exceeds `timeout`.
#[derive(Clone, Debug)]
pub struct CommandWorker {
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
}

impl CommandWorker {
    pub fn new(program: &str, args: &[&str], timeout: Duration) -> CommandWorker {
        CommandWorker {
            program: program.to_owned(),
            args: args.iter().map(|s| s.to_string()).collect(),
            timeout,
        }
    }
}

impl Worker for CommandWorker {
    fn invoke(&mut self, view: &View, event: &Event) -> Result<Proposal, WorkerError> {
        let mut input = crate::state::Map::new();
        input.insert("view".into(), view.to_value());
        input.insert("event".into(), crate::value!({
            "seq": event.seq, "source": event.source.clone(),
            "path": event.path.to_string(), "op": event.op.as_str()
        }));
        let payload = canonical_string(&Value::Object(input));

        let fail = |e: std::io::Error| WorkerError::Failed(format!("{}: {e}", self.program));
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(fail)?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || {
            let _ = stdin.write_all(payload.as_bytes());
        });
        let mut stdout = child.stdout.take().expect("piped stdout");
        let reader = std::thread::spawn(move || {
            let mut out = String::new();
            stdout.read_to_string(&mut out).map(|_| out)
        });

        let started = Instant::now();
        let status = loop {
            if let Some(status) = child.try_wait().map_err(fail)? {
                break status;
            }
            if started.elapsed() > self.timeout {
                let _ = child.kill();
                let _ = child.wait();
                return Err(WorkerError::Timeout(self.timeout));
            }
            std::thread::sleep(Duration::from_millis(5));
        };
        let _ = writer.join();
        let out = reader
            .join()
            .map_err(|_| WorkerError::Failed("stdout reader panicked".into()))?
            .map_err(fail)?;
        if !status.success() {
            return Err(WorkerError::Failed(format!("{} exited with {status}", self.program)));
        }
        Ok(Proposal::Raw(out.trim().to_owned()))
    }
}
