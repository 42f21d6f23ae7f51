//! Fault injection: a wrapper that swaps a worker's output for a faulty
//! payload on chosen invocations and delegates untouched otherwise.

use std::cell::Cell;
use std::collections::BTreeSet;
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::scheduler::Event;
use crate::state::{Patch, PatchOperation, Pointer, Value};
use crate::views::View;

use super::worker::{Proposal, Worker, WorkerError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FaultKind {
    #[serde(rename = "InvalidJSON")]
    InvalidJson,
    BadPathType,
    UnauthorizedWrite,
    FalseClaim,
    CycleHalt,
}

impl FaultKind {
    pub const ALL: [FaultKind; 5] =
        [FaultKind::InvalidJson, FaultKind::BadPathType, FaultKind::UnauthorizedWrite, FaultKind::FalseClaim, FaultKind::CycleHalt];

    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::InvalidJson => "InvalidJSON",
            FaultKind::BadPathType => "BadPathType",
            FaultKind::UnauthorizedWrite => "UnauthorizedWrite",
            FaultKind::FalseClaim => "FalseClaim",
            FaultKind::CycleHalt => "CycleHalt",
        }
    }

    /// Whether the kernel is expected to keep the payload out of committed
    /// state.
    pub fn is_structural(self) -> bool {
        matches!(self, FaultKind::InvalidJson | FaultKind::BadPathType | FaultKind::UnauthorizedWrite)
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FaultKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FaultKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown fault type {s:?}"))
    }
}

/// What a firing invocation returns instead of the inner worker's answer.
#[derive(Clone, Debug, PartialEq)]
pub enum FaultPayload {
    /// Bytes handed to the kernel as-is.
    Raw(String),
    /// A fixed JSON document, normally an operation list.
    Document(Value),
    /// Replaces `path` with whichever of the two values it does not hold.
    Toggle { path: Pointer, a: Value, b: Value },
}

impl FaultPayload {
    pub fn render(&self, view: &View) -> Proposal {
        match self {
            FaultPayload::Raw(text) => Proposal::Raw(text.clone()),
            FaultPayload::Document(doc) => Proposal::Document(doc.clone()),
            FaultPayload::Toggle { path, a, b } => {
                let next = if view.field(path) == Some(a) { b } else { a };
                Proposal::Patch(Patch(vec![PatchOperation::replace(path.clone(), next.clone())]))
            }
        }
    }
}

pub struct FaultWrapper {
    inner: Box<dyn Worker>,
    kind: FaultKind,
    payload: FaultPayload,
    fire_on: BTreeSet<u64>,
    calls: Rc<Cell<u64>>,
}

impl FaultWrapper {
    pub fn new(inner: impl Worker + 'static, kind: FaultKind, payload: FaultPayload, fire_on: BTreeSet<u64>) -> Self {
        FaultWrapper::boxed(Box::new(inner), kind, payload, fire_on)
    }

    pub fn boxed(inner: Box<dyn Worker>, kind: FaultKind, payload: FaultPayload, fire_on: BTreeSet<u64>) -> Self {
        FaultWrapper { inner, kind, payload, fire_on, calls: Rc::new(Cell::new(0)) }
    }

    pub fn kind(&self) -> FaultKind {
        self.kind
    }

    /// A handle on the number of invocations seen so far, readable after
    /// the wrapper has been moved into a registry.
    pub fn call_counter(&self) -> Rc<Cell<u64>> {
        Rc::clone(&self.calls)
    }
}

impl Worker for FaultWrapper {
    fn invoke(&mut self, view: &View, event: &Event) -> Result<Proposal, WorkerError> {
        let index = self.calls.get();
        self.calls.set(index + 1);
        if self.fire_on.contains(&index) {
            Ok(self.payload.render(view))
        } else {
            self.inner.invoke(view, event)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::IdleWorker;
    use crate::value;

    #[test]
    fn delegates_except_on_firing_invocations() {
        let mut w = FaultWrapper::new(IdleWorker, FaultKind::InvalidJson, FaultPayload::Raw("{oops".into()), [1].into());
        let counter = w.call_counter();
        let view = View::empty(100);
        let outs: Vec<Value> = (0..3).map(|_| w.invoke(&view, &Event::init()).unwrap().logged()).collect();
        assert_eq!(outs, [value!([]), value!("{oops"), value!([])]);
        assert_eq!(counter.get(), 3);
    }

    #[test]
    fn toggle_alternates_on_view_value() {
        let payload = FaultPayload::Toggle { path: Pointer::parse("/d").unwrap(), a: value!("A"), b: value!("B") };
        let mut view = View::empty(100);
        let value_of = |p: Proposal| p.logged().as_array().unwrap()[0].get("value").cloned().unwrap();
        assert_eq!(value_of(payload.render(&view)), value!("A"));
        view.fields = value!({"d": "A"});
        assert_eq!(value_of(payload.render(&view)), value!("B"));
    }

    #[test]
    fn names_round_trip() {
        for k in FaultKind::ALL {
            assert_eq!(k.as_str().parse::<FaultKind>(), Ok(k));
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{k}\""));
        }
    }
}
