//! Path-level read and write authorization.
//!
//! Patterns use pointer syntax with two extra tokens: `*` matches exactly
//! one segment and a trailing `-` matches only the array-append token.
//! Entries union; there are no deny rules.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::schema::{ValidationReport, Violation};
use crate::state::{parse_index, OpKind, Patch, Pointer, Value, APPEND};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PatternSegment {
    Literal(String),
    Any,
    Append,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PathPattern {
    segments: Vec<PatternSegment>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PatternError {
    #[error("pattern must be empty or start with '/': {0:?}")]
    MissingSlash(String),
    #[error("invalid '~' escape in pattern {0:?}")]
    BadEscape(String),
    #[error("'-' may only appear as the final segment: {0:?}")]
    MisplacedAppend(String),
}

impl PathPattern {
    pub fn root() -> Self {
        PathPattern::default()
    }

    pub fn parse(text: &str) -> Result<Self, PatternError> {
        if text.is_empty() {
            return Ok(PathPattern::root());
        }
        let Some(rest) = text.strip_prefix('/') else {
            return Err(PatternError::MissingSlash(text.to_owned()));
        };
        let raw: Vec<&str> = rest.split('/').collect();
        let mut segments = Vec::with_capacity(raw.len());
        for (i, token) in raw.iter().enumerate() {
            let segment = match *token {
                "*" => PatternSegment::Any,
                APPEND if i + 1 == raw.len() => PatternSegment::Append,
                APPEND => return Err(PatternError::MisplacedAppend(text.to_owned())),
                other => {
                    let pointer = Pointer::parse(&format!("/{other}"))
                        .map_err(|_| PatternError::BadEscape(text.to_owned()))?;
                    PatternSegment::Literal(pointer.segments()[0].clone())
                }
            };
            segments.push(segment);
        }
        Ok(PathPattern { segments })
    }

    /// Pattern that matches exactly `pointer`.
    pub fn exact(pointer: &Pointer) -> Self {
        PathPattern {
            segments: pointer
                .segments()
                .iter()
                .map(|s| {
                    if s == APPEND {
                        PatternSegment::Append
                    } else {
                        PatternSegment::Literal(s.clone())
                    }
                })
                .collect(),
        }
    }

    /// Builds a pattern from segments. A `-` anywhere but last is the
    /// caller's responsibility.
    pub fn from_segments(segments: Vec<PatternSegment>) -> Self {
        PathPattern { segments }
    }

    pub fn segments(&self) -> &[PatternSegment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn has_wildcard(&self) -> bool {
        self.segments.iter().any(|s| !matches!(s, PatternSegment::Literal(_)))
    }

    pub fn ends_with_append(&self) -> bool {
        matches!(self.segments.last(), Some(PatternSegment::Append))
    }

    /// Pattern with a trailing `-` removed.
    pub fn without_append(&self) -> PathPattern {
        let mut segments = self.segments.clone();
        if self.ends_with_append() {
            segments.pop();
        }
        PathPattern { segments }
    }

    fn segment_matches(pattern: &PatternSegment, token: &str) -> bool {
        match pattern {
            PatternSegment::Literal(lit) => lit == token,
            PatternSegment::Any => true,
            PatternSegment::Append => token == APPEND,
        }
    }

    /// Exact-length match, or prefix match when `subtree` is set.
    pub fn matches(&self, path: &Pointer, subtree: bool) -> bool {
        let tokens = path.segments();
        let len_ok = if subtree {
            tokens.len() >= self.segments.len()
        } else {
            tokens.len() == self.segments.len()
        };
        len_ok
            && self
                .segments
                .iter()
                .zip(tokens)
                .all(|(p, t)| Self::segment_matches(p, t))
    }

    /// True when some pointer matched by this pattern lies strictly below
    /// `path` (i.e. `path` is a proper prefix of a possible match).
    pub fn is_below(&self, path: &Pointer) -> bool {
        let tokens = path.segments();
        tokens.len() < self.segments.len()
            && self
                .segments
                .iter()
                .zip(tokens)
                .all(|(p, t)| Self::segment_matches(p, t))
    }

    /// Matching used for workflow triggers, whose event paths carry the
    /// concrete index an append landed on: a trailing `-` matches any array
    /// index of an `add` event.
    pub fn matches_event(&self, path: &Pointer, op: OpKind, subtree: bool) -> bool {
        if self.matches(path, subtree) {
            return true;
        }
        if !self.ends_with_append() || op != OpKind::Add {
            return false;
        }
        let n = self.segments.len();
        let tokens = path.segments();
        let len_ok = if subtree { tokens.len() >= n } else { tokens.len() == n };
        len_ok
            && parse_index(&tokens[n - 1]).is_some()
            && self.segments[..n - 1]
                .iter()
                .zip(tokens)
                .all(|(p, t)| Self::segment_matches(p, t))
    }

    /// Every concrete pointer in `state` matching this pattern exactly, in
    /// document order. A trailing `-` never matches an existing location.
    pub fn expand(&self, state: &Value) -> Vec<Pointer> {
        let mut out = Vec::new();
        expand_into(&self.segments, state, Pointer::root(), &mut out);
        out
    }
}

fn expand_into(rest: &[PatternSegment], node: &Value, at: Pointer, out: &mut Vec<Pointer>) {
    let Some((head, tail)) = rest.split_first() else {
        out.push(at);
        return;
    };
    match (head, node) {
        (PatternSegment::Literal(key), Value::Object(map)) => {
            if let Some(child) = map.get(key) {
                expand_into(tail, child, at.child(key.clone()), out);
            }
        }
        (PatternSegment::Literal(token), Value::Array(items)) => {
            if let Some(child) = parse_index(token).and_then(|i| items.get(i)) {
                expand_into(tail, child, at.child(token.clone()), out);
            }
        }
        (PatternSegment::Any, Value::Object(map)) => {
            for (key, child) in map {
                expand_into(tail, child, at.child(key.clone()), out);
            }
        }
        (PatternSegment::Any, Value::Array(items)) => {
            for (i, child) in items.iter().enumerate() {
                expand_into(tail, child, at.index_child(i), out);
            }
        }
        _ => {}
    }
}

impl fmt::Display for PathPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for segment in &self.segments {
            match segment {
                PatternSegment::Literal(lit) => write!(f, "/{}", crate::state::escape_segment(lit))?,
                PatternSegment::Any => f.write_str("/*")?,
                PatternSegment::Append => f.write_str("/-")?,
            }
        }
        Ok(())
    }
}

impl Serialize for PathPattern {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PathPattern {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        PathPattern::parse(&text).map_err(serde::de::Error::custom)
    }
}

pub fn match_pattern(pattern: &PathPattern, subtree: bool, path: &Pointer) -> bool {
    pattern.matches(path, subtree)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WriteEntry {
    #[serde(rename = "path")]
    pub pattern: PathPattern,
    pub ops: BTreeSet<OpKind>,
    #[serde(default)]
    pub subtree: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WriteContract {
    pub entries: Vec<WriteEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadEntry {
    #[serde(rename = "path")]
    pub pattern: PathPattern,
    #[serde(default)]
    pub subtree: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReadContract {
    pub entries: Vec<ReadEntry>,
}

impl WriteContract {
    pub fn permits(&self, kind: OpKind, path: &Pointer) -> bool {
        self.entries
            .iter()
            .any(|e| e.ops.contains(&kind) && e.pattern.matches(path, e.subtree))
    }

    pub fn covers(&self, path: &Pointer) -> bool {
        self.entries.iter().any(|e| e.pattern.matches(path, e.subtree))
    }

    /// Whether a change observed at `path` can stem from an operation this
    /// contract grants: the path itself or one of its ancestors must be
    /// writable, with a trailing `-` standing for the index an append made.
    pub fn attributes(&self, path: &Pointer) -> bool {
        let tokens = path.segments();
        (0..=tokens.len()).any(|n| {
            let prefix = Pointer::from_segments(tokens[..n].iter().cloned());
            self.entries.iter().any(|e| e.pattern.matches_event(&prefix, OpKind::Add, e.subtree))
        })
    }
}

impl ReadContract {
    pub fn covers(&self, path: &Pointer) -> bool {
        self.entries.iter().any(|e| e.pattern.matches(path, e.subtree))
    }
}

/// Checks every operation of `patch` against the worker's contracts.
///
/// Writes need an entry granting the op kind on a matching pattern. Tests
/// are reads and only need read or write coverage of their path. Removes
/// are refused outright unless the worker is privileged.
pub fn authorize(
    patch: &Patch,
    write: &WriteContract,
    read: &ReadContract,
    privileged: bool,
) -> ValidationReport {
    let mut report = ValidationReport::default();
    for (index, op) in patch.ops().iter().enumerate() {
        let path = op.path();
        let violation = match op.kind() {
            OpKind::Remove if !privileged => Some((
                "RemoveNotPrivileged",
                format!("operation {index}: remove is disabled for non-privileged workers"),
            )),
            OpKind::Test if read.covers(path) || write.covers(path) => None,
            OpKind::Test => Some((
                "UnauthorizedTest",
                format!("operation {index}: test on {path} outside read and write contracts"),
            )),
            kind if write.permits(kind, path) => None,
            kind => Some((
                "UnauthorizedWrite",
                format!("operation {index}: {kind} on {path} not granted by write contract"),
            )),
        };
        if let Some((keyword, message)) = violation {
            report.violations.push(Violation::new(path.clone(), keyword, message));
        }
    }
    report
}
