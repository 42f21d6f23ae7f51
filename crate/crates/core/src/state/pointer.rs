//! RFC 6901 JSON Pointers.
//!
//! As an array token, `-` names the slot past the end and never resolves to
//! a value. Object members may still be called `-`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::value::Value;

pub const APPEND: &str = "-";

#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pointer(Vec<String>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PointerError {
    #[error("pointer must be empty or start with '/': {0:?}")]
    MissingSlash(String),
    #[error("invalid '~' escape in {0:?}")]
    BadEscape(String),
}

impl Pointer {
    pub fn root() -> Self {
        Pointer(Vec::new())
    }

    pub fn parse(text: &str) -> Result<Self, PointerError> {
        if text.is_empty() {
            return Ok(Pointer::root());
        }
        let Some(rest) = text.strip_prefix('/') else {
            return Err(PointerError::MissingSlash(text.to_owned()));
        };
        let segments = rest
            .split('/')
            .map(|raw| unescape(raw).ok_or_else(|| PointerError::BadEscape(text.to_owned())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Pointer(segments))
    }

    /// Builds a pointer from raw (unescaped) segments.
    pub fn from_segments<I, S>(segments: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Pointer(segments.into_iter().map(Into::into).collect())
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.is_root()
    }

    pub fn last(&self) -> Option<&str> {
        self.0.last().map(String::as_str)
    }

    pub fn ends_with_append(&self) -> bool {
        self.last() == Some(APPEND)
    }

    pub fn parent(&self) -> Option<Pointer> {
        (!self.0.is_empty()).then(|| Pointer(self.0[..self.0.len() - 1].to_vec()))
    }

    pub fn child(&self, segment: impl Into<String>) -> Pointer {
        let mut segments = self.0.clone();
        segments.push(segment.into());
        Pointer(segments)
    }

    pub fn index_child(&self, index: usize) -> Pointer {
        self.child(index.to_string())
    }

    pub fn push(&mut self, segment: impl Into<String>) {
        self.0.push(segment.into());
    }

    /// True when `prefix` is an ancestor of, or equal to, this pointer.
    pub fn starts_with(&self, prefix: &Pointer) -> bool {
        self.0.starts_with(&prefix.0)
    }

    pub fn render(&self) -> String {
        self.to_string()
    }
}

/// Parses an RFC 6901 array index: decimal digits, no leading zeros.
pub fn parse_index(token: &str) -> Option<usize> {
    let valid = !token.is_empty()
        && token.bytes().all(|b| b.is_ascii_digit())
        && (token == "0" || !token.starts_with('0'));
    if valid {
        token.parse().ok()
    } else {
        None
    }
}

fn unescape(raw: &str) -> Option<String> {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars();
    while let Some(c) = chars.next() {
        if c == '~' {
            match chars.next() {
                Some('0') => out.push('~'),
                Some('1') => out.push('/'),
                _ => return None,
            }
        } else {
            out.push(c);
        }
    }
    Some(out)
}

pub fn escape(segment: &str) -> String {
    segment.replace('~', "~0").replace('/', "~1")
}

impl fmt::Display for Pointer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for segment in &self.0 {
            write!(f, "/{}", escape(segment))?;
        }
        Ok(())
    }
}

impl FromStr for Pointer {
    type Err = PointerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Pointer::parse(s)
    }
}

impl Serialize for Pointer {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Pointer {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Pointer::parse(&text).map_err(serde::de::Error::custom)
    }
}

/// Returns the sub-value addressed by `path`, or `None` when any segment is
/// missing. The append token always yields `None`.
pub fn resolve_pointer<'v>(state: &'v Value, path: &Pointer) -> Option<&'v Value> {
    let mut current = state;
    for segment in path.segments() {
        current = match current {
            Value::Object(map) => map.get(segment)?,
            Value::Array(items) => items.get(parse_index(segment)?)?,
            _ => return None,
        };
    }
    Some(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value;
    use proptest::prelude::*;

    #[test]
    fn resolves_nested_member() {
        let state = value!({"a": {"b": 1}});
        let p = Pointer::parse("/a/b").unwrap();
        assert_eq!(resolve_pointer(&state, &p), Some(&Value::int(1)));
    }

    #[test]
    fn root_pointer_is_identity() {
        let state = value!({"x": [1, {"y": null}]});
        assert_eq!(resolve_pointer(&state, &Pointer::root()), Some(&state));
    }

    #[test]
    fn append_token_never_resolves() {
        // Manual RFC 6901 walk: "/xs" is an array of length 2 and "-" names
        // the nonexistent element after the last one.
        let state = value!({"xs": [10, 20]});
        let p = Pointer::parse("/xs/-").unwrap();
        assert_eq!(resolve_pointer(&state, &p), None);
    }

    #[test]
    fn escapes_round_trip() {
        let p = Pointer::parse("/a~1b/c~0d").unwrap();
        assert_eq!(p.segments(), ["a/b", "c~d"]);
        assert_eq!(p.to_string(), "/a~1b/c~0d");
    }

    #[test]
    fn rejects_malformed() {
        assert!(matches!(Pointer::parse("a"), Err(PointerError::MissingSlash(_))));
        assert!(matches!(Pointer::parse("/a~2"), Err(PointerError::BadEscape(_))));
    }

    #[test]
    fn dash_is_an_ordinary_member_name() {
        let state = value!({"-": {"b": 1}});
        assert_eq!(resolve_pointer(&state, &Pointer::parse("/-/b").unwrap()), Some(&Value::int(1)));
        assert_eq!(resolve_pointer(&value!({"a": [1]}), &Pointer::parse("/a/-").unwrap()), None);
    }

    #[test]
    fn array_indices_reject_leading_zeros() {
        assert_eq!(parse_index("0"), Some(0));
        assert_eq!(parse_index("12"), Some(12));
        assert_eq!(parse_index("01"), None);
        assert_eq!(parse_index("-"), None);
        let state = value!([1, 2]);
        assert_eq!(resolve_pointer(&state, &Pointer::parse("/01").unwrap()), None);
    }

    proptest! {
        #[test]
        fn parse_render_round_trip(segments in prop::collection::vec("[a-z~/0-9-]{0,4}", 0..5)) {
            // `-` only survives parsing in final position.
            let mut segs = segments;
            let n = segs.len();
            for s in segs.iter_mut().take(n.saturating_sub(1)) {
                if s == "-" { s.push('x'); }
            }
            let p = Pointer::from_segments(segs);
            let text = p.to_string();
            prop_assert_eq!(Pointer::parse(&text).unwrap(), p);
        }
    }
}
