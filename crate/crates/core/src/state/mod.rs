//! Immutable state values, pointers, the restricted patch applier, and
//! canonical hashing.

mod canonical;
mod diff;
mod patch;
mod pointer;
mod value;

pub use canonical::{
    canonical_chars, canonical_serialize, canonical_string, hash_state, HashParseError, StateHash,
};
pub use diff::{diff, Change};
pub(crate) use patch::apply_op;
pub use patch::{
    apply_patch, ApplyCause, ApplyFailure, OpKind, Patch, PatchDecodeError, PatchOperation,
    PatchSyntaxError,
};
pub use pointer::{escape as escape_segment, parse_index, resolve_pointer, Pointer, PointerError, APPEND};
pub use value::{Map, Number, ParseError, Value};
