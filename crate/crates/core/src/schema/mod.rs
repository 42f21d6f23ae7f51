//! Subset JSON Schema validation, state invariants and blueprint loading.

mod blueprint;
mod invariants;
mod validate;

pub use blueprint::{
    meta_schema, validate_blueprint, validate_blueprint_with, Blueprint, BlueprintLimits, Budgets, InitError,
    DEFAULT_BUDGET_CAP, META_SCHEMA_JSON, RUNTIME_KEY,
};
pub use invariants::{check_invariants, InvariantRule, Predicate};
pub use validate::{
    validate_value, JsonType, Schema, SchemaError, SchemaNode, ValidationReport, Violation,
    KEYWORDS,
};
