pub mod circuit;
pub mod cli;
pub mod contracts;
pub mod harness;
pub mod kernel;
pub mod scheduler;
pub mod schema;
pub mod state;
pub mod views;
