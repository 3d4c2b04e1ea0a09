//! Task-adaptive retrieval-augmented question answering over long text.
//!
//! A query flows through three stages: an analyzer characterizes the task
//! from the question and a small preliminary retrieval, an organizer turns
//! that verdict into an [`ExecutionPlan`](planner::ExecutionPlan), and the
//! executor runs the chosen pipeline against a chat backend while recording
//! token usage, cost and stage latencies.

pub mod analyzer;
pub mod bench;
pub mod config;
pub mod corpus;
pub mod engine;
pub mod eval;
pub mod executor;
pub mod gateway;
pub mod planner;
pub mod retrieval;
pub mod tokenizer;
mod util;
