//! Weighted multi-agent debate with two-role Dawid-Skene aggregation.
//!
//! Solvers answer, reflectors score each answer in {0, 1, 2} with feedback,
//! and an orchestrator condenses the feedback into questions for the next
//! round. Transcripts are aggregated with majority vote, round-discounted
//! weighted majority, classic Dawid-Skene, or a joint solver/reflector
//! Dawid-Skene model.

pub mod aggregate;
pub mod backend;
pub mod harness;
pub mod model;
pub mod protocol;
