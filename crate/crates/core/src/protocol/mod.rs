//! The debate state machine: prompt construction, output parsing, the
//! orchestrator summary step, consensus detection and the round loop.
//!
//! Each round fans out n solver calls, then n x m reflector calls, checks
//! consensus, and otherwise fans out n orchestrator calls before the next
//! round. A debate of k rounds therefore issues at most k(n + m + nm) calls.

mod engine;
mod parse;
mod prompts;

pub use engine::{
    build_reflector_task, build_solver_task, check_consensus, orchestrate_feedback,
    render_orchestrator_prompt, run_debate, DebatePolicy, ProtocolError,
};
pub use parse::{parse_final_answer, parse_final_score};
pub use prompts::{
    render, render_feedback_blocks, render_options, render_problem_statement, PromptSet, Slot,
};
