//! Uniform access to model agents.
//!
//! A [`Gateway`] maps backend ids to [`Backend`] implementations: the remote
//! chat-completion client, the scripted replay backend, and anything a test
//! wants to plug in. Synthetic confusion-matrix agents and the free-form
//! answer judge live alongside.

mod judge;
mod remote;
mod scripted;
mod synthetic;

pub use judge::{
    judge_equivalent, normalize_answer, JudgeConfig, JudgeError, JudgeMode, JUDGE_PROMPT,
};
pub use remote::{
    HttpTransport, RemoteBackend, RemoteConfig, RetryPolicy, Transport, TransportError,
};
pub use scripted::{ReplayRecord, ScriptedBackend};
pub use synthetic::{diagonal_confusion, AgentKind, SyntheticAgent, SyntheticAgentSpec, SyntheticError};

use crate::model::AgentBinding;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

/// A single prompt addressed to one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_text: String,
    pub user_text: String,
    pub image_refs: Vec<String>,
    pub max_tokens: u32,
    pub temperature: f64,
    pub seed: Option<u64>,
}

impl CompletionRequest {
    pub fn for_binding(binding: &AgentBinding, user_text: String, image_refs: Vec<String>) -> Self {
        Self {
            system_text: binding.params.system.clone().unwrap_or_default(),
            user_text,
            image_refs,
            max_tokens: binding.params.max_tokens.max(1),
            temperature: binding.params.temperature.max(0.0),
            seed: binding.params.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Solver,
    Reflector,
    Orchestrator,
    Judge,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Solver => "solver",
            Role::Reflector => "reflector",
            Role::Orchestrator => "orchestrator",
            Role::Judge => "judge",
        };
        f.write_str(s)
    }
}

/// Where a call sits in a debate. Scripted replay keys on this.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallContext {
    pub problem_id: String,
    pub round: usize,
    pub role: Role,
    /// Solver index the call concerns (reflector and orchestrator calls).
    pub target: Option<usize>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend failure: {0}")]
    Failure(String),
    #[error("backend configuration error: {0}")]
    Config(String),
}

pub trait Backend: Send + Sync {
    fn complete(
        &self,
        binding: &AgentBinding,
        ctx: &CallContext,
        req: &CompletionRequest,
    ) -> Result<String, BackendError>;
}

/// Routes each binding to its configured backend.
#[derive(Clone, Default)]
pub struct Gateway {
    backends: HashMap<String, Arc<dyn Backend>>,
}

impl Gateway {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, id: impl Into<String>, backend: Arc<dyn Backend>) -> &mut Self {
        self.backends.insert(id.into(), backend);
        self
    }

    pub fn with(mut self, id: impl Into<String>, backend: Arc<dyn Backend>) -> Self {
        self.register(id, backend);
        self
    }

    pub fn has_backend(&self, id: &str) -> bool {
        self.backends.contains_key(id)
    }

    pub fn complete(
        &self,
        binding: &AgentBinding,
        ctx: &CallContext,
        req: &CompletionRequest,
    ) -> Result<String, BackendError> {
        let backend = self
            .backends
            .get(&binding.backend)
            .ok_or_else(|| BackendError::Config(format!("unknown backend {:?}", binding.backend)))?;
        let started = Instant::now();
        let result = backend.complete(binding, ctx, req);
        log::info!(
            target: "wise::calls",
            "problem_id={} round={} role={} agent={} latency_ms={} outcome={}",
            ctx.problem_id,
            ctx.round,
            ctx.role,
            binding.name,
            started.elapsed().as_millis(),
            if result.is_ok() { "ok" } else { "error" }
        );
        result
    }
}
