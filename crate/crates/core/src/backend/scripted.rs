use super::{Backend, BackendError, CallContext, CompletionRequest, Role};
use crate::model::{AgentBinding, AgentRoster};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

/// One queued reply in a replay file (JSON lines).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub agent: String,
    pub role: Role,
    pub round: usize,
    /// Solver index the reply concerns; required to disambiguate reflector
    /// and orchestrator replies that run concurrently within a round.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<usize>,
    /// Restricts the record to one problem; shared across problems when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem_id: Option<String>,
    pub reply: String,
}

type QueueKey = (Option<String>, Role, String, usize, Option<usize>);

/// Deterministic backend that replays recorded replies.
///
/// Records are queued per (problem, role, agent, round, target) and consumed
/// in file order within each queue, so concurrent fan-out stays reproducible.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queues: Mutex<HashMap<QueueKey, VecDeque<String>>>,
    agents: Vec<(Role, String)>,
}

impl ScriptedBackend {
    pub fn new(records: impl IntoIterator<Item = ReplayRecord>) -> Self {
        let mut queues: HashMap<QueueKey, VecDeque<String>> = HashMap::new();
        let mut agents = Vec::new();
        for r in records {
            if !agents.contains(&(r.role, r.agent.clone())) {
                agents.push((r.role, r.agent.clone()));
            }
            queues
                .entry((r.problem_id, r.role, r.agent, r.round, r.target))
                .or_default()
                .push_back(r.reply);
        }
        Self {
            queues: Mutex::new(queues),
            agents,
        }
    }

    pub fn from_jsonl(text: &str) -> Result<Self, BackendError> {
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ReplayRecord = serde_json::from_str(line).map_err(|e| {
                BackendError::Config(format!("replay line {}: {e}", lineno + 1))
            })?;
            records.push(rec);
        }
        Ok(Self::new(records))
    }

    pub fn from_path(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }

    /// Errors if the replay mentions an agent the roster does not have.
    pub fn check_roster(&self, roster: &AgentRoster) -> Result<(), BackendError> {
        for (role, agent) in &self.agents {
            let known = match role {
                Role::Solver => roster.solvers.iter().any(|b| &b.name == agent),
                Role::Reflector => roster.reflectors.iter().any(|b| &b.name == agent),
                Role::Orchestrator => &roster.orchestrator.name == agent,
                Role::Judge => true,
            };
            if !known {
                return Err(BackendError::Config(format!(
                    "replay names {role} {agent:?} which is not in the roster"
                )));
            }
        }
        Ok(())
    }

    pub fn remaining(&self) -> usize {
        self.queues.lock().unwrap().values().map(VecDeque::len).sum()
    }
}

impl Backend for ScriptedBackend {
    fn complete(
        &self,
        binding: &AgentBinding,
        ctx: &CallContext,
        _req: &CompletionRequest,
    ) -> Result<String, BackendError> {
        let mut queues = self.queues.lock().unwrap();
        let mut targets = vec![ctx.target];
        if ctx.target.is_some() {
            targets.push(None);
        }
        for pid in [Some(ctx.problem_id.clone()), None] {
            for &target in &targets {
                let key = (pid.clone(), ctx.role, binding.name.clone(), ctx.round, target);
                if let Some(reply) = queues.get_mut(&key).and_then(VecDeque::pop_front) {
                    return Ok(reply);
                }
            }
        }
        Err(BackendError::Failure(format!(
            "replay exhausted for {} {:?} at round {} (problem {})",
            ctx.role, binding.name, ctx.round, ctx.problem_id
        )))
    }
}
