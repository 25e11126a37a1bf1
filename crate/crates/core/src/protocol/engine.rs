use super::parse::{parse_final_answer, parse_final_score};
use super::prompts::{
    render, render_feedback_blocks, render_options, render_problem_statement, PromptSet,
};
use crate::backend::{BackendError, CallContext, CompletionRequest, Gateway, Role};
use crate::model::{
    AgentBinding, AgentRoster, Answer, DebateRound, DebateTranscript, ModelError, Problem,
    ReflectorJudgment, SolverResponse, Termination, MISSING_WEIGHT, TRANSCRIPT_SCHEMA_VERSION,
};
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("round {0} needs the solver's prior response and orchestrator feedback")]
    MissingFollowupInput(usize),
    #[error("invalid debate policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid prompts: {0}")]
    InvalidPrompts(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DebatePolicy {
    pub max_rounds: usize,
    pub consensus_stop: bool,
    /// Debates run concurrently across problems.
    pub parallelism: usize,
}

impl Default for DebatePolicy {
    fn default() -> Self {
        Self {
            max_rounds: 8,
            consensus_stop: true,
            parallelism: 1,
        }
    }
}

impl DebatePolicy {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !(1..=64).contains(&self.max_rounds) {
            return Err(ProtocolError::InvalidPolicy(format!(
                "max_rounds {} outside [1, 64]",
                self.max_rounds
            )));
        }
        if self.parallelism == 0 {
            return Err(ProtocolError::InvalidPolicy("parallelism must be >= 1".into()));
        }
        Ok(())
    }
}

/// Solver request for `round`. Follow-up rounds embed the solver's own
/// prior response and the orchestrator's feedback for it.
pub fn build_solver_task(
    p: &Problem,
    binding: &AgentBinding,
    round: usize,
    prior_response: Option<&str>,
    orchestrator_feedback: Option<&str>,
    prompts: &PromptSet,
) -> Result<CompletionRequest, ProtocolError> {
    let options = render_options(p);
    let text = if round <= 1 {
        render(
            &prompts.solver_round1,
            &[
                ("PROBLEM", &p.question),
                ("OPTIONS", &options),
                ("ANSWER_FORMAT", &prompts.answer_format(p, false)),
            ],
        )
    } else {
        let (Some(prior), Some(feedback)) = (prior_response, orchestrator_feedback) else {
            return Err(ProtocolError::MissingFollowupInput(round));
        };
        render(
            &prompts.solver_followup,
            &[
                ("PROBLEM", &p.question),
                ("OPTIONS", &options),
                ("RESPONSE", prior),
                ("FEEDBACK", feedback),
                ("ANSWER_FORMAT", &prompts.answer_format(p, true)),
            ],
        )
    };
    let images = if binding.modality.sees_images() {
        p.image_refs.clone()
    } else {
        Vec::new()
    };
    Ok(CompletionRequest::for_binding(binding, text, images))
}

/// Reflector request judging one solver response. Text-only reflectors get
/// no images.
pub fn build_reflector_task(
    p: &Problem,
    binding: &AgentBinding,
    response: &SolverResponse,
    prompts: &PromptSet,
) -> CompletionRequest {
    let text = render(
        &prompts.reflector,
        &[
            ("PROBLEM", &render_problem_statement(p)),
            ("RESPONSE", &response.raw_text),
        ],
    );
    let images = if binding.modality.sees_images() {
        p.image_refs.clone()
    } else {
        Vec::new()
    };
    CompletionRequest::for_binding(binding, text, images)
}

/// Orchestrator prompt over the non-missing feedback for one solver, or
/// `None` when every reflector failed.
pub fn render_orchestrator_prompt(judgments: &[ReflectorJudgment], prompts: &PromptSet) -> Option<String> {
    let texts: Vec<&str> = judgments
        .iter()
        .filter(|j| j.weight != MISSING_WEIGHT)
        .map(|j| j.feedback_text.as_str())
        .collect();
    if texts.is_empty() {
        return None;
    }
    Some(render(&prompts.orchestrator, &[("FEEDBACK", &render_feedback_blocks(texts))]))
}

/// Summarizes reflector feedback on one solver into challenge questions.
/// Returns the empty summary without calling the orchestrator when all
/// judgments are missing.
pub fn orchestrate_feedback(
    problem_id: &str,
    round: usize,
    solver_index: usize,
    judgments: &[ReflectorJudgment],
    prompts: &PromptSet,
    orchestrator: &AgentBinding,
    gateway: &Gateway,
) -> Result<String, BackendError> {
    let Some(text) = render_orchestrator_prompt(judgments, prompts) else {
        log::info!("problem {problem_id} round {round}: no usable feedback for solver {solver_index}");
        return Ok(String::new());
    };
    // the orchestrator stays text-only
    let req = CompletionRequest::for_binding(orchestrator, text, Vec::new());
    let ctx = CallContext {
        problem_id: problem_id.to_string(),
        round,
        role: Role::Orchestrator,
        target: Some(solver_index),
    };
    gateway.complete(orchestrator, &ctx, &req)
}

/// All solvers gave the same non-abstaining answer and every reflector
/// weight is 2.
pub fn check_consensus(round: &DebateRound) -> bool {
    let Some(first) = round.responses.first() else {
        return false;
    };
    if first.parsed_answer.is_abstain() {
        return false;
    }
    round
        .responses
        .iter()
        .all(|r| r.parsed_answer == first.parsed_answer)
        && round.judgments.iter().flatten().all(|j| j.weight == 2)
}

/// Runs `f(0..n)` on scoped threads and returns results in index order.
fn fan_out<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    if n == 1 {
        return vec![f(0)];
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..n).map(|i| s.spawn({
            let f = &f;
            move || f(i)
        })).collect();
        handles.into_iter().map(|h| h.join().expect("fan-out worker panicked")).collect()
    })
}

/// Executes one debate on `p` until consensus, the round cap, or an
/// orchestrator failure.
pub fn run_debate(
    p: &Problem,
    roster: &AgentRoster,
    policy: &DebatePolicy,
    prompts: &PromptSet,
    gateway: &Gateway,
) -> Result<DebateTranscript, ProtocolError> {
    policy.validate()?;
    prompts.validate().map_err(ProtocolError::InvalidPrompts)?;
    roster.validate(!p.image_refs.is_empty())?;
    let n = roster.solvers.len();
    let m = roster.reflectors.len();

    let mut rounds: Vec<DebateRound> = Vec::new();
    let mut wall_clock = Vec::new();
    let mut calls = 0usize;
    let mut termination = Termination::MaxRounds;

    for k in 1..=policy.max_rounds {
        let started = Instant::now();
        let previous = rounds.last();

        let solver_results = fan_out(n, |i| -> Result<SolverResponse, ProtocolError> {
            let binding = &roster.solvers[i];
            let req = match previous {
                None => build_solver_task(p, binding, k, None, None, prompts)?,
                Some(prev) => build_solver_task(
                    p,
                    binding,
                    k,
                    Some(&prev.responses[i].raw_text),
                    Some(&prev.orchestrator_summaries[i]),
                    prompts,
                )?,
            };
            let ctx = CallContext {
                problem_id: p.id.clone(),
                round: k,
                role: Role::Solver,
                target: None,
            };
            Ok(match gateway.complete(binding, &ctx, &req) {
                Ok(raw) => {
                    let answer = parse_final_answer(&raw, p);
                    SolverResponse {
                        round: k,
                        solver_index: i,
                        parse_ok: !answer.is_abstain(),
                        parsed_answer: answer,
                        raw_text: raw,
                    }
                }
                Err(BackendError::Config(e)) => return Err(BackendError::Config(e).into()),
                Err(e) => {
                    log::warn!("problem {} round {k}: solver {} failed: {e}", p.id, binding.name);
                    SolverResponse {
                        round: k,
                        solver_index: i,
                        raw_text: String::new(),
                        parsed_answer: Answer::Abstain,
                        parse_ok: false,
                    }
                }
            })
        });
        calls += n;
        let responses = solver_results.into_iter().collect::<Result<Vec<_>, _>>()?;

        let judgment_results = fan_out(n * m, |idx| -> Result<ReflectorJudgment, ProtocolError> {
            let (i, j) = (idx / m, idx % m);
            let binding = &roster.reflectors[j];
            let req = build_reflector_task(p, binding, &responses[i], prompts);
            let ctx = CallContext {
                problem_id: p.id.clone(),
                round: k,
                role: Role::Reflector,
                target: Some(i),
            };
            let (weight, feedback_text) = match gateway.complete(binding, &ctx, &req) {
                Ok(raw) => (parse_final_score(&raw), raw),
                Err(BackendError::Config(e)) => return Err(BackendError::Config(e).into()),
                Err(e) => {
                    log::warn!("problem {} round {k}: reflector {} failed: {e}", p.id, binding.name);
                    (MISSING_WEIGHT, String::new())
                }
            };
            Ok(ReflectorJudgment {
                round: k,
                solver_index: i,
                reflector_index: j,
                weight,
                feedback_text,
            })
        });
        calls += n * m;
        let mut flat = judgment_results.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter();
        let judgments: Vec<Vec<ReflectorJudgment>> =
            (0..n).map(|_| flat.by_ref().take(m).collect()).collect();

        let mut round = DebateRound {
            round_index: k,
            responses,
            judgments,
            orchestrator_summaries: Vec::new(),
        };

        if check_consensus(&round) && (policy.consensus_stop || k == policy.max_rounds) {
            termination = Termination::Consensus;
            rounds.push(round);
            wall_clock.push(started.elapsed().as_secs_f64());
            break;
        }
        if k == policy.max_rounds {
            termination = Termination::MaxRounds;
            rounds.push(round);
            wall_clock.push(started.elapsed().as_secs_f64());
            break;
        }

        let summaries = fan_out(n, |i| {
            orchestrate_feedback(&p.id, k, i, &round.judgments[i], prompts, &roster.orchestrator, gateway)
        });
        calls += round
            .judgments
            .iter()
            .filter(|row| row.iter().any(|j| j.weight != MISSING_WEIGHT))
            .count();
        match summaries.into_iter().collect::<Result<Vec<_>, _>>() {
            Ok(s) => round.orchestrator_summaries = s,
            Err(BackendError::Config(e)) => return Err(BackendError::Config(e).into()),
            Err(e) => {
                log::warn!("problem {} round {k}: orchestrator failed: {e}", p.id);
                termination = Termination::BackendFailure;
                rounds.push(round);
                wall_clock.push(started.elapsed().as_secs_f64());
                break;
            }
        }
        rounds.push(round);
        wall_clock.push(started.elapsed().as_secs_f64());
    }

    Ok(DebateTranscript {
        schema_version: TRANSCRIPT_SCHEMA_VERSION,
        problem_id: p.id.clone(),
        option_codes: p.option_codes(),
        roster: roster.fingerprint(),
        rounds,
        termination,
        wall_clock_secs: wall_clock,
        backend_calls: calls,
    })
}
