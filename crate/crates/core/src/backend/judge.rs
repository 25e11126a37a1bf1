use super::{CallContext, CompletionRequest, Gateway, Role};
use crate::model::AgentBinding;
use std::sync::Arc;
use thiserror::Error;

pub const JUDGE_PROMPT: &str = "You are grading a short answer to a chart or math question. \
Decide whether the predicted answer and the ground-truth answer denote the same value. \
Ignore formatting differences such as units, percent signs, whitespace and capitalization.\n\n\
Predicted answer: {PREDICTED}\nGround truth: {GROUND_TRUTH}\n\n\
Reply with a single line in the format VERDICT: YES or VERDICT: NO.";

#[derive(Debug, Error, PartialEq)]
pub enum JudgeError {
    #[error("empty answer string")]
    EmptyInput,
    #[error("model judge is not configured")]
    NotConfigured,
    #[error("model judge call failed: {0}")]
    Backend(String),
    #[error("unparseable judge verdict: {0:?}")]
    Unparseable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JudgeMode {
    Normalized,
    ModelJudge,
}

#[derive(Clone)]
pub struct JudgeConfig {
    /// Unit suffixes stripped from numeric answers.
    pub units: Vec<String>,
    pub rel_tol: f64,
    pub model: Option<(Arc<Gateway>, AgentBinding)>,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            units: ["%", "dm", "cm", "m", "kg", "s", "h"].iter().map(|s| s.to_string()).collect(),
            rel_tol: 1e-6,
            model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Canonical {
    Number(f64),
    Text(String),
}

fn parse_number(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// trim, lowercase, collapse whitespace, then drop a trailing `%` or unit
/// suffix when what remains is a number.
pub fn normalize_answer(s: &str, units: &[String]) -> Canonical {
    let collapsed = s
        .trim()
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    if let Some(v) = parse_number(&collapsed) {
        return Canonical::Number(v);
    }
    let mut units: Vec<&String> = units.iter().collect();
    units.sort_by_key(|u| std::cmp::Reverse(u.len()));
    for unit in units {
        if let Some(stem) = collapsed.strip_suffix(unit.to_lowercase().as_str()) {
            if let Some(v) = parse_number(stem) {
                return Canonical::Number(v);
            }
        }
    }
    Canonical::Text(collapsed)
}

pub fn judge_equivalent(
    predicted: &str,
    ground_truth: &str,
    mode: JudgeMode,
    config: &JudgeConfig,
) -> Result<bool, JudgeError> {
    if predicted.trim().is_empty() || ground_truth.trim().is_empty() {
        return Err(JudgeError::EmptyInput);
    }
    match mode {
        JudgeMode::Normalized => Ok(normalized_equal(predicted, ground_truth, config)),
        JudgeMode::ModelJudge => model_judge(predicted, ground_truth, config),
    }
}

fn normalized_equal(a: &str, b: &str, config: &JudgeConfig) -> bool {
    match (normalize_answer(a, &config.units), normalize_answer(b, &config.units)) {
        (Canonical::Number(x), Canonical::Number(y)) => {
            x == y || (x - y).abs() <= config.rel_tol * x.abs().max(y.abs())
        }
        (Canonical::Text(x), Canonical::Text(y)) => x == y,
        _ => false,
    }
}

fn model_judge(predicted: &str, ground_truth: &str, config: &JudgeConfig) -> Result<bool, JudgeError> {
    let (gateway, binding) = config.model.as_ref().ok_or(JudgeError::NotConfigured)?;
    let prompt = JUDGE_PROMPT
        .replace("{PREDICTED}", predicted)
        .replace("{GROUND_TRUTH}", ground_truth);
    let req = CompletionRequest::for_binding(binding, prompt, Vec::new());
    let ctx = CallContext {
        problem_id: String::new(),
        round: 0,
        role: Role::Judge,
        target: None,
    };
    let reply = gateway
        .complete(binding, &ctx, &req)
        .map_err(|e| JudgeError::Backend(e.to_string()))?;
    parse_verdict(&reply).ok_or(JudgeError::Unparseable(reply))
}

/// Last yes/no word in the reply wins.
fn parse_verdict(reply: &str) -> Option<bool> {
    reply
        .split(|c: char| !c.is_alphabetic())
        .rev()
        .find_map(|w| match w.to_ascii_lowercase().as_str() {
            "yes" => Some(true),
            "no" => Some(false),
            _ => None,
        })
}
