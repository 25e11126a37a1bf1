//! Domain types shared by the debate engine, the aggregators and the harness.
//!
//! Everything here is an immutable value once constructed. Transcripts are
//! stored as one JSON document per problem (`<problem_id>.transcript.json`)
//! carrying an explicit `schema_version`.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use thiserror::Error;

/// Current on-disk transcript schema.
pub const TRANSCRIPT_SCHEMA_VERSION: u32 = 1;

/// Reflector weight signalling a failed or unparseable judgment.
pub const MISSING_WEIGHT: i8 = -1;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("option index {0} out of range [0, 26)")]
    InvalidIndex(usize),
    #[error("invalid problem {id}: {reason}")]
    InvalidProblem { id: String, reason: String },
    #[error("invalid roster: {0}")]
    InvalidRoster(String),
    #[error("invalid transcript: {0}")]
    InvalidTranscript(String),
    #[error("transcript parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CodeStyle {
    /// `A1`, `B2`, `C3`, ...
    LetterDigit,
    /// `A`, `B`, `C`, ...
    Letter,
}

/// Canonical display code for the option at `index`.
///
/// The letter-digit style pairs the letter with its 1-based position, so
/// index 0 is `A1` and index 4 is `E5`. Past index 8 the number keeps
/// counting (`J10`, `K11`, ...).
pub fn canonical_option_code(index: usize, style: CodeStyle) -> Result<String, ModelError> {
    if index >= 26 {
        return Err(ModelError::InvalidIndex(index));
    }
    let letter = (b'A' + index as u8) as char;
    Ok(match style {
        CodeStyle::Letter => letter.to_string(),
        CodeStyle::LetterDigit => format!("{letter}{}", index + 1),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerChoice {
    pub code: String,
    pub text: String,
}

/// One task instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub image_refs: Vec<String>,
    #[serde(default)]
    pub options: Vec<AnswerChoice>,
    #[serde(default)]
    pub ground_truth: Option<String>,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

impl Problem {
    pub fn new(
        id: impl Into<String>,
        question: impl Into<String>,
        image_refs: Vec<String>,
        options: Vec<AnswerChoice>,
        ground_truth: Option<String>,
        tags: BTreeMap<String, String>,
    ) -> Result<Self, ModelError> {
        let problem = Self {
            id: id.into(),
            question: question.into(),
            image_refs,
            options,
            ground_truth,
            tags,
        };
        problem.validate()?;
        Ok(problem)
    }

    /// Builds a problem from an ordered code -> text map.
    pub fn from_option_map(
        id: impl Into<String>,
        question: impl Into<String>,
        image_refs: Vec<String>,
        options: &IndexMap<String, String>,
        ground_truth: Option<String>,
        tags: BTreeMap<String, String>,
    ) -> Result<Self, ModelError> {
        let options = options
            .iter()
            .map(|(code, text)| AnswerChoice {
                code: code.clone(),
                text: text.clone(),
            })
            .collect();
        Self::new(id, question, image_refs, options, ground_truth, tags)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |reason: String| ModelError::InvalidProblem {
            id: self.id.clone(),
            reason,
        };
        if self.id.is_empty() {
            return Err(bad("empty id".into()));
        }
        let mut seen = HashSet::new();
        for opt in &self.options {
            if opt.code.is_empty() {
                return Err(bad("empty option code".into()));
            }
            if !seen.insert(opt.code.as_str()) {
                return Err(bad(format!("duplicate option code {:?}", opt.code)));
            }
        }
        if let (false, Some(gt)) = (self.options.is_empty(), &self.ground_truth) {
            if !seen.contains(gt.as_str()) {
                return Err(bad(format!("ground truth {gt:?} is not an option code")));
            }
        }
        Ok(())
    }

    /// Number of answer classes; 0 for free-form problems.
    pub fn num_options(&self) -> usize {
        self.options.len()
    }

    pub fn is_free_form(&self) -> bool {
        self.options.is_empty()
    }

    pub fn option_codes(&self) -> Vec<String> {
        self.options.iter().map(|o| o.code.clone()).collect()
    }

    pub fn option_index(&self, code: &str) -> Option<usize> {
        self.options.iter().position(|o| o.code == code)
    }
}

/// A solver's final answer after parsing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Answer {
    /// One of the owning problem's option codes.
    Option(String),
    /// Verbatim free-form answer text.
    FreeForm(String),
    /// No parseable answer; carries no ballot.
    Abstain,
}

impl Answer {
    pub fn is_abstain(&self) -> bool {
        matches!(self, Answer::Abstain)
    }

    /// The option code or free-form text, `None` for abstentions.
    pub fn as_text(&self) -> Option<&str> {
        match self {
            Answer::Option(s) | Answer::FreeForm(s) => Some(s),
            Answer::Abstain => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverResponse {
    pub round: usize,
    pub solver_index: usize,
    pub raw_text: String,
    pub parsed_answer: Answer,
    pub parse_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectorJudgment {
    pub round: usize,
    pub solver_index: usize,
    pub reflector_index: usize,
    /// One of -1 (missing), 0 (wrong), 1 (unsure), 2 (correct).
    pub weight: i8,
    pub feedback_text: String,
}

impl ReflectorJudgment {
    pub fn is_missing(&self) -> bool {
        self.weight == MISSING_WEIGHT
    }
}

/// One debate round: solver responses plus the n x m judgment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebateRound {
    pub round_index: usize,
    pub responses: Vec<SolverResponse>,
    /// `judgments[i][j]` is reflector j's verdict on solver i.
    pub judgments: Vec<Vec<ReflectorJudgment>>,
    /// One orchestrator summary per solver; empty on the terminal round.
    #[serde(default)]
    pub orchestrator_summaries: Vec<String>,
}

impl DebateRound {
    pub fn num_solvers(&self) -> usize {
        self.responses.len()
    }

    pub fn num_reflectors(&self) -> usize {
        self.judgments.first().map_or(0, Vec::len)
    }

    /// The weight matrix as plain integers.
    pub fn weight_matrix(&self) -> Vec<Vec<i8>> {
        self.judgments
            .iter()
            .map(|row| row.iter().map(|j| j.weight).collect())
            .collect()
    }

    pub fn answers(&self) -> Vec<Answer> {
        self.responses.iter().map(|r| r.parsed_answer.clone()).collect()
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<(), ModelError> {
        let bad = |s: String| ModelError::InvalidTranscript(format!("round {}: {s}", self.round_index));
        if self.responses.len() != n {
            return Err(bad(format!("{} responses, expected {n}", self.responses.len())));
        }
        for (i, r) in self.responses.iter().enumerate() {
            if r.solver_index != i || r.round != self.round_index {
                return Err(bad(format!("response {i} carries wrong indices")));
            }
            if !r.parse_ok && !r.parsed_answer.is_abstain() {
                return Err(bad(format!("response {i} failed to parse but is not ABSTAIN")));
            }
        }
        if self.judgments.len() != n {
            return Err(bad(format!("{} judgment rows, expected {n}", self.judgments.len())));
        }
        for (i, row) in self.judgments.iter().enumerate() {
            if row.len() != m {
                return Err(bad(format!("judgment row {i} has {} entries, expected {m}", row.len())));
            }
            for (j, jd) in row.iter().enumerate() {
                if jd.solver_index != i || jd.reflector_index != j || jd.round != self.round_index {
                    return Err(bad(format!("judgment ({i},{j}) carries wrong indices")));
                }
                if !(-1..=2).contains(&jd.weight) {
                    return Err(bad(format!("judgment ({i},{j}) weight {} out of range", jd.weight)));
                }
            }
        }
        if !self.orchestrator_summaries.is_empty() && self.orchestrator_summaries.len() != n {
            return Err(bad("orchestrator summaries must be empty or one per solver".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Termination {
    Consensus,
    MaxRounds,
    BackendFailure,
}

/// Agent names by role; two transcripts are comparable iff these match.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RosterFingerprint {
    pub solvers: Vec<String>,
    pub reflectors: Vec<String>,
    pub orchestrator: String,
}

impl RosterFingerprint {
    /// Compact label such as `(a+b)x(c+d)|o`.
    pub fn label(&self) -> String {
        format!(
            "({})x({})|{}",
            self.solvers.join("+"),
            self.reflectors.join("+"),
            self.orchestrator
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebateTranscript {
    pub schema_version: u32,
    pub problem_id: String,
    /// The problem's option codes in order; empty for free-form problems.
    pub option_codes: Vec<String>,
    pub roster: RosterFingerprint,
    pub rounds: Vec<DebateRound>,
    pub termination: Termination,
    /// Seconds spent per round, parallel to `rounds`.
    pub wall_clock_secs: Vec<f64>,
    /// Backend calls issued for this debate.
    pub backend_calls: usize,
}

impl DebateTranscript {
    pub fn num_solvers(&self) -> usize {
        self.roster.solvers.len()
    }

    pub fn num_reflectors(&self) -> usize {
        self.roster.reflectors.len()
    }

    pub fn last_round(&self) -> Option<&DebateRound> {
        self.rounds.last()
    }

    /// The round with 1-based index `round`, or the final round when the
    /// debate stopped earlier.
    pub fn round_or_last(&self, round: usize) -> Option<&DebateRound> {
        if round == 0 {
            return None;
        }
        self.rounds.get(round - 1).or_else(|| self.rounds.last())
    }

    pub fn is_free_form(&self) -> bool {
        self.option_codes.is_empty()
    }

    /// Same transcript with timing fields zeroed, for golden comparisons.
    pub fn without_timing(&self) -> Self {
        let mut t = self.clone();
        t.wall_clock_secs.iter_mut().for_each(|s| *s = 0.0);
        t
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.schema_version != TRANSCRIPT_SCHEMA_VERSION {
            return Err(ModelError::InvalidTranscript(format!(
                "unsupported schema version {}",
                self.schema_version
            )));
        }
        let (n, m) = (self.num_solvers(), self.num_reflectors());
        for (k, round) in self.rounds.iter().enumerate() {
            if round.round_index != k + 1 {
                return Err(ModelError::InvalidTranscript(format!(
                    "round {} found at position {}",
                    round.round_index,
                    k + 1
                )));
            }
            round.validate(n, m)?;
            for r in &round.responses {
                if let Answer::Option(code) = &r.parsed_answer {
                    if !self.option_codes.contains(code) {
                        return Err(ModelError::InvalidTranscript(format!(
                            "answer {code:?} is not an option code"
                        )));
                    }
                }
            }
        }
        if self.wall_clock_secs.len() != self.rounds.len() {
            return Err(ModelError::InvalidTranscript(
                "wall_clock_secs must have one entry per round".into(),
            ));
        }
        if self.termination == Termination::Consensus
            && !self.rounds.last().is_some_and(crate::protocol::check_consensus)
        {
            return Err(ModelError::InvalidTranscript(
                "termination is Consensus but the final round is not unanimous".into(),
            ));
        }
        Ok(())
    }
}

pub fn serialize_transcript(t: &DebateTranscript) -> Result<Vec<u8>, ModelError> {
    t.validate()?;
    let mut bytes = serde_json::to_vec_pretty(t)
        .map_err(|e| ModelError::InvalidTranscript(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn deserialize_transcript(bytes: &[u8]) -> Result<DebateTranscript, ModelError> {
    let t: DebateTranscript = serde_json::from_slice(bytes).map_err(|e| ModelError::Parse {
        offset: byte_offset(bytes, e.line(), e.column()),
        message: e.to_string(),
    })?;
    t.validate()?;
    Ok(t)
}

/// Converts serde_json's 1-based line/column into a byte offset.
fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start = bytes
        .split_inclusive(|&b| b == b'\n')
        .take(line - 1)
        .map(<[u8]>::len)
        .sum::<usize>();
    (line_start + column.saturating_sub(1)).min(bytes.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Modality {
    #[default]
    #[serde(rename = "text")]
    Text,
    #[serde(rename = "vision+text")]
    VisionText,
}

impl Modality {
    pub fn sees_images(self) -> bool {
        self == Modality::VisionText
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub system: Option<String>,
}

fn default_max_tokens() -> u32 {
    4096
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            max_tokens: default_max_tokens(),
            temperature: 0.0,
            seed: None,
            system: None,
        }
    }
}

/// One agent: a name, the backend that serves it and how to call it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentBinding {
    pub name: String,
    pub backend: String,
    /// Model identifier sent to remote backends; defaults to `name`.
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub modality: Modality,
    #[serde(default, flatten)]
    pub params: GenerationParams,
}

impl AgentBinding {
    pub fn new(name: impl Into<String>, backend: impl Into<String>, modality: Modality) -> Self {
        Self {
            name: name.into(),
            backend: backend.into(),
            model: None,
            modality,
            params: GenerationParams::default(),
        }
    }

    pub fn model_id(&self) -> &str {
        self.model.as_deref().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRoster {
    pub solvers: Vec<AgentBinding>,
    pub reflectors: Vec<AgentBinding>,
    pub orchestrator: AgentBinding,
}

impl AgentRoster {
    pub fn validate(&self, has_images: bool) -> Result<(), ModelError> {
        if self.solvers.is_empty() {
            return Err(ModelError::InvalidRoster("at least one solver required".into()));
        }
        if self.reflectors.is_empty() {
            return Err(ModelError::InvalidRoster("at least one reflector required".into()));
        }
        if has_images {
            if let Some(s) = self.solvers.iter().find(|s| !s.modality.sees_images()) {
                return Err(ModelError::InvalidRoster(format!(
                    "solver {:?} is text-only but the dataset has image problems",
                    s.name
                )));
            }
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> RosterFingerprint {
        RosterFingerprint {
            solvers: self.solvers.iter().map(|b| b.name.clone()).collect(),
            reflectors: self.reflectors.iter().map(|b| b.name.clone()).collect(),
            orchestrator: self.orchestrator.name.clone(),
        }
    }
}
