//! Prompt templates for the four debate roles.

use crate::model::{canonical_option_code, CodeStyle, Problem};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

const SOLVER_ROUND1: &str = "Please describe the problem, including the images if available. \
Your description of the image should be detailed and accurate so that an LLM without access to \
the image can solve the problem. After this, please solve this question with explanation of the \
intermediate steps. You must select an answer from one of the five options:\n\
Puzzle: [PROBLEM]{PROBLEM}[/PROBLEM]\n\
Options: [OPTIONS]{OPTIONS}[/OPTIONS].\n\
{ANSWER_FORMAT}";

const SOLVER_FOLLOWUP: &str = "Following is the feedback received on your previous solution. \
If there was a mistake in your previous solution, use this feedback and the list of actionable \
steps provided to reconsider and re-evaluate your solution. You should re-evaluate your \
understanding the given image (if any) and the problem statement using the feedback. \
Specifically, based on the provided feedback, please provide a detailed explanation of the given \
image (if any). Please provide the final answer option and explanation of the intermediate \
steps, as well as details of how the feedbacks were addressed in your revised final answer. \
{ANSWER_FORMAT}\n\
[PROBLEM]{PROBLEM}[/PROBLEM] [OPTIONS]{OPTIONS}[/OPTIONS]\n\
[RESPONSE]{RESPONSE}[/RESPONSE]\n\
[FEEDBACK]{FEEDBACK}[/FEEDBACK]";

const REFLECTOR: &str = "Following are the solutions of LLM in solving a math puzzle. The \
problem statement and the LLM solution are provided below. The problem may contain an image \
that needs to be used to understand the LLM's answer. You should not solve the problem \
yourself. Instead, please check if the solutions below are logically and mathematically \
consistent and the final answer is correct?\n\
[PROBLEM]{PROBLEM}[/PROBLEM].\n\
[RESPONSE]{RESPONSE}[/RESPONSE].\n\
Your Task: Provide a detailed explanation of your assessment so that it can be used as feedback \
to LLM to improve the solution, including any mistakes in understanding the given image (if \
any).\n\
Your response should end with a single line in the format:\n\
FINAL_SCORE: <value>\n\
where <value> is 0 if final answer is the wrong, 1 if you are unable to confirm, and 2 if the \
final answer is correct.";

const ORCHESTRATOR: &str = "The following are the feedback received from LLMs on a puzzle \
solution. There could be significant differences in the feedback provided by different LLMs, \
especially the LLMs may select different answer options. Your task is to pay attention to these \
differences in the feedback and the selected answer options. Please summarize all the feedback \
and provide a set of actionable questions for the solver to revise its solution in the next \
round. It is possible that the previous solution might have overlooked details in the given \
image (if any), and thus your summary should emphasize the importance of re-evaluating the \
image.\n\
{FEEDBACK}";

const ANSWER_FORMAT_ROUND1: &str = "Write the final answer option as one of {CODES}.";
const ANSWER_FORMAT_FOLLOWUP: &str =
    "Your final answer should be reported in your final line and must select one of the answer options: {CODES}.";
const ANSWER_FORMAT_FREE: &str =
    "Write the final answer in your final line in the format FINAL_ANSWER: <answer>.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    SolverRound1,
    SolverFollowup,
    Reflector,
    Orchestrator,
}

impl Slot {
    fn required(self) -> &'static [&'static str] {
        match self {
            Slot::SolverRound1 => &["PROBLEM", "OPTIONS"],
            Slot::SolverFollowup => &["PROBLEM", "OPTIONS", "RESPONSE", "FEEDBACK"],
            Slot::Reflector => &["PROBLEM", "RESPONSE"],
            Slot::Orchestrator => &["FEEDBACK"],
        }
    }

    fn optional(self) -> &'static [&'static str] {
        match self {
            Slot::SolverRound1 | Slot::SolverFollowup => &["ANSWER_FORMAT"],
            _ => &[],
        }
    }
}

/// The four role templates plus the answer-format sentence spliced into the
/// solver templates at `{ANSWER_FORMAT}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSet {
    pub solver_round1: String,
    pub solver_followup: String,
    pub reflector: String,
    pub orchestrator: String,
    /// Multiple-choice format line for round 1; `{CODES}` lists the codes.
    pub answer_format_round1: String,
    pub answer_format_followup: String,
    /// Format line for free-form problems.
    pub answer_format_free: String,
    pub code_style: CodeStyle,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            solver_round1: SOLVER_ROUND1.into(),
            solver_followup: SOLVER_FOLLOWUP.into(),
            reflector: REFLECTOR.into(),
            orchestrator: ORCHESTRATOR.into(),
            answer_format_round1: ANSWER_FORMAT_ROUND1.into(),
            answer_format_followup: ANSWER_FORMAT_FOLLOWUP.into(),
            answer_format_free: ANSWER_FORMAT_FREE.into(),
            code_style: CodeStyle::LetterDigit,
        }
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Z_]+)\}").unwrap())
}

/// Substitutes `{NAME}` placeholders in a single pass; inserted values are
/// never rescanned.
pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    placeholder_re()
        .replace_all(template, |caps: &regex::Captures<'_>| {
            let name = &caps[1];
            values
                .iter()
                .find(|(k, _)| *k == name)
                .map_or_else(|| caps[0].to_string(), |(_, v)| v.to_string())
        })
        .into_owned()
}

impl PromptSet {
    pub fn template(&self, slot: Slot) -> &str {
        match slot {
            Slot::SolverRound1 => &self.solver_round1,
            Slot::SolverFollowup => &self.solver_followup,
            Slot::Reflector => &self.reflector,
            Slot::Orchestrator => &self.orchestrator,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for slot in [Slot::SolverRound1, Slot::SolverFollowup, Slot::Reflector, Slot::Orchestrator] {
            let template = self.template(slot);
            let found: Vec<&str> = placeholder_re()
                .captures_iter(template)
                .map(|c| c.get(1).unwrap().as_str())
                .collect();
            for req in slot.required() {
                let n = found.iter().filter(|f| *f == req).count();
                if n != 1 {
                    return Err(format!("{slot:?} template must contain {{{req}}} exactly once, found {n}"));
                }
            }
            if let Some(extra) = found
                .iter()
                .find(|f| !slot.required().contains(f) && !slot.optional().contains(f))
            {
                return Err(format!("{slot:?} template has unknown placeholder {{{extra}}}"));
            }
        }
        Ok(())
    }

    /// Comma-separated display codes, e.g. `A1, B2, C3, D4, E5`.
    pub fn display_codes(&self, k: usize) -> String {
        (0..k.min(26))
            .map(|i| canonical_option_code(i, self.code_style).expect("index < 26"))
            .collect::<Vec<_>>()
            .join(", ")
    }

    pub fn answer_format(&self, p: &Problem, followup: bool) -> String {
        if p.is_free_form() {
            return self.answer_format_free.clone();
        }
        let t = if followup {
            &self.answer_format_followup
        } else {
            &self.answer_format_round1
        };
        render(t, &[("CODES", &self.display_codes(p.num_options()))])
    }
}

/// `A: 10\nB: 12\n...`; empty for free-form problems.
pub fn render_options(p: &Problem) -> String {
    p.options
        .iter()
        .map(|o| format!("{}: {}", o.code, o.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Problem statement as shown to reflectors: question plus options.
pub fn render_problem_statement(p: &Problem) -> String {
    if p.is_free_form() {
        p.question.clone()
    } else {
        format!("{}\nOptions:\n{}", p.question, render_options(p))
    }
}

/// One `[FEEDBACK] ... [/FEEDBACK]` block per text.
pub fn render_feedback_blocks<'a>(texts: impl IntoIterator<Item = &'a str>) -> String {
    texts
        .into_iter()
        .map(|t| format!("[FEEDBACK]{t}[/FEEDBACK]"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        PromptSet::default().validate().unwrap();
    }

    #[test]
    fn missing_or_unknown_placeholders_rejected() {
        let mut p = PromptSet::default();
        p.reflector = p.reflector.replace("{RESPONSE}", "");
        assert!(p.validate().is_err());

        let mut p = PromptSet::default();
        p.orchestrator.push_str("{PROBLEM}");
        assert!(p.validate().is_err());
    }

    #[test]
    fn display_codes_match_prompt_table() {
        assert_eq!(PromptSet::default().display_codes(5), "A1, B2, C3, D4, E5");
    }

    #[test]
    fn single_pass_render() {
        let out = render("a {X} b {Y}", &[("X", "{Y}"), ("Y", "y")]);
        assert_eq!(out, "a {Y} b y");
    }
}
