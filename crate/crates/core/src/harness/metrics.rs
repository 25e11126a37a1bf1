use super::pipeline::ItemDecision;
use super::HarnessError;
use crate::backend::{judge_equivalent, JudgeConfig, JudgeMode};
use crate::model::{Answer, DebateTranscript, Problem, Termination};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagAccuracy {
    pub items: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Roster fingerprint label of the run.
    pub label: String,
    pub aggregator: Option<String>,
    /// Items with ground truth; the denominator of every accuracy.
    pub scored_items: usize,
    pub accuracy: f64,
    /// Accuracy with free-form items graded by the model judge, when one is
    /// configured.
    pub model_judge_accuracy: Option<f64>,
    /// Keyed `tag=value`.
    pub per_tag: BTreeMap<String, TagAccuracy>,
    /// Entry k-1: fraction of items where some solver was correct in some
    /// round up to k.
    pub cumulative_accuracy: Vec<f64>,
    /// Entry k-1: mean per-solver accuracy at round k.
    pub average_accuracy: Vec<f64>,
    pub mean_rounds: f64,
    pub rounds_histogram: BTreeMap<usize, usize>,
    pub termination_histogram: BTreeMap<String, usize>,
    pub backend_calls: usize,
    /// Final predictions that were ABSTAIN (scored incorrect).
    pub abstentions: usize,
}

/// Whether `answer` is correct for `p`; `None` without ground truth.
/// Abstentions are incorrect. Multiple-choice answers are compared by option
/// code, free-form answers by the judge.
pub fn score_answer(
    answer: &Answer,
    p: &Problem,
    mode: JudgeMode,
    judge: &JudgeConfig,
) -> Result<Option<bool>, HarnessError> {
    let Some(gt) = &p.ground_truth else {
        return Ok(None);
    };
    Ok(Some(match answer {
        Answer::Abstain => false,
        Answer::Option(code) => code == gt,
        Answer::FreeForm(text) => {
            judge_equivalent(text, gt, mode, judge).map_err(|e| HarnessError::Judge(e.to_string()))?
        }
    }))
}

fn termination_name(t: Termination) -> &'static str {
    match t {
        Termination::Consensus => "consensus",
        Termination::MaxRounds => "max_rounds",
        Termination::BackendFailure => "backend_failure",
    }
}

/// Fills `correct` on each decision and summarizes the run. `decisions` and
/// `transcripts` are matched by problem id.
pub fn compute_metrics(
    transcripts: &[DebateTranscript],
    decisions: &mut [ItemDecision],
    problems: &[Problem],
    aggregator: Option<&str>,
    judge: &JudgeConfig,
) -> Result<MetricsReport, HarnessError> {
    let by_id: HashMap<&str, &Problem> = problems.iter().map(|p| (p.id.as_str(), p)).collect();
    let problem = |id: &str| {
        by_id
            .get(id)
            .copied()
            .ok_or_else(|| HarnessError::Config(format!("transcript {id:?} has no problem in the dataset")))
    };

    let mut scored = 0usize;
    let mut correct = 0usize;
    let mut abstentions = 0usize;
    let mut judged_correct = 0usize;
    let use_model_judge = judge.model.is_some();
    let mut tags: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for d in decisions.iter_mut() {
        let p = problem(&d.problem_id)?;
        d.correct = score_answer(&d.prediction, p, JudgeMode::Normalized, judge)?;
        if d.prediction.is_abstain() {
            abstentions += 1;
        }
        let Some(ok) = d.correct else { continue };
        scored += 1;
        correct += usize::from(ok);
        if use_model_judge {
            let ok_model = if p.is_free_form() {
                score_answer(&d.prediction, p, JudgeMode::ModelJudge, judge)?.unwrap_or(false)
            } else {
                ok
            };
            judged_correct += usize::from(ok_model);
        }
        for (k, v) in &p.tags {
            let e = tags.entry(format!("{k}={v}")).or_default();
            e.0 += 1;
            e.1 += usize::from(ok);
        }
    }
    let frac = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };

    let max_rounds = transcripts.iter().map(|t| t.rounds.len()).max().unwrap_or(0);
    let mut solved = vec![false; transcripts.len()];
    let mut cumulative = Vec::with_capacity(max_rounds);
    let mut average = Vec::with_capacity(max_rounds);
    for k in 1..=max_rounds {
        let (mut solved_count, mut avg_sum, mut round_items) = (0usize, 0.0, 0usize);
        for (idx, t) in transcripts.iter().enumerate() {
            let p = problem(&t.problem_id)?;
            if p.ground_truth.is_none() {
                continue;
            }
            round_items += 1;
            let Some(round) = t.round_or_last(k) else { continue };
            let mut hits = 0usize;
            for r in &round.responses {
                hits += usize::from(score_answer(&r.parsed_answer, p, JudgeMode::Normalized, judge)? == Some(true));
            }
            solved[idx] |= hits > 0;
            solved_count += usize::from(solved[idx]);
            avg_sum += frac(hits, round.responses.len());
        }
        cumulative.push(frac(solved_count, round_items));
        average.push(if round_items == 0 { 0.0 } else { avg_sum / round_items as f64 });
    }

    let mut rounds_histogram = BTreeMap::new();
    let mut termination_histogram = BTreeMap::new();
    for t in transcripts {
        *rounds_histogram.entry(t.rounds.len()).or_insert(0) += 1;
        *termination_histogram
            .entry(termination_name(t.termination).to_string())
            .or_insert(0) += 1;
    }
    let label = transcripts.first().map(|t| t.roster.label()).unwrap_or_default();
    Ok(MetricsReport {
        label,
        aggregator: aggregator.map(str::to_string),
        scored_items: scored,
        accuracy: frac(correct, scored),
        model_judge_accuracy: use_model_judge.then(|| frac(judged_correct, scored)),
        per_tag: tags
            .into_iter()
            .map(|(k, (n, c))| (k, TagAccuracy { items: n, accuracy: frac(c, n) }))
            .collect(),
        cumulative_accuracy: cumulative,
        average_accuracy: average,
        mean_rounds: frac(transcripts.iter().map(|t| t.rounds.len()).sum(), transcripts.len()),
        rounds_histogram,
        termination_histogram,
        backend_calls: transcripts.iter().map(|t| t.backend_calls).sum(),
        abstentions,
    })
}
