//! Runs one aggregator over a batch of stored debate transcripts.

use super::HarnessError;
use crate::aggregate::{
    aggregate_rounds, answer_class, build_counts, classic_ds_em, cluster_free_form, majority_vote,
    majority_vote_free_form, posterior_decode, wise_ds_em, AggregateError, ConfusionModel, EmFit, EmOptions,
    RoundBallots, RoundSelector,
};
use crate::backend::{JudgeConfig, JudgeMode};
use crate::model::{Answer, DebateTranscript, RosterFingerprint, MISSING_WEIGHT};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Aggregator {
    #[serde(rename = "majority")]
    Majority,
    #[serde(rename = "wmajority")]
    WeightedMajority,
    #[serde(rename = "ds")]
    ClassicDs,
    #[serde(rename = "wise-ds")]
    WiseDs,
}

impl Aggregator {
    pub const ALL: [Aggregator; 4] = [
        Aggregator::Majority,
        Aggregator::WeightedMajority,
        Aggregator::ClassicDs,
        Aggregator::WiseDs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Aggregator::Majority => "majority",
            Aggregator::WeightedMajority => "wmajority",
            Aggregator::ClassicDs => "ds",
            Aggregator::WiseDs => "wise-ds",
        }
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Aggregator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown aggregator {s:?}; expected majority, wmajority, ds or wise-ds"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationOptions {
    pub aggregator: Aggregator,
    pub raw_answers: bool,
    pub pooled_counts: bool,
    pub em: EmOptions,
}

/// Per-problem outcome of an aggregator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemDecision {
    pub problem_id: String,
    pub prediction: Answer,
    /// Accumulated weight per option; empty for unweighted aggregators.
    pub option_weights: IndexMap<String, f64>,
    pub no_support: bool,
    /// MAP true answer from the fitted model, when one was fitted.
    pub map_answer: Option<String>,
    /// MAP true weight from the joint model.
    pub map_weight: Option<usize>,
    pub rounds: usize,
    /// Filled in by scoring; `None` without ground truth.
    #[serde(default)]
    pub correct: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedRound {
    /// 1-based round the counts came from; `None` for pooled counts.
    pub round: Option<usize>,
    pub model: ConfusionModel,
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: f64,
}

/// Everything fitted during one aggregation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModelFile {
    pub aggregator: Aggregator,
    pub roster: RosterFingerprint,
    pub fits: Vec<FittedRound>,
}

impl FittedModelFile {
    /// The fit covering every item's final round.
    pub fn final_fit(&self) -> Option<&FittedRound> {
        self.fits.last()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationResult {
    pub aggregator: Aggregator,
    pub raw_answers: bool,
    pub pooled_counts: bool,
    pub decisions: Vec<ItemDecision>,
    pub fitted: Option<FittedModelFile>,
}

fn weights_as_f64(w: &[Vec<i8>]) -> Vec<Vec<f64>> {
    w.iter()
        .map(|row| {
            row.iter()
                .map(|&x| if x == MISSING_WEIGHT { 0.0 } else { f64::from(x) })
                .collect()
        })
        .collect()
}

fn decision(t: &DebateTranscript, prediction: Answer) -> ItemDecision {
    ItemDecision {
        problem_id: t.problem_id.clone(),
        prediction,
        option_weights: IndexMap::new(),
        no_support: false,
        map_answer: None,
        map_weight: None,
        rounds: t.rounds.len(),
        correct: None,
    }
}

fn majority_item(t: &DebateTranscript, judge: &JudgeConfig) -> Result<ItemDecision, HarnessError> {
    let answers = t.last_round().map(|r| r.answers()).unwrap_or_default();
    let result = if t.is_free_form() {
        majority_vote_free_form(&answers, judge)
    } else {
        majority_vote(&answers)
    };
    let prediction = match result {
        Ok(a) => a,
        Err(AggregateError::NoBallots) => Answer::Abstain,
        Err(e) => return Err(e.into()),
    };
    Ok(decision(t, prediction))
}

/// Round-discounted vote on raw answers and weights. Free-form answers are
/// first grouped into equivalence clusters named by their first member.
fn weighted_raw_item(t: &DebateTranscript, judge: &JudgeConfig) -> Result<ItemDecision, HarnessError> {
    let (options, rounds): (Vec<String>, Vec<RoundBallots>) = if t.is_free_form() {
        let texts: Vec<&str> = t
            .rounds
            .iter()
            .flat_map(|r| r.responses.iter().filter_map(|s| s.parsed_answer.as_text()))
            .collect();
        let clusters =
            cluster_free_form(&texts, JudgeMode::Normalized, judge).map_err(|e| HarnessError::Judge(e.to_string()))?;
        let mut label = vec![None; texts.len()];
        for c in &clusters {
            for &i in c {
                label[i] = Some(texts[c[0]].to_string());
            }
        }
        let mut next = label.into_iter();
        let rounds = t
            .rounds
            .iter()
            .map(|r| RoundBallots {
                answers: r
                    .responses
                    .iter()
                    .map(|s| s.parsed_answer.as_text().and_then(|_| next.next().flatten()))
                    .collect(),
                weights: weights_as_f64(&r.weight_matrix()),
            })
            .collect();
        let mut reps: Vec<String> = clusters.iter().map(|c| texts[c[0]].to_string()).collect();
        reps.sort();
        (reps, rounds)
    } else {
        let rounds = t
            .rounds
            .iter()
            .map(|r| RoundBallots {
                answers: r
                    .responses
                    .iter()
                    .map(|s| match &s.parsed_answer {
                        Answer::Option(c) => Some(c.clone()),
                        _ => None,
                    })
                    .collect(),
                weights: weights_as_f64(&r.weight_matrix()),
            })
            .collect();
        (t.option_codes.clone(), rounds)
    };
    if rounds.is_empty() || options.is_empty() {
        let mut d = decision(t, Answer::Abstain);
        d.no_support = true;
        return Ok(d);
    }
    let agg = aggregate_rounds(&rounds, &options)?;
    let prediction = match (&agg.selected, t.is_free_form()) {
        (Some(s), true) => Answer::FreeForm(s.clone()),
        (Some(s), false) => Answer::Option(s.clone()),
        (None, _) => Answer::Abstain,
    };
    let mut d = decision(t, prediction);
    d.option_weights = agg.options.iter().cloned().zip(agg.option_weights.iter().copied()).collect();
    d.no_support = agg.no_support;
    Ok(d)
}

fn fit(aggregator: Aggregator, counts: &crate::aggregate::VoteCounts, em: EmOptions) -> Result<EmFit, AggregateError> {
    match aggregator {
        Aggregator::ClassicDs => classic_ds_em(counts, em),
        _ => wise_ds_em(counts, em),
    }
}

/// Decodes each round of `t` through the model fitted for that round and
/// accumulates round-discounted weights over the item's rounds.
fn wise_item(
    t: &DebateTranscript,
    fits: &[FittedRound],
    raw_answers: bool,
) -> Result<ItemDecision, HarnessError> {
    let mut rounds = Vec::with_capacity(t.rounds.len());
    for (l, round) in t.rounds.iter().enumerate() {
        let model = &fits[l.min(fits.len() - 1)].model;
        let answers = round
            .responses
            .iter()
            .map(|r| answer_class(&r.parsed_answer, &t.option_codes))
            .collect::<Result<Vec<_>, _>>()?;
        let (decoded, weights) = posterior_decode(&round.weight_matrix(), &answers, model)?;
        let used = if raw_answers { answers } else { decoded };
        rounds.push(RoundBallots {
            answers: used.iter().map(|a| a.map(|b| t.option_codes[b].clone())).collect(),
            weights: weights
                .iter()
                .map(|row| row.iter().map(|&w| f64::from(w)).collect())
                .collect(),
        });
    }
    if rounds.is_empty() {
        let mut d = decision(t, Answer::Abstain);
        d.no_support = true;
        return Ok(d);
    }
    let agg = aggregate_rounds(&rounds, &t.option_codes)?;
    let mut d = decision(t, agg.selected.clone().map_or(Answer::Abstain, Answer::Option));
    d.option_weights = agg.options.iter().cloned().zip(agg.option_weights.iter().copied()).collect();
    d.no_support = agg.no_support;
    Ok(d)
}

/// Aggregates every transcript with one aggregator. Multiple-choice items
/// must share one roster and one option count; free-form items fall back to
/// the equivalence-clustered weighted vote under the model-based aggregators.
pub fn aggregate_transcripts(
    transcripts: &[DebateTranscript],
    opts: &AggregationOptions,
    judge: &JudgeConfig,
) -> Result<AggregationResult, HarnessError> {
    let first = transcripts.first().ok_or(AggregateError::EmptyInput)?;
    if let Some(t) = transcripts.iter().find(|t| t.roster != first.roster) {
        return Err(AggregateError::DimensionMismatch(format!(
            "mixed rosters: {} was debated by {} but {} by {}",
            first.problem_id,
            first.roster.label(),
            t.problem_id,
            t.roster.label()
        ))
        .into());
    }
    let mc: Vec<DebateTranscript> = transcripts.iter().filter(|t| !t.is_free_form()).cloned().collect();
    let mc_index: std::collections::HashMap<&str, usize> =
        mc.iter().enumerate().map(|(i, t)| (t.problem_id.as_str(), i)).collect();

    let model_based = matches!(opts.aggregator, Aggregator::ClassicDs | Aggregator::WiseDs);
    let mut fits: Vec<(FittedRound, EmFit)> = Vec::new();
    if model_based && !mc.is_empty() {
        let last = mc.iter().map(|t| t.rounds.len()).max().unwrap_or(1).max(1);
        let selectors: Vec<RoundSelector> = if opts.pooled_counts {
            vec![RoundSelector::Pooled]
        } else if opts.aggregator == Aggregator::ClassicDs {
            vec![RoundSelector::Round(last)]
        } else {
            (1..=last).map(RoundSelector::Round).collect()
        };
        for sel in selectors {
            let counts = build_counts(&mc, sel)?;
            let f = fit(opts.aggregator, &counts, opts.em)?;
            log::info!(
                "{} fit on {:?}: {} iterations, log-likelihood {:.6}",
                opts.aggregator,
                sel,
                f.iterations,
                f.log_likelihood
            );
            let round = match sel {
                RoundSelector::Round(r) => Some(r),
                RoundSelector::Pooled => None,
            };
            fits.push((
                FittedRound {
                    round,
                    model: f.model.clone(),
                    iterations: f.iterations,
                    converged: f.converged,
                    log_likelihood: f.log_likelihood,
                },
                f,
            ));
        }
    }
    let fitted_rounds: Vec<FittedRound> = fits.iter().map(|(r, _)| r.clone()).collect();

    let mut decisions = Vec::with_capacity(transcripts.len());
    for t in transcripts {
        let d = match opts.aggregator {
            Aggregator::Majority => majority_item(t, judge)?,
            Aggregator::WeightedMajority => weighted_raw_item(t, judge)?,
            _ if t.is_free_form() => weighted_raw_item(t, judge)?,
            agg => {
                let idx = mc_index[t.problem_id.as_str()];
                let final_fit = &fits.last().expect("fitted").1;
                let map_answer = t.option_codes[final_fit.map_answers[idx]].clone();
                let mut d = if agg == Aggregator::ClassicDs {
                    decision(t, Answer::Option(map_answer.clone()))
                } else {
                    wise_item(t, &fitted_rounds, opts.raw_answers)?
                };
                d.map_answer = Some(map_answer);
                d.map_weight = final_fit.map_weights.get(idx).copied();
                d
            }
        };
        decisions.push(d);
    }
    Ok(AggregationResult {
        aggregator: opts.aggregator,
        raw_answers: opts.raw_answers,
        pooled_counts: opts.pooled_counts,
        decisions,
        fitted: (!fitted_rounds.is_empty()).then(|| FittedModelFile {
            aggregator: opts.aggregator,
            roster: first.roster.clone(),
            fits: fitted_rounds,
        }),
    })
}
