use super::AggregateError;
use serde::{Deserialize, Serialize};

/// One round of (possibly decoded) ballots: `answers[i]` is solver i's option
/// code (`None` = abstained), `weights[i][j]` reflector j's weight on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundBallots {
    pub answers: Vec<Option<String>>,
    pub weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedWeights {
    pub options: Vec<String>,
    /// `pair_weights[i][j][o]`: round-discounted weight pair (i, j) gives option o.
    pub pair_weights: Vec<Vec<Vec<f64>>>,
    /// Per-option sum over all pairs.
    pub option_weights: Vec<f64>,
    pub selected: Option<String>,
    /// True when no option received any weight.
    pub no_support: bool,
}

impl AggregatedWeights {
    pub fn weight_of(&self, code: &str) -> Option<f64> {
        self.options
            .iter()
            .position(|o| o == code)
            .map(|i| self.option_weights[i])
    }
}

/// Discount of round `round` (1-based) out of `k`: `round / (k (k + 1))`.
/// Over `round = 1..=k` these sum to 1/2.
pub fn round_discount(round: usize, k: usize) -> f64 {
    round as f64 / (k * (k + 1)) as f64
}

/// Relative tolerance under which two accumulated weights count as tied.
const TIE_TOLERANCE: f64 = 1e-12;

/// Highest-weight option; near-ties (relative 1e-12) go to the
/// lexicographically smallest code.
pub fn select_option(options: &[String], weights: &[f64]) -> Option<usize> {
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if options.is_empty() {
        return None;
    }
    (0..options.len())
        .filter(|&o| max - weights[o] <= TIE_TOLERANCE * max.abs())
        .min_by(|&a, &b| options[a].cmp(&options[b]))
}

/// Round-discounted weighted vote over rounds `1..=k`. Pair (i, j)
/// contributes its round-ℓ weight to option â only when solver i answered â
/// in round ℓ; abstentions accumulate nothing.
pub fn aggregate_rounds(rounds: &[RoundBallots], options: &[String]) -> Result<AggregatedWeights, AggregateError> {
    let k = rounds.len();
    let first = rounds.first().ok_or(AggregateError::EmptyInput)?;
    let n = first.answers.len();
    let m = first.weights.first().map_or(0, Vec::len);
    let mut pair_weights = vec![vec![vec![0.0; options.len()]; m]; n];
    for (idx, round) in rounds.iter().enumerate() {
        if round.answers.len() != n || round.weights.len() != n || round.weights.iter().any(|r| r.len() != m) {
            return Err(AggregateError::DimensionMismatch(format!(
                "round {} does not match the {n}x{m} grid of round 1",
                idx + 1
            )));
        }
        let discount = round_discount(idx + 1, k);
        for (i, answer) in round.answers.iter().enumerate() {
            let Some(code) = answer else { continue };
            let o = options
                .iter()
                .position(|c| c == code)
                .ok_or_else(|| AggregateError::DimensionMismatch(format!("answer {code:?} is not an option")))?;
            for (cell, w) in pair_weights[i].iter_mut().zip(&round.weights[i]) {
                cell[o] += w * discount;
            }
        }
    }
    let mut option_weights = vec![0.0; options.len()];
    for row in &pair_weights {
        for cell in row {
            option_weights.iter_mut().zip(cell).for_each(|(w, x)| *w += x);
        }
    }
    let no_support = option_weights.iter().all(|&w| w == 0.0);
    let selected = select_option(options, &option_weights).map(|o| options[o].clone());
    Ok(AggregatedWeights {
        options: options.to_vec(),
        pair_weights,
        option_weights,
        selected,
        no_support,
    })
}
