use super::AggregateError;
use crate::model::{Answer, DebateTranscript, MISSING_WEIGHT};
use serde::{Deserialize, Serialize};

/// Reflector weight classes {0, 1, 2}; -1 is missing data, never a class.
pub const WEIGHT_CLASSES: usize = 3;

/// Emission counts per item: `solver_counts[i][t][b]` is how often solver t
/// emitted answer class b on item i, `reflector_counts[i][c][w]` how often
/// reflector c emitted weight w on item i.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteCounts {
    pub num_classes: usize,
    pub num_weight_classes: usize,
    pub num_solvers: usize,
    pub num_reflectors: usize,
    pub item_ids: Vec<String>,
    pub solver_counts: Vec<Vec<Vec<u32>>>,
    pub reflector_counts: Vec<Vec<Vec<u32>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoundSelector {
    /// Counts from one 1-based round; debates that ended earlier contribute
    /// their final round.
    Round(usize),
    /// Counts summed over every round of every debate.
    Pooled,
}

impl VoteCounts {
    pub fn new(num_classes: usize, num_solvers: usize, num_reflectors: usize) -> Self {
        Self {
            num_classes,
            num_weight_classes: WEIGHT_CLASSES,
            num_solvers,
            num_reflectors,
            item_ids: Vec::new(),
            solver_counts: Vec::new(),
            reflector_counts: Vec::new(),
        }
    }

    pub fn num_items(&self) -> usize {
        self.solver_counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solver_counts.is_empty()
    }

    /// Appends an item with zero counts and returns its index.
    pub fn push_empty_item(&mut self, id: impl Into<String>) -> usize {
        self.item_ids.push(id.into());
        self.solver_counts
            .push(vec![vec![0; self.num_classes]; self.num_solvers]);
        self.reflector_counts
            .push(vec![vec![0; self.num_weight_classes]; self.num_reflectors]);
        self.solver_counts.len() - 1
    }

    /// Builds counts from per-item solver answers (`None` = abstained) and
    /// reflector weight grids (`weights[i][t][c]`, -1 = missing).
    pub fn from_votes(
        num_classes: usize,
        answers: &[Vec<Option<usize>>],
        weights: &[Vec<Vec<i8>>],
    ) -> Result<Self, AggregateError> {
        let n = answers.first().map_or(0, Vec::len);
        let m = weights
            .first()
            .and_then(|w| w.first())
            .map_or(0, Vec::len);
        let mut counts = Self::new(num_classes, n, m);
        for (i, item) in answers.iter().enumerate() {
            let idx = counts.push_empty_item(i.to_string());
            counts.add_round(idx, item, weights.get(i).map_or(&[][..], Vec::as_slice))?;
        }
        Ok(counts)
    }

    /// Adds one round of emissions to item `idx`.
    pub fn add_round(
        &mut self,
        idx: usize,
        answers: &[Option<usize>],
        weights: &[Vec<i8>],
    ) -> Result<(), AggregateError> {
        if answers.len() != self.num_solvers {
            return Err(AggregateError::DimensionMismatch(format!(
                "{} answers for {} solvers",
                answers.len(),
                self.num_solvers
            )));
        }
        for (t, a) in answers.iter().enumerate() {
            if let Some(b) = *a {
                if b >= self.num_classes {
                    return Err(AggregateError::DimensionMismatch(format!(
                        "answer class {b} >= K = {}",
                        self.num_classes
                    )));
                }
                self.solver_counts[idx][t][b] += 1;
            }
        }
        for row in weights {
            if row.len() != self.num_reflectors {
                return Err(AggregateError::DimensionMismatch(format!(
                    "weight row has {} entries for {} reflectors",
                    row.len(),
                    self.num_reflectors
                )));
            }
            for (c, &w) in row.iter().enumerate() {
                if w == MISSING_WEIGHT {
                    continue;
                }
                let w = usize::try_from(w)
                    .ok()
                    .filter(|&w| w < self.num_weight_classes)
                    .ok_or_else(|| AggregateError::DimensionMismatch(format!("weight {w} out of range")))?;
                self.reflector_counts[idx][c][w] += 1;
            }
        }
        Ok(())
    }

    /// The same counts with the reflector part removed.
    pub fn solvers_only(&self) -> Self {
        Self {
            num_reflectors: 0,
            reflector_counts: vec![Vec::new(); self.num_items()],
            ..self.clone()
        }
    }

    pub fn total_solver_votes(&self, item: usize) -> u32 {
        self.solver_counts[item].iter().flatten().sum()
    }
}

/// Index of `answer` among `codes`; `None` for abstentions.
pub fn answer_class(answer: &Answer, codes: &[String]) -> Result<Option<usize>, AggregateError> {
    match answer {
        Answer::Abstain => Ok(None),
        Answer::Option(code) => codes
            .iter()
            .position(|c| c == code)
            .map(Some)
            .ok_or_else(|| AggregateError::DimensionMismatch(format!("answer {code:?} not an option"))),
        Answer::FreeForm(_) => Err(AggregateError::DimensionMismatch(
            "free-form answers have no answer class".into(),
        )),
    }
}

/// Emission counts from debate transcripts, one item per transcript.
pub fn build_counts(
    transcripts: &[DebateTranscript],
    selector: RoundSelector,
) -> Result<VoteCounts, AggregateError> {
    let first = transcripts.first().ok_or(AggregateError::EmptyInput)?;
    let k = first.option_codes.len();
    if k == 0 {
        return Err(AggregateError::DimensionMismatch(format!(
            "{} is free-form; counts need answer classes",
            first.problem_id
        )));
    }
    let mut counts = VoteCounts::new(k, first.num_solvers(), first.num_reflectors());
    for t in transcripts {
        if t.option_codes.len() != k {
            return Err(AggregateError::DimensionMismatch(format!(
                "{} has K = {}, expected {k}",
                t.problem_id,
                t.option_codes.len()
            )));
        }
        if t.roster != first.roster {
            return Err(AggregateError::DimensionMismatch(format!(
                "{} was debated by a different roster",
                t.problem_id
            )));
        }
        let idx = counts.push_empty_item(t.problem_id.clone());
        let rounds: Vec<_> = match selector {
            RoundSelector::Round(r) => t.round_or_last(r).into_iter().collect(),
            RoundSelector::Pooled => t.rounds.iter().collect(),
        };
        for round in rounds {
            let answers = round
                .responses
                .iter()
                .map(|r| answer_class(&r.parsed_answer, &t.option_codes))
                .collect::<Result<Vec<_>, _>>()?;
            counts.add_round(idx, &answers, &round.weight_matrix())?;
        }
    }
    Ok(counts)
}
