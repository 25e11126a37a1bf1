//! Synthetic crowds with known confusions, used to exercise the EM stack
//! without any model backend.

use super::HarnessError;
use crate::aggregate::{
    aggregate_rounds, classic_ds_em, em::argmax, posterior_decode, wise_ds_em, EmOptions, RoundBallots, VoteCounts,
    WEIGHT_CLASSES,
};
use crate::backend::{diagonal_confusion, AgentKind, SyntheticAgent, SyntheticAgentSpec};
use crate::model::{canonical_option_code, CodeStyle};
use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub num_classes: usize,
    pub num_items: usize,
    /// One K x K generator per solver.
    pub solver_confusions: Vec<Vec<Vec<f64>>>,
    /// One 3 x 3 generator per reflector, rows indexed by the true weight.
    pub reflector_confusions: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub em: EmOptions,
}

impl SimulationConfig {
    /// Solvers and reflectors with the given diagonals and uniform
    /// off-diagonal mass.
    pub fn from_diagonals(
        num_classes: usize,
        num_items: usize,
        solver_diagonals: &[f64],
        reflector_diagonals: &[f64],
        seed: u64,
    ) -> Self {
        Self {
            num_classes,
            num_items,
            solver_confusions: solver_diagonals
                .iter()
                .map(|&d| diagonal_confusion(num_classes, d))
                .collect(),
            reflector_confusions: reflector_diagonals
                .iter()
                .map(|&d| diagonal_confusion(WEIGHT_CLASSES, d))
                .collect(),
            seed,
            em: EmOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.num_classes < 2 || self.num_classes > 26 {
            return bad(format!("num_classes {} outside [2, 26]", self.num_classes));
        }
        if self.num_items == 0 || self.solver_confusions.is_empty() {
            return bad("need at least one item and one solver".into());
        }
        for (kind, mats, k) in [
            (AgentKind::Solver, &self.solver_confusions, self.num_classes),
            (AgentKind::Reflector, &self.reflector_confusions, WEIGHT_CLASSES),
        ] {
            for m in mats {
                if m.len() != k {
                    return bad(format!("{kind:?} confusion has {} rows, expected {k}", m.len()));
                }
                SyntheticAgentSpec {
                    kind,
                    confusion: m.clone(),
                    rng_seed: 0,
                }
                .validate()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            }
        }
        Ok(())
    }
}

/// Independent stream seed for agent `index` of a run seeded with `seed`.
fn agent_seed(seed: u64, index: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedBatch {
    pub truth: Vec<usize>,
    /// `answers[i][t]`
    pub answers: Vec<Vec<Option<usize>>>,
    /// `weights[i][t][c]`: reflector c's weight on solver t's answer.
    pub weights: Vec<Vec<Vec<i8>>>,
    /// `true_weights[i][t]`: 2 when solver t was right, else 0.
    pub true_weights: Vec<Vec<usize>>,
}

/// Draws true labels uniformly, solver answers from each solver's generator
/// row, and reflector weights from each reflector's generator row indexed by
/// the true weight of the judged answer (2 if correct, 0 if not).
pub fn sample_batch(cfg: &SimulationConfig) -> Result<SimulatedBatch, HarnessError> {
    cfg.validate()?;
    let n = cfg.solver_confusions.len();
    let mk = |kind, confusion: &Vec<Vec<f64>>, idx: usize| {
        SyntheticAgent::new(SyntheticAgentSpec {
            kind,
            confusion: confusion.clone(),
            rng_seed: agent_seed(cfg.seed, idx as u64),
        })
        .map_err(|e| HarnessError::Config(e.to_string()))
    };
    let mut solvers = cfg
        .solver_confusions
        .iter()
        .enumerate()
        .map(|(t, m)| mk(AgentKind::Solver, m, t))
        .collect::<Result<Vec<_>, _>>()?;
    let mut reflectors = cfg
        .reflector_confusions
        .iter()
        .enumerate()
        .map(|(c, m)| mk(AgentKind::Reflector, m, n + c))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut batch = SimulatedBatch {
        truth: Vec::with_capacity(cfg.num_items),
        answers: Vec::with_capacity(cfg.num_items),
        weights: Vec::with_capacity(cfg.num_items),
        true_weights: Vec::with_capacity(cfg.num_items),
    };
    let emit_err = |e: crate::backend::SyntheticError| HarnessError::Config(e.to_string());
    for _ in 0..cfg.num_items {
        let y = rng.gen_range(0..cfg.num_classes);
        let answers = solvers
            .iter_mut()
            .map(|s| s.solver_emit(y).map(Some))
            .collect::<Result<Vec<_>, _>>()
            .map_err(emit_err)?;
        let true_w: Vec<usize> = answers.iter().map(|&a| if a == Some(y) { 2 } else { 0 }).collect();
        let mut grid = vec![Vec::with_capacity(reflectors.len()); n];
        for (t, row) in grid.iter_mut().enumerate() {
            for r in reflectors.iter_mut() {
                row.push(r.reflector_emit(true_w[t]).map_err(emit_err)? as i8);
            }
        }
        batch.truth.push(y);
        batch.answers.push(answers);
        batch.weights.push(grid);
        batch.true_weights.push(true_w);
    }
    Ok(batch)
}

/// Largest L1 distance between matching rows of two matrices.
pub fn max_row_l1(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub seed: u64,
    pub num_items: usize,
    pub num_classes: usize,
    pub num_solvers: usize,
    pub num_reflectors: usize,
    /// Accuracy per aggregator name.
    pub accuracy: IndexMap<String, f64>,
    /// Accuracy of the joint model's MAP answers.
    pub wise_ds_map_accuracy: f64,
    /// Max row L1 between each fitted solver confusion and its generator.
    pub solver_recovery_l1: Vec<f64>,
    pub reflector_recovery_l1: Vec<f64>,
    pub classic_ds_solver_recovery_l1: Vec<f64>,
    pub em_iterations: usize,
}

impl SimulationReport {
    pub fn max_solver_recovery_l1(&self) -> f64 {
        self.solver_recovery_l1.iter().copied().fold(0.0, f64::max)
    }
}

fn accuracy(pred: &[Option<usize>], truth: &[usize]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(p, y)| **p == Some(**y)).count();
    hits as f64 / truth.len().max(1) as f64
}

/// Samples a batch and scores all four aggregators on it.
pub fn run_simulation(cfg: &SimulationConfig) -> Result<SimulationReport, HarnessError> {
    let batch = sample_batch(cfg)?;
    let k = cfg.num_classes;
    let codes: Vec<String> = (0..k)
        .map(|i| canonical_option_code(i, CodeStyle::Letter).expect("k <= 26"))
        .collect();
    let counts = VoteCounts::from_votes(k, &batch.answers, &batch.weights)?;
    let classic = classic_ds_em(&counts, cfg.em)?;
    let wise = wise_ds_em(&counts, cfg.em)?;

    let majority: Vec<Option<usize>> = batch
        .answers
        .iter()
        .map(|a| {
            let mut tally = vec![0.0; k];
            a.iter().flatten().for_each(|&b| tally[b] += 1.0);
            tally.iter().any(|&x| x > 0.0).then(|| argmax(&tally))
        })
        .collect();

    let weighted = |answers: &[Option<usize>], weights: Vec<Vec<f64>>| -> Result<Option<usize>, HarnessError> {
        let ballots = RoundBallots {
            answers: answers.iter().map(|a| a.map(|b| codes[b].clone())).collect(),
            weights,
        };
        let agg = aggregate_rounds(&[ballots], &codes)?;
        Ok(agg.selected.and_then(|s| codes.iter().position(|c| *c == s)))
    };
    let mut wmajority = Vec::with_capacity(cfg.num_items);
    let mut wise_pred = Vec::with_capacity(cfg.num_items);
    for (answers, grid) in batch.answers.iter().zip(&batch.weights) {
        let raw: Vec<Vec<f64>> = grid
            .iter()
            .map(|r| r.iter().map(|&w| f64::from(w.max(0))).collect())
            .collect();
        wmajority.push(weighted(answers, raw)?);
        let (decoded, w) = posterior_decode(grid, answers, &wise.model)?;
        let w = w.iter().map(|r| r.iter().map(|&x| f64::from(x)).collect()).collect();
        wise_pred.push(weighted(&decoded, w)?);
    }

    let as_opt = |v: &[usize]| v.iter().map(|&x| Some(x)).collect::<Vec<_>>();
    let mut acc = IndexMap::new();
    acc.insert("majority".to_string(), accuracy(&majority, &batch.truth));
    acc.insert("wmajority".to_string(), accuracy(&wmajority, &batch.truth));
    acc.insert("ds".to_string(), accuracy(&as_opt(&classic.map_answers), &batch.truth));
    acc.insert("wise-ds".to_string(), accuracy(&wise_pred, &batch.truth));

    let recovery = |fitted: &[Vec<Vec<f64>>], generators: &[Vec<Vec<f64>>]| {
        fitted.iter().zip(generators).map(|(f, g)| max_row_l1(f, g)).collect::<Vec<_>>()
    };
    Ok(SimulationReport {
        seed: cfg.seed,
        num_items: cfg.num_items,
        num_classes: k,
        num_solvers: cfg.solver_confusions.len(),
        num_reflectors: cfg.reflector_confusions.len(),
        accuracy: acc,
        wise_ds_map_accuracy: accuracy(&as_opt(&wise.map_answers), &batch.truth),
        solver_recovery_l1: recovery(&wise.model.solver_confusion, &cfg.solver_confusions),
        reflector_recovery_l1: recovery(&wise.model.reflector_confusion, &cfg.reflector_confusions),
        classic_ds_solver_recovery_l1: recovery(&classic.model.solver_confusion, &cfg.solver_confusions),
        em_iterations: wise.iterations,
    })
}
