use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SyntheticError {
    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("invalid confusion matrix: {0}")]
    InvalidConfusion(String),
    #[error("agent is a {actual:?}, not a {expected:?}")]
    WrongKind { expected: AgentKind, actual: AgentKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Solver,
    Reflector,
}

/// A simulated agent: `confusion[true][emitted]` is the emission probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticAgentSpec {
    pub kind: AgentKind,
    pub confusion: Vec<Vec<f64>>,
    pub rng_seed: u64,
}

impl SyntheticAgentSpec {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        let k = self.confusion.len();
        if k == 0 {
            return Err(SyntheticError::InvalidConfusion("empty matrix".into()));
        }
        for (r, row) in self.confusion.iter().enumerate() {
            if row.len() != k {
                return Err(SyntheticError::InvalidConfusion(format!(
                    "row {r} has {} entries, expected {k}",
                    row.len()
                )));
            }
            if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
                return Err(SyntheticError::InvalidConfusion(format!("row {r} has a negative entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(SyntheticError::InvalidConfusion(format!("row {r} sums to {sum}")));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.confusion.len()
    }
}

/// Builds a `k x k` confusion with `diag` on the diagonal and the remaining
/// mass spread uniformly over the other classes.
pub fn diagonal_confusion(k: usize, diag: f64) -> Vec<Vec<f64>> {
    let off = if k > 1 { (1.0 - diag) / (k - 1) as f64 } else { 0.0 };
    (0..k)
        .map(|r| (0..k).map(|c| if r == c { diag } else { off }).collect())
        .collect()
}

/// Stateful emitter; one instance per worker.
#[derive(Debug, Clone)]
pub struct SyntheticAgent {
    spec: SyntheticAgentSpec,
    rng: ChaCha8Rng,
}

impl SyntheticAgent {
    pub fn new(spec: SyntheticAgentSpec) -> Result<Self, SyntheticError> {
        spec.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        Ok(Self { spec, rng })
    }

    pub fn spec(&self) -> &SyntheticAgentSpec {
        &self.spec
    }

    /// Samples the answer a solver gives when the truth is `true_label`.
    pub fn solver_emit(&mut self, true_label: usize) -> Result<usize, SyntheticError> {
        self.expect_kind(AgentKind::Solver)?;
        self.emit(true_label)
    }

    /// Samples the weight a reflector assigns when the deserved weight is `true_weight`.
    pub fn reflector_emit(&mut self, true_weight: usize) -> Result<usize, SyntheticError> {
        self.expect_kind(AgentKind::Reflector)?;
        self.emit(true_weight)
    }

    fn expect_kind(&self, expected: AgentKind) -> Result<(), SyntheticError> {
        if self.spec.kind != expected {
            return Err(SyntheticError::WrongKind {
                expected,
                actual: self.spec.kind,
            });
        }
        Ok(())
    }

    fn emit(&mut self, label: usize) -> Result<usize, SyntheticError> {
        let classes = self.spec.num_classes();
        let row = self
            .spec
            .confusion
            .get(label)
            .ok_or(SyntheticError::InvalidLabel { label, classes })?;
        let u: f64 = self.rng.gen();
        let mut acc = 0.0;
        let mut last_positive = label;
        for (c, &p) in row.iter().enumerate() {
            if p > 0.0 {
                last_positive = c;
            }
            acc += p;
            if u < acc {
                return Ok(c);
            }
        }
        // u landed in the rounding gap at the top of the cumulative sum.
        Ok(last_positive)
    }
}
