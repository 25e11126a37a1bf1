use super::ConfusionModel;
use serde::{Deserialize, Serialize};

/// Smoothing mixed into the identity reference so KL stays finite.
pub const IDENTITY_SMOOTHING: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixStats {
    /// Row-averaged Shannon entropy in bits.
    pub entropy_bits: f64,
    /// Row-averaged KL(P || smoothed identity) in bits.
    pub kl_from_identity_bits: f64,
    /// Mean of the diagonal.
    pub mean_correct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCalibration {
    pub role: String,
    pub index: usize,
    pub stats: MatrixStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub agents: Vec<AgentCalibration>,
}

pub fn matrix_stats(m: &[Vec<f64>]) -> MatrixStats {
    let k = m.len();
    if k == 0 {
        return MatrixStats {
            entropy_bits: 0.0,
            kl_from_identity_bits: 0.0,
            mean_correct: 0.0,
        };
    }
    let norm = 1.0 + k as f64 * IDENTITY_SMOOTHING;
    let (mut h, mut kl, mut diag) = (0.0, 0.0, 0.0);
    for (r, row) in m.iter().enumerate() {
        diag += row[r];
        for (c, &p) in row.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            h -= p * p.log2();
            let q = (if r == c { 1.0 } else { 0.0 } + IDENTITY_SMOOTHING) / norm;
            kl += p * (p / q).log2();
        }
    }
    let k = k as f64;
    MatrixStats {
        entropy_bits: (h / k).max(0.0),
        kl_from_identity_bits: (kl / k).max(0.0),
        mean_correct: diag / k,
    }
}

/// Entropy, KL from identity and mean diagonal for every fitted agent.
pub fn calibration_report(model: &ConfusionModel) -> CalibrationReport {
    let solvers = model.solver_confusion.iter().enumerate().map(|(i, m)| AgentCalibration {
        role: "solver".into(),
        index: i,
        stats: matrix_stats(m),
    });
    let reflectors = model.reflector_confusion.iter().enumerate().map(|(i, m)| AgentCalibration {
        role: "reflector".into(),
        index: i,
        stats: matrix_stats(m),
    });
    CalibrationReport {
        agents: solvers.chain(reflectors).collect(),
    }
}
