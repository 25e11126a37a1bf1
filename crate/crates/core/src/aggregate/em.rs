//! Dawid–Skene EM over solver answers, and the joint two-role variant that
//! adds a latent weight class observed through the reflectors.
//!
//! Both fits are MAP-EM under additive smoothing: every accumulated count gets
//! `smoothing` added before row normalization. Likelihoods are evaluated in
//! log space. All reductions run in a fixed order so serial and parallel
//! execution agree bit for bit.

use super::{AggregateError, VoteCounts};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// How the latent weight marginals are seeded before the first M-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightInit {
    /// Proportional to the reflector weight shares on each item.
    #[default]
    VoteShare,
    /// Uniform. Every reflector row then starts identical, which is a fixed
    /// point of the updates: reflector confusions stay uninformative.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmOptions {
    /// Stop when `|ll - prev| <= tolerance * |prev|`.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub smoothing: f64,
    pub weight_init: WeightInit,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 500,
            smoothing: 1e-6,
            weight_init: WeightInit::VoteShare,
        }
    }
}

/// Class priors and per-agent confusion matrices. Rows are indexed by the
/// latent class, columns by the emitted class. `weight_prior` and
/// `reflector_confusion` are empty for a solver-only fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionModel {
    pub answer_prior: Vec<f64>,
    pub weight_prior: Vec<f64>,
    pub solver_confusion: Vec<Vec<Vec<f64>>>,
    pub reflector_confusion: Vec<Vec<Vec<f64>>>,
}

impl ConfusionModel {
    pub fn num_classes(&self) -> usize {
        self.answer_prior.len()
    }

    pub fn num_weight_classes(&self) -> usize {
        self.weight_prior.len()
    }

    pub fn models_reflectors(&self) -> bool {
        !self.weight_prior.is_empty()
    }

    /// Checks simplex constraints on every prior and confusion row.
    pub fn validate(&self, tol: f64) -> Result<(), AggregateError> {
        let simplex = |what: &str, row: &[f64], len: usize| {
            if row.len() != len {
                return Err(AggregateError::DimensionMismatch(format!(
                    "{what} has {} entries, expected {len}",
                    row.len()
                )));
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !p.is_finite() || p < 0.0) || (sum - 1.0).abs() > tol {
                return Err(AggregateError::NonFinite(format!("{what} is not a distribution (sum {sum})")));
            }
            Ok(())
        };
        let k = self.num_classes();
        let j = self.num_weight_classes();
        simplex("answer prior", &self.answer_prior, k)?;
        if self.models_reflectors() {
            simplex("weight prior", &self.weight_prior, j)?;
        }
        for (t, m) in self.solver_confusion.iter().enumerate() {
            if m.len() != k {
                return Err(AggregateError::DimensionMismatch(format!("solver {t} has {} rows", m.len())));
            }
            for row in m {
                simplex(&format!("solver {t} row"), row, k)?;
            }
        }
        for (c, m) in self.reflector_confusion.iter().enumerate() {
            if m.len() != j {
                return Err(AggregateError::DimensionMismatch(format!("reflector {c} has {} rows", m.len())));
            }
            for row in m {
                simplex(&format!("reflector {c} row"), row, j)?;
            }
        }
        Ok(())
    }

    /// `smoothing * Σ ln θ` over every parameter: the log prior that makes the
    /// smoothed M-step an exact maximizer.
    fn log_prior(&self, smoothing: f64) -> f64 {
        let sum_ln = |xs: &[f64]| xs.iter().map(|x| x.ln()).sum::<f64>();
        let mut s = sum_ln(&self.answer_prior) + sum_ln(&self.weight_prior);
        for row in self.solver_confusion.iter().chain(&self.reflector_confusion).flatten() {
            s += sum_ln(row);
        }
        smoothing * s
    }
}

/// Per-item posterior over the latent (weight, answer) pair, stored row-major
/// as `gamma[i][alpha * K + beta]`. A solver-only fit has one weight class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Responsibilities {
    pub num_weight_classes: usize,
    pub num_classes: usize,
    pub gamma: Vec<Vec<f64>>,
}

impl Responsibilities {
    pub fn num_items(&self) -> usize {
        self.gamma.len()
    }

    pub fn get(&self, item: usize, alpha: usize, beta: usize) -> f64 {
        self.gamma[item][alpha * self.num_classes + beta]
    }

    /// Σ_α γ: posterior over the true answer.
    pub fn answer_marginal(&self, item: usize) -> Vec<f64> {
        let k = self.num_classes;
        let mut out = vec![0.0; k];
        for alpha in 0..self.num_weight_classes {
            for (b, o) in out.iter_mut().enumerate() {
                *o += self.gamma[item][alpha * k + b];
            }
        }
        out
    }

    /// Σ_β γ: posterior over the true weight.
    pub fn weight_marginal(&self, item: usize) -> Vec<f64> {
        let k = self.num_classes;
        (0..self.num_weight_classes)
            .map(|alpha| self.gamma[item][alpha * k..(alpha + 1) * k].iter().sum())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub log_likelihood: f64,
    /// Log-likelihood plus the smoothing log prior; never decreases.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmFit {
    pub model: ConfusionModel,
    pub responsibilities: Responsibilities,
    pub answer_posterior: Vec<Vec<f64>>,
    /// Empty rows for a solver-only fit.
    pub weight_posterior: Vec<Vec<f64>>,
    pub map_answers: Vec<usize>,
    /// Empty for a solver-only fit.
    pub map_weights: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: f64,
    pub trace: Vec<IterationStats>,
}

/// Index of the largest entry; the smallest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn smoothed_normalize(acc: &[f64], smoothing: f64) -> Vec<f64> {
    let total = acc.iter().sum::<f64>() + smoothing * acc.len() as f64;
    acc.iter().map(|x| (x + smoothing) / total).collect()
}

fn vote_share(counts: &[Vec<u32>], classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; classes];
    for row in counts {
        for (b, &n) in row.iter().enumerate() {
            v[b] += f64::from(n);
        }
    }
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.iter_mut().for_each(|x| *x /= total);
    } else {
        v.fill(1.0 / classes as f64);
    }
    v
}

/// `Σ_agents Σ_b λ_b ln P[row][b]` for every latent row.
fn emission_log_lik(counts: &[Vec<u32>], log_conf: &[Vec<Vec<f64>>], rows: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows];
    for (agent, row_counts) in counts.iter().enumerate() {
        for (b, &n) in row_counts.iter().enumerate() {
            if n == 0 {
                continue;
            }
            for (r, o) in out.iter_mut().enumerate() {
                *o += f64::from(n) * log_conf[agent][r][b];
            }
        }
    }
    out
}

/// Expected-count confusion update for one agent: row r accumulates
/// `Σ_i weight_i(r) λ_i(b)`.
fn confusion_update(
    item_counts: impl Iterator<Item = (Vec<f64>, Vec<u32>)>,
    rows: usize,
    cols: usize,
    smoothing: f64,
) -> Vec<Vec<f64>> {
    let mut acc = vec![vec![0.0; cols]; rows];
    for (weights, counts) in item_counts {
        for (b, &n) in counts.iter().enumerate() {
            if n == 0 {
                continue;
            }
            for (r, w) in weights.iter().enumerate() {
                acc[r][b] += w * f64::from(n);
            }
        }
    }
    acc.iter().map(|row| smoothed_normalize(row, smoothing)).collect()
}

fn log_table(m: &[Vec<Vec<f64>>]) -> Vec<Vec<Vec<f64>>> {
    m.iter()
        .map(|rows| rows.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect())
        .collect()
}

fn check_input(counts: &VoteCounts, options: &EmOptions) -> Result<(), AggregateError> {
    if counts.is_empty() || counts.num_solvers == 0 {
        return Err(AggregateError::EmptyInput);
    }
    if counts.num_classes < 2 {
        return Err(AggregateError::DimensionMismatch(format!(
            "need at least 2 answer classes, got {}",
            counts.num_classes
        )));
    }
    if !options.smoothing.is_finite() || options.smoothing <= 0.0 {
        return Err(AggregateError::NonFinite(format!("smoothing {}", options.smoothing)));
    }
    Ok(())
}

/// One EM variant: alternating E and M steps over a fixed count table.
pub trait EmStepper {
    fn model(&self) -> &ConfusionModel;
    fn options(&self) -> &EmOptions;
    /// Posterior under the current model and the observed-data log-likelihood.
    fn e_step(&self) -> Result<(Responsibilities, f64), AggregateError>;
    fn m_step(&mut self, resp: &Responsibilities);

    fn objective(&self, log_likelihood: f64) -> f64 {
        log_likelihood + self.model().log_prior(self.options().smoothing)
    }
}

/// Classic Dawid–Skene over solver counts only.
pub struct ClassicDs<'a> {
    counts: &'a VoteCounts,
    options: EmOptions,
    model: ConfusionModel,
}

impl<'a> ClassicDs<'a> {
    /// Soft majority-vote initialization followed by one M-step.
    pub fn initialize(counts: &'a VoteCounts, options: EmOptions) -> Result<Self, AggregateError> {
        check_input(counts, &options)?;
        let k = counts.num_classes;
        let gamma = counts
            .solver_counts
            .iter()
            .map(|item| vote_share(item, k))
            .collect();
        let resp = Responsibilities {
            num_weight_classes: 1,
            num_classes: k,
            gamma,
        };
        let mut em = Self {
            counts,
            options,
            model: ConfusionModel {
                answer_prior: Vec::new(),
                weight_prior: Vec::new(),
                solver_confusion: Vec::new(),
                reflector_confusion: Vec::new(),
            },
        };
        em.m_step(&resp);
        Ok(em)
    }
}

impl EmStepper for ClassicDs<'_> {
    fn model(&self) -> &ConfusionModel {
        &self.model
    }

    fn options(&self) -> &EmOptions {
        &self.options
    }

    fn e_step(&self) -> Result<(Responsibilities, f64), AggregateError> {
        let k = self.counts.num_classes;
        let log_prior: Vec<f64> = self.model.answer_prior.iter().map(|p| p.ln()).collect();
        let log_conf = log_table(&self.model.solver_confusion);
        let per_item: Vec<(Vec<f64>, f64)> = self
            .counts
            .solver_counts
            .par_iter()
            .map(|item| {
                let s = emission_log_lik(item, &log_conf, k);
                let logs: Vec<f64> = (0..k).map(|b| log_prior[b] + s[b]).collect();
                let lz = log_sum_exp(&logs);
                (logs.iter().map(|x| (x - lz).exp()).collect(), lz)
            })
            .collect();
        finish_e_step(per_item, 1, k)
    }

    fn m_step(&mut self, resp: &Responsibilities) {
        let eps = self.options.smoothing;
        let k = self.counts.num_classes;
        let marginals: Vec<Vec<f64>> = (0..resp.num_items()).map(|i| resp.answer_marginal(i)).collect();
        let mut n_beta = vec![0.0; k];
        for p in &marginals {
            n_beta.iter_mut().zip(p).for_each(|(n, x)| *n += x);
        }
        self.model.answer_prior = smoothed_normalize(&n_beta, eps);
        self.model.solver_confusion = (0..self.counts.num_solvers)
            .into_par_iter()
            .map(|t| {
                let items = marginals
                    .iter()
                    .zip(&self.counts.solver_counts)
                    .map(|(p, c)| (p.clone(), c[t].clone()));
                confusion_update(items, k, k, eps)
            })
            .collect();
    }
}

/// Joint fit over (true weight, true answer) with factorized priors.
pub struct WiseDs<'a> {
    counts: &'a VoteCounts,
    options: EmOptions,
    model: ConfusionModel,
}

impl<'a> WiseDs<'a> {
    /// Initializes the answer marginals from solver vote shares and the weight
    /// marginals per `options.weight_init`, then runs one M-step.
    pub fn initialize(counts: &'a VoteCounts, options: EmOptions) -> Result<Self, AggregateError> {
        check_input(counts, &options)?;
        let k = counts.num_classes;
        let j = counts.num_weight_classes;
        let gamma = (0..counts.num_items())
            .map(|i| {
                let p = vote_share(&counts.solver_counts[i], k);
                let q = match options.weight_init {
                    WeightInit::VoteShare => vote_share(&counts.reflector_counts[i], j),
                    WeightInit::Uniform => vec![1.0 / j as f64; j],
                };
                q.iter().flat_map(|qa| p.iter().map(move |pb| qa * pb)).collect()
            })
            .collect();
        let resp = Responsibilities {
            num_weight_classes: j,
            num_classes: k,
            gamma,
        };
        let mut em = Self {
            counts,
            options,
            model: ConfusionModel {
                answer_prior: Vec::new(),
                weight_prior: Vec::new(),
                solver_confusion: Vec::new(),
                reflector_confusion: Vec::new(),
            },
        };
        em.m_step(&resp);
        Ok(em)
    }
}

impl EmStepper for WiseDs<'_> {
    fn model(&self) -> &ConfusionModel {
        &self.model
    }

    fn options(&self) -> &EmOptions {
        &self.options
    }

    fn e_step(&self) -> Result<(Responsibilities, f64), AggregateError> {
        let k = self.counts.num_classes;
        let j = self.counts.num_weight_classes;
        let log_zb: Vec<f64> = self.model.answer_prior.iter().map(|p| p.ln()).collect();
        let log_za: Vec<f64> = self.model.weight_prior.iter().map(|p| p.ln()).collect();
        let log_pt = log_table(&self.model.solver_confusion);
        let log_pc = log_table(&self.model.reflector_confusion);
        let per_item: Vec<(Vec<f64>, f64)> = (0..self.counts.num_items())
            .into_par_iter()
            .map(|i| {
                let s = emission_log_lik(&self.counts.solver_counts[i], &log_pt, k);
                let r = emission_log_lik(&self.counts.reflector_counts[i], &log_pc, j);
                let logs: Vec<f64> = (0..j)
                    .flat_map(|a| {
                        let (log_za, log_zb, s, r) = (&log_za, &log_zb, &s, &r);
                        (0..k).map(move |b| log_za[a] + r[a] + log_zb[b] + s[b])
                    })
                    .collect();
                let lz = log_sum_exp(&logs);
                (logs.iter().map(|x| (x - lz).exp()).collect(), lz)
            })
            .collect();
        finish_e_step(per_item, j, k)
    }

    fn m_step(&mut self, resp: &Responsibilities) {
        let eps = self.options.smoothing;
        let k = self.counts.num_classes;
        let j = self.counts.num_weight_classes;
        let p: Vec<Vec<f64>> = (0..resp.num_items()).map(|i| resp.answer_marginal(i)).collect();
        let q: Vec<Vec<f64>> = (0..resp.num_items()).map(|i| resp.weight_marginal(i)).collect();
        let mut n_beta = vec![0.0; k];
        let mut n_alpha = vec![0.0; j];
        for (pi, qi) in p.iter().zip(&q) {
            n_beta.iter_mut().zip(pi).for_each(|(n, x)| *n += x);
            n_alpha.iter_mut().zip(qi).for_each(|(n, x)| *n += x);
        }
        self.model.answer_prior = smoothed_normalize(&n_beta, eps);
        self.model.weight_prior = smoothed_normalize(&n_alpha, eps);
        self.model.solver_confusion = (0..self.counts.num_solvers)
            .into_par_iter()
            .map(|t| {
                let items = p
                    .iter()
                    .zip(&self.counts.solver_counts)
                    .map(|(pi, c)| (pi.clone(), c[t].clone()));
                confusion_update(items, k, k, eps)
            })
            .collect();
        self.model.reflector_confusion = (0..self.counts.num_reflectors)
            .into_par_iter()
            .map(|c| {
                let items = q
                    .iter()
                    .zip(&self.counts.reflector_counts)
                    .map(|(qi, cnt)| (qi.clone(), cnt[c].clone()));
                confusion_update(items, j, j, eps)
            })
            .collect();
    }
}

fn finish_e_step(
    per_item: Vec<(Vec<f64>, f64)>,
    j: usize,
    k: usize,
) -> Result<(Responsibilities, f64), AggregateError> {
    let mut ll = 0.0;
    let mut gamma = Vec::with_capacity(per_item.len());
    for (g, lz) in per_item {
        ll += lz;
        gamma.push(g);
    }
    if !ll.is_finite() {
        return Err(AggregateError::NonFinite(format!("log-likelihood {ll}")));
    }
    Ok((
        Responsibilities {
            num_weight_classes: j,
            num_classes: k,
            gamma,
        },
        ll,
    ))
}

/// Alternates E and M steps until the relative log-likelihood change drops
/// to the tolerance or the iteration cap is hit. The returned posterior
/// comes from an E-step under the returned model.
pub fn run_em<E: EmStepper>(mut em: E) -> Result<EmFit, AggregateError> {
    let options = *em.options();
    let mut trace: Vec<IterationStats> = Vec::new();
    let mut converged = false;
    let resp = loop {
        let (resp, ll) = em.e_step()?;
        let objective = em.objective(ll);
        let prev = trace.last().map(|s| s.log_likelihood);
        trace.push(IterationStats {
            log_likelihood: ll,
            objective,
        });
        if let Some(prev) = prev {
            if (ll - prev).abs() <= options.tolerance * prev.abs() {
                converged = true;
                break resp;
            }
        }
        if trace.len() >= options.max_iterations.max(1) {
            break resp;
        }
        em.m_step(&resp);
    };
    let model = em.model().clone();
    let answer_posterior: Vec<Vec<f64>> = (0..resp.num_items()).map(|i| resp.answer_marginal(i)).collect();
    let (weight_posterior, map_weights) = if model.models_reflectors() {
        let w: Vec<Vec<f64>> = (0..resp.num_items()).map(|i| resp.weight_marginal(i)).collect();
        let m = w.iter().map(|x| argmax(x)).collect();
        (w, m)
    } else {
        (vec![Vec::new(); resp.num_items()], Vec::new())
    };
    Ok(EmFit {
        map_answers: answer_posterior.iter().map(|x| argmax(x)).collect(),
        answer_posterior,
        weight_posterior,
        map_weights,
        iterations: trace.len(),
        converged,
        log_likelihood: trace.last().map_or(0.0, |s| s.log_likelihood),
        trace,
        model,
        responsibilities: resp,
    })
}

/// Classic Dawid–Skene fit on the solver part of `counts`.
pub fn classic_ds_em(counts: &VoteCounts, options: EmOptions) -> Result<EmFit, AggregateError> {
    run_em(ClassicDs::initialize(counts, options)?)
}

/// Joint solver and reflector fit.
pub fn wise_ds_em(counts: &VoteCounts, options: EmOptions) -> Result<EmFit, AggregateError> {
    run_em(WiseDs::initialize(counts, options)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(k: usize, answers: &[Vec<Option<usize>>], weights: &[Vec<Vec<i8>>]) -> VoteCounts {
        VoteCounts::from_votes(k, answers, weights).unwrap()
    }

    #[test]
    fn unanimous_class_zero() {
        let c = counts(2, &vec![vec![Some(0), Some(0)]; 3], &[]);
        let fit = classic_ds_em(&c, EmOptions::default()).unwrap();
        assert_eq!(fit.map_answers, vec![0, 0, 0]);
        for m in &fit.model.solver_confusion {
            assert!(m[0][0] > 1.0 - 1e-5, "{m:?}");
        }
        fit.model.validate(1e-9).unwrap();
    }

    #[test]
    fn single_vote_single_item() {
        let c = counts(3, &[vec![Some(1)]], &[vec![vec![2]]]);
        let classic = classic_ds_em(&c, EmOptions::default()).unwrap();
        assert_eq!(classic.map_answers, vec![1]);
        let wise = wise_ds_em(&c, EmOptions::default()).unwrap();
        assert_eq!(wise.map_answers, vec![1]);
        assert_eq!(wise.map_weights, vec![2]);
    }

    #[test]
    fn brute_force_posterior_matches_e_step() {
        // Independent evaluation of the normalized product for a fixed model.
        let c = counts(
            3,
            &[vec![Some(0), Some(2)], vec![Some(1), None]],
            &[vec![vec![2, 0], vec![1, -1]], vec![vec![0, 0], vec![-1, -1]]],
        );
        let em = WiseDs::initialize(&c, EmOptions::default()).unwrap();
        let (resp, ll) = em.e_step().unwrap();
        let m = em.model();
        let mut ll_ref = 0.0;
        for i in 0..2 {
            let mut joint = [0.0; 9];
            for a in 0..3 {
                for b in 0..3 {
                    let mut v = m.weight_prior[a] * m.answer_prior[b];
                    for t in 0..2 {
                        for e in 0..3 {
                            v *= m.solver_confusion[t][b][e].powi(c.solver_counts[i][t][e] as i32);
                        }
                    }
                    for r in 0..2 {
                        for e in 0..3 {
                            v *= m.reflector_confusion[r][a][e].powi(c.reflector_counts[i][r][e] as i32);
                        }
                    }
                    joint[a * 3 + b] = v;
                }
            }
            let z: f64 = joint.iter().sum();
            ll_ref += z.ln();
            for (x, y) in joint.iter().zip(&resp.gamma[i]) {
                assert!((x / z - y).abs() < 1e-12);
            }
        }
        assert!((ll - ll_ref).abs() < 1e-9);
    }

    #[test]
    fn empty_input() {
        let c = VoteCounts::new(3, 2, 0);
        assert!(matches!(classic_ds_em(&c, EmOptions::default()), Err(AggregateError::EmptyInput)));
        assert!(matches!(wise_ds_em(&c, EmOptions::default()), Err(AggregateError::EmptyInput)));
    }

    #[test]
    fn uniform_weight_init_is_a_symmetric_fixed_point() {
        let c = counts(
            2,
            &[vec![Some(0)], vec![Some(1)], vec![Some(0)]],
            &[vec![vec![2]], vec![vec![0]], vec![vec![2]]],
        );
        let opts = EmOptions {
            weight_init: WeightInit::Uniform,
            ..EmOptions::default()
        };
        let fit = wise_ds_em(&c, opts).unwrap();
        let rows = &fit.model.reflector_confusion[0];
        assert!(rows.iter().all(|r| (r[2] - rows[0][2]).abs() < 1e-12));
        let fit = wise_ds_em(&c, EmOptions::default()).unwrap();
        let rows = &fit.model.reflector_confusion[0];
        assert!(rows[2][2] > rows[0][2]);
    }
}
