#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use wise_core::backend::{Backend, BackendError, CallContext, CompletionRequest, Gateway, Role};
use wise_core::harness::{load_dataset, RunConfig};
use wise_core::model::{AgentBinding, AgentRoster, AnswerChoice, DebateTranscript, Modality, Problem};
use wise_core::protocol::{run_debate, DebatePolicy, PromptSet};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

/// Runs the single problem of an appendix fixture (`evochart`, `smart840`)
/// through its scripted replay.
pub fn replay_fixture(name: &str) -> (Problem, DebateTranscript) {
    let config = RunConfig::load(&fixture(&format!("{name}.toml"))).unwrap();
    let problem = load_dataset(config.dataset_path().unwrap()).unwrap().remove(0);
    let roster = config.roster().unwrap();
    let gateway = config.build_gateway(&roster).unwrap();
    let t = run_debate(&problem, &roster, &config.policy, &config.prompts, &gateway).unwrap();
    (problem, t)
}

pub fn roster(n: usize, m: usize) -> AgentRoster {
    let b = |role: &str, i: usize| AgentBinding::new(format!("{role}{i}"), "stub", Modality::VisionText);
    AgentRoster {
        solvers: (0..n).map(|i| b("s", i)).collect(),
        reflectors: (0..m).map(|j| b("r", j)).collect(),
        orchestrator: b("o", 0),
    }
}

pub fn mc_problem(id: &str, truth: &str) -> Problem {
    let options = ["A", "B", "C", "D"]
        .iter()
        .enumerate()
        .map(|(i, c)| AnswerChoice {
            code: c.to_string(),
            text: format!("{}", 10 * (i + 1)),
        })
        .collect();
    Problem::new(id, format!("question {id}"), Vec::new(), options, Some(truth.into()), BTreeMap::new()).unwrap()
}

/// Solvers answer `answer`, reflectors always score `weight`; counts calls.
pub struct FixedBackend {
    pub answer: String,
    pub weight: i8,
    pub calls: AtomicUsize,
}

impl FixedBackend {
    pub fn new(answer: &str, weight: i8) -> Arc<Self> {
        Arc::new(Self {
            answer: answer.into(),
            weight,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for FixedBackend {
    fn complete(&self, _: &AgentBinding, ctx: &CallContext, _: &CompletionRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(match ctx.role {
            Role::Solver => format!("Working.\nFINAL_ANSWER: {}", self.answer),
            Role::Reflector => format!("Looks {}.\nFINAL_SCORE: {}", if self.weight == 2 { "right" } else { "off" }, self.weight),
            _ => "Why this option?".into(),
        })
    }
}

pub fn gateway(backend: Arc<dyn Backend>) -> Gateway {
    Gateway::new().with("stub", backend)
}

pub fn debate(p: &Problem, n: usize, m: usize, rounds: usize, backend: Arc<dyn Backend>) -> DebateTranscript {
    let policy = DebatePolicy {
        max_rounds: rounds,
        ..DebatePolicy::default()
    };
    run_debate(p, &roster(n, m), &policy, &PromptSet::default(), &gateway(backend)).unwrap()
}

/// A random single-round count instance with planted labels.
#[derive(Debug, Clone)]
pub struct Instance {
    pub k: usize,
    pub truth: Vec<usize>,
    pub answers: Vec<Vec<Option<usize>>>,
    pub weights: Vec<Vec<Vec<i8>>>,
}

impl Instance {
    pub fn counts(&self) -> wise_core::aggregate::VoteCounts {
        wise_core::aggregate::VoteCounts::from_votes(self.k, &self.answers, &self.weights).unwrap()
    }

    /// Same votes with every answer class `c` renamed to `perm[c]`.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        Self {
            k: self.k,
            truth: self.truth.iter().map(|&y| perm[y]).collect(),
            answers: self.answers.iter().map(|a| a.iter().map(|x| x.map(|c| perm[c])).collect()).collect(),
            weights: self.weights.clone(),
        }
    }
}

/// Items, solvers, reflectors and classes drawn from the given ranges;
/// solvers are right with a random per-solver accuracy, reflectors mostly
/// score right answers 2 and wrong ones 0, with some abstentions and
/// missing weights.
pub fn random_instance(
    seed: u64,
    classes: std::ops::RangeInclusive<usize>,
    items: std::ops::RangeInclusive<usize>,
    solvers: std::ops::RangeInclusive<usize>,
    reflectors: std::ops::RangeInclusive<usize>,
) -> Instance {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(classes);
    let num_items = rng.gen_range(items);
    let n = rng.gen_range(solvers);
    let m = rng.gen_range(reflectors);
    let acc: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..0.95)).collect();
    let sharp: Vec<f64> = (0..m).map(|_| rng.gen_range(0.4..0.95)).collect();
    let mut inst = Instance {
        k,
        truth: Vec::new(),
        answers: Vec::new(),
        weights: Vec::new(),
    };
    for _ in 0..num_items {
        let y = rng.gen_range(0..k);
        let answers: Vec<Option<usize>> = acc
            .iter()
            .map(|&a| {
                if rng.gen_bool(0.05) {
                    None
                } else if rng.gen_bool(a) {
                    Some(y)
                } else {
                    Some(rng.gen_range(0..k))
                }
            })
            .collect();
        let weights = answers
            .iter()
            .map(|a| {
                sharp
                    .iter()
                    .map(|&s| {
                        if rng.gen_bool(0.05) {
                            -1
                        } else if rng.gen_bool(s) {
                            if *a == Some(y) { 2 } else { 0 }
                        } else {
                            rng.gen_range(0..=2)
                        }
                    })
                    .collect()
            })
            .collect();
        inst.truth.push(y);
        inst.answers.push(answers);
        inst.weights.push(weights);
    }
    inst
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}
