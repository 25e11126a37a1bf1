use super::HarnessError;
use crate::backend::Gateway;
use crate::model::{deserialize_transcript, serialize_transcript, AgentRoster, DebateTranscript, Problem, Termination};
use crate::protocol::{run_debate, DebatePolicy, PromptSet};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

pub const TRANSCRIPT_SUFFIX: &str = ".transcript.json";
pub const FAILURE_MANIFEST: &str = "failures.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub problem_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunSummary {
    pub total: usize,
    pub completed: usize,
    pub skipped: usize,
    pub failures: Vec<FailureRecord>,
    /// Calls issued by debates run in this invocation.
    pub backend_calls: usize,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            1
        }
    }
}

/// `<dir>/<id>.transcript.json`, with characters outside `[A-Za-z0-9._-]`
/// in the id replaced by `_`.
pub fn transcript_path(dir: &Path, problem_id: &str) -> PathBuf {
    let safe: String = problem_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect();
    dir.join(format!("{safe}{TRANSCRIPT_SUFFIX}"))
}

/// Writes to a temporary file in the target directory, then renames it over
/// `path`, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| HarnessError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| HarnessError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| HarnessError::io(path, e))?;
    tmp.persist(path).map_err(|e| HarnessError::io(path, e.error))?;
    Ok(())
}

fn read_transcript(path: &Path) -> Result<DebateTranscript, HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    deserialize_transcript(&bytes).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// All transcripts in `dir`, ordered by file name.
pub fn load_transcripts(dir: &Path) -> Result<Vec<DebateTranscript>, HarnessError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(TRANSCRIPT_SUFFIX)))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_transcript(p)).collect()
}

enum Outcome {
    Skipped(DebateTranscript),
    Ran(DebateTranscript),
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub resume: bool,
}

/// Debates every problem on a pool of `policy.parallelism` workers and
/// stores each transcript atomically. With `resume`, problems whose
/// transcript already exists and parses are skipped.
pub fn run_batch(
    problems: &[Problem],
    roster: &AgentRoster,
    policy: &DebatePolicy,
    prompts: &PromptSet,
    gateway: &Gateway,
    opts: &RunOptions,
) -> Result<RunSummary, HarnessError> {
    policy.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
    std::fs::create_dir_all(&opts.out_dir).map_err(|e| HarnessError::io(&opts.out_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(policy.parallelism)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;

    let outcomes: Vec<(&Problem, Outcome)> = pool.install(|| {
        problems
            .par_iter()
            .map(|p| {
                let path = transcript_path(&opts.out_dir, &p.id);
                if opts.resume && path.exists() {
                    match read_transcript(&path) {
                        Ok(t) => return (p, Outcome::Skipped(t)),
                        Err(e) => log::warn!("{}: stored transcript unusable ({e}); rerunning", p.id),
                    }
                }
                let outcome = match run_debate(p, roster, policy, prompts, gateway) {
                    Ok(t) => match serialize_transcript(&t) {
                        Ok(bytes) => match write_atomic(&path, &bytes) {
                            Ok(()) => Outcome::Ran(t),
                            Err(e) => Outcome::Failed(e.to_string()),
                        },
                        Err(e) => Outcome::Failed(e.to_string()),
                    },
                    Err(e) => Outcome::Failed(e.to_string()),
                };
                match &outcome {
                    Outcome::Ran(t) => log::info!("{}: {:?} after {} rounds", p.id, t.termination, t.rounds.len()),
                    Outcome::Failed(e) => log::error!("{}: {e}", p.id),
                    Outcome::Skipped(_) => {}
                }
                (p, outcome)
            })
            .collect()
    });

    let mut summary = RunSummary {
        total: problems.len(),
        ..RunSummary::default()
    };
    for (p, outcome) in outcomes {
        let t = match outcome {
            Outcome::Skipped(t) => {
                summary.skipped += 1;
                t
            }
            Outcome::Ran(t) => {
                summary.completed += 1;
                summary.backend_calls += t.backend_calls;
                t
            }
            Outcome::Failed(reason) => {
                summary.failures.push(FailureRecord {
                    problem_id: p.id.clone(),
                    reason,
                });
                continue;
            }
        };
        if t.termination == Termination::BackendFailure {
            summary.failures.push(FailureRecord {
                problem_id: p.id.clone(),
                reason: "debate terminated on backend failure".into(),
            });
        }
    }

    let manifest = opts.out_dir.join(FAILURE_MANIFEST);
    if summary.failures.is_empty() {
        if manifest.exists() {
            std::fs::remove_file(&manifest).map_err(|e| HarnessError::io(&manifest, e))?;
        }
    } else {
        let bytes = serde_json::to_vec_pretty(&summary.failures).expect("failure records serialize");
        write_atomic(&manifest, &bytes)?;
    }
    Ok(summary)
}
