//! TOML run configuration. Relative paths are resolved against the
//! directory holding the config file.

use super::pipeline::Aggregator;
use super::simulate::SimulationConfig;
use super::HarnessError;
use crate::aggregate::EmOptions;
use crate::backend::{Gateway, JudgeConfig, RemoteBackend, RemoteConfig, RetryPolicy, ScriptedBackend};
use crate::model::{AgentBinding, AgentRoster};
use crate::protocol::{DebatePolicy, PromptSet};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSection {
    /// Chat-completion endpoint; URL and key come from
    /// `WISE_BACKEND_<ID>_URL` / `WISE_BACKEND_<ID>_KEY`.
    Remote {
        #[serde(default)]
        max_in_flight: Option<usize>,
        #[serde(default)]
        max_retries: Option<u32>,
        #[serde(default)]
        timeout_secs: Option<u64>,
    },
    /// Replays canned replies from a JSON-lines file.
    Scripted { replay: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregationSection {
    pub aggregator: Aggregator,
    /// Weighted accumulation matches on raw rather than decoded answers.
    pub raw_answers: bool,
    /// Fit one model on counts pooled over all rounds.
    pub pooled_counts: bool,
    pub em: EmOptions,
}

impl Default for AggregationSection {
    fn default() -> Self {
        Self {
            aggregator: Aggregator::WiseDs,
            raw_answers: false,
            pooled_counts: false,
            em: EmOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub resume: bool,
    /// Default generation seed for agents that set none; also seeds simulate.
    pub seed: u64,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/latest"),
            resume: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeSection {
    pub units: Option<Vec<String>>,
    pub rel_tol: Option<f64>,
    /// Optional LLM judge reported next to the normalized comparison.
    pub model: Option<AgentBinding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub dataset: Option<DatasetSection>,
    #[serde(default)]
    pub roster: Option<AgentRoster>,
    #[serde(default)]
    pub policy: DebatePolicy,
    #[serde(default)]
    pub prompts: PromptSet,
    #[serde(default)]
    pub aggregation: AggregationSection,
    #[serde(default)]
    pub backends: BTreeMap<String, BackendSection>,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub judge: JudgeSection,
    #[serde(default)]
    pub simulate: Option<SimulationConfig>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let mut c: RunConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        if let Some(d) = &mut c.dataset {
            resolve(base_dir, &mut d.path);
        }
        for b in c.backends.values_mut() {
            if let BackendSection::Scripted { replay } = b {
                resolve(base_dir, replay);
            }
        }
        resolve(base_dir, &mut c.output.dir);
        c.policy
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        c.prompts.validate().map_err(HarnessError::Config)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn roster(&self) -> Result<AgentRoster, HarnessError> {
        let mut roster = self
            .roster
            .clone()
            .ok_or_else(|| HarnessError::Config("missing [roster] section".into()))?;
        for b in roster
            .solvers
            .iter_mut()
            .chain(roster.reflectors.iter_mut())
            .chain(std::iter::once(&mut roster.orchestrator))
        {
            b.params.seed.get_or_insert(self.output.seed);
        }
        Ok(roster)
    }

    pub fn dataset_path(&self) -> Result<&Path, HarnessError> {
        self.dataset
            .as_ref()
            .map(|d| d.path.as_path())
            .ok_or_else(|| HarnessError::Config("missing [dataset] section".into()))
    }

    /// Gateway with every backend the roster and judge refer to.
    pub fn build_gateway(&self, roster: &AgentRoster) -> Result<Gateway, HarnessError> {
        let mut needed: BTreeSet<&str> = roster
            .solvers
            .iter()
            .chain(&roster.reflectors)
            .chain(std::iter::once(&roster.orchestrator))
            .map(|b| b.backend.as_str())
            .collect();
        if let Some(judge) = &self.judge.model {
            needed.insert(judge.backend.as_str());
        }
        let mut gateway = Gateway::new();
        for id in needed {
            let section = self
                .backends
                .get(id)
                .ok_or_else(|| HarnessError::Config(format!("agent uses undefined backend {id:?}")))?;
            let backend: Arc<dyn crate::backend::Backend> = match section {
                BackendSection::Remote {
                    max_in_flight,
                    max_retries,
                    timeout_secs,
                } => {
                    let mut rc = RemoteConfig::from_env(id).map_err(|e| HarnessError::Config(e.to_string()))?;
                    if let Some(n) = max_in_flight {
                        rc.max_in_flight = *n;
                    }
                    if let Some(r) = max_retries {
                        rc.retry = RetryPolicy {
                            max_retries: *r,
                            ..rc.retry
                        };
                    }
                    let transport = crate::backend::HttpTransport::new(Duration::from_secs(timeout_secs.unwrap_or(600)))
                        .map_err(|e| HarnessError::Config(e.to_string()))?;
                    Arc::new(RemoteBackend::new(rc, Box::new(transport)))
                }
                BackendSection::Scripted { replay } => {
                    let s = ScriptedBackend::from_path(replay).map_err(|e| HarnessError::Config(e.to_string()))?;
                    s.check_roster(roster).map_err(|e| HarnessError::Config(e.to_string()))?;
                    Arc::new(s)
                }
            };
            gateway.register(id, backend);
        }
        Ok(gateway)
    }

    /// Judge settings; the model judge shares `gateway`.
    pub fn judge_config(&self, gateway: Option<Arc<Gateway>>) -> JudgeConfig {
        let mut j = JudgeConfig::default();
        if let Some(u) = &self.judge.units {
            j.units = u.clone();
        }
        if let Some(t) = self.judge.rel_tol {
            j.rel_tol = t;
        }
        if let (Some(binding), Some(gw)) = (&self.judge.model, gateway) {
            j.model = Some((gw, binding.clone()));
        }
        j
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[dataset]
path = "data/smart.jsonl"

[roster]
orchestrator = { name = "gpt-4o", backend = "replay", modality = "text" }
solvers = [
  { name = "o4-mini", backend = "replay", modality = "vision+text", temperature = 0.2 },
]
reflectors = [
  { name = "claude-s", backend = "replay", modality = "vision+text", max_tokens = 2048 },
]

[policy]
max_rounds = 4
parallelism = 2

[aggregation]
aggregator = "ds"
pooled_counts = true

[backends.replay]
kind = "scripted"
replay = "fixtures/replay.jsonl"

[output]
dir = "out"
seed = 11
"#;

    #[test]
    fn parses_and_resolves_paths() {
        let c = RunConfig::parse(SAMPLE, Path::new("/cfg")).unwrap();
        assert_eq!(c.dataset_path().unwrap(), Path::new("/cfg/data/smart.jsonl"));
        assert_eq!(c.output.dir, PathBuf::from("/cfg/out"));
        assert_eq!(c.aggregation.aggregator, Aggregator::ClassicDs);
        assert!(c.aggregation.pooled_counts);
        assert_eq!(c.policy.max_rounds, 4);
        let r = c.roster().unwrap();
        assert_eq!(r.solvers[0].params.temperature, 0.2);
        assert_eq!(r.reflectors[0].params.max_tokens, 2048);
        assert_eq!(r.orchestrator.params.seed, Some(11));
        assert!(matches!(&c.backends["replay"], BackendSection::Scripted { replay } if replay == Path::new("/cfg/fixtures/replay.jsonl")));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_policy() {
        assert!(RunConfig::parse("[policy]\nmax_round = 3\n", Path::new(".")).is_err());
        assert!(RunConfig::parse("[policy]\nmax_rounds = 0\n", Path::new(".")).is_err());
        assert!(RunConfig::parse("[aggregation]\naggregator = \"mace\"\n", Path::new(".")).is_err());
    }

    #[test]
    fn undefined_backend_is_config_error() {
        let c = RunConfig::parse(&SAMPLE.replace("[backends.replay]\nkind = \"scripted\"\nreplay = \"fixtures/replay.jsonl\"", ""), Path::new(".")).unwrap();
        let r = c.roster().unwrap();
        assert!(matches!(c.build_gateway(&r), Err(HarnessError::Config(_))));
    }
}
