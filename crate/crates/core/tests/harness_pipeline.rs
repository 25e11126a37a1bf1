mod common;

use common::*;
use std::sync::Arc;
use wise_core::aggregate::AggregateError;
use wise_core::backend::{Backend, BackendError, CallContext, CompletionRequest, JudgeConfig, Role};
use wise_core::harness::run::FAILURE_MANIFEST;
use wise_core::harness::{
    aggregate_transcripts, compute_metrics, load_transcripts, run_batch, AggregationOptions, Aggregator, HarnessError,
    RunOptions,
};
use wise_core::model::{AgentBinding, Answer};
use wise_core::protocol::{DebatePolicy, PromptSet};

fn options(aggregator: Aggregator) -> AggregationOptions {
    AggregationOptions {
        aggregator,
        raw_answers: false,
        pooled_counts: false,
        em: Default::default(),
    }
}

fn policy(parallelism: usize) -> DebatePolicy {
    DebatePolicy {
        max_rounds: 3,
        consensus_stop: true,
        parallelism,
    }
}

#[test]
fn batch_writes_every_transcript_and_resume_is_free() {
    let dir = tempfile::tempdir().unwrap();
    let problems: Vec<_> = (0..10).map(|i| mc_problem(&format!("p{i}"), "B")).collect();
    let backend = FixedBackend::new("B", 2);
    let opts = RunOptions {
        out_dir: dir.path().to_path_buf(),
        resume: false,
    };
    let summary = run_batch(&problems, &roster(2, 2), &policy(4), &PromptSet::default(), &gateway(backend.clone()), &opts).unwrap();
    assert_eq!((summary.completed, summary.skipped, summary.exit_code()), (10, 0, 0));
    assert_eq!(summary.backend_calls, backend.calls());
    let stored = load_transcripts(dir.path()).unwrap();
    assert_eq!(stored.len(), 10);
    stored.iter().for_each(|t| t.validate().unwrap());

    let again = FixedBackend::new("B", 2);
    let resumed = RunOptions { resume: true, ..opts };
    let summary = run_batch(&problems, &roster(2, 2), &policy(4), &PromptSet::default(), &gateway(again.clone()), &resumed).unwrap();
    assert_eq!((summary.completed, summary.skipped), (0, 10));
    assert_eq!(again.calls(), 0);
}

struct OrchestratorDown;

impl Backend for OrchestratorDown {
    fn complete(&self, _: &AgentBinding, ctx: &CallContext, _: &CompletionRequest) -> Result<String, BackendError> {
        match ctx.role {
            Role::Solver => Ok("FINAL_ANSWER: A".into()),
            Role::Reflector => Ok("FINAL_SCORE: 0".into()),
            _ => Err(BackendError::Failure("503".into())),
        }
    }
}

#[test]
fn backend_failures_land_in_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let problems = vec![mc_problem("p0", "A")];
    let opts = RunOptions {
        out_dir: dir.path().to_path_buf(),
        resume: false,
    };
    let summary =
        run_batch(&problems, &roster(1, 1), &policy(1), &PromptSet::default(), &gateway(Arc::new(OrchestratorDown)), &opts)
            .unwrap();
    assert_eq!(summary.exit_code(), 1);
    assert_eq!(summary.failures[0].problem_id, "p0");
    assert!(dir.path().join(FAILURE_MANIFEST).exists());
}

#[test]
fn smart840_fixture_weighted_majority_picks_d() {
    let (p, t) = replay_fixture("smart840");
    let judge = JudgeConfig::default();
    let mut result = aggregate_transcripts(std::slice::from_ref(&t), &options(Aggregator::WeightedMajority), &judge).unwrap();
    let d = &result.decisions[0];
    assert_eq!(d.prediction, Answer::Option("D".into()));
    for (code, w) in [("D", 2.0), ("B", 1.55), ("A", 0.6), ("E", 0.4), ("C", 0.0)] {
        assert!((d.option_weights[code] - w).abs() < 1e-12, "{code}");
    }
    let metrics = compute_metrics(&[t], &mut result.decisions, &[p], Some("wmajority"), &judge).unwrap();
    assert_eq!(metrics.accuracy, 1.0);
}

#[test]
fn evochart_fixture_majority_is_twenty_percent() {
    let (p, t) = replay_fixture("evochart");
    let judge = JudgeConfig::default();
    let mut result = aggregate_transcripts(std::slice::from_ref(&t), &options(Aggregator::Majority), &judge).unwrap();
    assert_eq!(result.decisions[0].prediction, Answer::FreeForm("20%".into()));
    let metrics = compute_metrics(&[t], &mut result.decisions, &[p], Some("majority"), &judge).unwrap();
    assert_eq!(result.decisions[0].correct, Some(true));
    assert_eq!(metrics.accuracy, 1.0);
}

#[test]
fn every_aggregator_handles_the_fixtures() {
    let (_, smart) = replay_fixture("smart840");
    for a in Aggregator::ALL {
        let r = aggregate_transcripts(std::slice::from_ref(&smart), &options(a), &JudgeConfig::default()).unwrap();
        assert_eq!(r.decisions.len(), 1, "{a}");
        assert_eq!(r.fitted.is_some(), matches!(a, Aggregator::ClassicDs | Aggregator::WiseDs), "{a}");
    }
}

#[test]
fn empty_and_mixed_inputs_are_rejected() {
    let err = aggregate_transcripts(&[], &options(Aggregator::Majority), &JudgeConfig::default()).unwrap_err();
    assert!(matches!(err, HarnessError::Aggregate(AggregateError::EmptyInput)));
    let (_, a) = replay_fixture("smart840");
    let (_, b) = replay_fixture("evochart");
    let err = aggregate_transcripts(&[a, b], &options(Aggregator::Majority), &JudgeConfig::default()).unwrap_err();
    assert!(err.to_string().contains("mixed rosters"), "{err}");
}
