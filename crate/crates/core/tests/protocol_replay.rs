mod common;

use common::*;
use std::sync::Arc;
use wise_core::backend::{judge_equivalent, JudgeConfig, JudgeMode};
use wise_core::model::{deserialize_transcript, serialize_transcript, Answer, Termination};
use wise_core::protocol::check_consensus;

#[test]
fn evochart_replay_reaches_consensus_in_round_four() {
    let (p, t) = replay_fixture("evochart");
    assert_eq!(t.rounds.len(), 4);
    assert_eq!(t.termination, Termination::Consensus);
    assert!(check_consensus(t.last_round().unwrap()));
    assert!(!check_consensus(&t.rounds[1]));
    let answers = t.last_round().unwrap().answers();
    assert!(answers.iter().all(|a| *a == Answer::FreeForm("20%".into())));
    let truth = p.ground_truth.as_deref().unwrap();
    assert!(judge_equivalent("20%", truth, JudgeMode::Normalized, &JudgeConfig::default()).unwrap());
    // 3 full rounds of 2 + 4 + 2, then 2 + 4 without orchestration
    assert_eq!(t.backend_calls, 3 * 8 + 6);
}

#[test]
fn smart840_replay_runs_all_rounds() {
    let (_, t) = replay_fixture("smart840");
    assert_eq!(t.termination, Termination::MaxRounds);
    let grid: Vec<Vec<Vec<i8>>> = t.rounds.iter().map(|r| r.weight_matrix()).collect();
    assert_eq!(grid[0], vec![vec![2, 1, 2], vec![0, 0, 2], vec![0, 2, 2]]);
    assert_eq!(grid[3], vec![vec![2, 2, 2], vec![0, 0, 2], vec![2, 0, 2]]);
    let finals: Vec<_> = t.last_round().unwrap().answers();
    assert_eq!(finals, ["D", "B", "D"].map(|c| Answer::Option(c.into())).to_vec());
    assert!(t.backend_calls <= 4 * (3 + 3 + 9));
}

#[test]
fn replays_match_golden_files() {
    for name in ["evochart", "smart840"] {
        let (_, t) = replay_fixture(name);
        let bytes = serialize_transcript(&t.without_timing()).unwrap();
        let golden = fixture(&format!("golden/{name}.transcript.json"));
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            std::fs::write(&golden, &bytes).unwrap();
        }
        let expected = std::fs::read(&golden).expect("golden file missing; rerun with UPDATE_GOLDEN=1");
        assert_eq!(String::from_utf8(bytes).unwrap(), String::from_utf8(expected).unwrap(), "{name}");
    }
}

#[test]
fn replay_is_deterministic() {
    let a = serialize_transcript(&replay_fixture("smart840").1.without_timing()).unwrap();
    let b = serialize_transcript(&replay_fixture("smart840").1.without_timing()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn transcripts_round_trip() {
    let (_, t) = replay_fixture("evochart");
    let back = deserialize_transcript(&serialize_transcript(&t).unwrap()).unwrap();
    assert_eq!(back, t);
}

#[test]
fn immediate_agreement_stops_after_one_round() {
    let t = debate(&mc_problem("p", "B"), 3, 2, 8, FixedBackend::new("B", 2));
    assert_eq!(t.rounds.len(), 1);
    assert_eq!(t.termination, Termination::Consensus);
}

#[test]
fn call_count_respects_worst_case_bound() {
    for (n, m, k) in [(1, 1, 1), (2, 3, 4), (3, 3, 8), (4, 1, 3)] {
        let backend = FixedBackend::new("C", 0);
        let t = debate(&mc_problem("p", "B"), n, m, k, backend.clone());
        assert_eq!(t.rounds.len(), k);
        assert_eq!(t.backend_calls, backend.calls());
        // one orchestrator call per solver on every round but the last
        assert_eq!(t.backend_calls, k * (n + n * m) + (k - 1) * n);
        if n <= m {
            assert!(t.backend_calls <= k * (m + n + m * n), "{n}x{m}x{k}: {}", t.backend_calls);
        }
        let indices: Vec<usize> = t.rounds.iter().map(|r| r.round_index).collect();
        assert_eq!(indices, (1..=k).collect::<Vec<_>>());
    }
}

#[test]
fn backend_failures_abstain_rather_than_abort() {
    struct Flaky;
    impl wise_core::backend::Backend for Flaky {
        fn complete(
            &self,
            b: &wise_core::model::AgentBinding,
            ctx: &wise_core::backend::CallContext,
            _: &wise_core::backend::CompletionRequest,
        ) -> Result<String, wise_core::backend::BackendError> {
            match (ctx.role, b.name.as_str()) {
                (wise_core::backend::Role::Solver, "s1") => Err(wise_core::backend::BackendError::Failure("down".into())),
                (wise_core::backend::Role::Solver, _) => Ok("FINAL_ANSWER: A".into()),
                (wise_core::backend::Role::Reflector, _) => Ok("FINAL_SCORE: 2".into()),
                _ => Ok("why?".into()),
            }
        }
    }
    let t = debate(&mc_problem("p", "A"), 2, 1, 2, Arc::new(Flaky));
    assert_eq!(t.termination, Termination::MaxRounds);
    assert!(t.rounds.iter().all(|r| r.responses[1].parsed_answer.is_abstain()));
}
