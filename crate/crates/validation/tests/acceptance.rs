//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use common::*;
use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::Categorical;
use statrs::statistics::Distribution;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};
use wise_core::aggregate::{
    aggregate_rounds, classic_ds_em, matrix_stats, round_discount, wise_ds_em, ClassicDs, EmFit, EmOptions, EmStepper,
    RoundBallots, WiseDs,
};
use wise_core::backend::{judge_equivalent, JudgeConfig, JudgeMode};
use wise_core::harness::simulate::max_row_l1;
use wise_core::harness::{aggregate_transcripts, run_simulation, sample_batch, AggregationOptions, Aggregator, SimulationConfig};
use wise_core::model::{Answer, Problem, Termination};
use wise_core::protocol::{check_consensus, parse_final_answer, parse_final_score};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn reduction() -> Outcome {
    let inst = random_instance(50, 5..=5, 50..=50, 3..=3, 0..=0);
    let counts = inst.counts();
    let start = Instant::now();
    let classic = classic_ds_em(&counts, EmOptions::default()).map_err(|e| e.to_string())?;
    let joint = wise_ds_em(&counts, EmOptions::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let diff = max_abs_diff(&classic.answer_posterior, &joint.answer_posterior);
    let same_map = classic.map_answers == joint.map_answers;
    check(
        diff < 1e-9 && same_map && elapsed < Duration::from_secs(1),
        format!("max posterior diff {diff:.2e}, identical MAP {same_map}, {elapsed:.2?}"),
    )
}

fn recovery() -> Outcome {
    let cfg = SimulationConfig::from_diagonals(5, 200, &[0.8, 0.7, 0.6], &[0.8, 0.8], 0);
    let start = Instant::now();
    let report = run_simulation(&cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let solver = report.max_solver_recovery_l1();
    let reflector = report.reflector_recovery_l1.iter().copied().fold(0.0, f64::max);
    let majority = report.accuracy["majority"];
    let map = report.wise_ds_map_accuracy;

    // oracle: confusions tallied against the true labels of the same draw
    let batch = sample_batch(&cfg).map_err(|e| e.to_string())?;
    let empirical = (0..cfg.solver_confusions.len())
        .map(|t| {
            let mut m = vec![vec![0.0; 5]; 5];
            for (y, a) in batch.truth.iter().zip(&batch.answers) {
                if let Some(b) = a[t] {
                    m[*y][b] += 1.0;
                }
            }
            for row in &mut m {
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|x| *x /= s.max(1.0));
            }
            max_row_l1(&m, &cfg.solver_confusions[t])
        })
        .fold(0.0, f64::max);
    check(
        solver <= 0.15 && reflector <= 0.15 && map >= majority && elapsed < Duration::from_secs(10),
        format!(
            "solver L1 {solver:.3}, reflector L1 {reflector:.3} (limit 0.15; true-label tally of the same draw: {empirical:.3}), \
             MAP acc {map:.3} vs majority {majority:.3}, {elapsed:.2?}"
        ),
    )
}

/// Runs `em` to convergence the way the fitter does, checking the model
/// after every M-step. Returns (worst raw log-likelihood drop, worst
/// penalized objective drop).
fn monotone_run<E: EmStepper>(mut em: E) -> Result<(f64, f64), String> {
    let opts = *em.options();
    let (mut worst_ll, mut worst_obj) = (0.0f64, 0.0f64);
    let mut prev: Option<(f64, f64)> = None;
    for _ in 0..opts.max_iterations {
        let (resp, ll) = em.e_step().map_err(|e| e.to_string())?;
        let obj = em.objective(ll);
        if let Some((pll, pobj)) = prev {
            worst_ll = worst_ll.max(pll - ll);
            worst_obj = worst_obj.max(pobj - obj);
            if (ll - pll).abs() <= opts.tolerance * pll.abs() {
                break;
            }
        }
        prev = Some((ll, obj));
        em.m_step(&resp);
        em.model().validate(1e-9).map_err(|e| format!("after M-step: {e}"))?;
    }
    Ok((worst_ll, worst_obj))
}

fn monotonicity() -> Outcome {
    let (mut violations, mut worst_ll, mut worst_obj) = (0, 0.0f64, 0.0f64);
    for seed in 0..100 {
        let inst = random_instance(1000 + seed, 2..=6, 3..=40, 1..=4, 1..=3);
        let counts = inst.counts();
        for (ll, obj) in [
            monotone_run(WiseDs::initialize(&counts, EmOptions::default()).map_err(|e| e.to_string())?)?,
            monotone_run(ClassicDs::initialize(&counts, EmOptions::default()).map_err(|e| e.to_string())?)?,
        ] {
            violations += usize::from(ll > 1e-9);
            worst_ll = worst_ll.max(ll);
            worst_obj = worst_obj.max(obj);
        }
    }
    check(
        violations == 0,
        format!(
            "{violations}/200 fits with a log-likelihood drop > 1e-9 (worst {worst_ll:.2e}); \
             worst smoothed-objective drop {worst_obj:.2e}; stochasticity held after every M-step"
        ),
    )
}

fn normalization() -> Outcome {
    for k in 1..=8u64 {
        let total: Ratio<u64> = (1..=k).map(|l| Ratio::new(l, k * (k + 1))).sum();
        if total != Ratio::new(1, 2) {
            return Err(format!("k={k}: sum {total}"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let codes: Vec<String> = ["A", "B", "C", "D"].map(String::from).to_vec();
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let (k, n, m) = (rng.gen_range(1..=8), rng.gen_range(1..=4), rng.gen_range(1..=4));
        let rounds: Vec<RoundBallots> = (0..k)
            .map(|_| RoundBallots {
                answers: (0..n).map(|_| Some(codes[rng.gen_range(0..4)].clone())).collect(),
                weights: (0..n).map(|_| (0..m).map(|_| f64::from(rng.gen_range(0u8..=2))).collect()).collect(),
            })
            .collect();
        let agg = aggregate_rounds(&rounds, &codes).map_err(|e| e.to_string())?;
        for &w in agg.pair_weights.iter().flatten().flatten() {
            if !(0.0..=1.0).contains(&w) {
                return Err(format!("accumulated weight {w} outside [0, 1]"));
            }
            worst = worst.max(w);
        }
    }
    let float: f64 = (1..=8).map(|l| round_discount(l, 8)).sum();
    Ok(format!("exact 1/2 for k=1..8 (float {float}); 500 random inputs, max entry {worst}"))
}

fn smart840() -> Outcome {
    let (problem, t) = replay_fixture("smart840");
    let rounds: Vec<RoundBallots> = t
        .rounds
        .iter()
        .map(|r| RoundBallots {
            answers: r.answers().iter().map(|a| a.as_text().map(String::from)).collect(),
            weights: r.weight_matrix().iter().map(|row| row.iter().map(|&w| f64::from(w.max(0))).collect()).collect(),
        })
        .collect();
    let agg = aggregate_rounds(&rounds, &problem.option_codes()).map_err(|e| e.to_string())?;
    let expected = [("D", 2.0), ("B", 1.55), ("A", 0.60), ("E", 0.40)];
    let ok = expected.iter().all(|(c, w)| (agg.weight_of(c).unwrap() - w).abs() <= 1e-12);
    let selected = agg.selected.clone().unwrap_or_default();
    let truth = problem.ground_truth.clone().unwrap_or_default();
    let weights: Vec<String> = expected.iter().map(|(c, _)| format!("{c}={:.12}", agg.weight_of(c).unwrap())).collect();
    check(
        ok && selected == "D" && selected == truth,
        format!("{}; a* = {selected}, ground truth {truth}", weights.join(" ")),
    )
}

fn evochart() -> Outcome {
    let (problem, t) = replay_fixture("evochart");
    let last = t.last_round().ok_or("no rounds")?;
    let all_twenty = last.answers().iter().all(|a| *a == Answer::FreeForm("20%".into()));
    let all_two = last.weight_matrix().iter().flatten().all(|&w| w == 2);
    let opts = AggregationOptions {
        aggregator: Aggregator::Majority,
        raw_answers: false,
        pooled_counts: false,
        em: EmOptions::default(),
    };
    let judge = JudgeConfig::default();
    let result = aggregate_transcripts(std::slice::from_ref(&t), &opts, &judge).map_err(|e| e.to_string())?;
    let prediction = result.decisions[0].prediction.as_text().unwrap_or_default().to_string();
    let truth = problem.ground_truth.clone().unwrap_or_default();
    let equivalent = judge_equivalent(&prediction, &truth, JudgeMode::Normalized, &judge).map_err(|e| e.to_string())?;
    check(
        t.termination == Termination::Consensus
            && t.rounds.len() == 4
            && check_consensus(last)
            && all_twenty
            && all_two
            && equivalent,
        format!(
            "{:?} after {} rounds, prediction {prediction:?} vs ground truth {truth:?}: equivalent {equivalent}",
            t.termination,
            t.rounds.len()
        ),
    )
}

fn call_bound() -> Outcome {
    let backend = FixedBackend::new("C", 0);
    let t = debate(&mc_problem("bound", "B"), 2, 3, 4, backend.clone());
    let bound = 4 * (3 + 2 + 3 * 2);
    check(
        t.rounds.len() == 4 && t.backend_calls == backend.calls() && t.backend_calls <= bound,
        format!("{} rounds, {} calls (bound {bound})", t.rounds.len(), t.backend_calls),
    )
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    const PIECES: [&str; 10] = [
        "FINAL_ANSWER:", "FINAL_SCORE:", "The answer is", "\n", " ", "D4", "**", "20%", "-1", "：",
    ];
    let len = rng.gen_range(0..40);
    let mut s = String::new();
    for _ in 0..len {
        match rng.gen_range(0..4) {
            0 => s.push_str(PIECES[rng.gen_range(0..PIECES.len())]),
            1 => s.push(rng.gen_range(' '..='~')),
            2 => s.push(rng.gen::<char>()),
            _ => s.push(char::from_u32(rng.gen_range(0x300..0x3000)).unwrap_or('?')),
        }
    }
    s
}

fn parser_fuzz() -> Outcome {
    let mc = replay_fixture_problem("smart840");
    let free = replay_fixture_problem("evochart");
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut abstained = 0usize;
    for _ in 0..100_000 {
        let s = random_text(&mut rng);
        let a = catch_unwind(|| (parse_final_answer(&s, &mc), parse_final_answer(&s, &free), parse_final_score(&s)))
            .map_err(|_| format!("parser panicked on {s:?}"))?;
        abstained += usize::from(a.0.is_abstain());
    }
    let shapes = (
        parse_final_answer("FINAL_ANSWER: 20", &free),
        parse_final_score("FINAL_SCORE: 2"),
        parse_final_answer("The answer is D4: 6.0", &mc),
    );
    check(
        shapes == (Answer::FreeForm("20".into()), 2, Answer::Option("D".into())),
        format!("1e5 strings without a panic ({abstained} abstained on the option problem); shapes -> {shapes:?}"),
    )
}

fn replay_fixture_problem(name: &str) -> Problem {
    wise_core::harness::load_dataset(&fixture(&format!("{name}.jsonl"))).unwrap().remove(0)
}

fn calibration() -> Outcome {
    let identity: Vec<Vec<f64>> = (0..5).map(|r| (0..5).map(|c| f64::from(u8::from(r == c))).collect()).collect();
    let uniform = |k: usize| vec![vec![1.0 / k as f64; k]; k];
    let id = matrix_stats(&identity);
    let u5 = matrix_stats(&uniform(5)).entropy_bits;
    let u3 = matrix_stats(&uniform(3)).entropy_bits;
    // independent oracle: categorical entropy in nats
    let oracle = |k: usize| Categorical::new(&vec![1.0; k]).unwrap().entropy().unwrap() / std::f64::consts::LN_2;
    check(
        id.entropy_bits < 1e-6
            && id.kl_from_identity_bits < 1e-6
            && (u5 - 5f64.log2()).abs() < 1e-9
            && (u5 - oracle(5)).abs() < 1e-9
            && (u3 - 3f64.log2()).abs() < 1e-9
            && (u3 - oracle(3)).abs() < 1e-9,
        format!(
            "identity H {:.1e} KL {:.1e}; uniform 5x5 H {u5:.12} (log2 5 = {:.12}); uniform 3x3 H {u3:.12}",
            id.entropy_bits,
            id.kl_from_identity_bits,
            5f64.log2()
        ),
    )
}

fn permuted(m: &[Vec<f64>], perm: &[usize]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; m.len()]; m.len()];
    for (a, row) in m.iter().enumerate() {
        for (b, &x) in row.iter().enumerate() {
            out[perm[a]][perm[b]] = x;
        }
    }
    out
}

fn equivariant(a: &EmFit, b: &EmFit, perm: &[usize]) -> bool {
    let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| (p - q).abs() < 1e-9);
    let k = perm.len();
    let posteriors = a.answer_posterior.iter().zip(&b.answer_posterior).all(|(pa, pb)| {
        let moved: Vec<f64> = (0..k).map(|c| pa[perm.iter().position(|&p| p == c).unwrap()]).collect();
        close(&moved, pb)
    });
    let labels = a.map_answers.iter().zip(&b.map_answers).zip(&a.answer_posterior).all(|((&x, &y), p)| {
        let mut sorted = p.clone();
        sorted.sort_by(|u, v| v.total_cmp(u));
        // near-ties may break either way
        perm[x] == y || sorted[0] - sorted[1] < 1e-9
    });
    let prior = (0..k).all(|c| (a.model.answer_prior[c] - b.model.answer_prior[perm[c]]).abs() < 1e-9);
    let solvers = a
        .model
        .solver_confusion
        .iter()
        .zip(&b.model.solver_confusion)
        .all(|(x, y)| max_abs_diff(&permuted(x, perm), y) < 1e-9);
    let reflectors = a
        .model
        .reflector_confusion
        .iter()
        .zip(&b.model.reflector_confusion)
        .all(|(x, y)| max_abs_diff(x, y) < 1e-9);
    let weights = max_abs_diff(&a.weight_posterior, &b.weight_posterior) < 1e-9;
    posteriors && labels && prior && solvers && reflectors && weights
}

fn determinism() -> Outcome {
    let inst = random_instance(30, 5..=5, 30..=30, 3..=3, 2..=2);
    let counts = inst.counts();
    let opts = EmOptions::default();
    let fit = |c| -> Result<(EmFit, EmFit), String> {
        Ok((wise_ds_em(c, opts).map_err(|e| e.to_string())?, classic_ds_em(c, opts).map_err(|e| e.to_string())?))
    };
    let first = fit(&counts)?;
    let repeated = (0..3).all(|_| fit(&counts).map(|f| f == first).unwrap_or(false));
    let mut perm: Vec<usize> = (0..inst.k).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(10));
    let relabeled = fit(&inst.relabel(&perm).counts())?;
    let eq_wise = equivariant(&first.0, &relabeled.0, &perm);
    let eq_classic = equivariant(&first.1, &relabeled.1, &perm);
    check(
        repeated && eq_wise && eq_classic,
        format!("bit-identical repeats {repeated}; relabel {perm:?}: joint {eq_wise}, classic {eq_classic}"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("reduction to classic DS without reflectors", reduction),
        ("confusion recovery on a synthetic crowd", recovery),
        ("log-likelihood monotonicity", monotonicity),
        ("round-discount normalization", normalization),
        ("SMART-840 fixture weights", smart840),
        ("EvoChart fixture consensus", evochart),
        ("call-count bound", call_bound),
        ("parser fuzz", parser_fuzz),
        ("calibration analytics", calibration),
        ("determinism and permutation equivariance", determinism),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {:>2} {name}: {detail}", i + 1);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
