use super::AggregateError;
use crate::backend::{judge_equivalent, JudgeConfig, JudgeError, JudgeMode};
use crate::model::Answer;

/// Most frequent non-abstaining answer; ties go to the lexicographically
/// smallest answer text.
pub fn majority_vote(answers: &[Answer]) -> Result<Answer, AggregateError> {
    let mut tally: Vec<(&Answer, usize)> = Vec::new();
    for a in answers.iter().filter(|a| !a.is_abstain()) {
        match tally.iter_mut().find(|(b, _)| *b == a) {
            Some((_, n)) => *n += 1,
            None => tally.push((a, 1)),
        }
    }
    tally
        .into_iter()
        .max_by(|(a, n), (b, m)| n.cmp(m).then_with(|| b.as_text().cmp(&a.as_text())))
        .map(|(a, _)| a.clone())
        .ok_or(AggregateError::NoBallots)
}

/// Groups free-form answers into equivalence clusters. Each answer joins the
/// first cluster whose representative it is judged equivalent to; the
/// representative is the first member. Returns member indices per cluster.
pub fn cluster_free_form(
    answers: &[&str],
    mode: JudgeMode,
    config: &JudgeConfig,
) -> Result<Vec<Vec<usize>>, JudgeError> {
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (i, a) in answers.iter().enumerate() {
        if a.trim().is_empty() {
            continue;
        }
        let mut home = None;
        for (c, members) in clusters.iter().enumerate() {
            if judge_equivalent(a, answers[members[0]], mode, config)? {
                home = Some(c);
                break;
            }
        }
        match home {
            Some(c) => clusters[c].push(i),
            None => clusters.push(vec![i]),
        }
    }
    Ok(clusters)
}

/// Majority over free-form answers after equivalence clustering. The winner
/// is the largest cluster (ties: lexicographically smallest representative),
/// reported by its representative.
pub fn majority_vote_free_form(answers: &[Answer], config: &JudgeConfig) -> Result<Answer, AggregateError> {
    let texts: Vec<&str> = answers.iter().filter_map(Answer::as_text).collect();
    let clusters = cluster_free_form(&texts, JudgeMode::Normalized, config)
        .map_err(|e| AggregateError::Judge(e.to_string()))?;
    clusters
        .iter()
        .max_by(|a, b| a.len().cmp(&b.len()).then_with(|| texts[b[0]].cmp(texts[a[0]])))
        .map(|c| Answer::FreeForm(texts[c[0]].to_string()))
        .ok_or(AggregateError::NoBallots)
}
