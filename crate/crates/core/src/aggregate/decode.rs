use super::{AggregateError, ConfusionModel};
use crate::model::MISSING_WEIGHT;

/// Latent class maximizing `prior[r] * conf[r][emitted]`; the emitted class
/// wins any tie it is part of, otherwise the smallest index.
fn decode_one(prior: &[f64], conf: &[Vec<f64>], emitted: usize) -> usize {
    let score = |r: usize| prior[r] * conf[r][emitted];
    let best = (0..prior.len()).map(score).fold(f64::NEG_INFINITY, f64::max);
    if emitted < prior.len() && score(emitted) >= best {
        return emitted;
    }
    (0..prior.len()).find(|&r| score(r) >= best).unwrap_or(emitted)
}

/// Decoded answers and weights for one round.
pub type DecodedRound = (Vec<Option<usize>>, Vec<Vec<u8>>);

/// Decodes one round's answers and weights through the fitted confusions.
///
/// `answers[s]` is solver s's class (`None` = abstained, kept as is);
/// `weights[s][j]` is reflector j's raw weight on solver s, -1 = missing.
/// Missing weights become 0. Without a reflector part in the model the raw
/// weights pass through.
pub fn posterior_decode(
    weights: &[Vec<i8>],
    answers: &[Option<usize>],
    model: &ConfusionModel,
) -> Result<DecodedRound, AggregateError> {
    let k = model.num_classes();
    if answers.len() != model.solver_confusion.len() {
        return Err(AggregateError::DimensionMismatch(format!(
            "{} answers for {} fitted solvers",
            answers.len(),
            model.solver_confusion.len()
        )));
    }
    let decoded = answers
        .iter()
        .enumerate()
        .map(|(s, a)| match *a {
            None => Ok(None),
            Some(b) if b < k => Ok(Some(decode_one(&model.answer_prior, &model.solver_confusion[s], b))),
            Some(b) => Err(AggregateError::DimensionMismatch(format!(
                "answer class {b} outside the model's {k} classes"
            ))),
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut out_weights = Vec::with_capacity(weights.len());
    for row in weights {
        if model.models_reflectors() && row.len() != model.reflector_confusion.len() {
            return Err(AggregateError::DimensionMismatch(format!(
                "{} weights for {} fitted reflectors",
                row.len(),
                model.reflector_confusion.len()
            )));
        }
        let decoded_row = row
            .iter()
            .enumerate()
            .map(|(j, &w)| {
                if w == MISSING_WEIGHT {
                    return Ok(0);
                }
                let w = usize::try_from(w)
                    .ok()
                    .filter(|&w| w < 3)
                    .ok_or_else(|| AggregateError::DimensionMismatch(format!("weight {w} out of range")))?;
                if !model.models_reflectors() {
                    return Ok(w as u8);
                }
                Ok(decode_one(&model.weight_prior, &model.reflector_confusion[j], w) as u8)
            })
            .collect::<Result<Vec<_>, AggregateError>>()?;
        out_weights.push(decoded_row);
    }
    Ok((decoded, out_weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(k: usize) -> Vec<Vec<f64>> {
        (0..k).map(|r| (0..k).map(|c| if r == c { 1.0 } else { 0.0 }).collect()).collect()
    }

    fn model(solver: Vec<Vec<f64>>, reflector: Vec<Vec<f64>>) -> ConfusionModel {
        let k = solver.len();
        ConfusionModel {
            answer_prior: vec![1.0 / k as f64; k],
            weight_prior: vec![1.0 / 3.0; 3],
            solver_confusion: vec![solver],
            reflector_confusion: vec![reflector],
        }
    }

    #[test]
    fn identity_decode() {
        let m = model(identity(5), identity(3));
        let (a, w) = posterior_decode(&[vec![-1], ], &[Some(3)], &m).unwrap();
        assert_eq!(a, vec![Some(3)]);
        assert_eq!(w, vec![vec![0]]);
        let (a, w) = posterior_decode(&[vec![2]], &[None], &m).unwrap();
        assert_eq!(a, vec![None]);
        assert_eq!(w, vec![vec![2]]);
    }

    #[test]
    fn solver_confusion_overturns_emitted_answer() {
        // Row D puts most of its mass on emitting C; row C rarely emits C.
        let mut p = vec![vec![0.2; 5]; 5];
        p[2] = vec![0.3, 0.3, 0.1, 0.15, 0.15];
        p[3] = vec![0.05, 0.05, 0.7, 0.15, 0.05];
        let m = model(p.clone(), identity(3));
        let scores: Vec<f64> = (0..5).map(|r| 0.2 * p[r][2]).collect();
        assert_eq!(super::super::em::argmax(&scores), 3);
        let (a, _) = posterior_decode(&[vec![2]], &[Some(2)], &m).unwrap();
        assert_eq!(a, vec![Some(3)]);
    }

    #[test]
    fn overconfident_reflector_is_downgraded() {
        let r = vec![vec![0.8, 0.1, 0.1], vec![0.05, 0.15, 0.8], vec![0.1, 0.1, 0.6]];
        let m = model(identity(5), r);
        let (_, w) = posterior_decode(&[vec![2]], &[Some(0)], &m).unwrap();
        assert_eq!(w, vec![vec![1]]);
    }

    #[test]
    fn ties_keep_the_emitted_class() {
        let m = model(vec![vec![0.5, 0.5]; 2], identity(3));
        let (a, _) = posterior_decode(&[vec![0]], &[Some(1)], &m).unwrap();
        assert_eq!(a, vec![Some(1)]);
    }

    #[test]
    fn out_of_range_answer() {
        let m = model(identity(3), identity(3));
        assert!(posterior_decode(&[vec![0]], &[Some(3)], &m).is_err());
    }
}
