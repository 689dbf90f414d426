use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attack::PerturbationOracle;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::types::{Prompt, TokenSequence};

use super::markov::sample_index;
use super::{MarkovModel, OutputSpace};

/// Mask one uniformly placed span and refill it left to right from a causal
/// proposal chain with top-p truncation. Length is preserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanPerturber {
    pub proposal: MarkovModel,
    pub span_length: usize,
    pub top_p: f64,
}

impl SpanPerturber {
    pub fn new(proposal: MarkovModel, span_length: usize, top_p: f64) -> Result<Self> {
        if span_length == 0 {
            return Err(Error::InvalidArgument(
                "span length must be at least 1".into(),
            ));
        }
        if !(top_p > 0.0 && top_p <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "top_p must lie in (0, 1], got {top_p}"
            )));
        }
        Ok(SpanPerturber {
            proposal,
            span_length,
            top_p,
        })
    }

    fn starts(&self, len: usize) -> Result<usize> {
        if len < self.span_length {
            return Err(Error::InvalidArgument(format!(
                "sequence of length {len} is shorter than the span length {}",
                self.span_length
            )));
        }
        Ok(len - self.span_length + 1)
    }

    /// Proposal row for `context` after top-p truncation, renormalized.
    pub fn truncated_row(&self, context: usize) -> Result<Vec<f64>> {
        Ok(top_p_truncate(
            self.proposal.next_distribution(context)?,
            self.top_p,
        ))
    }

    /// Context preceding position `start` of `y`, one entry per start context.
    fn left_contexts(
        &self,
        x: &Prompt,
        y: &TokenSequence,
        start: usize,
    ) -> Result<Vec<(usize, f64)>> {
        let m = &self.proposal;
        if start >= m.order() {
            let window = &y.tokens()[start - m.order()..start];
            return Ok(vec![(m.context_index(window), 1.0)]);
        }
        let starts = m.start_contexts(x)?;
        Ok(starts
            .into_iter()
            .map(|(mut c, w)| {
                for &t in &y.tokens()[..start] {
                    c = m.advance(c, t);
                }
                (c, w)
            })
            .collect())
    }

    pub fn perturb(
        &self,
        x: &Prompt,
        y: &TokenSequence,
        rng: &mut RngStream,
    ) -> Result<TokenSequence> {
        let starts = self.starts(y.len())?;
        let start = rng.random_range(0..starts);
        let lefts = self.left_contexts(x, y, start)?;
        let mut context = if lefts.len() == 1 {
            lefts[0].0
        } else {
            let w: Vec<f64> = lefts.iter().map(|(_, w)| *w).collect();
            lefts[sample_index(&w, rng.random::<f64>())].0
        };
        let mut out = y.clone();
        for pos in start..start + self.span_length {
            let row = self.truncated_row(context)?;
            let token = sample_index(&row, rng.random::<f64>()) as u32;
            out.tokens_mut()[pos] = token;
            context = self.proposal.advance(context, token);
        }
        Ok(out)
    }

    /// Exact law of `perturb(x, y)` as (output, probability) pairs, sorted by output.
    pub fn perturbation_kernel(
        &self,
        x: &Prompt,
        y: &TokenSequence,
        cap: usize,
    ) -> Result<Vec<(TokenSequence, f64)>> {
        let space = OutputSpace::new(self.proposal.vocab(), y.len(), cap)?;
        let row = self.kernel_row(x, y, &space)?;
        Ok(row
            .into_iter()
            .enumerate()
            .filter(|(_, p)| *p > 0.0)
            .map(|(i, p)| (space.sequence(i), p))
            .collect())
    }

    /// Dense exact kernel row of `y` over `space`.
    pub fn kernel_row(
        &self,
        x: &Prompt,
        y: &TokenSequence,
        space: &OutputSpace,
    ) -> Result<Vec<f64>> {
        let mut row = vec![0.0; space.size()];
        let starts = self.starts(y.len())?;
        let start_weight = 1.0 / starts as f64;
        let mut scratch = y.clone();
        for start in 0..starts {
            for (context, w) in self.left_contexts(x, y, start)? {
                self.fill(
                    &mut scratch,
                    start,
                    start,
                    context,
                    start_weight * w,
                    space,
                    &mut row,
                )?;
            }
            scratch.tokens_mut()[start..start + self.span_length]
                .copy_from_slice(&y.tokens()[start..start + self.span_length]);
        }
        Ok(row)
    }

    #[allow(clippy::too_many_arguments)]
    fn fill(
        &self,
        scratch: &mut TokenSequence,
        start: usize,
        pos: usize,
        context: usize,
        mass: f64,
        space: &OutputSpace,
        row: &mut [f64],
    ) -> Result<()> {
        if pos == start + self.span_length {
            row[space.index_of(scratch)] += mass;
            return Ok(());
        }
        let probs = self.truncated_row(context)?;
        for (t, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                scratch.tokens_mut()[pos] = t as u32;
                let next = self.proposal.advance(context, t as u32);
                self.fill(scratch, start, pos + 1, next, mass * p, space, row)?;
            }
        }
        Ok(())
    }

    /// Dense kernel over the whole space: `matrix[i * n + j] = Pr[y_j = P(x, y_i)]`.
    pub fn kernel_matrix(&self, x: &Prompt, space: &OutputSpace) -> Result<Vec<f64>> {
        let n = space.size();
        let mut matrix = Vec::with_capacity(n * n);
        for i in 0..n {
            matrix.extend(self.kernel_row(x, &space.sequence(i), space)?);
        }
        Ok(matrix)
    }
}

impl PerturbationOracle for SpanPerturber {
    fn perturb(&self, x: &Prompt, y: &TokenSequence, rng: &mut RngStream) -> Result<TokenSequence> {
        SpanPerturber::perturb(self, x, y, rng)
    }
}

/// Keeps the smallest prefix of tokens (by descending probability, ties by
/// index) whose mass reaches `top_p`, then renormalizes.
pub fn top_p_truncate(probs: &[f64], top_p: f64) -> Vec<f64> {
    if top_p >= 1.0 {
        return probs.to_vec();
    }
    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut kept = vec![0.0; probs.len()];
    let mut acc = 0.0;
    for i in order {
        kept[i] = probs[i];
        acc += probs[i];
        if acc >= top_p - 1e-12 {
            break;
        }
    }
    for p in kept.iter_mut() {
        *p /= acc;
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Vocabulary;

    fn x() -> Prompt {
        Prompt::empty("x")
    }

    #[test]
    fn top_p_keeps_prefix() {
        let kept = top_p_truncate(&[0.5, 0.3, 0.15, 0.05], 0.8);
        assert_eq!(kept.len(), 4);
        assert!((kept[0] - 0.625).abs() < 1e-12);
        assert!((kept[1] - 0.375).abs() < 1e-12);
        assert_eq!(kept[2], 0.0);
        let uniform = top_p_truncate(&[1.0 / 3.0; 3], 0.95);
        assert!(uniform.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn hamming_bounded_by_span() {
        let mut rng = RngStream::new(1, "ham");
        let model = MarkovModel::random_order_one(5, 12, 1.5, &mut rng).unwrap();
        let p = SpanPerturber::new(model.clone(), 3, 0.95).unwrap();
        let mut y = model.sample(&x(), 12, &mut rng).unwrap();
        for _ in 0..10_000 {
            let z = p.perturb(&x(), &y, &mut rng).unwrap();
            assert_eq!(z.len(), y.len());
            let diff: Vec<usize> = (0..12)
                .filter(|&i| z.tokens()[i] != y.tokens()[i])
                .collect();
            assert!(diff.len() <= 3);
            if let (Some(a), Some(b)) = (diff.first(), diff.last()) {
                assert!(b - a < 3, "changes must sit inside one span");
            }
            y = z;
        }
    }

    #[test]
    fn kernel_rows_sum_to_one() {
        let mut rng = RngStream::new(2, "rows");
        let model = MarkovModel::random_order_one(2, 3, 1.0, &mut rng).unwrap();
        let p = SpanPerturber::new(model, 2, 0.9).unwrap();
        let space = OutputSpace::new(Vocabulary::new(2).unwrap(), 3, 1000).unwrap();
        for y in space.all() {
            let row = p.kernel_row(&x(), &y, &space).unwrap();
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn full_uniform_resample_is_uniform() {
        let p = SpanPerturber::new(MarkovModel::uniform(3, 1, 4).unwrap(), 4, 1.0).unwrap();
        let space = OutputSpace::new(Vocabulary::new(3).unwrap(), 4, 1000).unwrap();
        for y in space.all() {
            for v in p.kernel_row(&x(), &y, &space).unwrap() {
                assert!((v - 1.0 / 81.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kernel_matches_monte_carlo() {
        let mut rng = RngStream::new(3, "mc");
        let model = MarkovModel::random_order_one(3, 4, 1.0, &mut rng).unwrap();
        let p = SpanPerturber::new(model, 2, 0.95).unwrap();
        let space = OutputSpace::new(Vocabulary::new(3).unwrap(), 4, 1000).unwrap();
        let y = TokenSequence::new(vec![1, 0, 2, 1]);
        let row = p.kernel_row(&x(), &y, &space).unwrap();
        let n = 100_000;
        let mut counts = vec![0usize; space.size()];
        for _ in 0..n {
            counts[space.index_of(&p.perturb(&x(), &y, &mut rng).unwrap())] += 1;
        }
        for (c, &pr) in counts.iter().zip(&row) {
            if pr == 0.0 {
                assert_eq!(*c, 0);
            } else {
                let sigma = (n as f64 * pr * (1.0 - pr)).sqrt();
                assert!((*c as f64 - n as f64 * pr).abs() <= 4.0 * sigma + 1.0);
            }
        }
    }

    #[test]
    fn short_sequence_rejected() {
        let p = SpanPerturber::new(MarkovModel::uniform(3, 1, 4).unwrap(), 4, 1.0).unwrap();
        let y = TokenSequence::new(vec![0, 1]);
        assert!(p.perturb(&x(), &y, &mut RngStream::new(0, "s")).is_err());
    }
}
