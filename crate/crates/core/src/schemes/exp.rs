//! Exponential-minimum (distortion-free) sampling with an alignment-cost
//! permutation test.
//!
//! The key sequence is `xi[i][v] = unit_open(derive_subkey(key, "exp-xi" || i || v))`
//! for positions `i < n`. Position `i` emits `argmax_v xi[i][v]^(1 / p_i(v))`.
//! Detection scores `min_{a,b} sum_{l<k} -ln xi[b+l][y[a+l]]` over length-`k`
//! windows of the text (offset `a`) and key (offset `b`), then ranks it against
//! `resamples` fresh uniform key sequences. The resampling stream is seeded from
//! `derive_subkey(key, "exp-perm" || y)`, so detection is deterministic.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prf::{derive_subkey, unit_open, Context};
use crate::rng::RngStream;
use crate::stats::permutation_p_value;
use crate::toy_models::{sample_index, MarkovModel};
use crate::types::{DetectionResult, Prompt, SecretKey, TokenSequence};

use super::{KeyedDetector, WatermarkScheme};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpParams {
    pub key_sequence_length: usize,
    pub block_length: usize,
    pub resamples: usize,
    pub p_threshold: f64,
}

impl Default for ExpParams {
    fn default() -> Self {
        ExpParams {
            key_sequence_length: 256,
            block_length: 8,
            resamples: 5000,
            p_threshold: 0.05,
        }
    }
}

/// Per-position uniform vectors, row-major by position.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpKeySequence {
    n: usize,
    vocab: usize,
    values: Vec<f64>,
}

impl ExpKeySequence {
    pub fn from_key(key: &SecretKey, n: usize, vocab: usize) -> Self {
        let mut values = Vec::with_capacity(n * vocab);
        for i in 0..n as u32 {
            for v in 0..vocab as u32 {
                values.push(unit_open(derive_subkey(
                    key,
                    Context::tagged("exp-xi").word(i).word(v).as_bytes(),
                )));
            }
        }
        ExpKeySequence { n, vocab, values }
    }

    pub fn uniform(n: usize, vocab: usize, rng: &mut RngStream) -> Self {
        let values = (0..n * vocab)
            .map(|_| unit_open(rng.random::<u64>()))
            .collect();
        ExpKeySequence { n, vocab, values }
    }

    pub fn from_values(n: usize, vocab: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * vocab || values.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
            return Err(Error::InvalidArgument(
                "key sequence needs n * vocab values in (0, 1)".into(),
            ));
        }
        Ok(ExpKeySequence { n, vocab, values })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn get(&self, position: usize, token: u32) -> f64 {
        self.values[position * self.vocab + token as usize]
    }
}

/// Minimum over text/key window offsets of the summed `-ln xi` cost.
pub fn exp_alignment_cost(xi: &ExpKeySequence, y: &TokenSequence, k: usize) -> Result<f64> {
    let t = y.len();
    if k == 0 || k > t || k > xi.n {
        return Err(Error::InvalidArgument(format!(
            "block length {k} must lie in 1..=min({t}, {})",
            xi.n
        )));
    }
    if let Some(&bad) = y.tokens().iter().find(|&&v| v as usize >= xi.vocab) {
        return Err(Error::TokenOutOfRange {
            token: bad,
            size: xi.vocab,
        });
    }
    let n = xi.n;
    // Along each diagonal d = b - a, prefix sums of -ln xi[a + d][y[a]].
    let mut best = f64::INFINITY;
    let mut prefix = Vec::with_capacity(t + 1);
    for d in -(t as isize - 1)..n as isize {
        let a_lo = (-d).max(0) as usize;
        let a_hi = t.min((n as isize - d) as usize);
        if a_hi < a_lo + k {
            continue;
        }
        prefix.clear();
        prefix.push(0.0);
        let mut acc = 0.0;
        for a in a_lo..a_hi {
            acc += -xi.get((a as isize + d) as usize, y.tokens()[a]).ln();
            prefix.push(acc);
        }
        for start in 0..=(a_hi - a_lo - k) {
            let cost = prefix[start + k] - prefix[start];
            if cost < best {
                best = cost;
            }
        }
    }
    Ok(best)
}

#[derive(Debug, Clone)]
pub struct ExpScheme {
    pub params: ExpParams,
}

impl ExpScheme {
    pub fn new(params: ExpParams) -> Result<Self> {
        if params.resamples == 0 || params.block_length == 0 || params.key_sequence_length == 0 {
            return Err(Error::InvalidArgument(
                "resamples, block length and key sequence length must be positive".into(),
            ));
        }
        if params.block_length > params.key_sequence_length {
            return Err(Error::InvalidArgument(
                "block length cannot exceed the key sequence length".into(),
            ));
        }
        if !(params.p_threshold > 0.0 && params.p_threshold <= 1.0) {
            return Err(Error::InvalidArgument(
                "p threshold must lie in (0, 1]".into(),
            ));
        }
        Ok(ExpScheme { params })
    }

    /// p-value of `y` against an explicit list of alternative key sequences
    /// instead of fresh uniform draws.
    pub fn p_value_against(
        &self,
        key: &SecretKey,
        y: &TokenSequence,
        alternatives: &[ExpKeySequence],
    ) -> Result<f64> {
        let vocab = alternatives.first().map_or(self.vocab_for(y), |a| a.vocab);
        let xi = ExpKeySequence::from_key(key, self.params.key_sequence_length, vocab);
        let observed = exp_alignment_cost(&xi, y, self.params.block_length)?;
        let costs = alternatives
            .iter()
            .map(|alt| exp_alignment_cost(alt, y, self.params.block_length))
            .collect::<Result<Vec<f64>>>()?;
        let mut it = costs.into_iter();
        let mut dummy = RngStream::new(0, "exp-enumerated");
        Ok(permutation_p_value(
            observed,
            |_| it.next().expect("one cost per alternative"),
            alternatives.len(),
            &mut dummy,
        ))
    }

    fn vocab_for(&self, y: &TokenSequence) -> usize {
        y.tokens()
            .iter()
            .copied()
            .max()
            .map_or(2, |m| m as usize + 1)
            .max(2)
    }
}

struct ExpDetector<'a> {
    scheme: &'a ExpScheme,
    key: SecretKey,
}

impl KeyedDetector for ExpDetector<'_> {
    fn detect(&mut self, _x: &Prompt, y: &TokenSequence) -> Result<DetectionResult> {
        if y.is_empty() {
            return Err(Error::EmptySequence);
        }
        let p = &self.scheme.params;
        let vocab = self.scheme.vocab_for(y);
        let xi = ExpKeySequence::from_key(&self.key, p.key_sequence_length, vocab);
        let observed = exp_alignment_cost(&xi, y, p.block_length)?;
        let seed = derive_subkey(
            &self.key,
            {
                let mut c = Context::tagged("exp-perm").as_bytes().to_vec();
                c.extend(y.to_le_bytes());
                c
            }
            .as_slice(),
        );
        let mut rng = RngStream::new(seed, "exp-permutation");
        // Only entries at tokens present in y affect the cost; resample those.
        let mut distinct: Vec<u32> = y.tokens().to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let compact: Vec<u32> = y
            .tokens()
            .iter()
            .map(|t| distinct.binary_search(t).expect("present") as u32)
            .collect();
        let compact = TokenSequence::new(compact);
        let n = p.key_sequence_length;
        let width = distinct.len();
        let p_value = permutation_p_value(
            observed,
            |r| {
                let alt = ExpKeySequence::uniform(n, width, r);
                exp_alignment_cost(&alt, &compact, p.block_length).expect("dimensions checked")
            },
            p.resamples,
            &mut rng,
        );
        Ok(DetectionResult {
            statistic: observed,
            p_value: Some(p_value),
            decision: p_value < p.p_threshold,
        })
    }
}

impl WatermarkScheme for ExpScheme {
    fn name(&self) -> &'static str {
        "exp"
    }

    fn generate(
        &self,
        model: &MarkovModel,
        key: &SecretKey,
        x: &Prompt,
        length: usize,
        _rng: &mut RngStream,
    ) -> Result<TokenSequence> {
        let n = self.params.key_sequence_length;
        if length > n {
            return Err(Error::KeySequenceTooShort { length, n });
        }
        if length == 0 {
            return Err(Error::InvalidArgument(
                "generation length must be at least 1".into(),
            ));
        }
        let starts = model.start_contexts(x)?;
        let mut context = if starts.len() == 1 {
            starts[0].0
        } else {
            let w: Vec<f64> = starts.iter().map(|(_, w)| *w).collect();
            let u = unit_open(derive_subkey(key, b"exp-start"));
            starts[sample_index(&w, u)].0
        };
        let xi = ExpKeySequence::from_key(key, length, model.vocab().size());
        let mut tokens = Vec::with_capacity(length);
        for i in 0..length {
            let row = model.next_distribution(context)?;
            // argmax xi^(1/p) == argmax ln(xi) / p
            let mut best = (f64::NEG_INFINITY, 0u32);
            for (v, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    let score = xi.get(i, v as u32).ln() / p;
                    if score > best.0 {
                        best = (score, v as u32);
                    }
                }
            }
            tokens.push(best.1);
            context = model.advance(context, best.1);
        }
        Ok(TokenSequence::new(tokens))
    }

    fn detector<'a>(&'a self, key: &SecretKey) -> Box<dyn KeyedDetector + 'a> {
        Box::new(ExpDetector {
            scheme: self,
            key: key.clone(),
        })
    }

    fn nominal_false_positive(&self) -> Option<f64> {
        Some(self.params.p_threshold)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy_models::OutputSpace;

    fn brute_cost(xi: &ExpKeySequence, y: &TokenSequence, k: usize) -> f64 {
        let mut best = f64::INFINITY;
        for a in 0..=y.len() - k {
            for b in 0..=xi.len() - k {
                let c: f64 = (0..k).map(|l| -xi.get(b + l, y.tokens()[a + l]).ln()).sum();
                best = best.min(c);
            }
        }
        best
    }

    #[test]
    fn cost_matches_brute_force() {
        let mut rng = RngStream::new(1, "cost");
        for trial in 0..50 {
            let n = 5 + trial % 7;
            let xi = ExpKeySequence::uniform(n, 4, &mut rng);
            let t = 3 + trial % 5;
            let y = TokenSequence::new((0..t).map(|_| rng.random_range(0..4)).collect());
            for k in 1..=t.min(n) {
                let fast = exp_alignment_cost(&xi, &y, k).unwrap();
                assert!((fast - brute_cost(&xi, &y, k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn block_one_is_global_minimum() {
        let mut rng = RngStream::new(2, "k1");
        let xi = ExpKeySequence::uniform(6, 3, &mut rng);
        let y = TokenSequence::new(vec![0, 2, 1]);
        let min = (0..3)
            .flat_map(|a| (0..6).map(move |b| (a, b)))
            .map(|(a, b)| -xi.get(b, y.tokens()[a]).ln())
            .fold(f64::INFINITY, f64::min);
        assert!((exp_alignment_cost(&xi, &y, 1).unwrap() - min).abs() < 1e-12);
        assert_eq!(
            exp_alignment_cost(&xi, &y, 2).unwrap(),
            exp_alignment_cost(&xi, &y, 2).unwrap()
        );
        assert!(exp_alignment_cost(&xi, &y, 4).is_err());
    }

    #[test]
    fn generation_is_deterministic_per_key() {
        let s = ExpScheme::new(ExpParams {
            key_sequence_length: 20,
            block_length: 4,
            resamples: 50,
            p_threshold: 0.05,
        })
        .unwrap();
        let mut rng = RngStream::new(3, "g");
        let model = MarkovModel::random_order_one(5, 20, 1.0, &mut rng).unwrap();
        let k = SecretKey::random(&mut rng);
        let x = Prompt::empty("x");
        let a = s.generate(&model, &k, &x, 20, &mut rng.child("a")).unwrap();
        let b = s.generate(&model, &k, &x, 20, &mut rng.child("b")).unwrap();
        assert_eq!(a, b);
        assert!(s.generate(&model, &k, &x, 21, &mut rng).is_err());
        assert_eq!(s.detect(&k, &x, &a).unwrap(), s.detect(&k, &x, &a).unwrap());
    }

    #[test]
    fn one_hot_model_ignores_key() {
        let s = ExpScheme::new(ExpParams {
            key_sequence_length: 6,
            block_length: 2,
            resamples: 10,
            p_threshold: 0.05,
        })
        .unwrap();
        let model = MarkovModel::order_one(
            vec![1.0, 0.0, 0.0],
            vec![
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
                vec![1.0, 0.0, 0.0],
            ],
            6,
        )
        .unwrap();
        let x = Prompt::empty("x");
        let mut rng = RngStream::new(4, "oh");
        for _ in 0..20 {
            let k = SecretKey::random(&mut rng);
            assert_eq!(
                s.generate(&model, &k, &x, 6, &mut rng).unwrap().tokens(),
                &[1, 2, 0, 1, 2, 0]
            );
        }
    }

    #[test]
    fn marginal_over_keys_is_model_law() {
        let s = ExpScheme::new(ExpParams {
            key_sequence_length: 4,
            block_length: 2,
            resamples: 10,
            p_threshold: 0.05,
        })
        .unwrap();
        let mut rng = RngStream::new(5, "marg");
        let model = MarkovModel::random_order_one(3, 4, 1.0, &mut rng).unwrap();
        let x = Prompt::empty("x");
        let space = OutputSpace::new(model.vocab(), 4, 1000).unwrap();
        let n = 100_000;
        let mut counts = vec![0u64; space.size()];
        for t in 0..n {
            let k = SecretKey::random(&mut rng.trial(t));
            counts[space.index_of(&s.generate(&model, &k, &x, 4, &mut rng).unwrap())] += 1;
        }
        let probs: Vec<f64> = space
            .all()
            .iter()
            .map(|y| model.log_likelihood(&x, y, -1e300).unwrap().exp())
            .collect();
        let p = crate::stats::chi_square_gof(&counts, &probs).unwrap();
        assert!(p > 0.001, "chi-square p {p}");
    }

    #[test]
    fn generating_key_has_lower_cost() {
        let s = ExpScheme::new(ExpParams {
            key_sequence_length: 24,
            block_length: 6,
            resamples: 10,
            p_threshold: 0.05,
        })
        .unwrap();
        let mut rng = RngStream::new(6, "lower");
        let model = MarkovModel::random_order_one(8, 24, 1.0, &mut rng).unwrap();
        let x = Prompt::empty("x");
        let mut diffs = Vec::new();
        for t in 0..1000 {
            let mut r = rng.trial(t);
            let k = SecretKey::random(&mut r);
            let other = SecretKey::random(&mut r);
            let y = s.generate(&model, &k, &x, 24, &mut r).unwrap();
            let own = exp_alignment_cost(&ExpKeySequence::from_key(&k, 24, 8), &y, 6).unwrap();
            let alt = exp_alignment_cost(&ExpKeySequence::from_key(&other, 24, 8), &y, 6).unwrap();
            diffs.push(alt - own);
        }
        let mean = diffs.iter().sum::<f64>() / 1000.0;
        let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / 999.0).sqrt();
        // One-sided p < 1e-4 needs a t statistic above ~3.72.
        assert!(mean / (sd / (1000f64).sqrt()) > 3.72, "mean gap {mean}");
    }

    #[test]
    fn floor_p_value_when_observed_is_smallest() {
        let s = ExpScheme::new(ExpParams {
            key_sequence_length: 8,
            block_length: 2,
            resamples: 5000,
            p_threshold: 0.05,
        })
        .unwrap();
        let k = SecretKey::from_bytes([1; 32]);
        let xi = ExpKeySequence::from_key(&k, 8, 3);
        // Pick a text that follows the key's largest entries: cost near 0.
        let y = TokenSequence::new(
            (0..8)
                .map(|i| {
                    (0..3u32)
                        .max_by(|&a, &b| xi.get(i, a).total_cmp(&xi.get(i, b)))
                        .unwrap()
                })
                .collect(),
        );
        let high = vec![0.999_999; 8 * 3];
        let worse: Vec<ExpKeySequence> = (0..5000)
            .map(|_| ExpKeySequence::from_values(8, 3, vec![1e-6; 24]).unwrap())
            .collect();
        let p = s.p_value_against(&k, &y, &worse).unwrap();
        assert_eq!(p, 1.0 / 5001.0);
        let better = vec![ExpKeySequence::from_values(8, 3, high).unwrap()];
        assert_eq!(s.p_value_against(&k, &y, &better).unwrap(), 1.0);
    }
}
