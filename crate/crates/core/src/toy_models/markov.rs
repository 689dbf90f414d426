use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::types::{Prompt, TokenSequence, Vocabulary};

pub const ROW_TOLERANCE: f64 = 1e-12;

/// An order-`k` Markov chain over a dense vocabulary.
///
/// Contexts are the `k` most recent tokens, oldest first, indexed in base
/// `vocab` with the oldest token most significant. A row may be absent for
/// a context that the initial distribution never reaches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovModel {
    vocab: Vocabulary,
    order: usize,
    length: usize,
    initial: Vec<f64>,
    rows: Vec<Option<Vec<f64>>>,
}

impl MarkovModel {
    pub fn new(
        vocab: Vocabulary,
        order: usize,
        length: usize,
        initial: Vec<f64>,
        rows: Vec<Option<Vec<f64>>>,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::MalformedModel("order must be at least 1".into()));
        }
        if length == 0 {
            return Err(Error::MalformedModel(
                "generation length must be at least 1".into(),
            ));
        }
        let contexts = vocab
            .size()
            .checked_pow(order as u32)
            .filter(|&c| c <= 1 << 24)
            .ok_or_else(|| Error::MalformedModel("too many contexts".into()))?;
        if initial.len() != contexts || rows.len() != contexts {
            return Err(Error::MalformedModel(format!(
                "expected {contexts} contexts, got {} initial weights and {} rows",
                initial.len(),
                rows.len()
            )));
        }
        check_distribution(&initial, "initial distribution")?;
        let model = MarkovModel {
            vocab,
            order,
            length,
            initial,
            rows,
        };
        for (c, row) in model.rows.iter().enumerate() {
            if let Some(row) = row {
                if row.len() != vocab.size() {
                    return Err(Error::MalformedModel(format!(
                        "row for context {:?} has {} entries",
                        model.context_tokens(c),
                        row.len()
                    )));
                }
                check_distribution(row, "transition row")?;
            }
        }
        model.check_reachable()?;
        Ok(model)
    }

    /// Order-1 (or higher) chain with identical rows equal to `probs` and the same
    /// initial law over contexts' last token.
    pub fn iid(probs: &[f64], order: usize, length: usize) -> Result<Self> {
        let vocab = Vocabulary::new(probs.len())?;
        let contexts = vocab.size().pow(order as u32);
        let initial = (0..contexts)
            .map(|c| {
                let mut w = 1.0;
                let mut rest = c;
                for _ in 0..order {
                    w *= probs[rest % vocab.size()];
                    rest /= vocab.size();
                }
                w
            })
            .collect();
        let rows = vec![Some(probs.to_vec()); contexts];
        MarkovModel::new(vocab, order, length, initial, rows)
    }

    pub fn uniform(vocab_size: usize, order: usize, length: usize) -> Result<Self> {
        MarkovModel::iid(&vec![1.0 / vocab_size as f64; vocab_size], order, length)
    }

    /// Order-1 chain where row `c` is given by `rows[c]` and the start context
    /// is drawn from `initial`.
    pub fn order_one(initial: Vec<f64>, rows: Vec<Vec<f64>>, length: usize) -> Result<Self> {
        let vocab = Vocabulary::new(initial.len())?;
        MarkovModel::new(
            vocab,
            1,
            length,
            initial,
            rows.into_iter().map(Some).collect(),
        )
    }

    /// Random order-1 chain: each row is a normalized vector of
    /// `u^sharpness` for iid uniform `u`. Higher sharpness lowers entropy.
    pub fn random_order_one(
        vocab_size: usize,
        length: usize,
        sharpness: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let row = |rng: &mut RngStream| {
            let raw: Vec<f64> = (0..vocab_size)
                .map(|_| rng.random::<f64>().max(1e-12).powf(sharpness))
                .collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|w| w / total).collect::<Vec<f64>>()
        };
        let initial = vec![1.0 / vocab_size as f64; vocab_size];
        let rows = (0..vocab_size).map(|_| row(rng)).collect();
        MarkovModel::order_one(initial, rows, length)
    }

    pub fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn with_length(mut self, length: usize) -> Self {
        self.length = length.max(1);
        self
    }

    pub fn contexts(&self) -> usize {
        self.rows.len()
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn rows(&self) -> &[Option<Vec<f64>>] {
        &self.rows
    }

    pub fn context_tokens(&self, mut index: usize) -> Vec<u32> {
        let v = self.vocab.size();
        let mut tokens = vec![0u32; self.order];
        for slot in tokens.iter_mut().rev() {
            *slot = (index % v) as u32;
            index /= v;
        }
        tokens
    }

    pub fn context_index(&self, tokens: &[u32]) -> usize {
        debug_assert_eq!(tokens.len(), self.order);
        tokens
            .iter()
            .fold(0usize, |acc, &t| acc * self.vocab.size() + t as usize)
    }

    /// Context after emitting `token` from context `index`.
    pub fn advance(&self, index: usize, token: u32) -> usize {
        (index * self.vocab.size() + token as usize) % self.contexts()
    }

    pub fn next_distribution(&self, context: usize) -> Result<&[f64]> {
        self.rows[context]
            .as_deref()
            .ok_or_else(|| Error::MissingRow(self.context_tokens(context)))
    }

    /// Start contexts consistent with the prompt, with their weights.
    ///
    /// A prompt of at least `order` tokens pins the context to its tail. A
    /// shorter prompt conditions the initial distribution on its trailing tokens.
    pub fn start_contexts(&self, prompt: &Prompt) -> Result<Vec<(usize, f64)>> {
        self.vocab.check(&prompt.tokens)?;
        let p = &prompt.tokens;
        if p.len() >= self.order {
            return Ok(vec![(self.context_index(&p[p.len() - self.order..]), 1.0)]);
        }
        let mut out: Vec<(usize, f64)> = self
            .initial
            .iter()
            .enumerate()
            .filter(|(c, &w)| w > 0.0 && self.context_tokens(*c).ends_with(p))
            .map(|(c, &w)| (c, w))
            .collect();
        let total: f64 = out.iter().map(|(_, w)| w).sum();
        if out.is_empty() || total <= 0.0 {
            return Err(Error::MalformedModel(format!(
                "initial distribution has no context ending in prompt {:?}",
                p
            )));
        }
        for (_, w) in out.iter_mut() {
            *w /= total;
        }
        Ok(out)
    }

    pub fn sample_start(&self, prompt: &Prompt, rng: &mut RngStream) -> Result<usize> {
        let starts = self.start_contexts(prompt)?;
        if starts.len() == 1 {
            return Ok(starts[0].0);
        }
        let weights: Vec<f64> = starts.iter().map(|(_, w)| *w).collect();
        Ok(starts[sample_index(&weights, rng.random::<f64>())].0)
    }

    /// Draws `length` tokens from the chain's law given the prompt.
    pub fn sample(
        &self,
        prompt: &Prompt,
        length: usize,
        rng: &mut RngStream,
    ) -> Result<TokenSequence> {
        if length == 0 {
            return Err(Error::InvalidArgument(
                "sample length must be at least 1".into(),
            ));
        }
        let mut context = self.sample_start(prompt, rng)?;
        let mut tokens = Vec::with_capacity(length);
        for _ in 0..length {
            let row = self.next_distribution(context)?;
            let token = sample_index(row, rng.random::<f64>()) as u32;
            tokens.push(token);
            context = self.advance(context, token);
        }
        Ok(TokenSequence::new(tokens))
    }

    /// Log-likelihood of `y` with each per-token log-probability clamped at
    /// `floor`; start contexts are marginalized.
    pub fn log_likelihood(&self, prompt: &Prompt, y: &TokenSequence, floor: f64) -> Result<f64> {
        if y.is_empty() {
            return Err(Error::EmptySequence);
        }
        self.vocab.check(y.tokens())?;
        let starts = self.start_contexts(prompt)?;
        let per_start: Vec<(f64, f64)> = starts
            .iter()
            .map(|&(c, w)| (w.ln(), self.path_log_prob(c, y.tokens(), floor)))
            .collect();
        Ok(log_sum_exp(per_start.iter().map(|(lw, lp)| lw + lp)))
    }

    fn path_log_prob(&self, mut context: usize, tokens: &[u32], floor: f64) -> f64 {
        let mut total = 0.0;
        for &t in tokens {
            let lp = match &self.rows[context] {
                Some(row) if row[t as usize] > 0.0 => row[t as usize].ln().max(floor),
                _ => floor,
            };
            total += lp;
            context = self.advance(context, t);
        }
        total
    }

    fn check_reachable(&self) -> Result<()> {
        let n = self.contexts();
        let mut seen = vec![false; n];
        let mut stack: Vec<usize> = (0..n).filter(|&c| self.initial[c] > 0.0).collect();
        for &c in &stack {
            seen[c] = true;
        }
        while let Some(c) = stack.pop() {
            let row = self.rows[c]
                .as_ref()
                .ok_or_else(|| Error::MissingRow(self.context_tokens(c)))?;
            for (t, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    let next = self.advance(c, t as u32);
                    if !seen[next] {
                        seen[next] = true;
                        stack.push(next);
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::MalformedModel(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > ROW_TOLERANCE {
        return Err(Error::MalformedModel(format!(
            "{what} sums to {total}, not 1"
        )));
    }
    Ok(())
}

/// Inverse-CDF draw from unnormalized nonnegative weights with `u` in [0, 1).
pub fn sample_index(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if target < acc {
                return i;
            }
        }
    }
    last_positive
}

pub fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy_models::enumerate_outputs;

    fn deterministic_chain() -> MarkovModel {
        // 0 -> 1 -> 2 -> 0, start context fixed at 2.
        MarkovModel::order_one(
            vec![0.0, 0.0, 1.0],
            vec![
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
                vec![1.0, 0.0, 0.0],
            ],
            5,
        )
        .unwrap()
    }

    #[test]
    fn deterministic_chain_is_seed_free() {
        let m = deterministic_chain();
        for seed in 0..10 {
            let mut rng = RngStream::new(seed, "det");
            let y = m.sample(&Prompt::empty("x"), 5, &mut rng).unwrap();
            assert_eq!(y.tokens(), &[0, 1, 2, 0, 1]);
            assert_eq!(
                m.log_likelihood(&Prompt::empty("x"), &y, -20.0).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn same_stream_same_sample() {
        let m = MarkovModel::uniform(4, 2, 10).unwrap();
        let a = m
            .sample(&Prompt::empty("x"), 10, &mut RngStream::new(5, "s"))
            .unwrap();
        let b = m
            .sample(&Prompt::empty("x"), 10, &mut RngStream::new(5, "s"))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_log_likelihood() {
        let m = MarkovModel::uniform(3, 1, 4).unwrap();
        let y = TokenSequence::new(vec![0, 2, 1, 1]);
        let ll = m.log_likelihood(&Prompt::empty("x"), &y, -20.0).unwrap();
        assert!((ll - 4.0 * (1.0f64 / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_step_hits_floor() {
        let m = deterministic_chain();
        let y = TokenSequence::new(vec![0, 2, 0, 1, 2]);
        let ll = m.log_likelihood(&Prompt::empty("x"), &y, -20.0).unwrap();
        assert_eq!(ll, -20.0);
        assert!(ll.is_finite());
    }

    #[test]
    fn missing_row_is_reported() {
        let v = Vocabulary::new(2).unwrap();
        // Context 1 is reachable from context 0 but has no row.
        let err = MarkovModel::new(v, 1, 3, vec![1.0, 0.0], vec![Some(vec![0.5, 0.5]), None]);
        assert_eq!(err.unwrap_err(), Error::MissingRow(vec![1]));
        // Unreachable context may omit its row.
        let ok = MarkovModel::new(v, 1, 3, vec![1.0, 0.0], vec![Some(vec![1.0, 0.0]), None]);
        assert!(ok.is_ok());
    }

    #[test]
    fn rows_must_sum_to_one() {
        let err = MarkovModel::order_one(vec![0.5, 0.5], vec![vec![0.5, 0.5], vec![0.6, 0.5]], 3);
        assert!(matches!(err, Err(Error::MalformedModel(_))));
    }

    #[test]
    fn prompt_pins_context() {
        let m = deterministic_chain();
        let y = m
            .sample(&Prompt::new("x", vec![0]), 3, &mut RngStream::new(0, "p"))
            .unwrap();
        assert_eq!(y.tokens(), &[1, 2, 0]);
        assert!(m
            .sample(&Prompt::new("x", vec![7]), 3, &mut RngStream::new(0, "p"))
            .is_err());
    }

    #[test]
    fn uniform_sample_frequencies() {
        let m = MarkovModel::uniform(3, 1, 4).unwrap();
        let space = enumerate_outputs(m.vocab(), 4, 100_000).unwrap();
        let mut counts = vec![0usize; space.len()];
        let mut rng = RngStream::new(11, "freq");
        let n = 100_000;
        for _ in 0..n {
            let y = m.sample(&Prompt::empty("x"), 4, &mut rng).unwrap();
            let idx = y.tokens().iter().fold(0usize, |a, &t| a * 3 + t as usize);
            counts[idx] += 1;
        }
        let p = 1.0 / 81.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma);
        }
    }
}
