//! Green-list schemes. A token `v` is green under a window `w` iff
//!
//! ```text
//! derive_subkey(key, tag || w as u32 LE words || v as u32 LE) & 0xffff  <  gamma * 65536
//! ```
//!
//! with tag `"kgw"` (window = the `context_width` preceding visible tokens,
//! fewer at the start) or `"unigram"` (empty window).

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prf::{derive_subkey, Context};
use crate::rng::RngStream;
use crate::stats::{normal_upper_tail, one_proportion_z};
use crate::toy_models::{sample_index, MarkovModel};
use crate::types::{DetectionResult, Prompt, SecretKey, TokenSequence};

use super::{KeyedDetector, WatermarkScheme};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GreenList(Vec<bool>);

impl GreenList {
    pub fn contains(&self, token: u32) -> bool {
        self.0[token as usize]
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|g| **g).count()
    }

    pub fn mask(&self) -> &[bool] {
        &self.0
    }
}

fn green_list(key: &SecretKey, tag: &str, window: &[u32], gamma: f64, vocab: usize) -> GreenList {
    let cut = gamma * 65536.0;
    let base = Context::tagged(tag).words(window);
    GreenList(
        (0..vocab as u32)
            .map(|v| ((derive_subkey(key, base.clone().word(v).as_bytes()) & 0xffff) as f64) < cut)
            .collect(),
    )
}

pub fn kgw_green_list(key: &SecretKey, window: &[u32], gamma: f64, vocab: usize) -> GreenList {
    green_list(key, "kgw", window, gamma, vocab)
}

pub fn unigram_green_list(key: &SecretKey, gamma: f64, vocab: usize) -> GreenList {
    green_list(key, "unigram", &[], gamma, vocab)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "gamma must lie in (0, 1), got {gamma}"
        )))
    }
}

/// Samples one token from `row` with green tokens' weights multiplied by
/// `e^delta`. An infinite delta restricts to the green support when it has mass.
fn biased_draw(row: &[f64], green: &GreenList, delta: f64, u: f64) -> usize {
    if delta == f64::INFINITY {
        let w: Vec<f64> = row
            .iter()
            .enumerate()
            .map(|(v, &p)| if green.0[v] { p } else { 0.0 })
            .collect();
        if w.iter().sum::<f64>() > 0.0 {
            return sample_index(&w, u);
        }
        return sample_index(row, u);
    }
    let boost = delta.exp();
    let w: Vec<f64> = row
        .iter()
        .enumerate()
        .map(|(v, &p)| if green.0[v] { p * boost } else { p })
        .collect();
    sample_index(&w, u)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KgwParams {
    pub gamma: f64,
    pub delta: f64,
    pub context_width: usize,
    pub z_threshold: f64,
}

impl Default for KgwParams {
    fn default() -> Self {
        KgwParams {
            gamma: 0.5,
            delta: 2.0,
            context_width: 1,
            z_threshold: 4.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KgwScheme {
    pub params: KgwParams,
}

impl KgwScheme {
    pub fn new(params: KgwParams) -> Result<Self> {
        check_gamma(params.gamma)?;
        if params.delta.is_nan() || params.delta < 0.0 {
            return Err(Error::InvalidArgument("delta must be >= 0".into()));
        }
        if params.context_width == 0 {
            return Err(Error::InvalidArgument(
                "context width must be at least 1".into(),
            ));
        }
        if params.z_threshold.is_nan() || params.z_threshold <= 0.0 {
            return Err(Error::InvalidArgument(
                "z threshold must be positive".into(),
            ));
        }
        Ok(KgwScheme { params })
    }

    fn window<'t>(&self, visible: &'t [u32], position: usize) -> &'t [u32] {
        let lo = position.saturating_sub(self.params.context_width);
        &visible[lo..position]
    }
}

/// Memoized green lists for one key.
struct GreenCache {
    key: SecretKey,
    gamma: f64,
    vocab: usize,
    lists: HashMap<Vec<u32>, GreenList>,
    tag: &'static str,
}

impl GreenCache {
    fn new(key: &SecretKey, gamma: f64, vocab: usize, tag: &'static str) -> Self {
        GreenCache {
            key: key.clone(),
            gamma,
            vocab,
            lists: HashMap::new(),
            tag,
        }
    }

    fn get(&mut self, window: &[u32]) -> &GreenList {
        if !self.lists.contains_key(window) {
            let list = green_list(&self.key, self.tag, window, self.gamma, self.vocab);
            self.lists.insert(window.to_vec(), list);
        }
        &self.lists[window]
    }
}

struct KgwDetector<'a> {
    scheme: &'a KgwScheme,
    cache: GreenCache,
}

impl KeyedDetector for KgwDetector<'_> {
    fn detect(&mut self, x: &Prompt, y: &TokenSequence) -> Result<DetectionResult> {
        if y.is_empty() {
            return Err(Error::EmptySequence);
        }
        let max_token = y
            .tokens()
            .iter()
            .chain(&x.tokens)
            .copied()
            .max()
            .unwrap_or(0) as usize;
        if max_token >= self.cache.vocab {
            // Tokens beyond the cached vocabulary widen the table.
            self.cache.vocab = max_token + 1;
            self.cache.lists.clear();
        }
        let visible: Vec<u32> = x.tokens.iter().chain(y.tokens()).copied().collect();
        let offset = x.tokens.len();
        let mut green = 0usize;
        for (i, &t) in y.tokens().iter().enumerate() {
            let window = self.scheme.window(&visible, offset + i);
            if self.cache.get(window).contains(t) {
                green += 1;
            }
        }
        let z = one_proportion_z(green, y.len(), self.scheme.params.gamma)?;
        Ok(DetectionResult {
            statistic: z,
            p_value: Some(normal_upper_tail(z)),
            decision: z > self.scheme.params.z_threshold,
        })
    }
}

impl WatermarkScheme for KgwScheme {
    fn name(&self) -> &'static str {
        "kgw"
    }

    fn generate(
        &self,
        model: &MarkovModel,
        key: &SecretKey,
        x: &Prompt,
        length: usize,
        rng: &mut RngStream,
    ) -> Result<TokenSequence> {
        if length == 0 {
            return Err(Error::InvalidArgument(
                "generation length must be at least 1".into(),
            ));
        }
        let mut cache = GreenCache::new(key, self.params.gamma, model.vocab().size(), "kgw");
        let mut context = model.sample_start(x, rng)?;
        let mut visible = x.tokens.clone();
        for _ in 0..length {
            let row = model.next_distribution(context)?;
            let window = self.window(&visible, visible.len());
            let green = cache.get(window);
            let token = biased_draw(row, green, self.params.delta, rng.random::<f64>()) as u32;
            visible.push(token);
            context = model.advance(context, token);
        }
        Ok(TokenSequence::new(visible.split_off(x.tokens.len())))
    }

    fn detector<'a>(&'a self, key: &SecretKey) -> Box<dyn KeyedDetector + 'a> {
        Box::new(KgwDetector {
            scheme: self,
            cache: GreenCache::new(key, self.params.gamma, 0, "kgw"),
        })
    }

    fn nominal_false_positive(&self) -> Option<f64> {
        Some(normal_upper_tail(self.params.z_threshold))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnigramParams {
    pub gamma: f64,
    pub delta: f64,
    pub z_threshold: f64,
}

impl Default for UnigramParams {
    fn default() -> Self {
        UnigramParams {
            gamma: 0.5,
            delta: 2.0,
            z_threshold: 6.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct UnigramScheme {
    pub params: UnigramParams,
}

impl UnigramScheme {
    pub fn new(params: UnigramParams) -> Result<Self> {
        check_gamma(params.gamma)?;
        if params.delta.is_nan() || params.delta < 0.0 {
            return Err(Error::InvalidArgument("delta must be >= 0".into()));
        }
        if params.z_threshold.is_nan() || params.z_threshold <= 0.0 {
            return Err(Error::InvalidArgument(
                "z threshold must be positive".into(),
            ));
        }
        Ok(UnigramScheme { params })
    }
}

struct UnigramDetector {
    key: SecretKey,
    gamma: f64,
    threshold: f64,
    list: Option<GreenList>,
}

impl KeyedDetector for UnigramDetector {
    fn detect(&mut self, _x: &Prompt, y: &TokenSequence) -> Result<DetectionResult> {
        if y.is_empty() {
            return Err(Error::EmptySequence);
        }
        let need = y.tokens().iter().copied().max().unwrap_or(0) as usize + 1;
        if self.list.as_ref().is_none_or(|l| l.0.len() < need) {
            self.list = Some(unigram_green_list(&self.key, self.gamma, need.max(2)));
        }
        let list = self.list.as_ref().expect("list built above");
        let green = y.tokens().iter().filter(|&&t| list.contains(t)).count();
        let z = one_proportion_z(green, y.len(), self.gamma)?;
        Ok(DetectionResult {
            statistic: z,
            p_value: Some(normal_upper_tail(z)),
            decision: z > self.threshold,
        })
    }
}

impl WatermarkScheme for UnigramScheme {
    fn name(&self) -> &'static str {
        "unigram"
    }

    fn generate(
        &self,
        model: &MarkovModel,
        key: &SecretKey,
        x: &Prompt,
        length: usize,
        rng: &mut RngStream,
    ) -> Result<TokenSequence> {
        if length == 0 {
            return Err(Error::InvalidArgument(
                "generation length must be at least 1".into(),
            ));
        }
        let green = unigram_green_list(key, self.params.gamma, model.vocab().size());
        let mut context = model.sample_start(x, rng)?;
        let mut tokens = Vec::with_capacity(length);
        for _ in 0..length {
            let row = model.next_distribution(context)?;
            let token = biased_draw(row, &green, self.params.delta, rng.random::<f64>()) as u32;
            tokens.push(token);
            context = model.advance(context, token);
        }
        Ok(TokenSequence::new(tokens))
    }

    fn detector<'a>(&'a self, key: &SecretKey) -> Box<dyn KeyedDetector + 'a> {
        Box::new(UnigramDetector {
            key: key.clone(),
            gamma: self.params.gamma,
            threshold: self.params.z_threshold,
            list: None,
        })
    }

    fn nominal_false_positive(&self) -> Option<f64> {
        Some(normal_upper_tail(self.params.z_threshold))
    }
}
