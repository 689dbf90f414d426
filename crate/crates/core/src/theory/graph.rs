use serde::{Deserialize, Serialize};

use crate::attack::QualityOracle;
use crate::error::{Error, Result};
use crate::toy_models::{OutputSpace, SpanPerturber};
use crate::types::{Prompt, TokenSequence};

const ROW_TOLERANCE: f64 = 1e-10;

/// Read access to a dense nonnegative weight matrix.
pub trait WeightedDigraph {
    fn order(&self) -> usize;
    fn weight(&self, i: usize, j: usize) -> f64;

    fn out_weight(&self, i: usize) -> f64 {
        (0..self.order()).map(|j| self.weight(i, j)).sum()
    }
}

/// Anything that can give exact rows `Pr[P(x, y) = y']` over an output space.
pub trait KernelSource {
    fn kernel_row(&self, x: &Prompt, y: &TokenSequence, space: &OutputSpace) -> Result<Vec<f64>>;
}

impl KernelSource for SpanPerturber {
    fn kernel_row(&self, x: &Prompt, y: &TokenSequence, space: &OutputSpace) -> Result<Vec<f64>> {
        SpanPerturber::kernel_row(self, x, y, space)
    }
}

/// A kernel given as a full row-major matrix over the space's lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseKernel {
    pub n: usize,
    pub data: Vec<f64>,
}

impl KernelSource for DenseKernel {
    fn kernel_row(&self, _: &Prompt, y: &TokenSequence, space: &OutputSpace) -> Result<Vec<f64>> {
        if space.size() != self.n {
            return Err(Error::InvalidArgument(format!(
                "kernel of order {} does not match a space of {} outputs",
                self.n,
                space.size()
            )));
        }
        let i = space.index_of(y);
        Ok(self.data[i * self.n..(i + 1) * self.n].to_vec())
    }
}

/// Outputs of quality at least `q_floor` and the kernel weights among them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationGraph {
    pub vertices: Vec<TokenSequence>,
    pub qualities: Vec<f64>,
    n: usize,
    weights: Vec<f64>,
    pub quality_floor: f64,
    pub prompt_id: String,
}

impl PerturbationGraph {
    /// A graph from a bare row-major weight matrix, without output labels.
    pub fn from_weights(n: usize, weights: Vec<f64>) -> Result<Self> {
        if n == 0 || weights.len() != n * n {
            return Err(Error::InvalidArgument(format!(
                "need {n}x{n} weights, got {} entries",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(
                "weights must be finite and nonnegative".into(),
            ));
        }
        Ok(PerturbationGraph {
            vertices: Vec::new(),
            qualities: Vec::new(),
            n,
            weights,
            quality_floor: 0.0,
            prompt_id: String::new(),
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// True when every vertex's in-weight equals its out-weight.
    pub fn is_balanced(&self, tol: f64) -> bool {
        (0..self.n).all(|i| {
            let out: f64 = (0..self.n).map(|j| self.weight(i, j)).sum();
            let inn: f64 = (0..self.n).map(|j| self.weight(j, i)).sum();
            (out - inn).abs() <= tol
        })
    }

    /// `pi(i) = w(i, *) / sum w`.
    pub fn out_weight_distribution(&self) -> Vec<f64> {
        let out: Vec<f64> = (0..self.n).map(|i| self.out_weight(i)).collect();
        let total: f64 = out.iter().sum();
        out.into_iter().map(|w| w / total).collect()
    }

    pub fn transition_matrix(&self) -> Result<TransitionMatrix> {
        let mut data = self.weights.clone();
        for (i, row) in data.chunks_mut(self.n).enumerate() {
            let s: f64 = row.iter().sum();
            if s <= 0.0 {
                return Err(Error::ZeroRow(i));
            }
            row.iter_mut().for_each(|w| *w /= s);
        }
        Ok(TransitionMatrix { n: self.n, data })
    }
}

impl WeightedDigraph for PerturbationGraph {
    fn order(&self) -> usize {
        self.n
    }

    fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }
}

/// Keeps the outputs with `Q(x, y) >= q` and the kernel weights between them.
pub fn build_quality_graph<K, Q>(
    space: &OutputSpace,
    kernel: &K,
    quality: &Q,
    x: &Prompt,
    q: f64,
) -> Result<PerturbationGraph>
where
    K: KernelSource + ?Sized,
    Q: QualityOracle + ?Sized,
{
    let mut kept = Vec::new();
    let mut qualities = Vec::new();
    for i in 0..space.size() {
        let y = space.sequence(i);
        let s = quality.quality(x, &y)?.value();
        if s >= q {
            kept.push(i);
            qualities.push(s);
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyQualitySet(q));
    }
    let n = kept.len();
    let mut weights = Vec::with_capacity(n * n);
    for &i in &kept {
        let row = kernel.kernel_row(x, &space.sequence(i), space)?;
        weights.extend(kept.iter().map(|&j| row[j]));
    }
    Ok(PerturbationGraph {
        vertices: kept.iter().map(|&i| space.sequence(i)).collect(),
        qualities,
        n,
        weights,
        quality_floor: q,
        prompt_id: x.id.clone(),
    })
}

/// Row-stochastic dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    n: usize,
    data: Vec<f64>,
}

impl TransitionMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.len() != n * n {
            return Err(Error::InvalidArgument(format!(
                "need {n}x{n} entries, got {}",
                data.len()
            )));
        }
        for (i, row) in data.chunks(n).enumerate() {
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "row {i} has a negative or non-finite entry"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::InvalidArgument(format!("row {i} sums to {s}")));
            }
        }
        Ok(TransitionMatrix { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        TransitionMatrix::new(rows.len(), rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// `v^T P` for a row vector `v`.
    pub fn left_mul(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                for (o, &p) in out.iter_mut().zip(self.row(i)) {
                    *o += vi * p;
                }
            }
        }
    }

    /// `P v` for a column vector `v`.
    pub fn right_mul(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).iter().zip(v).map(|(p, x)| p * x).sum();
        }
    }
}

impl WeightedDigraph for TransitionMatrix {
    fn order(&self) -> usize {
        self.n
    }

    fn weight(&self, i: usize, j: usize) -> f64 {
        self.get(i, j)
    }
}
