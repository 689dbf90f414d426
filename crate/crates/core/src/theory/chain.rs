use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::graph::{PerturbationGraph, TransitionMatrix, WeightedDigraph};
use crate::error::{Error, Result};

pub const DEFAULT_EIGEN_CAP: usize = 2000;
const STATIONARY_TOLERANCE: f64 = 1e-12;
const STATIONARY_MAX_ITER: usize = 1_000_000;
const SCHUR_TOLERANCES: [f64; 2] = [1e-14, 1e-12];
const SCHUR_ITER_PER_STATE: usize = 1000;
const MIXING_MAX_STEPS: usize = 1_000_000;

fn reach<G: WeightedDigraph + ?Sized>(g: &G, from: usize, reverse: bool) -> Vec<bool> {
    let n = g.order();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([from]);
    seen[from] = true;
    while let Some(u) = queue.pop_front() {
        for (v, s) in seen.iter_mut().enumerate() {
            let w = if reverse {
                g.weight(v, u)
            } else {
                g.weight(u, v)
            };
            if w > 0.0 && !*s {
                *s = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

/// Strong connectivity of the positive-weight digraph.
pub fn is_irreducible<G: WeightedDigraph + ?Sized>(g: &G) -> bool {
    g.order() > 0 && reach(g, 0, false).iter().all(|&s| s) && reach(g, 0, true).iter().all(|&s| s)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Period of an irreducible chain: gcd of `level(u) + 1 - level(v)` over all
/// edges, with BFS levels from vertex 0.
pub fn period<G: WeightedDigraph + ?Sized>(g: &G) -> Result<usize> {
    if !is_irreducible(g) {
        return Err(Error::Reducible);
    }
    let n = g.order();
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if g.weight(u, v) > 0.0 && level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut d = 0;
    for u in 0..n {
        for v in 0..n {
            if g.weight(u, v) > 0.0 {
                d = gcd(d, (level[u] + 1).abs_diff(level[v]));
            }
        }
    }
    Ok(d)
}

pub fn is_aperiodic<G: WeightedDigraph + ?Sized>(g: &G) -> Result<bool> {
    Ok(period(g)? == 1)
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Fixed point of `pi^T P = pi^T` by power iteration from the uniform vector.
pub fn stationary_distribution(p: &TransitionMatrix) -> Result<Vec<f64>> {
    let n = p.n();
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..STATIONARY_MAX_ITER {
        p.left_mul(&pi, &mut next);
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= s);
        let r = l1(&pi, &next);
        std::mem::swap(&mut pi, &mut next);
        if r <= STATIONARY_TOLERANCE {
            return Ok(pi);
        }
    }
    Err(Error::NoConvergence {
        what: "stationary distribution",
        iterations: STATIONARY_MAX_ITER,
    })
}

/// Second-largest eigenvalue modulus of `P`: the spectral radius of the
/// deflated matrix `P - 1 pi^T`, read off a real Schur decomposition.
pub fn spectral_gap(p: &TransitionMatrix, pi: &[f64], cap: usize) -> Result<f64> {
    let n = p.n();
    if n > cap {
        return Err(Error::EigenCap { n, cap });
    }
    if pi.len() != n {
        return Err(Error::InvalidArgument(format!(
            "pi has {} entries for {n} states",
            pi.len()
        )));
    }
    if n == 1 {
        return Ok(0.0);
    }
    let b = nalgebra::DMatrix::from_fn(n, n, |i, j| p.get(i, j) - pi[j]);
    // Machine epsilon can stall the QR sweeps on the many (near-)zero
    // eigenvalues of the deflated matrix; a slightly looser test converges.
    let max_iter = SCHUR_ITER_PER_STATE * n;
    let schur = SCHUR_TOLERANCES
        .iter()
        .find_map(|&eps| nalgebra::linalg::Schur::try_new(b.clone(), eps, max_iter))
        .ok_or(Error::NoConvergence {
            what: "spectral gap",
            iterations: max_iter,
        })?;
    let radius = schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    Ok(radius.min(1.0))
}

/// `ln(1 / (pi_min eps)) / (1 - g)`, the mixing bound with unit constant.
pub fn mixing_time_bound(g: f64, pi_min: f64, eps_dist: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&g) {
        return Err(Error::InvalidArgument(format!(
            "gap parameter g = {g} must lie in [0, 1)"
        )));
    }
    if !(pi_min > 0.0 && pi_min <= 1.0 && eps_dist > 0.0 && eps_dist <= 1.0) {
        return Err(Error::InvalidArgument(
            "pi_min and eps_dist must lie in (0, 1]".into(),
        ));
    }
    Ok((1.0 / (pi_min * eps_dist)).ln() / (1.0 - g))
}

fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * l1(a, b)
}

/// Smallest `t` with `max_i TV(e_i^T P^t, pi) <= eps_dist`.
pub fn empirical_mixing_time(p: &TransitionMatrix, pi: &[f64], eps_dist: f64) -> Result<usize> {
    let n = p.n();
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            e
        })
        .collect();
    let mut scratch = vec![0.0; n];
    for t in 0..=MIXING_MAX_STEPS {
        if rows.iter().all(|r| tv(r, pi) <= eps_dist) {
            return Ok(t);
        }
        for r in rows.iter_mut() {
            p.left_mul(r, &mut scratch);
            r.copy_from_slice(&scratch);
        }
    }
    Err(Error::NoConvergence {
        what: "mixing time",
        iterations: MIXING_MAX_STEPS,
    })
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik != 0.0 {
                for j in 0..n {
                    c[i * n + j] += aik * b[k * n + j];
                }
            }
        }
    }
    c
}

/// `P^t` by repeated squaring.
fn power(p: &TransitionMatrix, mut t: usize) -> Vec<f64> {
    let n = p.n();
    let mut result: Vec<f64> = (0..n * n)
        .map(|k| if k / n == k % n { 1.0 } else { 0.0 })
        .collect();
    let mut base = p.data().to_vec();
    while t > 0 {
        if t & 1 == 1 {
            result = matmul(&result, &base, n);
        }
        t >>= 1;
        if t > 0 {
            base = matmul(&base, &base, n);
        }
    }
    result
}

/// `max_i TV(e_i^T P^t, pi)`, computed from `P^t` by repeated squaring.
pub fn max_tv_distance(p: &TransitionMatrix, pi: &[f64], t: usize) -> f64 {
    let n = p.n();
    power(p, t).chunks(n).map(|r| tv(r, pi)).fold(0.0, f64::max)
}

/// Row `start` of `P^t`.
pub fn step_distribution(p: &TransitionMatrix, start: usize, t: usize) -> Vec<f64> {
    let n = p.n();
    power(p, t)[start * n..(start + 1) * n].to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub n: usize,
    pub irreducible: bool,
    pub aperiodic: bool,
    pub eps_dist: f64,
    pub stationary: Option<Vec<f64>>,
    pub residual: Option<f64>,
    pub gap: Option<f64>,
    pub pi_min: Option<f64>,
    pub mixing_bound: Option<f64>,
    pub empirical_mixing: Option<usize>,
}

impl SpectralReport {
    /// Full analysis; the numeric fields stay empty when the chain is not
    /// irreducible and aperiodic.
    pub fn analyze(graph: &PerturbationGraph, eps_dist: f64, eigen_cap: usize) -> Result<Self> {
        let mut report = SpectralReport {
            n: graph.order(),
            irreducible: is_irreducible(graph),
            aperiodic: false,
            eps_dist,
            stationary: None,
            residual: None,
            gap: None,
            pi_min: None,
            mixing_bound: None,
            empirical_mixing: None,
        };
        if !report.irreducible {
            return Ok(report);
        }
        report.aperiodic = is_aperiodic(graph)?;
        if !report.aperiodic {
            return Ok(report);
        }
        let p = graph.transition_matrix()?;
        let pi = stationary_distribution(&p)?;
        let mut moved = vec![0.0; pi.len()];
        p.left_mul(&pi, &mut moved);
        let gap = spectral_gap(&p, &pi, eigen_cap)?;
        let pi_min = pi.iter().copied().fold(f64::INFINITY, f64::min);
        report.residual = Some(l1(&moved, &pi));
        report.mixing_bound = Some(mixing_time_bound(gap, pi_min, eps_dist)?);
        report.empirical_mixing = Some(empirical_mixing_time(&p, &pi, eps_dist)?);
        report.gap = Some(gap);
        report.pi_min = Some(pi_min);
        report.stationary = Some(pi);
        Ok(report)
    }

    /// The larger of the bound (rounded up) and the measured mixing time.
    pub fn mixing_steps(&self) -> Option<usize> {
        match (self.mixing_bound, self.empirical_mixing) {
            (Some(b), Some(e)) => Some((b.ceil() as usize).max(e)),
            _ => None,
        }
    }
}
