//! Differentiable ranking.
//!
//! Soft ranks are the Euclidean projection of `∓scores/ε` onto the
//! permutohedron spanned by `(n, n-1, …, 1)`. After sorting, that projection
//! reduces to an L2 isotonic regression solved exactly by pool-adjacent-
//! violators, and its Jacobian is block averaging over the pooled blocks.
//! As `ε → 0` soft ranks approach hard ranks; as `ε → ∞` every rank tends to
//! `(n+1)/2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which end of the value range gets rank 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Smallest value is rank 1.
    Ascending,
    /// Largest value is rank 1.
    Descending,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftRankConfig {
    /// Regularization strength ε; larger is smoother.
    pub regularization: f64,
    pub direction: Direction,
}

impl Default for SoftRankConfig {
    fn default() -> Self {
        SoftRankConfig {
            regularization: 1.0,
            direction: Direction::Descending,
        }
    }
}

impl SoftRankConfig {
    pub fn new(regularization: f64, direction: Direction) -> Result<Self> {
        let cfg = SoftRankConfig {
            regularization,
            direction,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.regularization > 0.0) || !self.regularization.is_finite() {
            return Err(Error::Input(format!(
                "soft-rank regularization must be positive and finite, got {}",
                self.regularization
            )));
        }
        Ok(())
    }
}

/// Contiguous blocks of an L2 isotonic fit. Block `k` covers
/// `starts[k]..starts[k+1]` (the last one runs to `len`).
#[derive(Debug, Clone, PartialEq)]
pub struct IsotonicBlocks {
    starts: Vec<usize>,
    means: Vec<f64>,
    len: usize,
}

impl IsotonicBlocks {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_blocks(&self) -> usize {
        self.starts.len()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.starts.iter().enumerate().map(move |(k, &s)| {
            let e = self.starts.get(k + 1).copied().unwrap_or(self.len);
            s..e
        })
    }

    /// Jacobian of the isotonic fit applied to `v`: each block is replaced
    /// by its mean.
    pub fn average(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for r in self.ranges() {
            let m = v[r.clone()].iter().sum::<f64>() / r.len() as f64;
            out[r].fill(m);
        }
        out
    }
}

/// L2 projection of `y` onto non-increasing sequences (pool adjacent violators).
pub fn isotonic_l2(y: &[f64]) -> Result<(Vec<f64>, IsotonicBlocks)> {
    if y.is_empty() {
        return Err(Error::Input("isotonic regression of an empty vector".into()));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite isotonic input at {i}")));
    }
    // (start, count, sum)
    let mut stack: Vec<(usize, usize, f64)> = Vec::with_capacity(y.len());
    for (i, &v) in y.iter().enumerate() {
        stack.push((i, 1, v));
        while stack.len() > 1 {
            let (_, c1, s1) = stack[stack.len() - 1];
            let (_, c0, s0) = stack[stack.len() - 2];
            // violation: previous block mean below the newer one
            if s0 * c1 as f64 >= s1 * c0 as f64 {
                break;
            }
            stack.pop();
            let top = stack.last_mut().unwrap();
            top.1 += c1;
            top.2 += s1;
        }
    }
    let mut fit = vec![0.0; y.len()];
    let mut starts = Vec::with_capacity(stack.len());
    let mut means = Vec::with_capacity(stack.len());
    for &(s, c, sum) in &stack {
        let m = sum / c as f64;
        fit[s..s + c].fill(m);
        starts.push(s);
        means.push(m);
    }
    Ok((
        fit,
        IsotonicBlocks {
            starts,
            means,
            len: y.len(),
        },
    ))
}

/// State kept by [`soft_rank`] for the backward pass.
#[derive(Debug, Clone)]
pub struct SoftRankCache {
    /// `perm[j]` is the original index at sorted position `j`.
    perm: Vec<usize>,
    blocks: IsotonicBlocks,
    /// d z / d scores
    scale: f64,
}

impl SoftRankCache {
    pub fn blocks(&self) -> &IsotonicBlocks {
        &self.blocks
    }
}

pub fn soft_rank(scores: &[f64], cfg: &SoftRankConfig) -> Result<(Vec<f64>, SoftRankCache)> {
    cfg.validate()?;
    let n = scores.len();
    if n == 0 {
        return Err(Error::Input("soft rank of an empty vector".into()));
    }
    if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite score at index {i}")));
    }
    let scale = match cfg.direction {
        Direction::Descending => -1.0 / cfg.regularization,
        Direction::Ascending => 1.0 / cfg.regularization,
    };
    let z: Vec<f64> = scores.iter().map(|&s| s * scale).collect();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
    let diff: Vec<f64> = perm
        .iter()
        .enumerate()
        .map(|(j, &i)| z[i] - (n - j) as f64)
        .collect();
    let (fit, blocks) = isotonic_l2(&diff)?;
    let mut ranks = vec![0.0; n];
    for (j, &i) in perm.iter().enumerate() {
        ranks[i] = z[i] - fit[j];
    }
    Ok((ranks, SoftRankCache { perm, blocks, scale }))
}

/// Vector-Jacobian product of [`soft_rank`].
pub fn soft_rank_backward(cache: &SoftRankCache, grad_out: &[f64]) -> Result<Vec<f64>> {
    let n = cache.perm.len();
    if grad_out.len() != n {
        return Err(Error::Cache(format!(
            "soft-rank cache is for {n} items, gradient has {}",
            grad_out.len()
        )));
    }
    let sorted: Vec<f64> = cache.perm.iter().map(|&i| grad_out[i]).collect();
    let avg = cache.blocks.average(&sorted);
    let mut grad = vec![0.0; n];
    for (j, &i) in cache.perm.iter().enumerate() {
        grad[i] = cache.scale * (grad_out[i] - avg[j]);
    }
    Ok(grad)
}

/// Ranks starting at 1; tied values share the average of the ranks they span.
pub fn hard_rank(values: &[f64], direction: Direction) -> Result<Vec<f64>> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite value at index {i}")));
    }
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    match direction {
        Direction::Ascending => idx.sort_by(|&a, &b| values[a].total_cmp(&values[b])),
        Direction::Descending => idx.sort_by(|&a, &b| values[b].total_cmp(&values[a])),
    }
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    Ok(ranks)
}
