//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Euclidean projection of `z` onto the permutohedron spanned by the
/// permutations of `w`, by enumerating candidate active sets.
///
/// The polytope is `{μ : Σμ = Σw, Σ_{i∈S} μ_i ≤ top_|S|(w) for every proper
/// subset S}`. For every collection of at most `n − 1` inequality
/// constraints treated as equalities, the projection onto that affine set is
/// solved from its KKT system; the closest feasible candidate is the answer.
pub fn permutohedron_projection(z: &[f64], w: &[f64]) -> Vec<f64> {
    let n = z.len();
    assert!(n <= 5, "enumeration is exponential");
    let mut w_sorted = w.to_vec();
    w_sorted.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = w.iter().sum();

    // every proper non-empty subset, as a bitmask, with its bound
    let subsets: Vec<(u32, f64)> = (1..(1u32 << n) - 1)
        .map(|mask| {
            let k = mask.count_ones() as usize;
            (mask, w_sorted[..k].iter().sum())
        })
        .collect();

    let feasible = |mu: &DVector<f64>| {
        (mu.sum() - total).abs() < 1e-9
            && subsets.iter().all(|&(mask, bound)| {
                let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| mu[i]).sum();
                s <= bound + 1e-9
            })
    };

    let zv = DVector::from_column_slice(z);
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut active: Vec<usize> = Vec::new();
    enumerate(subsets.len(), n - 1, 0, &mut active, &mut |act| {
        let rows = act.len() + 1;
        let mut a: DMatrix<f64> = DMatrix::zeros(rows, n);
        let mut b: DVector<f64> = DVector::zeros(rows);
        for i in 0..n {
            a[(0, i)] = 1.0;
        }
        b[0] = total;
        for (r, &c) in act.iter().enumerate() {
            let (mask, bound) = subsets[c];
            for i in 0..n {
                if mask >> i & 1 == 1 {
                    a[(r + 1, i)] = 1.0;
                }
            }
            b[r + 1] = bound;
        }
        let gram = &a * a.transpose();
        if gram.determinant().abs() < 1e-9 {
            return;
        }
        let Some(inv) = gram.try_inverse() else { return };
        let mu = &zv - a.transpose() * (inv * (&a * &zv - &b));
        if !feasible(&mu) {
            return;
        }
        let d = (&mu - &zv).norm_squared();
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, mu));
        }
    });
    best.expect("the polytope is non-empty").1.iter().copied().collect()
}

fn enumerate(m: usize, max_len: usize, start: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    f(cur);
    if cur.len() == max_len {
        return;
    }
    for c in start..m {
        cur.push(c);
        enumerate(m, max_len, c + 1, cur, f);
        cur.pop();
    }
}

/// Soft ranks with rank 1 for the highest score, via the brute-force projection.
pub fn soft_rank_oracle(scores: &[f64], eps: f64) -> Vec<f64> {
    let n = scores.len();
    let z: Vec<f64> = scores.iter().map(|s| -s / eps).collect();
    let w: Vec<f64> = (1..=n).rev().map(|v| v as f64).collect();
    permutohedron_projection(&z, &w)
}

/// Average-tie ranks, rank 1 for the largest value, by counting.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let greater = x.iter().filter(|&&u| u > v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            greater + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Sample Pearson correlation with the `n − 1` normalization.
pub fn textbook_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (n - 1.0);
    let sx = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let sy = (y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    cov / (sx * sy)
}

/// `1 − 6Σd² / (n(n² − 1))` for tie-free data.
pub fn closed_form_spearman(x: &[f64], y: &[f64]) -> f64 {
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

/// Successive Halving simulated as explicit elimination groups.
///
/// `curves[a][k]` is algorithm `a`'s performance at fidelity `k`. Returns
/// ranks, 1 for the best.
pub fn sh_oracle(curves: &[Vec<f64>], eta: usize) -> Vec<f64> {
    let a = curves.len();
    let n = curves[0].len();
    let by_perf = |level: usize| {
        move |x: &usize, y: &usize| curves[*y][level].total_cmp(&curves[*x][level]).then(x.cmp(y))
    };
    // groups[level] = algorithms dropped after that level's round
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut pool: Vec<usize> = (0..a).collect();
    let mut survivor_level = 0;
    for level in 0..n {
        if pool.len() <= 1 {
            break;
        }
        pool.sort_by(by_perf(level));
        survivor_level = level;
        if level == n - 1 {
            break;
        }
        let keep = pool.len().div_ceil(eta);
        groups.push((level, pool.split_off(keep)));
    }
    let mut order: Vec<usize> = Vec::with_capacity(a);
    let mut survivors = pool;
    survivors.sort_by(by_perf(survivor_level));
    order.extend(survivors);
    for (level, mut g) in groups.into_iter().rev() {
        g.sort_by(by_perf(level));
        order.extend(g);
    }
    let mut ranks = vec![0.0; a];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = (pos + 1) as f64;
    }
    ranks
}

/// Every vector of length `len` over `values`.
pub fn all_vectors(values: &[f64], len: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|v| {
                values.iter().map(move |&x| {
                    let mut w = v.clone();
                    w.push(x);
                    w
                })
            })
            .collect();
    }
    out
}

/// All permutations of `0..n`.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}
