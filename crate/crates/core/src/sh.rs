//! Successive Halving turned into an absolute ranking.
//!
//! Round `r` looks at fidelity column `r` and keeps the best
//! `ceil(survivors / η)` algorithms. The round at which an algorithm drops
//! out gives a tied ordinal ranking (later is better); ties inside a round are
//! broken by the performance observed in that round, then by algorithm index.
//! The procedure stops once one algorithm is left or the columns run out, so
//! it never looks past the last round it executed.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::data::MetaDataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::loss::spearman_eval;
use crate::stats::MeanSd;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShConfig {
    /// Elimination factor; higher performance is better.
    pub eta: usize,
}

impl Default for ShConfig {
    fn default() -> Self {
        ShConfig { eta: 2 }
    }
}

impl ShConfig {
    pub fn new(eta: usize) -> Result<Self> {
        if eta < 2 {
            return Err(Error::Input(format!("eta must be at least 2, got {eta}")));
        }
        Ok(ShConfig { eta })
    }

    /// Human-readable schedule, for reports.
    pub fn describe(&self) -> String {
        format!(
            "successive halving, eta={}, one fidelity column per round starting at the first, keep ceil(survivors/eta)",
            self.eta
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShOutcome {
    /// Fidelity column of the last round each algorithm took part in.
    pub level: Vec<usize>,
    /// Whether the algorithm was still in the race when it stopped.
    pub survived: Vec<bool>,
    /// Number of fidelity columns read.
    pub columns_read: usize,
    /// 1 is best. A strict total order.
    pub ranking: Vec<f64>,
}

impl ShOutcome {
    /// `(algorithm, performance at the last visited column)` for survivors.
    pub fn survivor_performance(&self, curves: ArrayView2<'_, f64>) -> Vec<(usize, f64)> {
        (0..self.level.len())
            .filter(|&a| self.survived[a])
            .map(|a| (a, curves[[a, self.level[a]]]))
            .collect()
    }
}

/// Runs Successive Halving on one dataset's curves, shape `(|A|, n)`.
pub fn sh_rank(curves: ArrayView2<'_, f64>, cfg: &ShConfig) -> Result<ShOutcome> {
    let (a, n) = curves.dim();
    if a == 0 || n == 0 {
        return Err(Error::Input(format!("empty curve matrix ({a} x {n})")));
    }
    if cfg.eta < 2 {
        return Err(Error::Input(format!("eta must be at least 2, got {}", cfg.eta)));
    }
    let mut level = vec![0usize; a];
    let mut survived = vec![false; a];
    let mut alive: Vec<usize> = (0..a).collect();
    let mut columns_read = 0;
    let mut r = 0;
    while alive.len() > 1 && r < n {
        columns_read = r + 1;
        let perf = |i: usize| curves[[i, r]];
        if perf_has_nan(&alive, &perf) {
            return Err(Error::Numeric(format!("non-finite performance in column {r}")));
        }
        alive.sort_by(|&x, &y| perf(y).total_cmp(&perf(x)).then(x.cmp(&y)));
        for &i in &alive {
            level[i] = r;
        }
        if r + 1 == n {
            break;
        }
        let keep = alive.len().div_ceil(cfg.eta);
        alive.truncate(keep);
        r += 1;
    }
    for &i in &alive {
        survived[i] = true;
    }

    let mut order: Vec<usize> = (0..a).collect();
    order.sort_by(|&x, &y| {
        level[y]
            .cmp(&level[x])
            .then(survived[y].cmp(&survived[x]))
            .then(curves[[y, level[y]]].total_cmp(&curves[[x, level[x]]]))
            .then(x.cmp(&y))
    });
    let mut ranking = vec![0.0; a];
    for (pos, &i) in order.iter().enumerate() {
        ranking[i] = (pos + 1) as f64;
    }
    Ok(ShOutcome {
        level,
        survived,
        columns_read,
        ranking,
    })
}

fn perf_has_nan(alive: &[usize], perf: &impl Fn(usize) -> f64) -> bool {
    alive.iter().any(|&i| !perf(i).is_finite())
}

/// Spearman of the SH ranking against final-fidelity ground truth, per test dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShReport {
    pub per_dataset: Vec<DatasetScore>,
    pub summary: MeanSd,
    /// Datasets whose final performances are all tied.
    pub excluded: Vec<String>,
    pub schedule: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScore {
    pub dataset_id: String,
    pub spearman: f64,
}

pub fn sh_eval(ds_test: &MetaDataset, cfg: &ShConfig) -> Result<ShReport> {
    sh_eval_with(ds_test, cfg, Exec::default())
}

pub fn sh_eval_with(ds_test: &MetaDataset, cfg: &ShConfig, exec: Exec) -> Result<ShReport> {
    if ds_test.num_datasets() == 0 {
        return Err(Error::Report("empty test set".into()));
    }
    let idx: Vec<usize> = (0..ds_test.num_datasets()).collect();
    let scores = exec.try_map(&idx, |&d| -> Result<Option<f64>> {
        if ds_test.has_degenerate_truth(d) {
            return Ok(None);
        }
        let out = sh_rank(ds_test.curves(d), cfg)?;
        let merit: Vec<f64> = out.ranking.iter().map(|r| -r).collect();
        match spearman_eval(&merit, &ds_test.final_performance(d)) {
            Ok(rho) => Ok(Some(rho)),
            Err(Error::UndefinedCorrelation) => Ok(None),
            Err(e) => Err(e),
        }
    })?;
    let mut per_dataset = Vec::new();
    let mut excluded = Vec::new();
    for (d, s) in scores.into_iter().enumerate() {
        match s {
            Some(rho) => per_dataset.push(DatasetScore {
                dataset_id: ds_test.dataset_ids[d].clone(),
                spearman: rho,
            }),
            None => excluded.push(ds_test.dataset_ids[d].clone()),
        }
    }
    if per_dataset.is_empty() {
        return Err(Error::Report("every test dataset has a degenerate ground truth".into()));
    }
    let vals: Vec<f64> = per_dataset.iter().map(|s| s.spearman).collect();
    Ok(ShReport {
        per_dataset,
        summary: MeanSd::of(&vals),
        excluded,
        schedule: cfg.describe(),
    })
}
