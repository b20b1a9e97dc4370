//! Rank-correlation loss and evaluation metric.
//!
//! The training loss is `1 − ρ`, with `ρ` the Pearson correlation between
//! predicted (soft) ranks and ground-truth (hard) ranks. Evaluation uses
//! Spearman's ρ on average-tie hard ranks.

use crate::error::{Error, Result};
use crate::softrank::{hard_rank, Direction};

/// Below this standard deviation predicted ranks count as collapsed.
pub const PREDICTED_SD_FLOOR: f64 = 1e-12;

/// Predicted ranks paired with ground-truth ranks for one dataset.
#[derive(Debug, Clone, Copy)]
pub struct RankPair<'a> {
    pub predicted: &'a [f64],
    pub truth: &'a [f64],
}

impl<'a> RankPair<'a> {
    pub fn new(predicted: &'a [f64], truth: &'a [f64]) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::Shape(format!(
                "rank vectors differ in length: {} vs {}",
                predicted.len(),
                truth.len()
            )));
        }
        if predicted.len() < 2 {
            return Err(Error::Input("rank correlation needs at least two items".into()));
        }
        Ok(RankPair { predicted, truth })
    }
}

#[derive(Debug, Clone)]
pub struct LossCache {
    unit_pred: Vec<f64>,
    unit_truth: Vec<f64>,
    pred_norm: f64,
    rho: f64,
}

impl LossCache {
    pub fn correlation(&self) -> f64 {
        self.rho
    }
}

fn centered(v: &[f64]) -> (Vec<f64>, f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let c: Vec<f64> = v.iter().map(|x| x - mean).collect();
    let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    (c, norm)
}

/// `1 − Cov(r_p, r_g) / (σ_p σ_g)`.
pub fn spearman_loss(pair: RankPair<'_>) -> Result<(f64, LossCache)> {
    let n = pair.predicted.len() as f64;
    let (a, na) = centered(pair.predicted);
    let (b, nb) = centered(pair.truth);
    if !na.is_finite() || !nb.is_finite() {
        return Err(Error::Numeric("non-finite ranks".into()));
    }
    if nb == 0.0 {
        return Err(Error::Input("ground-truth ranks have zero variance".into()));
    }
    let sd = na / n.sqrt();
    if sd < PREDICTED_SD_FLOOR {
        return Err(Error::DegeneratePrediction { sd });
    }
    let unit_pred: Vec<f64> = a.iter().map(|x| x / na).collect();
    let unit_truth: Vec<f64> = b.iter().map(|x| x / nb).collect();
    let rho = cosine(&a, &b);
    Ok((
        1.0 - rho,
        LossCache {
            unit_pred,
            unit_truth,
            pred_norm: na,
            rho,
        },
    ))
}

/// Gradient of [`spearman_loss`] with respect to the predicted ranks.
pub fn spearman_loss_backward(pair: RankPair<'_>, cache: &LossCache) -> Result<Vec<f64>> {
    if pair.predicted.len() != cache.unit_pred.len() {
        return Err(Error::Cache(format!(
            "loss cache is for {} items, pair has {}",
            cache.unit_pred.len(),
            pair.predicted.len()
        )));
    }
    // dρ/da = (b̂ − ρ â) / ‖a‖, already orthogonal to the all-ones direction
    Ok(cache
        .unit_pred
        .iter()
        .zip(&cache.unit_truth)
        .map(|(a, b)| -(b - cache.rho * a) / cache.pred_norm)
        .collect())
}

/// Pearson correlation; `UndefinedCorrelation` if either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("lengths differ: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Input("correlation needs at least two items".into()));
    }
    let (a, na) = centered(x);
    let (b, nb) = centered(y);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok(cosine(&a, &b))
}

/// `a·b / sqrt(|a|²|b|²)`; a single square root makes `cosine(a, a)` exactly 1.
fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
    let saa: f64 = a.iter().map(|x| x * x).sum();
    let sbb: f64 = b.iter().map(|x| x * x).sum();
    (dot / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman's ρ: Pearson correlation of average-tie ranks.
pub fn spearman_eval(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("lengths differ: {} vs {}", x.len(), y.len())));
    }
    let rx = hard_rank(x, Direction::Descending)?;
    let ry = hard_rank(y, Direction::Descending)?;
    pearson(&rx, &ry)
}
