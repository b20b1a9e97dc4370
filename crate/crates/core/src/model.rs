//! The ranking model: meta-feature encoder → LSTM over fidelity steps →
//! readout → soft ranks.
//!
//! The encoder output initializes the hidden state of every LSTM layer (cell
//! states start at zero). The LSTM then consumes one performance vector per
//! observed fidelity step, and the readout maps the top layer's final hidden
//! state to one score per algorithm. With zero observed steps the readout is
//! applied to the encoder output directly.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{spearman_loss, spearman_loss_backward, RankPair};
use crate::lstm::{LstmStack, LstmState, UnrollCache};
use crate::nn::{Mlp, MlpCache, MlpSpec, ParamSet, TensorInfo};
use crate::softrank::{soft_rank, soft_rank_backward, SoftRankCache, SoftRankConfig};

/// Architecture sizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// F
    pub meta_features: usize,
    /// |A|
    pub algorithms: usize,
    /// Hidden widths of the encoder before its output layer.
    pub encoder_hidden: Vec<usize>,
    /// LSTM hidden size d; also the encoder output width and readout input width.
    pub hidden: usize,
    pub lstm_layers: usize,
}

impl ModelDims {
    /// Encoder F → 300 → 200, two LSTM layers of width 200, readout 200 → |A|.
    pub fn new(meta_features: usize, algorithms: usize) -> Self {
        ModelDims {
            meta_features,
            algorithms,
            encoder_hidden: vec![300],
            hidden: 200,
            lstm_layers: 2,
        }
    }

    pub fn encoder_spec(&self) -> Result<MlpSpec> {
        let mut dims = vec![self.meta_features];
        dims.extend(&self.encoder_hidden);
        dims.push(self.hidden);
        MlpSpec::relu_hidden(dims)
    }

    pub fn readout_spec(&self) -> Result<MlpSpec> {
        MlpSpec::relu_hidden(vec![self.hidden, self.algorithms])
    }
}

/// All learnable weights. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ImfasParams {
    pub encoder: Mlp,
    pub lstm: LstmStack,
    pub readout: Mlp,
}

impl ImfasParams {
    pub fn init(dims: &ModelDims, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Mlp::init_with_rng(&dims.encoder_spec()?, &mut rng)?;
        let lstm = LstmStack::init_with_rng(dims.algorithms, dims.hidden, dims.lstm_layers, &mut rng)?;
        let readout = Mlp::init_with_rng(&dims.readout_spec()?, &mut rng)?;
        Ok(ImfasParams { encoder, lstm, readout })
    }

    pub fn dims(&self) -> ModelDims {
        let enc = self.encoder.spec();
        ModelDims {
            meta_features: enc.layer_dims[0],
            algorithms: self.readout.output_dim(),
            encoder_hidden: enc.layer_dims[1..enc.layer_dims.len() - 1].to_vec(),
            hidden: self.lstm.hidden(),
            lstm_layers: self.lstm.num_layers(),
        }
    }

    /// Batched forward pass. `steps[t]` holds the performance vectors of
    /// fidelity step `t` for every row.
    pub fn forward_batch(
        &self,
        meta: ArrayView2<'_, f64>,
        steps: &[Array2<f64>],
    ) -> Result<(Array2<f64>, ForwardCache)> {
        let dims = self.dims();
        if meta.ncols() != dims.meta_features {
            return Err(Error::Shape(format!(
                "expected {} meta-features, got {}",
                dims.meta_features,
                meta.ncols()
            )));
        }
        let rows = meta.nrows();
        for (t, s) in steps.iter().enumerate() {
            if s.dim() != (rows, dims.algorithms) {
                return Err(Error::Shape(format!(
                    "fidelity step {t} should be ({rows}, {}), got {:?}",
                    dims.algorithms,
                    s.dim()
                )));
            }
        }
        let (encoded, enc_cache) = self.encoder.forward_batch(meta)?;
        let init = LstmState {
            h: vec![encoded.clone(); dims.lstm_layers],
            c: vec![Array2::zeros((rows, dims.hidden)); dims.lstm_layers],
        };
        let (states, lstm_cache) = self.lstm.unroll(&init, steps)?;
        let last = states.last().map_or(&encoded, |s| s.top_h());
        let (scores, readout_cache) = self.readout.forward_batch(last.view())?;
        Ok((
            scores,
            ForwardCache {
                enc: enc_cache,
                lstm: lstm_cache,
                readout: readout_cache,
                rows,
            },
        ))
    }

    /// Accumulates parameter gradients for a gradient on the batch scores.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        grad_scores: ArrayView2<'_, f64>,
        grads: &mut ImfasParams,
    ) -> Result<()> {
        let dims = self.dims();
        if grad_scores.dim() != (cache.rows, dims.algorithms) {
            return Err(Error::Cache(format!(
                "score gradient {:?} does not match cached batch ({}, {})",
                grad_scores.dim(),
                cache.rows,
                dims.algorithms
            )));
        }
        let d_last = self.readout.backward_batch(&cache.readout, grad_scores, &mut grads.readout)?;
        let d_encoded = if cache.lstm.is_empty() {
            d_last
        } else {
            let mut grad_final = LstmState::zeros(dims.lstm_layers, cache.rows, dims.hidden);
            *grad_final.h.last_mut().unwrap() = d_last;
            let back = self.lstm.unroll_backward(&cache.lstm, &grad_final, &mut grads.lstm)?;
            let mut acc = Array2::zeros((cache.rows, dims.hidden));
            for h in &back.init.h {
                acc += h;
            }
            acc
        };
        self.encoder.backward_batch(&cache.enc, d_encoded.view(), &mut grads.encoder)?;
        Ok(())
    }
}

/// Intermediate values of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    enc: MlpCache,
    lstm: UnrollCache,
    readout: MlpCache,
    rows: usize,
}

impl ForwardCache {
    /// Number of LSTM steps that were unrolled.
    pub fn steps(&self) -> usize {
        self.lstm.len()
    }
}

/// Meta-features plus the first `g` performance vectors of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialObservation {
    pub meta_features: Vec<f64>,
    /// `fidelity_seq[k][a]` is algorithm `a`'s performance at step `k`.
    pub fidelity_seq: Vec<Vec<f64>>,
}

impl PartialObservation {
    pub fn observed_steps(&self) -> usize {
        self.fidelity_seq.len()
    }

    fn batch(&self) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        let meta = Array2::from_shape_vec((1, self.meta_features.len()), self.meta_features.clone())
            .expect("row vector");
        let steps = self
            .fidelity_seq
            .iter()
            .map(|f| {
                if f.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric("non-finite performance in observation".into()));
                }
                Ok(Array2::from_shape_vec((1, f.len()), f.clone()).expect("row vector"))
            })
            .collect::<Result<_>>()?;
        Ok((meta, steps))
    }
}

/// Scores (the model's expectation of final performance) and their soft ranks.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingPrediction {
    pub scores: Vec<f64>,
    pub soft_ranks: Vec<f64>,
}

/// Caches of [`model_forward`].
#[derive(Debug, Clone)]
pub struct ModelCache {
    forward: ForwardCache,
    rank: SoftRankCache,
}

pub fn model_forward(
    params: &ImfasParams,
    obs: &PartialObservation,
    cfg: &SoftRankConfig,
) -> Result<(RankingPrediction, ModelCache)> {
    let (meta, steps) = obs.batch()?;
    let (scores, forward) = params.forward_batch(meta.view(), &steps)?;
    let scores = scores.into_raw_vec_and_offset().0;
    let (soft_ranks, rank) = soft_rank(&scores, cfg)?;
    Ok((RankingPrediction { scores, soft_ranks }, ModelCache { forward, rank }))
}

/// Parameter gradients for a gradient on the soft ranks.
pub fn model_backward(params: &ImfasParams, cache: &ModelCache, grad_ranks: &[f64]) -> Result<ImfasParams> {
    let g = soft_rank_backward(&cache.rank, grad_ranks)?;
    let g = Array2::from_shape_vec((1, g.len()), g).expect("row vector");
    let mut grads = params.zeros_like();
    params.backward_batch(&cache.forward, g.view(), &mut grads)?;
    Ok(grads)
}

/// Loss of every row of a batch and the summed parameter gradient.
///
/// `truth_ranks[r]` are the ground-truth ranks for row `r`.
pub fn batch_loss_and_grad(
    params: &ImfasParams,
    meta: ArrayView2<'_, f64>,
    steps: &[Array2<f64>],
    truth_ranks: &[Vec<f64>],
    cfg: &SoftRankConfig,
) -> Result<(Vec<f64>, ImfasParams)> {
    let (scores, cache) = params.forward_batch(meta, steps)?;
    let mut grad_scores = Array2::zeros(scores.dim());
    let mut losses = Vec::with_capacity(scores.nrows());
    for (r, truth) in truth_ranks.iter().enumerate() {
        let row = scores.row(r);
        let row = row.as_slice().expect("standard layout");
        let (ranks, rank_cache) = soft_rank(row, cfg)?;
        let pair = RankPair::new(&ranks, truth)?;
        let (loss, loss_cache) = spearman_loss(pair)?;
        let g = spearman_loss_backward(pair, &loss_cache)?;
        let g = soft_rank_backward(&rank_cache, &g)?;
        grad_scores.row_mut(r).assign(&ndarray::ArrayView1::from(&g[..]));
        losses.push(loss);
    }
    let mut grads = params.zeros_like();
    params.backward_batch(&cache, grad_scores.view(), &mut grads)?;
    Ok((losses, grads))
}

/// Forward-only counterpart of [`batch_loss_and_grad`].
pub fn batch_losses(
    params: &ImfasParams,
    meta: ArrayView2<'_, f64>,
    steps: &[Array2<f64>],
    truth_ranks: &[Vec<f64>],
    cfg: &SoftRankConfig,
) -> Result<Vec<f64>> {
    let (scores, _) = params.forward_batch(meta, steps)?;
    truth_ranks
        .iter()
        .enumerate()
        .map(|(r, truth)| {
            let row = scores.row(r);
            let (ranks, _) = soft_rank(row.as_slice().expect("standard layout"), cfg)?;
            Ok(spearman_loss(RankPair::new(&ranks, truth)?)?.0)
        })
        .collect()
}

/// Number of fidelity steps consumed at `fraction` of an `n`-step curve:
/// `floor(fraction · (n − 1))`.
pub fn steps_for_fraction(fraction: f64, n: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Input(format!("fraction must lie in [0, 1], got {fraction}")));
    }
    if n < 2 {
        return Err(Error::Input(format!("need at least 2 fidelity steps, got {n}")));
    }
    // the small slack keeps e.g. 0.3 · 10 from flooring to 2
    let g = (fraction * (n - 1) as f64 + 1e-9).floor() as usize;
    Ok(g.min(n - 1))
}

/// Predicts from the first `floor(fraction · (n−1))` columns of `curves`
/// (shape `(|A|, n)`).
pub fn predict_partial(
    params: &ImfasParams,
    meta_features: &[f64],
    curves: ArrayView2<'_, f64>,
    fraction: f64,
    cfg: &SoftRankConfig,
) -> Result<RankingPrediction> {
    let g = steps_for_fraction(fraction, curves.ncols())?;
    let obs = PartialObservation {
        meta_features: meta_features.to_vec(),
        fidelity_seq: (0..g).map(|k| curves.column(k).to_vec()).collect(),
    };
    Ok(model_forward(params, &obs, cfg)?.0)
}

impl ParamSet for ImfasParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.encoder.tensors();
        t.extend(self.lstm.tensors());
        t.extend(self.readout.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.lstm.tensors_mut());
        t.extend(self.readout.tensors_mut());
        t
    }

    fn layout(&self) -> Vec<TensorInfo> {
        let prefix = |p: &'static str, v: Vec<TensorInfo>| {
            v.into_iter().map(move |t| TensorInfo {
                name: format!("{p}.{}", t.name),
                shape: t.shape,
            })
        };
        prefix("encoder", self.encoder.layout())
            .chain(prefix("lstm", self.lstm.layout()))
            .chain(prefix("readout", self.readout.layout()))
            .collect()
    }
}

pub const CHECKPOINT_FORMAT: &str = "imfas-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    dims: ModelDims,
    tensors: Vec<CheckpointTensor>,
}

impl ImfasParams {
    /// JSON checkpoint with every tensor named and shaped. f64 values
    /// round-trip exactly.
    pub fn to_checkpoint_json(&self) -> Result<String> {
        let tensors = self
            .layout()
            .into_iter()
            .zip(self.tensors())
            .map(|(info, data)| CheckpointTensor {
                name: info.name,
                shape: info.shape,
                data: data.to_vec(),
            })
            .collect();
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            dims: self.dims(),
            tensors,
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let mut params = ImfasParams::init(&ck.dims, 0)?;
        let layout = params.layout();
        if layout.len() != ck.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                layout.len(),
                ck.tensors.len()
            )));
        }
        for ((info, dst), src) in layout.iter().zip(params.tensors_mut()).zip(&ck.tensors) {
            if info.name != src.name || info.shape != src.shape || src.data.len() != dst.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` {:?} does not match expected `{}` {:?}",
                    src.name, src.shape, info.name, info.shape
                )));
            }
            dst.copy_from_slice(&src.data);
        }
        if !params.all_finite() {
            return Err(Error::Checkpoint("checkpoint holds non-finite values".into()));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_diff_grad, max_rel_error};
    use crate::softrank::{hard_rank, Direction};
    use rand::Rng;

    fn small_dims() -> ModelDims {
        ModelDims {
            meta_features: 4,
            algorithms: 5,
            encoder_hidden: vec![6],
            hidden: 3,
            lstm_layers: 2,
        }
    }

    fn random_obs(dims: &ModelDims, g: usize, seed: u64) -> PartialObservation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PartialObservation {
            meta_features: (0..dims.meta_features).map(|_| rng.random_range(-1.0..1.0)).collect(),
            fidelity_seq: (0..g)
                .map(|_| (0..dims.algorithms).map(|_| rng.random::<f64>()).collect())
                .collect(),
        }
    }

    fn perturbed(dims: &ModelDims, seed: u64) -> ImfasParams {
        let mut p = ImfasParams::init(dims, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        for t in p.tensors_mut() {
            for v in t.iter_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
        }
        p
    }

    #[test]
    fn default_dims_follow_the_reference_architecture() {
        let p = ImfasParams::init(&ModelDims::new(8, 20), 0).unwrap();
        assert_eq!(p.encoder.spec().layer_dims, vec![8, 300, 200]);
        assert_eq!(p.lstm.num_layers(), 2);
        assert_eq!(p.lstm.in_dim(), 20);
        assert_eq!(p.lstm.hidden(), 200);
        assert_eq!(p.readout.spec().layer_dims, vec![200, 20]);
        assert_eq!(p.dims(), ModelDims::new(8, 20));
    }

    #[test]
    fn zero_steps_depend_only_on_meta_features() {
        let dims = small_dims();
        let p = perturbed(&dims, 1);
        let obs = random_obs(&dims, 0, 2);
        let cfg = SoftRankConfig::default();
        let (pred, cache) = model_forward(&p, &obs, &cfg).unwrap();
        assert_eq!(cache.forward.steps(), 0);
        // readout on the encoder output, computed by hand
        let (enc, _) = p.encoder.forward(&obs.meta_features).unwrap();
        let (want, _) = p.readout.forward(&enc).unwrap();
        assert_eq!(pred.scores, want);
        let total: f64 = pred.soft_ranks.iter().sum();
        assert!((total - 15.0).abs() < 1e-9);
    }

    #[test]
    fn identical_inputs_give_identical_predictions() {
        let dims = small_dims();
        let p = perturbed(&dims, 3);
        let a = random_obs(&dims, 3, 4);
        let b = a.clone();
        let cfg = SoftRankConfig::default();
        assert_eq!(model_forward(&p, &a, &cfg).unwrap().0, model_forward(&p, &b, &cfg).unwrap().0);
    }

    #[test]
    fn shape_errors_are_reported() {
        let dims = small_dims();
        let p = perturbed(&dims, 3);
        let mut obs = random_obs(&dims, 2, 4);
        obs.meta_features.pop();
        assert!(matches!(model_forward(&p, &obs, &SoftRankConfig::default()), Err(Error::Shape(_))));
        let mut obs = random_obs(&dims, 2, 4);
        obs.fidelity_seq[1].push(0.5);
        assert!(matches!(model_forward(&p, &obs, &SoftRankConfig::default()), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_loss_gradient_gives_zero_parameter_gradient() {
        let dims = small_dims();
        let p = perturbed(&dims, 5);
        let obs = random_obs(&dims, 3, 6);
        let (_, cache) = model_forward(&p, &obs, &SoftRankConfig::default()).unwrap();
        let g = model_backward(&p, &cache, &[0.0; 5]).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let dims = small_dims();
        let cfg = SoftRankConfig::new(1.0, Direction::Descending).unwrap();
        for seed in 0..10u64 {
            let p = perturbed(&dims, seed);
            let obs = random_obs(&dims, 3, seed + 100);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 200);
            let truth_perf: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
            let truth = hard_rank(&truth_perf, Direction::Descending).unwrap();
            let loss = |q: &ImfasParams| {
                let (pred, _) = model_forward(q, &obs, &cfg).unwrap();
                spearman_loss(RankPair::new(&pred.soft_ranks, &truth).unwrap()).unwrap().0
            };
            let (pred, cache) = model_forward(&p, &obs, &cfg).unwrap();
            let pair = RankPair::new(&pred.soft_ranks, &truth).unwrap();
            let (_, lc) = spearman_loss(pair).unwrap();
            let gl = spearman_loss_backward(pair, &lc).unwrap();
            let grads = model_backward(&p, &cache, &gl).unwrap();
            let fd = finite_diff_grad(loss, &p, 1e-6).unwrap();
            // central differences carry ~1e-10 roundoff, so tiny entries are compared absolutely
            let err = max_rel_error(&grads.to_flat(), &fd.to_flat(), 1e-5);
            assert!(err < 1e-4, "seed {seed}: rel err {err}");
            assert!(grads.encoder.l2_norm() > 0.0);
        }
    }

    #[test]
    fn batch_gradient_is_sum_of_single_gradients() {
        let dims = small_dims();
        let p = perturbed(&dims, 8);
        let cfg = SoftRankConfig::default();
        let obs: Vec<_> = (0..3).map(|i| random_obs(&dims, 2, 40 + i)).collect();
        let truths: Vec<Vec<f64>> = (0..3)
            .map(|i| {
                let mut r: Vec<f64> = (1..=5).map(f64::from).collect();
                r.rotate_left(i);
                r
            })
            .collect();
        let meta = Array2::from_shape_fn((3, 4), |(r, c)| obs[r].meta_features[c]);
        let steps: Vec<_> = (0..2)
            .map(|t| Array2::from_shape_fn((3, 5), |(r, a)| obs[r].fidelity_seq[t][a]))
            .collect();
        let (losses, grads) = batch_loss_and_grad(&p, meta.view(), &steps, &truths, &cfg).unwrap();
        let mut sum = p.zeros_like();
        for (i, o) in obs.iter().enumerate() {
            let (pred, cache) = model_forward(&p, o, &cfg).unwrap();
            let pair = RankPair::new(&pred.soft_ranks, &truths[i]).unwrap();
            let (l, lc) = spearman_loss(pair).unwrap();
            assert!((l - losses[i]).abs() < 1e-12);
            let g = model_backward(&p, &cache, &spearman_loss_backward(pair, &lc).unwrap()).unwrap();
            sum.axpy(1.0, &g);
        }
        assert!(max_rel_error(&grads.to_flat(), &sum.to_flat(), 1e-9) < 1e-9);
    }

    #[test]
    fn fraction_maps_to_floored_steps() {
        assert_eq!(steps_for_fraction(1.0, 10).unwrap(), 9);
        assert_eq!(steps_for_fraction(0.5, 10).unwrap(), 4);
        assert_eq!(steps_for_fraction(0.2, 10).unwrap(), 1);
        assert_eq!(steps_for_fraction(0.1, 10).unwrap(), 0);
        assert_eq!(steps_for_fraction(0.3, 11).unwrap(), 3);
        assert!(steps_for_fraction(1.5, 10).is_err());
        assert!(steps_for_fraction(0.5, 1).is_err());
    }

    #[test]
    fn partial_prediction_uses_only_the_prefix() {
        let dims = small_dims();
        let p = perturbed(&dims, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let curves = Array2::from_shape_simple_fn((5, 10), || rng.random::<f64>());
        let meta = [0.1, 0.2, -0.3, 0.4];
        let cfg = SoftRankConfig::default();
        let half = predict_partial(&p, &meta, curves.view(), 0.5, &cfg).unwrap();
        // changing columns at or after step g = 4 must not matter
        let mut changed = curves.clone();
        for a in 0..5 {
            for k in 4..10 {
                changed[[a, k]] = 0.0;
            }
        }
        assert_eq!(predict_partial(&p, &meta, changed.view(), 0.5, &cfg).unwrap(), half);
        assert_ne!(predict_partial(&p, &meta, changed.view(), 1.0, &cfg).unwrap(), half);
        let one_col = Array2::zeros((5, 1));
        assert!(predict_partial(&p, &meta, one_col.view(), 0.5, &cfg).is_err());
    }

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let dims = small_dims();
        let p = perturbed(&dims, 11);
        let json = p.to_checkpoint_json().unwrap();
        let q = ImfasParams::from_checkpoint_json(&json).unwrap();
        assert_eq!(p, q);
        for (a, b) in p.to_flat().iter().zip(q.to_flat()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(json.contains("\"encoder.layer0.weights\""));
        assert!(json.contains("\"lstm.layer1.w_hh\""));
    }

    #[test]
    fn checkpoint_rejects_tampered_shapes() {
        let p = perturbed(&small_dims(), 12);
        let json = p.to_checkpoint_json().unwrap().replace("\"shape\":[6,4]", "\"shape\":[4,6]");
        assert!(matches!(ImfasParams::from_checkpoint_json(&json), Err(Error::Checkpoint(_))));
    }
}
