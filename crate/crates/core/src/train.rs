//! Meta-training loop and the multi-seed experiment runner.

use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{normalize_meta_features, split, MetaDataset};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{batch_loss_and_grad, batch_losses, ImfasParams, ModelDims};
use crate::nn::ParamSet;
use crate::report::{
    evaluate_model_with, mean_of, DatasetCounts, EvalReport, Exclusion, SeedResult, ShSeedResult,
};
use crate::sh::{sh_eval_with, ShConfig};
use crate::softrank::{hard_rank, Direction, SoftRankConfig};

/// Flat training configuration. Every key is optional in TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub softrank_regularization: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Global gradient-norm threshold; 0 disables clipping.
    pub grad_clip_norm: f64,
    pub hidden: usize,
    pub encoder_hidden: Vec<usize>,
    pub lstm_layers: usize,
    /// Datasets per gradient work unit. Fixed so the summation order, and
    /// thus every bit of the result, is independent of the thread count.
    pub shard_size: usize,
    /// Compute validation Spearman every this many epochs; 0 never.
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 10,
            learning_rate: 0.001,
            seed: 0,
            softrank_regularization: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            grad_clip_norm: 5.0,
            hidden: 200,
            encoder_hidden: vec![300],
            lstm_layers: 2,
            shard_size: 5,
            val_every: 0,
        }
    }
}

/// Benchmark name, batch size, learning rate.
pub const PRESETS: [(&str, usize, f64); 7] = [
    ("rbv2_super", 10, 0.001),
    ("rbv2_svm", 10, 0.0005),
    ("rbv2_xgboost", 10, 0.0005),
    ("rbv2_ranger", 10, 0.001),
    ("rbv2_rpart", 10, 0.001),
    ("rbv2_aknn", 10, 0.0005),
    ("lcbench", 8, 0.001),
];

impl TrainConfig {
    pub fn preset(benchmark: &str) -> Option<TrainConfig> {
        PRESETS
            .iter()
            .find(|(name, _, _)| *name == benchmark)
            .map(|&(_, batch_size, learning_rate)| TrainConfig {
                batch_size,
                learning_rate,
                ..TrainConfig::default()
            })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.shard_size == 0 {
            return bad("shard_size must be positive".into());
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("softrank_regularization", self.softrank_regularization),
            ("adam_epsilon", self.adam_epsilon),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.grad_clip_norm.is_finite() && self.grad_clip_norm >= 0.0) {
            return bad(format!("grad_clip_norm must be non-negative, got {}", self.grad_clip_norm));
        }
        if self.hidden == 0 || self.lstm_layers == 0 || self.encoder_hidden.contains(&0) {
            return bad("layer widths and counts must be positive".into());
        }
        Ok(())
    }

    pub fn softrank(&self) -> SoftRankConfig {
        SoftRankConfig {
            regularization: self.softrank_regularization,
            direction: Direction::Descending,
        }
    }

    pub fn dims(&self, meta_features: usize, algorithms: usize) -> ModelDims {
        ModelDims {
            meta_features,
            algorithms,
            encoder_hidden: self.encoder_hidden.clone(),
            hidden: self.hidden,
            lstm_layers: self.lstm_layers,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_spearman: Option<f64>,
    /// Wall-clock; the only non-deterministic field.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean train loss of the initial parameters.
    pub initial_loss: f64,
    pub epochs: Vec<EpochRecord>,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_spearman,seconds";

impl TrainHistory {
    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(self.initial_loss, |e| e.train_loss)
    }

    /// Everything except wall-clock time, as raw bits.
    pub fn deterministic_bits(&self) -> Vec<u64> {
        let mut bits = vec![self.initial_loss.to_bits()];
        for e in &self.epochs {
            bits.push(e.epoch as u64);
            bits.push(e.train_loss.to_bits());
            bits.push(e.val_spearman.map_or(u64::MAX, f64::to_bits));
        }
        bits
    }

    /// CSV with one row per epoch. Row 0 holds the initial loss.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{HISTORY_HEADER}\n0,{},,0\n", self.initial_loss);
        for e in &self.epochs {
            let val = e.val_spearman.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_loss, val, e.seconds));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        if rdr.headers()?.iter().collect::<Vec<_>>().join(",") != HISTORY_HEADER {
            return Err(Error::Input("unexpected history header".into()));
        }
        let mut initial = None;
        let mut epochs = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse()
                    .map_err(|_| Error::Input(format!("bad number `{}` in history", &rec[i])))
            };
            let epoch: usize = rec[0]
                .parse()
                .map_err(|_| Error::Input(format!("bad epoch `{}`", &rec[0])))?;
            if epoch == 0 {
                initial = Some(num(1)?);
                continue;
            }
            epochs.push(EpochRecord {
                epoch,
                train_loss: num(1)?,
                val_spearman: if rec[2].is_empty() { None } else { Some(num(2)?) },
                seconds: num(3)?,
            });
        }
        Ok(TrainHistory {
            initial_loss: initial.ok_or_else(|| Error::Input("history lacks the epoch-0 row".into()))?,
            epochs,
        })
    }
}

/// Train-set tensors laid out for batching.
struct Prepared {
    meta: Array2<f64>,
    /// One `(M, |A|)` matrix per input step; the final column is never here.
    steps: Vec<Array2<f64>>,
    truth: Vec<Vec<f64>>,
    ids: Vec<String>,
}

impl Prepared {
    fn new(ds: &MetaDataset) -> Result<Self> {
        let keep: Vec<usize> = (0..ds.num_datasets())
            .filter(|&d| !ds.has_degenerate_truth(d))
            .collect();
        if keep.is_empty() {
            return Err(Error::Validation("no training dataset with a non-degenerate ranking".into()));
        }
        let ds = ds.subset(&keep);
        let n = ds.num_fidelities();
        let truth = (0..ds.num_datasets())
            .map(|d| hard_rank(&ds.final_performance(d), Direction::Descending))
            .collect::<Result<_>>()?;
        Ok(Prepared {
            steps: (0..n - 1).map(|k| ds.fidelity_column(k).to_owned()).collect(),
            meta: ds.meta_features.clone(),
            truth,
            ids: ds.dataset_ids,
        })
    }

    fn len(&self) -> usize {
        self.ids.len()
    }

    fn rows(&self, idx: &[usize]) -> (Array2<f64>, Vec<Array2<f64>>, Vec<Vec<f64>>) {
        (
            self.meta.select(Axis(0), idx),
            self.steps.iter().map(|s| s.select(Axis(0), idx)).collect(),
            idx.iter().map(|&i| self.truth[i].clone()).collect(),
        )
    }
}

struct Adam {
    m: ImfasParams,
    v: ImfasParams,
    t: i32,
}

impl Adam {
    fn new(params: &ImfasParams) -> Self {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ImfasParams, grads: &ImfasParams, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr = cfg.learning_rate;
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()));
        for ((p, g), (m, v)) in tensors {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.adam_epsilon);
            }
        }
    }
}

fn abort(epoch: usize, batch: usize, dataset: &str, reason: impl Into<String>) -> Error {
    Error::TrainingAborted {
        epoch,
        batch,
        dataset: dataset.to_string(),
        reason: reason.into(),
    }
}

/// Shards of `batch`, each at most `shard_size` long.
fn shards(batch: &[usize], shard_size: usize) -> Vec<Vec<usize>> {
    batch.chunks(shard_size).map(<[usize]>::to_vec).collect()
}

/// Finds the dataset responsible for a failed shard by retrying it row by row.
fn locate_failure(
    params: &ImfasParams,
    data: &Prepared,
    shard: &[usize],
    sr: &SoftRankConfig,
) -> (String, String) {
    for &i in shard {
        let (meta, steps, truth) = data.rows(&[i]);
        match batch_loss_and_grad(params, meta.view(), &steps, &truth, sr) {
            Err(e) => return (data.ids[i].clone(), e.to_string()),
            Ok((l, g)) if !l[0].is_finite() || !g.all_finite() => {
                return (data.ids[i].clone(), "non-finite loss or gradient".into())
            }
            Ok(_) => {}
        }
    }
    (data.ids[shard[0]].clone(), "non-finite batch gradient".into())
}

fn mean_loss(params: &ImfasParams, data: &Prepared, cfg: &TrainConfig, exec: Exec) -> Result<f64> {
    let sr = cfg.softrank();
    let all: Vec<usize> = (0..data.len()).collect();
    let parts = exec.map(&shards(&all, cfg.shard_size), |shard| {
        let (meta, steps, truth) = data.rows(shard);
        batch_losses(params, meta.view(), &steps, &truth, &sr).map_err(|e| (shard.clone(), e))
    });
    let mut total = 0.0;
    for p in parts {
        match p {
            Ok(ls) => total += ls.iter().sum::<f64>(),
            Err((shard, e)) => {
                let (id, why) = locate_failure(params, data, &shard, &sr);
                return Err(abort(0, 0, &id, format!("{why} ({e})")));
            }
        }
    }
    if !total.is_finite() {
        return Err(abort(0, 0, &data.ids[0], "non-finite initial loss"));
    }
    Ok(total / data.len() as f64)
}

pub fn train(ds_train: &MetaDataset, cfg: &TrainConfig) -> Result<(ImfasParams, TrainHistory)> {
    train_with(ds_train, None, cfg, Exec::default())
}

/// Trains on `ds_train`; `ds_val`, when given, is scored every
/// `cfg.val_every` epochs at full fidelity.
pub fn train_with(
    ds_train: &MetaDataset,
    ds_val: Option<&MetaDataset>,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<(ImfasParams, TrainHistory)> {
    cfg.validate()?;
    ds_train.validate()?;
    let data = Prepared::new(ds_train)?;
    if cfg.batch_size > data.len() {
        return Err(Error::Config(format!(
            "batch_size {} exceeds the {} usable training datasets",
            cfg.batch_size,
            data.len()
        )));
    }
    let dims = cfg.dims(ds_train.num_features(), ds_train.num_algorithms());
    let mut params = ImfasParams::init(&dims, cfg.seed)?;
    let sr = cfg.softrank();
    let initial_loss = mean_loss(&params, &data, cfg, exec)?;

    let mut adam = Adam::new(&params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = TrainHistory {
        initial_loss,
        epochs: Vec::with_capacity(cfg.epochs),
    };

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let parts = exec.map(&shards(batch, cfg.shard_size), |shard| {
                let (meta, steps, truth) = data.rows(shard);
                batch_loss_and_grad(&params, meta.view(), &steps, &truth, &sr).map_err(|_| shard.clone())
            });
            let mut grads = params.zeros_like();
            let mut batch_loss = 0.0;
            for p in parts {
                match p {
                    Ok((ls, g)) => {
                        batch_loss += ls.iter().sum::<f64>();
                        grads.axpy(1.0, &g);
                    }
                    Err(shard) => {
                        let (id, why) = locate_failure(&params, &data, &shard, &sr);
                        return Err(abort(epoch, b, &id, why));
                    }
                }
            }
            if !batch_loss.is_finite() || !grads.all_finite() {
                let (id, why) = locate_failure(&params, &data, batch, &sr);
                return Err(abort(epoch, b, &id, why));
            }
            grads.scale(1.0 / batch.len() as f64);
            let norm = grads.l2_norm();
            if cfg.grad_clip_norm > 0.0 && norm > cfg.grad_clip_norm {
                grads.scale(cfg.grad_clip_norm / norm);
            }
            adam.step(&mut params, &grads, cfg);
            if !params.all_finite() {
                return Err(abort(epoch, b, &data.ids[batch[0]], "parameters became non-finite"));
            }
            loss_sum += batch_loss;
        }
        let val_spearman = match ds_val {
            Some(val) if cfg.val_every > 0 && epoch % cfg.val_every == 0 => {
                let ev = evaluate_model_with(&params, val, &[1.0], &sr, exec)?;
                Some(ev.per_fraction[0].mean)
            }
            _ => None,
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / data.len() as f64,
            val_spearman,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((params, history))
}

/// Mean train loss of `params` on `ds`, over the non-degenerate datasets.
pub fn evaluate_train_loss(params: &ImfasParams, ds: &MetaDataset, cfg: &TrainConfig) -> Result<f64> {
    mean_loss(params, &Prepared::new(ds)?, cfg, Exec::default())
}

/// Training plus evaluation protocol of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub test_fraction: f64,
    pub fractions: Vec<f64>,
    pub eta: usize,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "synthetic".into(),
            test_fraction: 0.2,
            fractions: crate::report::DEFAULT_FRACTIONS.to_vec(),
            eta: 2,
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a flat TOML file holding both the experiment keys and every
    /// [`TrainConfig`] key.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = ExperimentConfig::default();
        if let Some(v) = table.remove("name") {
            cfg.name = v
                .as_str()
                .ok_or_else(|| Error::Config("name must be a string".into()))?
                .to_string();
        }
        if let Some(v) = table.remove("test_fraction") {
            cfg.test_fraction = as_f64(&v).ok_or_else(|| Error::Config("test_fraction must be a number".into()))?;
        }
        if let Some(v) = table.remove("fractions") {
            cfg.fractions = v
                .as_array()
                .and_then(|a| a.iter().map(as_f64).collect::<Option<Vec<_>>>())
                .ok_or_else(|| Error::Config("fractions must be an array of numbers".into()))?;
        }
        if let Some(v) = table.remove("eta") {
            cfg.eta = v
                .as_integer()
                .and_then(|i| usize::try_from(i).ok())
                .ok_or_else(|| Error::Config("eta must be a non-negative integer".into()))?;
        }
        cfg.train = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        crate::report::validate_fractions(&self.fractions).map_err(|e| Error::Config(e.to_string()))?;
        ShConfig::new(self.eta).map_err(|e| Error::Config(e.to_string()))?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("test_fraction must lie in (0, 1), got {}", self.test_fraction)));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        crate::sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

fn as_f64(v: &toml::Value) -> Option<f64> {
    v.as_float().or_else(|| v.as_integer().map(|i| i as f64))
}

/// Outcome of one seed, with its trained parameters and history.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub result: SeedResult,
    pub history: TrainHistory,
    pub params: ImfasParams,
    pub excluded: Vec<Exclusion>,
    pub counts: DatasetCounts,
}

/// Split, normalize, train, evaluate and run the baseline for one seed.
pub fn run_seed(ds: &MetaDataset, cfg: &ExperimentConfig, seed: u64, exec: Exec) -> Result<SeedRun> {
    cfg.validate()?;
    let (train_raw, test_raw) = split(ds, cfg.test_fraction, seed)?;
    let train_ds = normalize_meta_features(&train_raw, &train_raw)?;
    let test_ds = normalize_meta_features(&train_raw, &test_raw)?;
    let tcfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let (params, history) = train_with(&train_ds, None, &tcfg, exec)?;
    let ev = evaluate_model_with(&params, &test_ds, &cfg.fractions, &tcfg.softrank(), exec)?;
    let sh = sh_eval_with(&test_ds, &ShConfig::new(cfg.eta)?, exec)?;
    let mut excluded: Vec<Exclusion> = ev
        .excluded
        .into_iter()
        .map(|e| Exclusion { seed: Some(seed), ..e })
        .collect();
    excluded.extend(sh.excluded.iter().map(|id| Exclusion {
        dataset_id: id.clone(),
        reason: "excluded from the SH column".into(),
        seed: Some(seed),
        fraction: None,
    }));
    let result = SeedResult {
        seed,
        model: ev.per_fraction,
        sh: ShSeedResult {
            mean: mean_of(&sh.per_dataset),
            per_dataset: sh.per_dataset,
        },
        final_train_loss: history.final_loss(),
        initial_train_loss: history.initial_loss,
    };
    Ok(SeedRun {
        result,
        history,
        params,
        excluded,
        counts: DatasetCounts {
            total: ds.num_datasets(),
            train: train_ds.num_datasets(),
            test: test_ds.num_datasets(),
        },
    })
}

/// Runs every seed independently and aggregates the results.
pub fn run_seeds(ds: &MetaDataset, cfg: &ExperimentConfig, seeds: &[u64], exec: Exec) -> Result<(EvalReport, Vec<SeedRun>)> {
    if seeds.is_empty() {
        return Err(Error::Input("at least one seed is required".into()));
    }
    ds.validate()?;
    let runs = exec.try_map(seeds, |&s| run_seed(ds, cfg, s, exec))?;
    let report = EvalReport::aggregate(
        cfg.name.clone(),
        cfg.fractions.clone(),
        runs.iter().map(|r| r.result.clone()).collect(),
        ShConfig::new(cfg.eta)?.describe(),
        runs.iter().flat_map(|r| r.excluded.clone()).collect(),
        cfg.hash(),
        runs[0].counts.clone(),
    )?;
    Ok((report, runs))
}
