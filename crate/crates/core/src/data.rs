//! Meta-datasets: per-dataset meta-features plus a dense
//! `(dataset × algorithm × fidelity)` performance grid.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::loss::spearman_eval;
use crate::nn::sigmoid;

pub const CURVES_FILE: &str = "curves.csv";
pub const META_FILE: &str = "meta_features.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct MetaDataset {
    /// `(M, F)`
    pub meta_features: Array2<f64>,
    /// `(M, |A|, n)`, values in `[0, 1]`
    pub performances: Array3<f64>,
    /// Strictly increasing fidelity labels, one per step.
    pub fidelity_grid: Vec<f64>,
    pub algorithm_ids: Vec<String>,
    pub dataset_ids: Vec<String>,
}

impl MetaDataset {
    pub fn new(
        meta_features: Array2<f64>,
        performances: Array3<f64>,
        fidelity_grid: Vec<f64>,
        algorithm_ids: Vec<String>,
        dataset_ids: Vec<String>,
    ) -> Result<Self> {
        let ds = MetaDataset {
            meta_features,
            performances,
            fidelity_grid,
            algorithm_ids,
            dataset_ids,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, a, n) = self.performances.dim();
        if self.meta_features.nrows() != m || self.dataset_ids.len() != m {
            return Err(Error::Validation(format!(
                "{m} datasets in the performance grid, {} meta-feature rows, {} ids",
                self.meta_features.nrows(),
                self.dataset_ids.len()
            )));
        }
        if self.algorithm_ids.len() != a || self.fidelity_grid.len() != n {
            return Err(Error::Validation("id or fidelity-grid length disagrees with the grid".into()));
        }
        if n < 2 {
            return Err(Error::Validation(format!("need at least 2 fidelities, got {n}")));
        }
        if a < 2 {
            return Err(Error::Validation(format!("need at least 2 algorithms, got {a}")));
        }
        if self.fidelity_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Validation("fidelity grid is not strictly increasing".into()));
        }
        for ((d, f), v) in self.meta_features.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "meta-feature {f} of dataset `{}` is not finite",
                    self.dataset_ids[d]
                )));
            }
        }
        for ((d, al, k), &v) in self.performances.indexed_iter() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!(
                    "performance {v} outside [0, 1] at dataset `{}`, algorithm `{}`, fidelity {k}",
                    self.dataset_ids[d], self.algorithm_ids[al]
                )));
            }
        }
        Ok(())
    }

    pub fn num_datasets(&self) -> usize {
        self.performances.dim().0
    }

    pub fn num_algorithms(&self) -> usize {
        self.performances.dim().1
    }

    pub fn num_fidelities(&self) -> usize {
        self.performances.dim().2
    }

    pub fn num_features(&self) -> usize {
        self.meta_features.ncols()
    }

    /// Learning curves of dataset `d`, shape `(|A|, n)`.
    pub fn curves(&self, d: usize) -> ArrayView2<'_, f64> {
        self.performances.slice(s![d, .., ..])
    }

    pub fn meta_row(&self, d: usize) -> Vec<f64> {
        self.meta_features.row(d).to_vec()
    }

    /// Performances at the final fidelity for dataset `d`.
    pub fn final_performance(&self, d: usize) -> Vec<f64> {
        let n = self.num_fidelities();
        self.performances.slice(s![d, .., n - 1]).to_vec()
    }

    /// Performances at fidelity `k` for every dataset, shape `(M, |A|)`.
    pub fn fidelity_column(&self, k: usize) -> ArrayView2<'_, f64> {
        self.performances.slice(s![.., .., k])
    }

    /// True when every final-fidelity performance of `d` is identical.
    pub fn has_degenerate_truth(&self, d: usize) -> bool {
        let f = self.final_performance(d);
        f.iter().all(|&v| v == f[0])
    }

    pub fn subset(&self, indices: &[usize]) -> MetaDataset {
        let (_, a, n) = self.performances.dim();
        let mut meta = Array2::zeros((indices.len(), self.num_features()));
        let mut perf = Array3::zeros((indices.len(), a, n));
        for (row, &d) in indices.iter().enumerate() {
            meta.row_mut(row).assign(&self.meta_features.row(d));
            perf.slice_mut(s![row, .., ..]).assign(&self.curves(d));
        }
        MetaDataset {
            meta_features: meta,
            performances: perf,
            fidelity_grid: self.fidelity_grid.clone(),
            algorithm_ids: self.algorithm_ids.clone(),
            dataset_ids: indices.iter().map(|&d| self.dataset_ids[d].clone()).collect(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct CurveRow {
    dataset_id: String,
    algorithm_id: String,
    fidelity_index: usize,
    performance: f64,
}

/// Reads the long-format curves file and the meta-feature file.
pub fn load_csv(curves_path: &Path, meta_path: &Path) -> Result<MetaDataset> {
    let curves = std::fs::File::open(curves_path).map_err(|e| Error::io(curves_path, e))?;
    let meta = std::fs::File::open(meta_path).map_err(|e| Error::io(meta_path, e))?;
    read_csv(curves, meta)
}

/// Loads `curves.csv` and `meta_features.csv` from a directory.
pub fn load_dir(dir: &Path) -> Result<MetaDataset> {
    load_csv(&dir.join(CURVES_FILE), &dir.join(META_FILE))
}

pub fn read_csv<R1: Read, R2: Read>(curves: R1, meta: R2) -> Result<MetaDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(curves);
    let mut cells: HashMap<(String, String, usize), f64> = HashMap::new();
    let mut datasets = BTreeSet::new();
    let mut algorithms = BTreeSet::new();
    let mut max_fidelity = 0usize;
    for (line, row) in rdr.deserialize::<CurveRow>().enumerate() {
        let row = row?;
        if !row.performance.is_finite() || !(0.0..=1.0).contains(&row.performance) {
            return Err(Error::Validation(format!(
                "curves row {}: performance {} outside [0, 1] for dataset `{}`, algorithm `{}`, fidelity {}",
                line + 2,
                row.performance,
                row.dataset_id,
                row.algorithm_id,
                row.fidelity_index
            )));
        }
        datasets.insert(row.dataset_id.clone());
        algorithms.insert(row.algorithm_id.clone());
        max_fidelity = max_fidelity.max(row.fidelity_index);
        let key = (row.dataset_id, row.algorithm_id, row.fidelity_index);
        if cells.insert(key.clone(), row.performance).is_some() {
            return Err(Error::Validation(format!(
                "duplicate row for dataset `{}`, algorithm `{}`, fidelity {}",
                key.0, key.1, key.2
            )));
        }
    }
    if cells.is_empty() {
        return Err(Error::Validation("curves file has no rows".into()));
    }

    let mut mrdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(meta);
    let header = mrdr.headers()?.clone();
    if header.get(0) != Some("dataset_id") {
        return Err(Error::Validation("meta-feature file must start with a `dataset_id` column".into()));
    }
    let nf = header.len() - 1;
    let mut meta_rows: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (line, rec) in mrdr.records().enumerate() {
        let rec = rec?;
        let id = rec[0].to_string();
        let vals = rec
            .iter()
            .skip(1)
            .map(|v| {
                v.parse::<f64>().map_err(|_| {
                    Error::Validation(format!("meta-feature row {}: `{v}` is not a number", line + 2))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if meta_rows.insert(id.clone(), vals).is_some() {
            return Err(Error::Validation(format!("duplicate meta-feature row for `{id}`")));
        }
    }

    let dataset_ids: Vec<String> = datasets.into_iter().collect();
    let algorithm_ids: Vec<String> = algorithms.into_iter().collect();
    let n = max_fidelity + 1;
    let (m, a) = (dataset_ids.len(), algorithm_ids.len());
    let mut perf = Array3::zeros((m, a, n));
    for (d, did) in dataset_ids.iter().enumerate() {
        for (al, aid) in algorithm_ids.iter().enumerate() {
            for k in 0..n {
                match cells.get(&(did.clone(), aid.clone(), k)) {
                    Some(&v) => perf[[d, al, k]] = v,
                    None => {
                        return Err(Error::IncompleteGrid {
                            dataset: did.clone(),
                            algorithm: aid.clone(),
                            fidelity: k,
                        })
                    }
                }
            }
        }
    }
    let mut meta = Array2::zeros((m, nf));
    for (d, did) in dataset_ids.iter().enumerate() {
        let row = meta_rows
            .get(did)
            .ok_or_else(|| Error::Validation(format!("no meta-features for dataset `{did}`")))?;
        for (f, &v) in row.iter().enumerate() {
            meta[[d, f]] = v;
        }
    }
    if let Some(extra) = meta_rows.keys().find(|k| dataset_ids.binary_search(k).is_err()) {
        return Err(Error::Validation(format!("meta-features for unknown dataset `{extra}`")));
    }
    MetaDataset::new(
        meta,
        perf,
        (0..n).map(|k| k as f64).collect(),
        algorithm_ids,
        dataset_ids,
    )
}

/// Writes both CSV files in their canonical layout. Numbers use the shortest
/// representation that parses back to the same f64.
pub fn write_csv<W1: Write, W2: Write>(ds: &MetaDataset, curves: W1, meta: W2) -> Result<()> {
    let mut w = csv::Writer::from_writer(curves);
    w.write_record(["dataset_id", "algorithm_id", "fidelity_index", "performance"])?;
    for (d, did) in ds.dataset_ids.iter().enumerate() {
        for (a, aid) in ds.algorithm_ids.iter().enumerate() {
            for k in 0..ds.num_fidelities() {
                w.write_record([
                    did.as_str(),
                    aid.as_str(),
                    &k.to_string(),
                    &ds.performances[[d, a, k]].to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(CURVES_FILE, e))?;

    let mut w = csv::Writer::from_writer(meta);
    let mut header = vec!["dataset_id".to_string()];
    header.extend((0..ds.num_features()).map(|f| format!("f_{f}")));
    w.write_record(&header)?;
    for (d, did) in ds.dataset_ids.iter().enumerate() {
        let mut rec = vec![did.clone()];
        rec.extend(ds.meta_features.row(d).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(META_FILE, e))?;
    Ok(())
}

/// Writes `curves.csv` and `meta_features.csv` into `dir`.
pub fn write_dir(ds: &MetaDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cp = dir.join(CURVES_FILE);
    let mp = dir.join(META_FILE);
    let c = std::fs::File::create(&cp).map_err(|e| Error::io(&cp, e))?;
    let m = std::fs::File::create(&mp).map_err(|e| Error::io(&mp, e))?;
    write_csv(ds, std::io::BufWriter::new(c), std::io::BufWriter::new(m))
}

/// Per-feature z-scoring with statistics from a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    /// Population sd; 0 marks a constant feature.
    pub sd: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(train: &MetaDataset) -> Self {
        let m = train.num_datasets() as f64;
        let mut mean = Vec::with_capacity(train.num_features());
        let mut sd = Vec::with_capacity(train.num_features());
        for col in train.meta_features.columns() {
            let mu = col.sum() / m;
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m;
            let s = var.sqrt();
            mean.push(mu);
            sd.push(if s > 1e-12 * mu.abs().max(1.0) { s } else { 0.0 });
        }
        FeatureScaler { mean, sd }
    }

    pub fn apply(&self, ds: &MetaDataset) -> Result<MetaDataset> {
        if ds.num_features() != self.mean.len() {
            return Err(Error::Shape(format!(
                "scaler fitted on {} features, dataset has {}",
                self.mean.len(),
                ds.num_features()
            )));
        }
        let mut out = ds.clone();
        for (f, mut col) in out.meta_features.columns_mut().into_iter().enumerate() {
            let (mu, sd) = (self.mean[f], self.sd[f]);
            col.mapv_inplace(|v| if sd == 0.0 { 0.0 } else { (v - mu) / sd });
        }
        Ok(out)
    }
}

/// Standardizes `apply_to` with statistics from `train`.
pub fn normalize_meta_features(train: &MetaDataset, apply_to: &MetaDataset) -> Result<MetaDataset> {
    if train.num_datasets() < 2 {
        return Err(Error::Input("normalization needs at least 2 training datasets".into()));
    }
    FeatureScaler::fit(train).apply(apply_to)
}

/// Dataset-level train/test split. The test side gets
/// `round(M · test_fraction)` datasets; both sides keep the original order.
pub fn split(ds: &MetaDataset, test_fraction: f64, seed: u64) -> Result<(MetaDataset, MetaDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Split(format!("test fraction must lie in (0, 1), got {test_fraction}")));
    }
    let m = ds.num_datasets();
    let n_test = (m as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test >= m {
        return Err(Error::Split(format!(
            "test fraction {test_fraction} of {m} datasets leaves an empty side"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut rng);
    let mut test: Vec<usize> = idx[..n_test].to_vec();
    let mut train: Vec<usize> = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&test)))
}

const SPLIT_STREAM: u64 = 0x5_1717;

/// Parameters of the synthetic benchmark generator.
///
/// Each dataset `d` has a latent topology `z_d`; each algorithm `a` has an
/// inductive-bias vector `w_a`. The final performance is
/// `sigmoid(z_d·w_a + b_a + ξ_da)` with `ξ_da` a dataset-algorithm
/// interaction that only the curves reveal. Curves saturate exponentially
/// towards it. A `crossing_fraction` of the algorithms learn slowly but end
/// high, so early fidelities mislead. Meta-features are a noisy linear
/// readout of `z_d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    /// M
    pub datasets: usize,
    /// |A|
    pub algorithms: usize,
    /// n
    pub fidelities: usize,
    /// F
    pub meta_features: usize,
    pub latent_dim: usize,
    pub noise_sd: f64,
    pub crossing_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// The reference benchmark.
    fn default() -> Self {
        SyntheticSpec {
            datasets: 200,
            algorithms: 20,
            fidelities: 10,
            meta_features: 8,
            latent_dim: 4,
            noise_sd: 0.01,
            crossing_fraction: 0.4,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fidelities < 2 || self.algorithms < 2 {
            return Err(Error::Spec(format!(
                "need at least 2 fidelities and 2 algorithms, got n={} |A|={}",
                self.fidelities, self.algorithms
            )));
        }
        if self.datasets == 0 || self.meta_features == 0 || self.latent_dim == 0 {
            return Err(Error::Spec("datasets, meta_features and latent_dim must be positive".into()));
        }
        if self.latent_dim > self.meta_features {
            return Err(Error::Spec(format!(
                "latent_dim {} exceeds meta_features {}",
                self.latent_dim, self.meta_features
            )));
        }
        if !(0.0..=1.0).contains(&self.crossing_fraction) {
            return Err(Error::Spec(format!(
                "crossing_fraction must lie in [0, 1], got {}",
                self.crossing_fraction
            )));
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(Error::Spec(format!("noise_sd must be non-negative, got {}", self.noise_sd)));
        }
        Ok(())
    }
}

/// Spread of `z_d · w_a` in logit space.
const BIAS_LOGIT_SCALE: f64 = 2.0;
const ALGO_OFFSET_SD: f64 = 0.5;
const INTERACTION_SD: f64 = 0.5;
/// Logit boost for slow-starting algorithms.
const CROSSING_BOOST: f64 = 1.0;
const FAST_RATE: (f64, f64) = (0.7, 2.0);
const SLOW_RATE: (f64, f64) = (0.08, 0.2);
const RATE_JITTER_SD: f64 = 0.2;
/// `p₀ = p∞ · u` with `u` drawn from this range.
const START_RATIO: (f64, f64) = (0.05, 0.5);

/// `p∞ − (p∞ − p₀)·exp(−rate·k)` for `k = 1..=n`.
pub fn saturation_curve(p0: f64, p_inf: f64, rate: f64, n: usize) -> Vec<f64> {
    (1..=n)
        .map(|k| {
            let decay = (-rate * k as f64).exp();
            p_inf - (p_inf - p0) * decay
        })
        .collect()
}

struct AlgorithmTraits {
    bias: Vec<f64>,
    offset: f64,
    rate: f64,
    crossing: bool,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<MetaDataset> {
    generate_synthetic_with(spec, Exec::default())
}

pub fn generate_synthetic_with(spec: &SyntheticSpec, exec: Exec) -> Result<MetaDataset> {
    spec.validate()?;
    let (m, a, n, f, l) = (
        spec.datasets,
        spec.algorithms,
        spec.fidelities,
        spec.meta_features,
        spec.latent_dim,
    );
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mixing = Array2::from_shape_simple_fn((f, l), || std_normal.sample(&mut rng) / (l as f64).sqrt());
    let n_cross = (spec.crossing_fraction * a as f64).round() as usize;
    let mut order: Vec<usize> = (0..a).collect();
    order.shuffle(&mut rng);
    let mut crossing = vec![false; a];
    for &i in &order[..n_cross] {
        crossing[i] = true;
    }
    let algos: Vec<AlgorithmTraits> = (0..a)
        .map(|i| {
            let bias = (0..l)
                .map(|_| std_normal.sample(&mut rng) * BIAS_LOGIT_SCALE / (l as f64).sqrt())
                .collect();
            let offset = std_normal.sample(&mut rng) * ALGO_OFFSET_SD;
            let (lo, hi) = if crossing[i] { SLOW_RATE } else { FAST_RATE };
            let rate = rng.random_range(lo..hi);
            AlgorithmTraits {
                bias,
                offset,
                rate,
                crossing: crossing[i],
            }
        })
        .collect();

    let rows: Vec<usize> = (0..m).collect();
    let per_dataset = exec.map(&rows, |&d| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(d as u64 + 1);
        let z: Vec<f64> = (0..l).map(|_| std_normal.sample(&mut rng)).collect();
        let mut curves = Vec::with_capacity(a * n);
        for al in &algos {
            let mut logit = al.offset + INTERACTION_SD * std_normal.sample(&mut rng);
            logit += z.iter().zip(&al.bias).map(|(x, w)| x * w).sum::<f64>();
            if al.crossing {
                logit += CROSSING_BOOST;
            }
            let p_inf = sigmoid(logit);
            let rate = al.rate * (RATE_JITTER_SD * std_normal.sample(&mut rng)).exp();
            let p0 = p_inf * rng.random_range(START_RATIO.0..START_RATIO.1);
            for v in saturation_curve(p0, p_inf, rate, n) {
                let noisy = v + spec.noise_sd * std_normal.sample(&mut rng);
                curves.push(noisy.clamp(0.0, 1.0));
            }
        }
        let meta: Vec<f64> = (0..f)
            .map(|j| {
                let lin: f64 = (0..l).map(|k| mixing[[j, k]] * z[k]).sum();
                lin + spec.noise_sd * std_normal.sample(&mut rng)
            })
            .collect();
        (meta, curves)
    });

    let mut meta = Array2::zeros((m, f));
    let mut perf = Array3::zeros((m, a, n));
    for (d, (mrow, crow)) in per_dataset.into_iter().enumerate() {
        for (j, v) in mrow.into_iter().enumerate() {
            meta[[d, j]] = v;
        }
        for (idx, v) in crow.into_iter().enumerate() {
            perf[[d, idx / n, idx % n]] = v;
        }
    }
    let dw = digits(m);
    let aw = digits(a);
    MetaDataset::new(
        meta,
        perf,
        (0..n).map(|k| k as f64).collect(),
        (0..a).map(|i| format!("a{i:0aw$}")).collect(),
        (0..m).map(|i| format!("d{i:0dw$}")).collect(),
    )
}

fn digits(n: usize) -> usize {
    n.saturating_sub(1).max(1).to_string().len()
}

/// Mean over datasets of Spearman(first fidelity, final fidelity); datasets
/// with an undefined correlation are skipped.
pub fn first_vs_final_spearman(ds: &MetaDataset) -> f64 {
    let n = ds.num_fidelities();
    let vals: Vec<f64> = (0..ds.num_datasets())
        .filter_map(|d| {
            let c = ds.curves(d);
            spearman_eval(&c.column(0).to_vec(), &c.column(n - 1).to_vec()).ok()
        })
        .collect();
    vals.iter().sum::<f64>() / vals.len().max(1) as f64
}

/// Reads a flat key-value synthetic spec.
pub fn load_synthetic_spec(path: &Path) -> Result<SyntheticSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: SyntheticSpec = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}
