//! Evaluation at partial fidelities and report rendering.
//!
//! The markdown table has one row per experiment, one column per fidelity
//! fraction plus an `SH` column, cells `mean ± sd` to three decimals. The
//! first fraction whose mean beats the SH mean is set in bold.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::MetaDataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::loss::spearman_eval;
use crate::model::{predict_partial, ImfasParams};
use crate::sh::DatasetScore;
use crate::softrank::SoftRankConfig;
use crate::stats::MeanSd;

pub const DEFAULT_FRACTIONS: [f64; 4] = [0.1, 0.2, 0.5, 1.0];

pub fn validate_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.is_empty() {
        return Err(Error::Input("at least one fidelity fraction is required".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::Input(format!("fraction {f} outside [0, 1]")));
    }
    if fractions.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Input("fractions must be strictly ascending".into()));
    }
    Ok(())
}

/// Parses `"0.1,0.2,0.5"`.
pub fn parse_fractions(text: &str) -> Result<Vec<f64>> {
    let fr = text
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Input(format!("`{t}` is not a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    validate_fractions(&fr)?;
    Ok(fr)
}

/// Per-dataset Spearman at one fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionResult {
    pub fraction: f64,
    pub mean: f64,
    pub per_dataset: Vec<DatasetScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub dataset_id: String,
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEval {
    pub per_fraction: Vec<FractionResult>,
    pub excluded: Vec<Exclusion>,
}

pub fn evaluate_model(
    params: &ImfasParams,
    ds_test: &MetaDataset,
    fractions: &[f64],
    cfg: &SoftRankConfig,
) -> Result<ModelEval> {
    evaluate_model_with(params, ds_test, fractions, cfg, Exec::default())
}

/// Spearman between hard-ranked predictions and final-fidelity ground truth
/// for every test dataset and fraction.
pub fn evaluate_model_with(
    params: &ImfasParams,
    ds_test: &MetaDataset,
    fractions: &[f64],
    cfg: &SoftRankConfig,
    exec: Exec,
) -> Result<ModelEval> {
    validate_fractions(fractions)?;
    if ds_test.num_datasets() == 0 {
        return Err(Error::Report("empty test set".into()));
    }
    let dims = params.dims();
    if dims.meta_features != ds_test.num_features() || dims.algorithms != ds_test.num_algorithms() {
        return Err(Error::Shape(format!(
            "model expects |A|={} F={}, data has |A|={} F={}",
            dims.algorithms,
            dims.meta_features,
            ds_test.num_algorithms(),
            ds_test.num_features()
        )));
    }
    let idx: Vec<usize> = (0..ds_test.num_datasets()).collect();
    // per dataset: None if the ground truth is degenerate, else one entry per fraction
    let rows = exec.try_map(&idx, |&d| -> Result<Option<Vec<Option<f64>>>> {
        if ds_test.has_degenerate_truth(d) {
            return Ok(None);
        }
        let truth = ds_test.final_performance(d);
        let meta = ds_test.meta_row(d);
        let curves = ds_test.curves(d);
        fractions
            .iter()
            .map(|&q| {
                let pred = predict_partial(params, &meta, curves, q, cfg)?;
                match spearman_eval(&pred.scores, &truth) {
                    Ok(r) => Ok(Some(r)),
                    Err(Error::UndefinedCorrelation) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    })?;

    let mut excluded = Vec::new();
    let mut per_fraction: Vec<FractionResult> = fractions
        .iter()
        .map(|&fraction| FractionResult {
            fraction,
            mean: f64::NAN,
            per_dataset: Vec::new(),
        })
        .collect();
    for (d, row) in rows.into_iter().enumerate() {
        let id = &ds_test.dataset_ids[d];
        match row {
            None => excluded.push(Exclusion {
                dataset_id: id.clone(),
                reason: "all final-fidelity performances tied".into(),
                seed: None,
                fraction: None,
            }),
            Some(vals) => {
                for (fi, v) in vals.into_iter().enumerate() {
                    match v {
                        Some(rho) => per_fraction[fi].per_dataset.push(DatasetScore {
                            dataset_id: id.clone(),
                            spearman: rho,
                        }),
                        None => excluded.push(Exclusion {
                            dataset_id: id.clone(),
                            reason: "predicted scores all tied".into(),
                            seed: None,
                            fraction: Some(fractions[fi]),
                        }),
                    }
                }
            }
        }
    }
    for fr in &mut per_fraction {
        if fr.per_dataset.is_empty() {
            return Err(Error::Report(format!("no scorable test dataset at fraction {}", fr.fraction)));
        }
        fr.mean = mean_of(&fr.per_dataset);
    }
    Ok(ModelEval { per_fraction, excluded })
}

pub(crate) fn mean_of(scores: &[DatasetScore]) -> f64 {
    scores.iter().map(|s| s.spearman).sum::<f64>() / scores.len() as f64
}

/// Results of one seed: model at every fraction, plus the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub model: Vec<FractionResult>,
    pub sh: ShSeedResult,
    pub final_train_loss: f64,
    pub initial_train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShSeedResult {
    pub mean: f64,
    pub per_dataset: Vec<DatasetScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionSummary {
    pub fraction: f64,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShSummary {
    pub mean: f64,
    pub sd: f64,
    pub schedule: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub total: usize,
    pub train: usize,
    pub test: usize,
}

/// Aggregated evaluation over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub experiment: String,
    pub fractions: Vec<f64>,
    /// Ascending.
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedResult>,
    pub aggregate: Vec<FractionSummary>,
    pub sh: ShSummary,
    pub excluded_datasets: Vec<Exclusion>,
    pub config_hash: String,
    pub dataset_counts: DatasetCounts,
}

impl EvalReport {
    /// Aggregates per-seed results. Seeds are sorted first so the statistics
    /// do not depend on the order runs were listed in.
    pub fn aggregate(
        experiment: String,
        fractions: Vec<f64>,
        mut per_seed: Vec<SeedResult>,
        sh_schedule: String,
        excluded_datasets: Vec<Exclusion>,
        config_hash: String,
        dataset_counts: DatasetCounts,
    ) -> Result<Self> {
        validate_fractions(&fractions)?;
        if per_seed.is_empty() {
            return Err(Error::Report("no seeds to aggregate".into()));
        }
        per_seed.sort_by_key(|s| s.seed);
        if per_seed.windows(2).any(|w| w[0].seed == w[1].seed) {
            return Err(Error::Report("duplicate seed".into()));
        }
        let aggregate = fractions
            .iter()
            .enumerate()
            .map(|(fi, &fraction)| {
                let means: Vec<f64> = per_seed.iter().map(|s| s.model[fi].mean).collect();
                let ms = MeanSd::of(&means);
                FractionSummary {
                    fraction,
                    mean: ms.mean,
                    sd: ms.sd,
                }
            })
            .collect();
        let sh_means: Vec<f64> = per_seed.iter().map(|s| s.sh.mean).collect();
        let shs = MeanSd::of(&sh_means);
        let mut excluded_datasets = excluded_datasets;
        excluded_datasets.sort_by(|a, b| a.seed.cmp(&b.seed).then(a.dataset_id.cmp(&b.dataset_id)));
        Ok(EvalReport {
            experiment,
            seeds: per_seed.iter().map(|s| s.seed).collect(),
            fractions,
            per_seed,
            aggregate,
            sh: ShSummary {
                mean: shs.mean,
                sd: shs.sd,
                schedule: sh_schedule,
            },
            excluded_datasets,
            config_hash,
            dataset_counts,
        })
    }

    /// Index of the first fraction whose mean exceeds the SH mean.
    pub fn first_surpassing(&self) -> Option<usize> {
        self.aggregate.iter().position(|a| a.mean > self.sh.mean)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Markdown => render_markdown(std::slice::from_ref(report)).expect("single report"),
    }
}

pub fn parse_json_report(text: &str) -> Result<EvalReport> {
    Ok(serde_json::from_str(text)?)
}

fn percent_label(f: f64) -> String {
    let p = (f * 100.0 * 1e6).round() / 1e6;
    format!("{p}%")
}

fn cell(mean: f64, sd: f64) -> String {
    format!("{mean:.3} ± {sd:.3}")
}

/// Table with one row per report. All reports must share their fractions.
pub fn render_markdown(reports: &[EvalReport]) -> Result<String> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Report("nothing to render".into()))?;
    if reports.iter().any(|r| r.fractions != first.fractions) {
        return Err(Error::Report("reports use different fidelity fractions".into()));
    }
    let mut out = String::new();
    let mut header = vec!["Dataset".to_string()];
    header.extend(first.fractions.iter().map(|&f| percent_label(f)));
    header.push("SH".into());
    writeln!(out, "| {} |", header.join(" | ")).unwrap();
    writeln!(out, "|{}", "---|".repeat(header.len())).unwrap();
    for r in reports {
        let bold = r.first_surpassing();
        let mut cells = vec![r.experiment.clone()];
        for (i, a) in r.aggregate.iter().enumerate() {
            let c = cell(a.mean, a.sd);
            cells.push(if Some(i) == bold { format!("**{c}**") } else { c });
        }
        cells.push(cell(r.sh.mean, r.sh.sd));
        writeln!(out, "| {} |", cells.join(" | ")).unwrap();
    }
    writeln!(out).unwrap();
    writeln!(out, "Cells: mean ± sd of test Spearman over seeds; bold marks the first fraction above SH.").unwrap();
    for r in reports {
        writeln!(
            out,
            "SH schedule ({}): {}. Seeds: {:?}.",
            r.experiment, r.sh.schedule, r.seeds
        )
        .unwrap();
    }
    Ok(out)
}

/// One row of the fraction curve series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractionCurvePoint {
    pub fraction: f64,
    pub mean_spearman: f64,
    pub sd: f64,
    pub sh_mean: f64,
}

pub const FRACTION_CURVE_HEADER: &str = "fraction,mean_spearman,sd,sh_mean";

/// CSV series of mean Spearman against fraction, with the SH mean as a
/// constant reference column.
pub fn export_fraction_curve(report: &EvalReport) -> Result<String> {
    if report.aggregate.is_empty() {
        return Err(Error::Report("no fractions evaluated".into()));
    }
    let mut out = String::from(FRACTION_CURVE_HEADER);
    out.push('\n');
    for a in &report.aggregate {
        writeln!(out, "{},{},{},{}", a.fraction, a.mean, a.sd, report.sh.mean).unwrap();
    }
    Ok(out)
}

pub fn parse_fraction_curve(text: &str) -> Result<Vec<FractionCurvePoint>> {
    let mut lines = text.lines();
    if lines.next() != Some(FRACTION_CURVE_HEADER) {
        return Err(Error::Report("unexpected fraction-curve header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let v = l
                .split(',')
                .map(|t| t.parse::<f64>().map_err(|_| Error::Report(format!("bad number `{t}`"))))
                .collect::<Result<Vec<_>>>()?;
            if v.len() != 4 {
                return Err(Error::Report(format!("expected 4 columns in `{l}`")));
            }
            Ok(FractionCurvePoint {
                fraction: v[0],
                mean_spearman: v[1],
                sd: v[2],
                sh_mean: v[3],
            })
        })
        .collect()
}
