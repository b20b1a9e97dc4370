mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use imfas::data::{self, FeatureScaler, SyntheticSpec};
use imfas::report::{
    evaluate_model, export_fraction_curve, parse_fractions, render_report, DatasetCounts, EvalReport, ReportFormat,
    SeedResult, ShSeedResult, DEFAULT_FRACTIONS,
};
use imfas::sh::{sh_eval, ShConfig};
use imfas::train::{run_seeds, train_with, ExperimentConfig, TrainConfig};
use imfas::{Error, Exec, ImfasParams, MetaDataset};
use serde::{Deserialize, Serialize};
use serde_json::json;

use manifest::Manifest;

const CHECKPOINT_FILE: &str = "checkpoint.json";
const PREPROCESSING_FILE: &str = "preprocessing.json";
const HISTORY_FILE: &str = "history.csv";

#[derive(Parser)]
#[command(name = "imfas", version, about = "Multi-fidelity algorithm selection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic meta-dataset.
    Generate {
        /// Synthetic spec (TOML); the reference benchmark when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Train a model on every dataset of a meta-dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Training config (TOML); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Evaluate a trained checkpoint at partial fidelities.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        fractions: Option<String>,
        #[arg(long, default_value_t = 2)]
        eta: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Score the Successive Halving baseline.
    Baseline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 2)]
        eta: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Split, train, evaluate and run the baseline for every seed.
    Experiment {
        /// Data directory, or a synthetic spec (.toml) to generate from.
        #[arg(long)]
        data: PathBuf,
        /// Experiment config (TOML); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "1,2,3,4,5")]
        seeds: String,
        #[arg(long)]
        fractions: Option<String>,
        #[arg(long)]
        eta: Option<usize>,
        #[command(flatten)]
        out: OutArgs,
    },
}

#[derive(Args)]
struct OutArgs {
    #[arg(long)]
    out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_numeric() { 3 } else { 2 },
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Error::from(e).into()
    }
}

fn user_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Training-side state needed to evaluate a checkpoint on new data.
#[derive(Serialize, Deserialize)]
struct Preprocessing {
    seed: u64,
    softrank_regularization: f64,
    scaler: FeatureScaler,
    initial_train_loss: f64,
    final_train_loss: f64,
}

fn main() -> ExitCode {
    imfas::exec::init_threads_from_env();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Generate { config, out } => cmd_generate(config.as_deref(), &out),
        Command::Train { data, config, out } => cmd_train(&data, config.as_deref(), &out),
        Command::Eval {
            checkpoint,
            data,
            fractions,
            eta,
            out,
        } => cmd_eval(&checkpoint, &data, fractions.as_deref(), eta, &out),
        Command::Baseline { data, eta, out } => cmd_baseline(&data, eta, &out),
        Command::Experiment {
            data,
            config,
            seeds,
            fractions,
            eta,
            out,
        } => cmd_experiment(&data, config.as_deref(), &seeds, fractions.as_deref(), eta, &out),
    }
}

fn prepare_out(out: &OutArgs) -> CliResult<()> {
    if out.out.exists() {
        let non_empty = std::fs::read_dir(&out.out)
            .map_err(|e| user_error(format!("{}: {e}", out.out.display())))?
            .next()
            .is_some();
        if non_empty && !out.force {
            return Err(user_error(format!(
                "{} is not empty; pass --force to overwrite",
                out.out.display()
            )));
        }
    }
    std::fs::create_dir_all(&out.out).map_err(|e| user_error(format!("{}: {e}", out.out.display())))
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| {
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| user_error(format!("{}: {e}", path.display())))
}

fn add_data_inputs(m: &mut Manifest, dir: &Path) -> CliResult<()> {
    m.add_input(&dir.join(data::CURVES_FILE))?;
    m.add_input(&dir.join(data::META_FILE))?;
    Ok(())
}

fn cmd_generate(config: Option<&Path>, out: &OutArgs) -> CliResult<()> {
    let spec = match config {
        Some(p) => data::load_synthetic_spec(p)?,
        None => SyntheticSpec::default(),
    };
    prepare_out(out)?;
    let mut m = Manifest::new("generate", serde_json::to_value(&spec)?);
    m.seeds = vec![spec.seed];
    if let Some(p) = config {
        m.add_input(p)?;
    }
    m.outputs = vec![out.out.join(data::CURVES_FILE), out.out.join(data::META_FILE)];
    m.write(&out.out)?;
    let ds = data::generate_synthetic(&spec)?;
    data::write_dir(&ds, &out.out)?;
    println!(
        "generate: {} datasets x {} algorithms x {} fidelities -> {}",
        ds.num_datasets(),
        ds.num_algorithms(),
        ds.num_fidelities(),
        out.out.display()
    );
    Ok(())
}

fn cmd_train(data_dir: &Path, config: Option<&Path>, out: &OutArgs) -> CliResult<()> {
    let cfg = match config {
        Some(p) => TrainConfig::from_toml(&read_text(p)?)?,
        None => TrainConfig::default(),
    };
    let ds = data::load_dir(data_dir)?;
    prepare_out(out)?;
    let mut m = Manifest::new("train", serde_json::to_value(&cfg)?);
    m.seeds = vec![cfg.seed];
    add_data_inputs(&mut m, data_dir)?;
    if let Some(p) = config {
        m.add_input(p)?;
    }
    m.outputs = vec![
        out.out.join(CHECKPOINT_FILE),
        out.out.join(PREPROCESSING_FILE),
        out.out.join(HISTORY_FILE),
    ];
    let manifest_path = m.write(&out.out)?;

    let scaler = FeatureScaler::fit(&ds);
    let train_ds = scaler.apply(&ds)?;
    let (params, history) = train_with(&train_ds, None, &cfg, Exec::default()).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{} (partial manifest: {})", f.message, manifest_path.display());
        f
    })?;
    params.save(&out.out.join(CHECKPOINT_FILE))?;
    let pre = Preprocessing {
        seed: cfg.seed,
        softrank_regularization: cfg.softrank_regularization,
        scaler,
        initial_train_loss: history.initial_loss,
        final_train_loss: history.final_loss(),
    };
    write_file(&out.out.join(PREPROCESSING_FILE), &serde_json::to_string_pretty(&pre)?)?;
    write_file(&out.out.join(HISTORY_FILE), &history.to_csv())?;
    println!(
        "train: {} epochs, loss {} -> {}, checkpoint {}",
        history.epochs.len(),
        history.initial_loss,
        history.final_loss(),
        out.out.join(CHECKPOINT_FILE).display()
    );
    Ok(())
}

fn fractions_or_default(fractions: Option<&str>) -> CliResult<Vec<f64>> {
    match fractions {
        Some(f) => Ok(parse_fractions(f)?),
        None => Ok(DEFAULT_FRACTIONS.to_vec()),
    }
}

fn write_reports(report: &EvalReport, dir: &Path) -> CliResult<()> {
    write_file(&dir.join("report.json"), &render_report(report, ReportFormat::Json))?;
    write_file(&dir.join("report.md"), &render_report(report, ReportFormat::Markdown))?;
    write_file(&dir.join("fraction_curve.csv"), &export_fraction_curve(report)?)?;
    Ok(())
}

fn report_outputs(dir: &Path) -> Vec<PathBuf> {
    ["report.json", "report.md", "fraction_curve.csv"]
        .iter()
        .map(|f| dir.join(f))
        .collect()
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into())
}

fn cmd_eval(checkpoint: &Path, data_dir: &Path, fractions: Option<&str>, eta: usize, out: &OutArgs) -> CliResult<()> {
    let fractions = fractions_or_default(fractions)?;
    let sh_cfg = ShConfig::new(eta)?;
    let params = ImfasParams::load(checkpoint)?;
    let pre_path = checkpoint.with_file_name(PREPROCESSING_FILE);
    let pre: Preprocessing = serde_json::from_str(&read_text(&pre_path)?)?;
    let ds = data::load_dir(data_dir)?;
    let dims = params.dims();
    if dims.algorithms != ds.num_algorithms() || dims.meta_features != ds.num_features() {
        return Err(user_error(format!(
            "checkpoint expects |A|={} and F={}, data has |A|={} and F={}",
            dims.algorithms,
            dims.meta_features,
            ds.num_algorithms(),
            ds.num_features()
        )));
    }
    prepare_out(out)?;
    let config = json!({ "fractions": fractions, "eta": eta });
    let mut m = Manifest::new("eval", config.clone());
    m.seeds = vec![pre.seed];
    m.add_input(checkpoint)?;
    m.add_input(&pre_path)?;
    add_data_inputs(&mut m, data_dir)?;
    m.outputs = report_outputs(&out.out);
    m.write(&out.out)?;

    let test = pre.scaler.apply(&ds)?;
    let softrank = TrainConfig {
        softrank_regularization: pre.softrank_regularization,
        ..TrainConfig::default()
    }
    .softrank();
    let ev = evaluate_model(&params, &test, &fractions, &softrank)?;
    let sh = sh_eval(&ds, &sh_cfg)?;
    let seed = SeedResult {
        seed: pre.seed,
        model: ev.per_fraction,
        sh: ShSeedResult {
            mean: sh.summary.mean,
            per_dataset: sh.per_dataset,
        },
        final_train_loss: pre.final_train_loss,
        initial_train_loss: pre.initial_train_loss,
    };
    let hash_input = json!({ "config": config, "checkpoint": m.inputs[0].1 });
    let report = EvalReport::aggregate(
        dataset_name(data_dir),
        fractions,
        vec![seed],
        sh_cfg.describe(),
        ev.excluded,
        imfas::sha256_hex(hash_input.to_string().as_bytes()),
        DatasetCounts {
            total: ds.num_datasets(),
            train: 0,
            test: ds.num_datasets(),
        },
    )?;
    write_reports(&report, &out.out)?;
    let cells: Vec<String> = report
        .aggregate
        .iter()
        .map(|a| format!("{}: {:.3}", a.fraction, a.mean))
        .collect();
    println!("eval: {} | SH {:.3}", cells.join(", "), report.sh.mean);
    Ok(())
}

fn cmd_baseline(data_dir: &Path, eta: usize, out: &OutArgs) -> CliResult<()> {
    let cfg = ShConfig::new(eta)?;
    let ds = data::load_dir(data_dir)?;
    prepare_out(out)?;
    let mut m = Manifest::new("baseline", json!({ "eta": eta, "schedule": cfg.describe() }));
    add_data_inputs(&mut m, data_dir)?;
    let report_path = out.out.join("sh_report.json");
    m.outputs = vec![report_path.clone()];
    m.write(&out.out)?;
    let rep = sh_eval(&ds, &cfg)?;
    let mut text = serde_json::to_string_pretty(&rep)?;
    text.push('\n');
    write_file(&report_path, &text)?;
    println!(
        "baseline: SH (eta={eta}) mean {:.3} ± {:.3} over {} datasets",
        rep.summary.mean,
        rep.summary.sd,
        rep.per_dataset.len()
    );
    Ok(())
}

fn parse_seeds(text: &str) -> CliResult<Vec<u64>> {
    let seeds = text
        .split(',')
        .map(|t| t.trim().parse::<u64>().map_err(|_| user_error(format!("bad seed `{t}`"))))
        .collect::<CliResult<Vec<_>>>()?;
    if seeds.is_empty() {
        return Err(user_error("at least one seed is required"));
    }
    Ok(seeds)
}

fn cmd_experiment(
    source: &Path,
    config: Option<&Path>,
    seeds: &str,
    fractions: Option<&str>,
    eta: Option<usize>,
    out: &OutArgs,
) -> CliResult<()> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::from_toml(&read_text(p)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(f) = fractions {
        cfg.fractions = parse_fractions(f)?;
    }
    if let Some(e) = eta {
        cfg.eta = e;
    }
    cfg.validate()?;
    let seeds = parse_seeds(seeds)?;

    let from_spec = source.extension().is_some_and(|e| e == "toml");
    let ds: MetaDataset = if from_spec {
        data::generate_synthetic(&data::load_synthetic_spec(source)?)?
    } else {
        data::load_dir(source)?
    };
    prepare_out(out)?;
    let mut m = Manifest::new("experiment", serde_json::to_value(&cfg)?);
    m.seeds = seeds.clone();
    if from_spec {
        m.add_input(source)?;
    } else {
        add_data_inputs(&mut m, source)?;
    }
    if let Some(p) = config {
        m.add_input(p)?;
    }
    m.outputs = report_outputs(&out.out);
    for s in &seeds {
        let dir = out.out.join(format!("seed_{s}"));
        m.outputs.push(dir.join(HISTORY_FILE));
        m.outputs.push(dir.join(CHECKPOINT_FILE));
    }
    let manifest_path = m.write(&out.out)?;
    println!(
        "experiment: {} datasets, seeds {:?}, manifest {}",
        ds.num_datasets(),
        seeds,
        manifest_path.display()
    );

    let (report, runs) = run_seeds(&ds, &cfg, &seeds, Exec::default()).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{} (partial manifest: {})", f.message, manifest_path.display());
        f
    })?;
    for run in &runs {
        let dir = out.out.join(format!("seed_{}", run.result.seed));
        std::fs::create_dir_all(&dir).map_err(|e| user_error(format!("{}: {e}", dir.display())))?;
        write_file(&dir.join(HISTORY_FILE), &run.history.to_csv())?;
        run.params.save(&dir.join(CHECKPOINT_FILE))?;
        println!(
            "seed {}: loss {:.4} -> {:.4}",
            run.result.seed, run.history.initial_loss, run.history.final_loss()
        );
    }
    write_reports(&report, &out.out)?;
    print!("{}", render_report(&report, ReportFormat::Markdown).lines().take(3).collect::<Vec<_>>().join("\n"));
    println!();
    Ok(())
}
