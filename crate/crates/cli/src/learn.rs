use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::Args;
use l2rnn::data::{aggregate_csv, window_series, CsvSchema};
use l2rnn::metrics::{metrics, Metrics};
use l2rnn::recovery::RecoveryReport;
use l2rnn::refine::RefineReport;
use l2rnn::spectral::{apply_zero_fallback, per_step_datasets, RankDiagnostics};
use l2rnn::{
    sgd_refine, spectral_learn, spectral_learn_general, Example, Method, RecoveryConfig, RefineConfig, SequenceDataset,
    SpectralConfig,
};
use serde::{Deserialize, Serialize};

use crate::config::{load, read, sibling, write_json};
use crate::generate::Manifest;
use crate::{user, ConfigArg};

#[derive(Debug, Args)]
pub struct LearnArgs {
    #[command(flatten)]
    pub config: ConfigArg,

    /// Directory written by `generate`; its manifest names the files.
    #[arg(long, conflicts_with = "train")]
    pub data: Option<PathBuf>,

    /// JSON-lines training files; examples are grouped by length.
    #[arg(long, num_args = 1..)]
    pub train: Vec<PathBuf>,

    /// Time-series CSV; windows of each needed length become the training sets.
    #[arg(long, conflicts_with_all = ["data", "train"], requires = "csv_schema")]
    pub csv: Option<PathBuf>,

    /// CSV schema (JSON or TOML); its `window` is ignored for training.
    #[arg(long)]
    pub csv_schema: Option<PathBuf>,

    /// Test set scored into the report.
    #[arg(long)]
    pub test: Option<PathBuf>,

    /// Model output path.
    #[arg(long)]
    pub out: PathBuf,

    /// Report path [default: <out stem>.report.json].
    #[arg(long)]
    pub report: Option<PathBuf>,

    /// ls, nuclear, iht, tiht or tiht-tt.
    #[arg(long)]
    pub method: Option<Method>,

    #[arg(long)]
    pub rank: Option<usize>,

    #[arg(long)]
    pub l: Option<usize>,

    /// Gradient step size gamma [default: 1 / sigma_max(X)^2].
    #[arg(long)]
    pub step: Option<f64>,

    #[arg(long)]
    pub max_iters: Option<usize>,

    #[arg(long)]
    pub rel_tol: Option<f64>,

    /// Minibatch size of tiht-tt [default: full batch].
    #[arg(long)]
    pub minibatch: Option<usize>,

    /// tiht-tt minibatch steps shrink as gamma / (1 + t / decay).
    #[arg(long)]
    pub step_decay: Option<f64>,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Known noise variance (relaxes the nuclear-norm constraint).
    #[arg(long)]
    pub noise_variance: Option<f64>,

    /// Keep the learned model even when the zero function fits better.
    #[arg(long)]
    pub no_fallback: bool,

    /// Use every length 0..=2L+1 (general spectral algorithm).
    #[arg(long)]
    pub general: bool,

    /// Refine the spectral estimate with Adam on all training data.
    #[arg(long)]
    pub refine: bool,

    #[arg(long)]
    pub refine_lr: Option<f64>,

    #[arg(long)]
    pub refine_epochs: Option<usize>,
}

/// Learner settings as read from a config file and echoed into the report.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LearnFile {
    pub method: Option<String>,
    pub rank: Option<usize>,
    pub l: Option<usize>,
    pub step: Option<f64>,
    pub max_iters: Option<usize>,
    pub rel_tol: Option<f64>,
    pub minibatch: Option<usize>,
    pub step_decay: Option<f64>,
    pub seed: Option<u64>,
    pub noise_variance: Option<f64>,
    pub zero_fallback: Option<bool>,
    pub general: Option<bool>,
    pub refine: Option<RefineConfig>,
}

#[derive(Debug, Serialize)]
pub struct LearnReport {
    pub method: String,
    pub rank: usize,
    pub l: usize,
    pub general: bool,
    pub converged: bool,
    pub recovery: Vec<RecoveryReport>,
    pub diagnostics: RankDiagnostics,
    pub fallback: bool,
    pub train_mse: f64,
    pub refine: Option<RefineReport>,
    pub test: Option<Metrics>,
    pub wall_time: f64,
    pub config: SpectralConfig,
}

fn merge(
    a: &LearnArgs,
    f: LearnFile,
    default_l: usize,
) -> anyhow::Result<(SpectralConfig, bool, Option<RefineConfig>)> {
    let method = match (a.method, &f.method) {
        (Some(m), _) => m,
        (None, Some(s)) => s.parse()?,
        (None, None) => Method::Tiht,
    };
    let rank = a.rank.or(f.rank).ok_or_else(|| user("no rank given (--rank)"))?;
    let mut rc = RecoveryConfig::new(method, rank);
    rc.step = a.step.or(f.step);
    if let Some(k) = a.max_iters.or(f.max_iters) {
        rc.max_iters = k;
    }
    if let Some(t) = a.rel_tol.or(f.rel_tol) {
        rc.rel_tol = t;
    }
    rc.minibatch = a.minibatch.or(f.minibatch);
    rc.step_decay = a.step_decay.or(f.step_decay);
    rc.seed = a.seed.or(f.seed).unwrap_or(0);
    rc.noise_variance = a.noise_variance.or(f.noise_variance);
    let mut cfg = SpectralConfig::new(a.l.or(f.l).unwrap_or(default_l), rc);
    cfg.zero_fallback = !a.no_fallback && f.zero_fallback.unwrap_or(true);
    let general = a.general || f.general.unwrap_or(false);
    let refine = if a.refine || f.refine.is_some() {
        let mut r = f.refine.unwrap_or_default();
        r.seed = cfg.recovery.seed;
        if let Some(lr) = a.refine_lr {
            r.lr = lr;
        }
        if let Some(e) = a.refine_epochs {
            r.epochs = e;
        }
        Some(r)
    } else {
        None
    };
    Ok((cfg, general, refine))
}

fn load_examples(paths: &[PathBuf]) -> anyhow::Result<Vec<Example>> {
    let mut out = Vec::new();
    for p in paths {
        let ds = SequenceDataset::load(p).with_context(|| format!("reading {}", p.display()))?;
        out.extend(ds.examples);
    }
    Ok(out)
}

fn by_length(examples: Vec<Example>) -> BTreeMap<usize, Vec<Example>> {
    let mut m: BTreeMap<usize, Vec<Example>> = BTreeMap::new();
    for e in examples {
        m.entry(e.len()).or_default().push(e);
    }
    m
}

fn take(groups: &mut BTreeMap<usize, Vec<Example>>, len: usize) -> anyhow::Result<Vec<Example>> {
    groups
        .remove(&len)
        .ok_or_else(|| user(format!("no training examples of length {len}")))
}

/// Datasets for lengths `0..=2L+1`; missing lengths are cut from per-step outputs when available.
fn general_datasets(mut groups: BTreeMap<usize, Vec<Example>>, l: usize) -> anyhow::Result<Vec<Vec<Example>>> {
    let top = 2 * l + 1;
    let missing: Vec<usize> = (1..=top).filter(|k| !groups.contains_key(k)).collect();
    if missing.is_empty() {
        return Ok((0..=top).map(|k| groups.remove(&k).unwrap_or_default()).collect());
    }
    let long: Vec<Example> = groups
        .range(top..)
        .flat_map(|(_, v)| v.iter().filter(|e| e.ys.is_some()).cloned())
        .collect();
    if long.is_empty() {
        return Err(user(format!(
            "general algorithm needs lengths 1..={top}; missing {missing:?} and no per-step outputs to cut them from"
        )));
    }
    let lengths: Vec<usize> = (1..=top).collect();
    let mut cut = per_step_datasets(&long, &lengths)?;
    let mut out = vec![groups.remove(&0).unwrap_or_default()];
    out.append(&mut cut);
    Ok(out)
}

/// Windows of every length in `lengths` cut from one aggregated series.
fn csv_groups(csv: &Path, schema: &Path, lengths: &[usize]) -> anyhow::Result<BTreeMap<usize, Vec<Example>>> {
    let mut schema: CsvSchema = read(schema)?;
    let file = std::fs::File::open(csv).with_context(|| format!("reading {}", csv.display()))?;
    let series = aggregate_csv(file, &schema)?;
    let mut out = BTreeMap::new();
    for &len in lengths {
        schema.window = len;
        let ds = window_series(&series, &schema)?;
        if !ds.is_empty() {
            out.insert(len, ds.examples);
        }
    }
    Ok(out)
}

fn score(model: &l2rnn::Linear2RNN, path: &Path) -> anyhow::Result<Metrics> {
    let ds = SequenceDataset::load(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(metrics(model, &ds.examples)?)
}

pub fn run(a: LearnArgs) -> anyhow::Result<()> {
    let (train_paths, test_path, default_l) = match &a.data {
        Some(dir) => {
            let m = Manifest::load(dir)?;
            let train: Vec<PathBuf> = m.train.iter().map(|f| dir.join(f)).collect();
            (train, a.test.clone().or_else(|| Some(dir.join(&m.test))), m.config.l)
        }
        None if a.train.is_empty() && a.csv.is_none() => {
            return Err(user("no training data given (--data, --train or --csv)"))
        }
        None => (a.train.clone(), a.test.clone(), 2),
    };
    let file: LearnFile = load(a.config.config.as_deref())?;
    let (cfg, general, refine) = merge(&a, file, default_l)?;
    let l = cfg.l;
    if l == 0 {
        return Err(user("L must be >= 1"));
    }
    let mut groups = match (&a.csv, &a.csv_schema) {
        (Some(csv), Some(schema)) => {
            let lengths: Vec<usize> = if general {
                (1..=2 * l + 1).collect()
            } else {
                vec![l, 2 * l, 2 * l + 1]
            };
            csv_groups(csv, schema, &lengths)?
        }
        _ => by_length(load_examples(&train_paths)?),
    };
    let datasets = if general {
        general_datasets(groups, l)?
    } else {
        vec![
            take(&mut groups, l)?,
            take(&mut groups, 2 * l)?,
            take(&mut groups, 2 * l + 1)?,
        ]
    };

    let started = Instant::now();
    let learn = |cfg: &SpectralConfig| {
        if general {
            spectral_learn_general(&datasets, cfg)
        } else {
            spectral_learn(&datasets, cfg)
        }
    };
    let (model, learned, refine_report, fallback, train_mse) = match &refine {
        None => {
            let learned = learn(&cfg)?;
            (
                learned.model.clone(),
                learned.clone(),
                None,
                learned.fallback,
                learned.train_mse,
            )
        }
        Some(rcfg) => {
            let raw = learn(&SpectralConfig {
                zero_fallback: false,
                ..cfg.clone()
            })?;
            let union: Vec<Example> = datasets.iter().flatten().cloned().collect();
            let (refined, rep) = sgd_refine(&raw.model, &union, rcfg)?;
            let (m, fell, mse) = if cfg.zero_fallback {
                apply_zero_fallback(refined, &union)?
            } else {
                let mse = refined.mse(&union)?;
                (refined, false, mse)
            };
            (m, raw, Some(rep), fell, mse)
        }
    };
    let wall_time = started.elapsed().as_secs_f64();
    if learned.diagnostics.warning {
        log::warn!(
            "numerical rank {} differs from requested rank {}",
            learned.diagnostics.numerical_rank,
            learned.diagnostics.requested_rank
        );
    }

    model
        .save(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    let test = test_path.as_deref().map(|p| score(&model, p)).transpose()?;
    let report = LearnReport {
        method: cfg.recovery.method.name().into(),
        rank: cfg.recovery.rank,
        l,
        general,
        converged: learned.reports.iter().all(|r| r.converged),
        recovery: learned.reports,
        diagnostics: learned.diagnostics,
        fallback,
        train_mse,
        refine: refine_report,
        test,
        wall_time,
        config: cfg,
    };
    let report_path = a.report.clone().unwrap_or_else(|| sibling(&a.out, "report.json"));
    write_json(&report_path, &report)?;
    println!(
        "{}",
        serde_json::to_string(&serde_json::json!({
            "model": a.out,
            "report": report_path,
            "train_mse": report.train_mse,
            "test_mse": report.test.as_ref().map(|t| t.mse),
            "fallback": report.fallback,
            "converged": report.converged,
        }))?
    );
    Ok(())
}
