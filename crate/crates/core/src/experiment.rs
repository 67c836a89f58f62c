//! Synthetic experiment sweeps: one cell per (method, N, sigma2, R, seed).

use std::fmt;
use std::str::FromStr;
use std::sync::mpsc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate_task, Example, TaskConfig, TaskKind};
use crate::error::{invalid, Error, Result};
use crate::model::Linear2RNN;
use crate::recovery::{Method, RecoveryConfig};
use crate::refine::{sgd_refine, RefineConfig};
use crate::spectral::{apply_zero_fallback, spectral_learn, SpectralConfig};

/// Learning procedures compared in the sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpMethod {
    Ls,
    Nuclear,
    Iht,
    Tiht,
    /// TIHT followed by Adam refinement.
    TihtSgd,
    TihtTt,
}

impl ExpMethod {
    pub const ALL: [ExpMethod; 6] = [
        ExpMethod::Ls,
        ExpMethod::Nuclear,
        ExpMethod::Iht,
        ExpMethod::Tiht,
        ExpMethod::TihtSgd,
        ExpMethod::TihtTt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExpMethod::Ls => "ls",
            ExpMethod::Nuclear => "nuclear",
            ExpMethod::Iht => "iht",
            ExpMethod::Tiht => "tiht",
            ExpMethod::TihtSgd => "tiht-sgd",
            ExpMethod::TihtTt => "tiht-tt",
        }
    }

    pub fn recovery_method(self) -> Method {
        match self {
            ExpMethod::Ls => Method::LeastSquares,
            ExpMethod::Nuclear => Method::NuclearNorm,
            ExpMethod::Iht => Method::Iht,
            ExpMethod::Tiht | ExpMethod::TihtSgd => Method::Tiht,
            ExpMethod::TihtTt => Method::TihtTt,
        }
    }
}

impl fmt::Display for ExpMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExpMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tiht-sgd" | "tiht+sgd" => Ok(ExpMethod::TihtSgd),
            other => match other.parse::<Method>()? {
                Method::LeastSquares => Ok(ExpMethod::Ls),
                Method::NuclearNorm => Ok(ExpMethod::Nuclear),
                Method::Iht => Ok(ExpMethod::Iht),
                Method::Tiht => Ok(ExpMethod::Tiht),
                Method::TihtTt => Ok(ExpMethod::TihtTt),
            },
        }
    }
}

/// Settings shared by every cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSettings {
    pub l: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub step: Option<f64>,
    /// Minibatch size of the TT method (capped at N).
    pub minibatch: usize,
    /// Iteration scale of the TT method's step decay.
    pub step_decay: Option<f64>,
    pub refine: RefineConfig,
    pub zero_fallback: bool,
    pub test_size: usize,
    pub test_length: usize,
    /// Standard deviation of the random task's target parameters.
    pub target_scale: f64,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            l: 2,
            max_iters: 5000,
            rel_tol: 1e-7,
            step: None,
            minibatch: 32,
            step_decay: Some(100.0),
            refine: RefineConfig::default(),
            zero_fallback: true,
            test_size: crate::data::TEST_SIZE,
            test_length: crate::data::TEST_LENGTH,
            target_scale: crate::data::RANDOM_TASK_SCALE,
        }
    }
}

pub fn default_rank(task: TaskKind) -> usize {
    match task {
        TaskKind::RandomRnn => 5,
        TaskKind::Arithmetic => 2,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub task: TaskKind,
    pub method: ExpMethod,
    pub n: usize,
    pub sigma2: f64,
    pub rank: usize,
    pub seed: u64,
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub sigma2: f64,
    #[serde(rename = "R")]
    pub rank: usize,
    pub seed: u64,
    pub train_mse: f64,
    pub test_mse: f64,
    /// Seconds spent learning (data generation excluded).
    pub wall_time: f64,
    /// `ok`, `zero-fallback`, `diverged-fallback`, or `error: <message>`.
    pub status: String,
}

impl CellResult {
    pub fn is_error(&self) -> bool {
        self.status.starts_with("error")
    }
}

/// Learns a model for one cell and reports `(model, fallback flag)`.
pub fn learn_cell(train: &[Vec<Example>], spec: &CellSpec, s: &ExperimentSettings) -> Result<(Linear2RNN, bool)> {
    let n_min = train.iter().map(|d| d.len()).min().unwrap_or(0);
    let mut rc = RecoveryConfig::new(spec.method.recovery_method(), spec.rank);
    rc.max_iters = s.max_iters;
    rc.rel_tol = s.rel_tol;
    rc.step = s.step;
    rc.seed = spec.seed;
    rc.minibatch = Some(s.minibatch.min(n_min).max(1));
    rc.step_decay = s.step_decay;
    if spec.sigma2 > 0.0 {
        rc.noise_variance = Some(spec.sigma2);
    }
    let mut cfg = SpectralConfig::new(s.l, rc);
    if spec.method == ExpMethod::TihtSgd {
        cfg.zero_fallback = false;
        let raw = spectral_learn(train, &cfg)?.model;
        let union: Vec<Example> = train.iter().flatten().cloned().collect();
        let rcfg = RefineConfig {
            seed: spec.seed,
            ..s.refine.clone()
        };
        let (refined, _) = sgd_refine(&raw, &union, &rcfg)?;
        if s.zero_fallback {
            let (m, fell, _) = apply_zero_fallback(refined, &union)?;
            return Ok((m, fell));
        }
        return Ok((refined, false));
    }
    cfg.zero_fallback = s.zero_fallback;
    let learned = spectral_learn(train, &cfg)?;
    Ok((learned.model, learned.fallback))
}

/// Generates the cell's task, learns, and scores train/test MSE.
/// Divergence yields the zero model; other failures are recorded in `status`.
pub fn run_cell(spec: &CellSpec, s: &ExperimentSettings) -> CellResult {
    let mut row = CellResult {
        method: spec.method.name().into(),
        n: spec.n,
        sigma2: spec.sigma2,
        rank: spec.rank,
        seed: spec.seed,
        train_mse: f64::NAN,
        test_mse: f64::NAN,
        wall_time: 0.0,
        status: String::new(),
    };
    let mut tc = TaskConfig::new(spec.task, spec.n, spec.sigma2, spec.seed);
    tc.l = s.l;
    tc.test_size = s.test_size;
    tc.test_length = s.test_length;
    tc.scale = s.target_scale;
    let task = match generate_task(&tc) {
        Ok(t) => t,
        Err(e) => {
            row.status = format!("error: {e}");
            return row;
        }
    };
    let train: Vec<Vec<Example>> = task.train.iter().map(|d| d.examples.clone()).collect();
    let start = Instant::now();
    let outcome = learn_cell(&train, spec, s);
    row.wall_time = start.elapsed().as_secs_f64();
    let (model, status) = match outcome {
        Ok((m, false)) => (m, "ok".to_string()),
        Ok((m, true)) => (m, "zero-fallback".to_string()),
        Err(Error::Diverged { .. }) => (
            Linear2RNN::zeros(spec.rank, task.inputs.dim(), task.target.p()),
            "diverged-fallback".to_string(),
        ),
        Err(e) => {
            row.status = format!("error: {e}");
            return row;
        }
    };
    let union = task.train_union();
    match (model.mse(&union), model.mse(&task.test.examples)) {
        (Ok(tr), Ok(te)) => {
            row.train_mse = tr;
            row.test_mse = te;
            row.status = status;
        }
        (Err(e), _) | (_, Err(e)) => row.status = format!("error: {e}"),
    }
    row
}

/// Full cartesian product of a sweep, in a deterministic order.
pub fn grid(
    task: TaskKind,
    methods: &[ExpMethod],
    sizes: &[usize],
    noise: &[f64],
    ranks: &[usize],
    seeds: &[u64],
) -> Vec<CellSpec> {
    let mut out = Vec::with_capacity(methods.len() * sizes.len() * noise.len() * ranks.len() * seeds.len());
    for &method in methods {
        for &n in sizes {
            for &sigma2 in noise {
                for &rank in ranks {
                    for &seed in seeds {
                        out.push(CellSpec {
                            task,
                            method,
                            n,
                            sigma2,
                            rank,
                            seed,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Runs cells on a worker pool of `threads` workers (`None`: rayon default).
/// Results reach `sink` one at a time on the calling thread, in completion order.
pub fn run_cells(
    cells: &[CellSpec],
    s: &ExperimentSettings,
    threads: Option<usize>,
    mut sink: impl FnMut(CellResult) -> Result<()>,
) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(invalid("thread count must be >= 1"));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| invalid(format!("cannot build worker pool: {e}")))?;
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        scope.spawn(move || {
            pool.install(|| {
                cells.par_iter().for_each_with(tx, |tx, c| {
                    // receiver only disappears after a sink error
                    let _ = tx.send(run_cell(c, s));
                })
            })
        });
        for row in rx {
            sink(row)?;
        }
        Ok(())
    })
}

/// Convenience wrapper collecting results in grid order.
pub fn run_cells_collect(
    cells: &[CellSpec],
    s: &ExperimentSettings,
    threads: Option<usize>,
) -> Result<Vec<CellResult>> {
    let mut rows = Vec::with_capacity(cells.len());
    run_cells(cells, s, threads, |r| {
        rows.push(r);
        Ok(())
    })?;
    let key = |r: &CellResult| (r.method.clone(), r.n, r.sigma2.to_bits(), r.rank, r.seed);
    let order: std::collections::HashMap<_, usize> = cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            (
                (c.method.name().to_string(), c.n, c.sigma2.to_bits(), c.rank, c.seed),
                i,
            )
        })
        .collect();
    rows.sort_by_key(|r| order.get(&key(r)).copied().unwrap_or(usize::MAX));
    Ok(rows)
}

/// Seed-averaged row; error rows are excluded from the means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub sigma2: f64,
    #[serde(rename = "R")]
    pub rank: usize,
    pub runs: usize,
    pub errors: usize,
    pub train_mse: f64,
    pub test_mse: f64,
    pub wall_time: f64,
}

pub fn average_over_seeds(rows: &[CellResult]) -> Vec<SummaryRow> {
    let mut out: Vec<SummaryRow> = Vec::new();
    for r in rows {
        let pos = out
            .iter()
            .position(|s| s.method == r.method && s.n == r.n && s.sigma2 == r.sigma2 && s.rank == r.rank);
        let s = match pos {
            Some(i) => &mut out[i],
            None => {
                out.push(SummaryRow {
                    method: r.method.clone(),
                    n: r.n,
                    sigma2: r.sigma2,
                    rank: r.rank,
                    runs: 0,
                    errors: 0,
                    train_mse: 0.0,
                    test_mse: 0.0,
                    wall_time: 0.0,
                });
                out.last_mut().expect("just pushed")
            }
        };
        if r.is_error() {
            s.errors += 1;
        } else {
            s.runs += 1;
            s.train_mse += r.train_mse;
            s.test_mse += r.test_mse;
            s.wall_time += r.wall_time;
        }
    }
    for s in &mut out {
        let k = s.runs as f64;
        if s.runs == 0 {
            s.train_mse = f64::NAN;
            s.test_mse = f64::NAN;
        } else {
            s.train_mse /= k;
            s.test_mse /= k;
            s.wall_time /= k;
        }
    }
    out
}
