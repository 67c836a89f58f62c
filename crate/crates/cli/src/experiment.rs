use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use l2rnn::data::TaskKind;
use l2rnn::experiment::{average_over_seeds, default_rank, grid, run_cells, CellResult};
use l2rnn::{ExpMethod, ExperimentSettings};
use serde::Deserialize;

use crate::config::{load, sibling};
use crate::{user, ConfigArg};

pub const DEFAULT_SIZES: [usize; 5] = [20, 100, 500, 2000, 10000];
pub const DEFAULT_SEEDS: u64 = 5;
pub const FULL_SIZES: [usize; 10] = [20, 50, 100, 200, 500, 1000, 2000, 5000, 10000, 20000];
pub const FULL_SEEDS: u64 = 10;
pub const DEFAULT_NOISE: [f64; 2] = [0.0, 1.0];

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub config: ConfigArg,

    /// Per-cell results CSV.
    #[arg(long)]
    pub out: PathBuf,

    /// Seed-averaged CSV [default: <out stem>.summary.csv].
    #[arg(long)]
    pub summary: Option<PathBuf>,

    /// random-rnn or arithmetic [default: random-rnn].
    #[arg(long)]
    pub task: Option<TaskKind>,

    /// Comma-separated: ls,nuclear,iht,tiht,tiht-sgd,tiht-tt [default: all].
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<ExpMethod>>,

    /// Training sizes N per length [default: 20,100,500,2000,10000].
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,

    /// Noise variances [default: 0,1].
    #[arg(long, value_delimiter = ',')]
    pub noise: Option<Vec<f64>>,

    /// Ranks R [default: 5 for random-rnn, 2 for arithmetic].
    #[arg(long, value_delimiter = ',')]
    pub ranks: Option<Vec<usize>>,

    /// Number of seeds, run as 0..seeds [default: 5].
    #[arg(long)]
    pub seeds: Option<u64>,

    /// Ten sizes from 20 to 20000 and ten seeds.
    #[arg(long)]
    pub full_grid: bool,

    #[arg(long)]
    pub l: Option<usize>,

    #[arg(long)]
    pub max_iters: Option<usize>,

    #[arg(long)]
    pub test_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
pub struct ExperimentFile {
    task: Option<TaskKind>,
    methods: Option<Vec<String>>,
    sizes: Option<Vec<usize>>,
    noise: Option<Vec<f64>>,
    ranks: Option<Vec<usize>>,
    seeds: Option<u64>,
    full_grid: Option<bool>,
    settings: Option<ExperimentSettings>,
}

pub struct Sweep {
    pub task: TaskKind,
    pub methods: Vec<ExpMethod>,
    pub sizes: Vec<usize>,
    pub noise: Vec<f64>,
    pub ranks: Vec<usize>,
    pub seeds: Vec<u64>,
    pub settings: ExperimentSettings,
}

fn resolve(a: &ExperimentArgs) -> anyhow::Result<Sweep> {
    let f: ExperimentFile = load(a.config.config.as_deref())?;
    let task = a.task.or(f.task).unwrap_or(TaskKind::RandomRnn);
    let methods = match (&a.methods, f.methods) {
        (Some(m), _) => m.clone(),
        (None, Some(names)) => names.iter().map(|s| s.parse()).collect::<l2rnn::Result<_>>()?,
        (None, None) => ExpMethod::ALL.to_vec(),
    };
    let full = a.full_grid || f.full_grid.unwrap_or(false);
    let sizes = a.sizes.clone().or(f.sizes).unwrap_or_else(|| {
        if full {
            FULL_SIZES.to_vec()
        } else {
            DEFAULT_SIZES.to_vec()
        }
    });
    let seeds = a
        .seeds
        .or(f.seeds)
        .unwrap_or(if full { FULL_SEEDS } else { DEFAULT_SEEDS });
    let mut settings = f.settings.unwrap_or_default();
    if let Some(l) = a.l {
        settings.l = l;
    }
    if let Some(k) = a.max_iters {
        settings.max_iters = k;
    }
    if let Some(t) = a.test_size {
        settings.test_size = t;
    }
    let sweep = Sweep {
        task,
        methods,
        sizes,
        noise: a.noise.clone().or(f.noise).unwrap_or_else(|| DEFAULT_NOISE.to_vec()),
        ranks: a.ranks.clone().or(f.ranks).unwrap_or_else(|| vec![default_rank(task)]),
        seeds: (0..seeds).collect(),
        settings,
    };
    if sweep.methods.is_empty() || sweep.sizes.is_empty() || sweep.noise.is_empty() || sweep.ranks.is_empty() {
        return Err(user("empty sweep axis"));
    }
    if sweep.seeds.is_empty() {
        return Err(user("seeds must be >= 1"));
    }
    if sweep.sizes.contains(&0) || sweep.ranks.contains(&0) {
        return Err(user("sizes and ranks must be >= 1"));
    }
    if sweep.noise.iter().any(|s| s.is_nan() || *s < 0.0) {
        return Err(user("noise variances must be non-negative"));
    }
    Ok(sweep)
}

pub fn run(a: ExperimentArgs, threads: Option<usize>) -> anyhow::Result<()> {
    let sweep = resolve(&a)?;
    let cells = grid(
        sweep.task,
        &sweep.methods,
        &sweep.sizes,
        &sweep.noise,
        &sweep.ranks,
        &sweep.seeds,
    );
    let mut out = csv::Writer::from_path(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let total = cells.len();
    let mut rows: Vec<CellResult> = Vec::with_capacity(total);
    let mut sink_err = None;
    let res = run_cells(&cells, &sweep.settings, threads, |row| {
        let write = out.serialize(&row).and_then(|_| out.flush().map_err(csv::Error::from));
        if let Err(e) = write {
            sink_err = Some(e);
            return Err(l2rnn::Error::Io(std::io::Error::other("result writer failed")));
        }
        if row.is_error() {
            log::error!(
                "{} N={} sigma2={} R={} seed={}: {}",
                row.method,
                row.n,
                row.sigma2,
                row.rank,
                row.seed,
                row.status
            );
        }
        rows.push(row);
        log::info!("{}/{total} cells done", rows.len());
        Ok(())
    });
    if let Some(e) = sink_err {
        return Err(e).with_context(|| format!("writing {}", a.out.display()));
    }
    res?;
    out.flush()?;

    let summary = average_over_seeds(&order(&cells, rows));
    let summary_path = a.summary.clone().unwrap_or_else(|| sibling(&a.out, "summary.csv"));
    let mut w = csv::Writer::from_path(&summary_path).with_context(|| format!("writing {}", summary_path.display()))?;
    for s in &summary {
        w.serialize(s)?;
    }
    w.flush()?;

    let stdout = std::io::stdout();
    let mut o = stdout.lock();
    writeln!(
        o,
        "{:<9} {:>6} {:>7} {:>3} {:>5} {:>12} {:>12}",
        "method", "N", "sigma2", "R", "runs", "train_mse", "test_mse"
    )?;
    for s in &summary {
        writeln!(
            o,
            "{:<9} {:>6} {:>7} {:>3} {:>5} {:>12.4e} {:>12.4e}",
            s.method, s.n, s.sigma2, s.rank, s.runs, s.train_mse, s.test_mse
        )?;
    }
    Ok(())
}

/// Completion order to grid order, so summaries do not depend on scheduling.
fn order(cells: &[l2rnn::CellSpec], mut rows: Vec<CellResult>) -> Vec<CellResult> {
    let pos = |r: &CellResult| {
        cells
            .iter()
            .position(|c| {
                c.method.name() == r.method
                    && c.n == r.n
                    && c.sigma2 == r.sigma2
                    && c.rank == r.rank
                    && c.seed == r.seed
            })
            .unwrap_or(usize::MAX)
    };
    rows.sort_by_cached_key(pos);
    rows
}
