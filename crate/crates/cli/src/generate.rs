use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use l2rnn::data::{generate_task, TaskConfig, TaskKind};
use serde::{Deserialize, Serialize};

use crate::config::{load, write_json};
use crate::{user, ConfigArg};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub config: ConfigArg,

    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,

    /// random-rnn or arithmetic.
    #[arg(long)]
    pub task: Option<TaskKind>,

    /// Examples per training length.
    #[arg(long)]
    pub n: Option<usize>,

    /// Per-length sizes, overriding --n.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,

    #[arg(long)]
    pub sigma2: Option<f64>,

    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long)]
    pub l: Option<usize>,

    /// Random-task dimensions n,d,p.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub dims: Option<Vec<usize>>,

    /// Standard deviation of the random target's parameters.
    #[arg(long)]
    pub scale: Option<f64>,

    /// Every length 0..=2L+1 instead of L, 2L, 2L+1.
    #[arg(long)]
    pub all_lengths: bool,

    #[arg(long)]
    pub test_size: Option<usize>,

    #[arg(long)]
    pub test_length: Option<usize>,
}

/// Generator settings as read from a config file; every field optional.
#[derive(Debug, Default, Deserialize)]
pub struct GenerateFile {
    task: Option<TaskKind>,
    n_train: Option<usize>,
    sizes: Option<Vec<usize>>,
    sigma2: Option<f64>,
    seed: Option<u64>,
    l: Option<usize>,
    dims: Option<(usize, usize, usize)>,
    scale: Option<f64>,
    all_lengths: Option<bool>,
    test_size: Option<usize>,
    test_length: Option<usize>,
}

/// Written next to the datasets; also accepted back as a `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub config: TaskConfig,
    pub train: Vec<String>,
    pub test: String,
    pub target: String,
}

impl Manifest {
    pub fn load(dir: &Path) -> anyhow::Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| user(format!("{}: {e}", path.display())))
    }
}

fn resolve(a: &GenerateArgs) -> anyhow::Result<TaskConfig> {
    let f: GenerateFile = load(a.config.config.as_deref())?;
    let task = a
        .task
        .or(f.task)
        .ok_or_else(|| user("no task given (--task random-rnn|arithmetic)"))?;
    let sizes = a.sizes.clone().or(f.sizes);
    let n_train = match (a.n.or(f.n_train), &sizes) {
        (Some(n), _) => n,
        (None, Some(s)) => s.iter().copied().max().unwrap_or(0),
        (None, None) => return Err(user("no training size given (--n or --sizes)")),
    };
    let mut cfg = TaskConfig::new(
        task,
        n_train,
        a.sigma2.or(f.sigma2).unwrap_or(0.0),
        a.seed.or(f.seed).unwrap_or(0),
    );
    cfg.sizes = sizes;
    if let Some(l) = a.l.or(f.l) {
        cfg.l = l;
    }
    if let Some(d) = &a.dims {
        cfg.dims = (d[0], d[1], d[2]);
    } else if let Some(d) = f.dims {
        cfg.dims = d;
    }
    if let Some(s) = a.scale.or(f.scale) {
        cfg.scale = s;
    }
    cfg.all_lengths = a.all_lengths || f.all_lengths.unwrap_or(false);
    if let Some(t) = a.test_size.or(f.test_size) {
        cfg.test_size = t;
    }
    if let Some(t) = a.test_length.or(f.test_length) {
        cfg.test_length = t;
    }
    Ok(cfg)
}

pub fn run(a: GenerateArgs) -> anyhow::Result<()> {
    let cfg = resolve(&a)?;
    let task = generate_task(&cfg)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut train = Vec::new();
    for (ds, len) in task.train.iter().zip(cfg.train_lengths()) {
        let name = format!("train_len{len}.jsonl");
        ds.save(a.out.join(&name)).with_context(|| format!("writing {name}"))?;
        train.push(name);
    }
    task.test.save(a.out.join("test.jsonl")).context("writing test.jsonl")?;
    task.target
        .save(a.out.join("target.json"))
        .context("writing target.json")?;
    let manifest = Manifest {
        config: cfg,
        train,
        test: "test.jsonl".into(),
        target: "target.json".into(),
    };
    write_json(&a.out.join(MANIFEST), &manifest)?;
    log::info!("wrote {} training files to {}", manifest.train.len(), a.out.display());
    println!("{}", a.out.join(MANIFEST).display());
    Ok(())
}
