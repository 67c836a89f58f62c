//! Sequence datasets: synthetic task generators, JSON-lines IO and CSV ingestion.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use chrono::NaiveDateTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::model::Linear2RNN;
use crate::tensor::DenseTensor;

/// Number of sequences in generated test sets.
pub const TEST_SIZE: usize = 1000;
/// Length of generated test sequences.
pub const TEST_LENGTH: usize = 6;

/// sqrt(0.2): target parameters drawn with variance 0.2.
pub const RANDOM_TASK_SCALE: f64 = 0.447_213_595_499_957_9;

/// One input sequence with its final output and, optionally, the output after every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ys: Option<Vec<Vec<f64>>>,
}

impl Example {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>) -> Self {
        Self { x, y, ys: None }
    }

    /// `ys[t]` is the output after step `t + 1`; the final output is `ys.last()`.
    pub fn with_steps(x: Vec<Vec<f64>>, ys: Vec<Vec<f64>>) -> Self {
        let y = ys.last().cloned().unwrap_or_default();
        Self { x, y, ys: Some(ys) }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: String,
    pub seed: u64,
    pub noise_variance: f64,
    pub lengths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SequenceDataset {
    pub examples: Vec<Example>,
    pub meta: DatasetMeta,
}

impl SequenceDataset {
    pub fn new(examples: Vec<Example>) -> Result<Self> {
        let mut ds = Self {
            examples,
            meta: DatasetMeta::default(),
        };
        ds.validate()?;
        ds.meta.lengths = ds.lengths();
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Input dimension, if any example has a non-empty sequence.
    pub fn input_dim(&self) -> Option<usize> {
        self.examples.iter().find_map(|e| e.x.first().map(|x| x.len()))
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.examples.first().map(|e| e.y.len())
    }

    /// Sorted distinct sequence lengths.
    pub fn lengths(&self) -> Vec<usize> {
        let mut ls: Vec<usize> = self.examples.iter().map(|e| e.len()).collect();
        ls.sort_unstable();
        ls.dedup();
        ls
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.input_dim();
        let p = self.output_dim();
        for (i, e) in self.examples.iter().enumerate() {
            if let Some(d) = d {
                if e.x.iter().any(|x| x.len() != d) {
                    return Err(mismatch(format!("example {i}: input dimension differs from {d}")));
                }
            }
            if Some(e.y.len()) != p {
                return Err(mismatch(format!("example {i}: output dimension differs")));
            }
            if let Some(ys) = &e.ys {
                if ys.len() != e.x.len() || ys.iter().any(|y| Some(y.len()) != p) {
                    return Err(mismatch(format!("example {i}: per-step outputs malformed")));
                }
            }
        }
        Ok(())
    }

    /// Examples grouped by sequence length.
    pub fn by_length(&self) -> BTreeMap<usize, Vec<Example>> {
        let mut out: BTreeMap<usize, Vec<Example>> = BTreeMap::new();
        for e in &self.examples {
            out.entry(e.len()).or_default().push(e.clone());
        }
        out
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for e in &self.examples {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl Read) -> Result<Self> {
        let mut examples = Vec::new();
        for (i, line) in BufReader::new(r).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: Example = serde_json::from_str(&line).map_err(|err| Error::Parse {
                line: i + 1,
                message: err.to_string(),
            })?;
            examples.push(e);
        }
        Self::new(examples)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_jsonl(std::fs::File::open(path)?)
    }

    /// Final outputs stacked as an `N x p` tensor.
    pub fn stacked_outputs(&self) -> DenseTensor {
        let p = self.output_dim().unwrap_or(0);
        let data = self.examples.iter().flat_map(|e| e.y.iter().cloned()).collect();
        DenseTensor::new(vec![self.len(), p], data).expect("validated")
    }
}

/// Distribution of generated input vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputDist {
    /// `N(0, I_d)`.
    Gaussian(usize),
    /// `N(0, I_k)` with a constant 1 appended, so `d = k + 1`.
    GaussianWithBias(usize),
}

impl InputDist {
    pub fn dim(&self) -> usize {
        match *self {
            InputDist::Gaussian(d) => d,
            InputDist::GaussianWithBias(k) => k + 1,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        match *self {
            InputDist::Gaussian(d) => (0..d).map(|_| rng.sample(StandardNormal)).collect(),
            InputDist::GaussianWithBias(k) => {
                let mut v: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
                v.push(1.0);
                v
            }
        }
    }

    pub fn sequence(&self, len: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        (0..len).map(|_| self.sample(rng)).collect()
    }
}

fn add_noise(y: &mut [f64], sigma2: f64, rng: &mut impl Rng) {
    if sigma2 > 0.0 {
        let dist = Normal::new(0.0, sigma2.sqrt()).expect("finite variance");
        for v in y {
            *v += dist.sample(rng);
        }
    }
}

/// `count` sequences of length `len` labelled by `f` plus `N(0, sigma2 I_p)` noise.
pub fn sample_dataset(
    f: &dyn Fn(&[Vec<f64>]) -> Vec<f64>,
    inputs: InputDist,
    len: usize,
    count: usize,
    sigma2: f64,
    rng: &mut impl Rng,
) -> SequenceDataset {
    let examples = (0..count)
        .map(|_| {
            let x = inputs.sequence(len, rng);
            let mut y = f(&x);
            add_noise(&mut y, sigma2, rng);
            Example::new(x, y)
        })
        .collect();
    SequenceDataset {
        examples,
        meta: DatasetMeta {
            generator: String::new(),
            seed: 0,
            noise_variance: sigma2,
            lengths: vec![len],
        },
    }
}

/// Sequences of length `len` with noisy outputs after every step.
pub fn sample_per_step(
    model: &Linear2RNN,
    inputs: InputDist,
    len: usize,
    count: usize,
    sigma2: f64,
    rng: &mut impl Rng,
) -> SequenceDataset {
    let examples = (0..count)
        .map(|_| {
            let x = inputs.sequence(len, rng);
            let mut ys = model.evaluate_steps(&x).expect("dimensions match");
            for y in &mut ys {
                add_noise(y, sigma2, rng);
            }
            Example::with_steps(x, ys)
        })
        .collect();
    SequenceDataset {
        examples,
        meta: DatasetMeta {
            generator: "per-step".into(),
            seed: 0,
            noise_variance: sigma2,
            lengths: vec![len],
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    RandomRnn,
    Arithmetic,
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::RandomRnn => "random-rnn",
            TaskKind::Arithmetic => "arithmetic",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random-rnn" | "random" => Ok(TaskKind::RandomRnn),
            "arithmetic" => Ok(TaskKind::Arithmetic),
            other => Err(invalid(format!("unknown task {other:?}"))),
        }
    }
}

/// Generator parameters. `sizes` overrides `n_train` per training length when set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub task: TaskKind,
    pub l: usize,
    pub n_train: usize,
    #[serde(default)]
    pub sizes: Option<Vec<usize>>,
    pub sigma2: f64,
    pub seed: u64,
    /// Random-task dimensions `(n, d, p)`.
    #[serde(default = "default_dims")]
    pub dims: (usize, usize, usize),
    /// Standard deviation of the random target's parameters.
    #[serde(default = "default_scale")]
    pub scale: f64,
    /// Generate every length `0..=2L+1` instead of `L, 2L, 2L+1`.
    #[serde(default)]
    pub all_lengths: bool,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    #[serde(default = "default_test_length")]
    pub test_length: usize,
}

fn default_dims() -> (usize, usize, usize) {
    (5, 3, 2)
}

fn default_scale() -> f64 {
    RANDOM_TASK_SCALE
}

fn default_test_size() -> usize {
    TEST_SIZE
}

fn default_test_length() -> usize {
    TEST_LENGTH
}

impl TaskConfig {
    pub fn new(task: TaskKind, n_train: usize, sigma2: f64, seed: u64) -> Self {
        Self {
            task,
            l: 2,
            n_train,
            sizes: None,
            sigma2,
            seed,
            dims: default_dims(),
            scale: default_scale(),
            all_lengths: false,
            test_size: TEST_SIZE,
            test_length: TEST_LENGTH,
        }
    }

    pub fn train_lengths(&self) -> Vec<usize> {
        if self.all_lengths {
            (0..=2 * self.l + 1).collect()
        } else {
            vec![self.l, 2 * self.l, 2 * self.l + 1]
        }
    }
}

/// A generated task: target model, training datasets and a noiseless test set.
#[derive(Debug, Clone)]
pub struct Task {
    pub target: Linear2RNN,
    pub inputs: InputDist,
    pub train: Vec<SequenceDataset>,
    pub test: SequenceDataset,
}

impl Task {
    /// All training examples of every length.
    pub fn train_union(&self) -> Vec<Example> {
        self.train.iter().flat_map(|d| d.examples.iter().cloned()).collect()
    }
}

pub fn generate_task(cfg: &TaskConfig) -> Result<Task> {
    if cfg.n_train == 0 && cfg.sizes.is_none() {
        return Err(invalid("n_train must be >= 1"));
    }
    if cfg.l == 0 {
        return Err(invalid("L must be >= 1"));
    }
    if !(cfg.sigma2 >= 0.0) {
        return Err(invalid("noise variance must be non-negative"));
    }
    let lengths = cfg.train_lengths();
    if let Some(s) = &cfg.sizes {
        if s.len() != lengths.len() {
            return Err(invalid(format!("expected {} dataset sizes", lengths.len())));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (target, inputs) = match cfg.task {
        TaskKind::RandomRnn => {
            let (n, d, p) = cfg.dims;
            (Linear2RNN::random(n, d, p, cfg.scale, &mut rng), InputDist::Gaussian(d))
        }
        TaskKind::Arithmetic => (arithmetic_rnn(), InputDist::GaussianWithBias(2)),
    };
    let label: Box<dyn Fn(&[Vec<f64>]) -> Vec<f64>> = match cfg.task {
        TaskKind::RandomRnn => {
            let t = target.clone();
            Box::new(move |x: &[Vec<f64>]| t.evaluate(x).expect("dimensions match"))
        }
        TaskKind::Arithmetic => Box::new(|x: &[Vec<f64>]| vec![arithmetic_target(x)]),
    };
    let mut train = Vec::with_capacity(lengths.len());
    for (i, &len) in lengths.iter().enumerate() {
        let count = cfg.sizes.as_ref().map_or(cfg.n_train, |s| s[i]);
        let mut ds = sample_dataset(&*label, inputs, len, count, cfg.sigma2, &mut rng);
        ds.meta.generator = cfg.task.name().into();
        ds.meta.seed = cfg.seed;
        train.push(ds);
    }
    let mut test = sample_dataset(&*label, inputs, cfg.test_length, cfg.test_size, 0.0, &mut rng);
    test.meta.generator = cfg.task.name().into();
    test.meta.seed = cfg.seed;
    Ok(Task {
        target,
        inputs,
        train,
        test,
    })
}

pub fn gen_random_rnn_task(n_train: usize, sigma2: f64, seed: u64) -> Result<Task> {
    generate_task(&TaskConfig::new(TaskKind::RandomRnn, n_train, sigma2, seed))
}

pub fn gen_arithmetic_task(n_train: usize, sigma2: f64, seed: u64) -> Result<Task> {
    generate_task(&TaskConfig::new(TaskKind::Arithmetic, n_train, sigma2, seed))
}

/// Sum of running differences `sum_i (x_i[1] - x_i[0])` over inputs `(a, b, 1)`.
pub fn arithmetic_target(xs: &[Vec<f64>]) -> f64 {
    xs.iter().map(|x| x[1] - x[0]).sum()
}

/// Two-state linear 2-RNN computing [`arithmetic_target`] on bias-augmented inputs.
pub fn arithmetic_rnn() -> Linear2RNN {
    let mut a = DenseTensor::zeros(&[2, 3, 2]);
    a.set(&[0, 2, 0], 1.0);
    a.set(&[1, 0, 0], -1.0);
    a.set(&[1, 1, 0], 1.0);
    a.set(&[1, 2, 1], 1.0);
    let omega = nalgebra::DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    Linear2RNN::new(vec![0.0, 1.0], a, omega).expect("valid shapes")
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapPolicy {
    /// Drop every window touching a missing interval.
    #[default]
    Drop,
    /// Fill missing intervals by linear interpolation between neighbours.
    Interpolate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub timestamp_col: String,
    pub value_cols: Vec<String>,
    /// Aggregation interval in seconds.
    #[serde(default = "default_interval")]
    pub interval: i64,
    #[serde(default = "default_ts_format")]
    pub timestamp_format: String,
    /// Column predicted by the windows; defaults to the first value column.
    #[serde(default)]
    pub target_col: Option<String>,
    /// Number of aggregated points per input window.
    pub window: usize,
    /// Steps ahead of the last window point.
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub gap_policy: GapPolicy,
    /// Append a constant 1 to every input vector.
    #[serde(default)]
    pub bias: bool,
}

fn default_interval() -> i64 {
    3600
}

fn default_ts_format() -> String {
    "%Y-%m-%d %H:%M:%S".into()
}

fn default_horizon() -> usize {
    1
}

impl CsvSchema {
    pub fn new(timestamp_col: &str, value_cols: &[&str], window: usize) -> Self {
        Self {
            timestamp_col: timestamp_col.into(),
            value_cols: value_cols.iter().map(|s| s.to_string()).collect(),
            interval: default_interval(),
            timestamp_format: default_ts_format(),
            target_col: None,
            window,
            horizon: default_horizon(),
            gap_policy: GapPolicy::Drop,
            bias: false,
        }
    }
}

/// Aggregated series: one entry per interval from the first to the last observed,
/// `None` where no record fell into the interval.
pub fn aggregate_csv(r: impl Read, schema: &CsvSchema) -> Result<Vec<Option<Vec<f64>>>> {
    if schema.interval <= 0 {
        return Err(invalid("interval must be positive"));
    }
    if schema.value_cols.is_empty() {
        return Err(invalid("need at least one value column"));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| invalid(format!("missing column {name:?}")))
    };
    let ts_idx = col(&schema.timestamp_col)?;
    let val_idx: Vec<usize> = schema.value_cols.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let k = val_idx.len();
    let mut buckets: BTreeMap<i64, (Vec<f64>, usize)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let parse_err = |message: String| Error::Parse { line, message };
        let ts_raw = rec.get(ts_idx).ok_or_else(|| parse_err("missing timestamp".into()))?;
        let ts = NaiveDateTime::parse_from_str(ts_raw, &schema.timestamp_format)
            .map_err(|e| parse_err(format!("bad timestamp {ts_raw:?}: {e}")))?
            .and_utc()
            .timestamp();
        let mut vals = Vec::with_capacity(k);
        for &i in &val_idx {
            let raw = rec.get(i).ok_or_else(|| parse_err("missing value".into()))?;
            let v: f64 = raw.parse().map_err(|_| parse_err(format!("bad number {raw:?}")))?;
            vals.push(v);
        }
        let entry = buckets
            .entry(ts.div_euclid(schema.interval))
            .or_insert_with(|| (vec![0.0; k], 0));
        for (s, v) in entry.0.iter_mut().zip(&vals) {
            *s += v;
        }
        entry.1 += 1;
    }
    let (Some(&first), Some(&last)) = (buckets.keys().next(), buckets.keys().last()) else {
        return Ok(Vec::new());
    };
    Ok((first..=last)
        .map(|b| {
            buckets
                .get(&b)
                .map(|(sum, c)| sum.iter().map(|s| s / *c as f64).collect())
        })
        .collect())
}

fn interpolate(series: &mut [Option<Vec<f64>>]) {
    let known: Vec<usize> = (0..series.len()).filter(|&i| series[i].is_some()).collect();
    for w in known.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b == a + 1 {
            continue;
        }
        let va = series[a].clone().expect("known");
        let vb = series[b].clone().expect("known");
        for (i, slot) in series.iter_mut().enumerate().take(b).skip(a + 1) {
            let t = (i - a) as f64 / (b - a) as f64;
            *slot = Some(va.iter().zip(&vb).map(|(x, y)| x + t * (y - x)).collect());
        }
    }
}

/// Windows an aggregated series into `(window inputs, horizon-ahead target)` examples.
pub fn window_series(series: &[Option<Vec<f64>>], schema: &CsvSchema) -> Result<SequenceDataset> {
    if schema.window == 0 || schema.horizon == 0 {
        return Err(invalid("window and horizon must be >= 1"));
    }
    let target = match &schema.target_col {
        Some(t) => schema
            .value_cols
            .iter()
            .position(|c| c == t)
            .ok_or_else(|| invalid(format!("target column {t:?} is not a value column")))?,
        None => 0,
    };
    let mut series = series.to_vec();
    if schema.gap_policy == GapPolicy::Interpolate {
        interpolate(&mut series);
    }
    let span = schema.window + schema.horizon;
    let mut examples = Vec::new();
    if series.len() >= span {
        for s in 0..=series.len() - span {
            let inputs = &series[s..s + schema.window];
            let out = &series[s + schema.window - 1 + schema.horizon];
            if inputs.iter().any(|v| v.is_none()) || out.is_none() {
                continue;
            }
            let x = inputs
                .iter()
                .map(|v| {
                    let mut v = v.clone().expect("checked");
                    if schema.bias {
                        v.push(1.0);
                    }
                    v
                })
                .collect();
            let y = vec![out.as_ref().expect("checked")[target]];
            examples.push(Example::new(x, y));
        }
    }
    let mut ds = SequenceDataset::new(examples)?;
    ds.meta.generator = "csv".into();
    Ok(ds)
}

pub fn load_sequences_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SequenceDataset> {
    let series = aggregate_csv(std::fs::File::open(path)?, schema)?;
    window_series(&series, schema)
}
