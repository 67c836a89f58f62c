use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use l2rnn::data::{load_sequences_csv, CsvSchema};
use l2rnn::metrics::metrics;
use l2rnn::{Linear2RNN, SequenceDataset};

use crate::config::{read, write_json};

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,

    /// JSON-lines dataset with targets.
    #[arg(long)]
    pub data: PathBuf,

    /// Read --data as a time-series CSV with this schema (JSON or TOML).
    #[arg(long)]
    pub csv_schema: Option<PathBuf>,

    /// Also write the metrics JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(a: EvaluateArgs) -> anyhow::Result<()> {
    let model = Linear2RNN::load(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let ds = match &a.csv_schema {
        Some(schema) => load_sequences_csv(&a.data, &read::<CsvSchema>(schema)?),
        None => SequenceDataset::load(&a.data),
    }
    .with_context(|| format!("reading {}", a.data.display()))?;
    let m = metrics(&model, &ds.examples)?;
    if let Some(out) = &a.out {
        write_json(out, &m)?;
    }
    println!("{}", serde_json::to_string_pretty(&m)?);
    Ok(())
}
