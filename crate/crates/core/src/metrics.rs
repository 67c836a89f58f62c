//! Regression metrics of a model's final outputs against dataset targets.

use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{mismatch, Result};
use crate::model::Linear2RNN;

/// Averages run over every output coordinate of every example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub examples: usize,
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    /// Percent; entries with a zero target are skipped, `None` when all are zero.
    pub mape: Option<f64>,
}

pub fn metrics(model: &Linear2RNN, examples: &[Example]) -> Result<Metrics> {
    let mut count = 0usize;
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut pct = 0.0;
    let mut pct_count = 0usize;
    for (i, e) in examples.iter().enumerate() {
        let y = model.evaluate(&e.x)?;
        if y.len() != e.y.len() {
            return Err(mismatch(format!(
                "example {i}: target has {} outputs, model has {}",
                e.y.len(),
                y.len()
            )));
        }
        for (&yh, &t) in y.iter().zip(&e.y) {
            let r = yh - t;
            sq += r * r;
            abs += r.abs();
            if t != 0.0 {
                pct += (r / t).abs();
                pct_count += 1;
            }
            count += 1;
        }
    }
    let k = count.max(1) as f64;
    let mse = sq / k;
    Ok(Metrics {
        examples: examples.len(),
        mse,
        rmse: mse.sqrt(),
        mae: abs / k,
        mape: (pct_count > 0).then(|| 100.0 * pct / pct_count as f64),
    })
}
