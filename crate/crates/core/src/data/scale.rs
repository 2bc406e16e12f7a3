//! Per-node min-max scaling fitted on the training range.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::autodiff::Array;
use crate::error::{Error, Result};

/// `(x - min) / (max - min)` per node. A node constant over the training
/// range is flagged and passed through unchanged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub constant: Vec<bool>,
}

impl Scaler {
    /// Fits on rows `range` of a time-major `[P, N]` array.
    pub fn fit(series: &Array, range: Range<usize>) -> Result<Self> {
        if series.ndim() != 2 || range.is_empty() || range.end > series.shape()[0] {
            return Err(Error::invalid(
                "scaler",
                format!("range {range:?} invalid for series of shape {:?}", series.shape()),
            ));
        }
        let n = series.shape()[1];
        let mut min = vec![f64::INFINITY; n];
        let mut max = vec![f64::NEG_INFINITY; n];
        for t in range {
            for (j, &v) in series.data()[t * n..(t + 1) * n].iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        let constant = min.iter().zip(&max).map(|(a, b)| a >= b).collect();
        Ok(Self { min, max, constant })
    }

    pub fn scale_value(&self, node: usize, x: f64) -> f64 {
        if self.constant[node] {
            x
        } else {
            (x - self.min[node]) / (self.max[node] - self.min[node])
        }
    }

    pub fn unscale_value(&self, node: usize, x: f64) -> f64 {
        if self.constant[node] {
            x
        } else {
            x * (self.max[node] - self.min[node]) + self.min[node]
        }
    }

    /// Scales every entry of an array whose last axis is the node axis.
    pub fn scale(&self, values: &Array) -> Array {
        self.apply(values, Self::scale_value)
    }

    pub fn unscale(&self, values: &Array) -> Array {
        self.apply(values, Self::unscale_value)
    }

    fn apply(&self, values: &Array, f: fn(&Self, usize, f64) -> f64) -> Array {
        let n = self.min.len();
        let mut out = values.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v = f(self, k % n, *v);
        }
        out
    }
}
