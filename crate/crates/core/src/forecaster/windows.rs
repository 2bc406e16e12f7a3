//! Chronological splits and sliding windows over a time-major `[P, N]`
//! series array.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::autodiff::Array;
use crate::error::{Error, Result};

/// Contiguous train, validation and test time ranges.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Splits {
    pub fn segments(&self) -> [(&'static str, Range<usize>); 3] {
        [
            ("train", self.train.clone()),
            ("validation", self.val.clone()),
            ("test", self.test.clone()),
        ]
    }
}

/// Splits `len` steps chronologically by `ratios` (train, validation,
/// test), checking that every segment holds at least one window.
pub fn split_ranges(len: usize, ratios: [f64; 3], window: usize, horizon: usize) -> Result<Splits> {
    if ratios.iter().any(|r| !r.is_finite() || *r <= 0.0) {
        return Err(Error::Config(format!("split ratios must be positive, got {ratios:?}")));
    }
    let need = window + horizon;
    let splits = cut(len, ratios);
    for (name, r) in splits.segments() {
        if r.len() < need {
            let minimum = (need..).find(|&l| cut(l, ratios).segments().iter().all(|(_, r)| r.len() >= need));
            return Err(Error::Config(format!(
                "{name} segment has {} steps but a window needs {need}; \
                 the series needs at least {} steps",
                r.len(),
                minimum.unwrap_or(usize::MAX)
            )));
        }
    }
    Ok(splits)
}

/// Length of the training segment of a `len`-step series.
pub fn train_len(len: usize, ratios: [f64; 3]) -> usize {
    cut(len, ratios).train.end
}

fn cut(len: usize, ratios: [f64; 3]) -> Splits {
    let total: f64 = ratios.iter().sum();
    let a = (len as f64 * ratios[0] / total).floor() as usize;
    let b = ((len as f64 * (ratios[0] + ratios[1]) / total).floor() as usize).max(a);
    Splits {
        train: 0..a,
        val: a..b,
        test: b..len,
    }
}

/// Windows of `window + horizon` consecutive steps in a segment of `len`.
pub fn window_count(len: usize, window: usize, horizon: usize) -> usize {
    (len + 1).saturating_sub(window + horizon)
}

/// Inputs `[B, P_in, N]` and targets `[B, H_out, N]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    pub inputs: Array,
    pub targets: Array,
}

/// All stride-1 windows lying fully inside one time range.
#[derive(Clone, Debug)]
pub struct WindowSet<'a> {
    series: &'a Array,
    starts: Vec<usize>,
    window: usize,
    horizon: usize,
}

impl<'a> WindowSet<'a> {
    pub fn new(series: &'a Array, range: Range<usize>, window: usize, horizon: usize) -> Result<Self> {
        if series.ndim() != 2 || range.end > series.shape()[0] {
            return Err(Error::invalid(
                "windows",
                format!("range {range:?} outside series of shape {:?}", series.shape()),
            ));
        }
        let count = window_count(range.len(), window, horizon);
        if count == 0 {
            return Err(Error::Config(format!(
                "segment of {} steps is shorter than window + horizon = {}",
                range.len(),
                window + horizon
            )));
        }
        Ok(Self {
            series,
            starts: (range.start..range.start + count).collect(),
            window,
            horizon,
        })
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    /// First time index of each window.
    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    /// Time indices touched by window `k` (inputs and targets).
    pub fn span(&self, k: usize) -> Range<usize> {
        self.starts[k]..self.starts[k] + self.window + self.horizon
    }

    /// Gathers the windows with the given positions into one batch.
    pub fn batch(&self, picks: &[usize]) -> WindowBatch {
        let n = self.series.shape()[1];
        let data = self.series.data();
        let mut inputs = Vec::with_capacity(picks.len() * self.window * n);
        let mut targets = Vec::with_capacity(picks.len() * self.horizon * n);
        for &k in picks {
            let s = self.starts[k];
            inputs.extend_from_slice(&data[s * n..(s + self.window) * n]);
            targets.extend_from_slice(&data[(s + self.window) * n..(s + self.window + self.horizon) * n]);
        }
        WindowBatch {
            inputs: Array::new(vec![picks.len(), self.window, n], inputs).expect("window gather"),
            targets: Array::new(vec![picks.len(), self.horizon, n], targets).expect("window gather"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(p: usize, n: usize) -> Array {
        Array::new(vec![p, n], (0..p * n).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn exact_length_gives_one_window() {
        let s = ramp(7, 2);
        let w = WindowSet::new(&s, 0..7, 4, 3).unwrap();
        assert_eq!(w.len(), 1);
        assert!(WindowSet::new(&s, 0..6, 4, 3).is_err());
    }

    #[test]
    fn counts_per_segment() {
        assert_eq!(window_count(100, 24, 12), 65);
        let s = ramp(100, 1);
        let sp = split_ranges(100, [0.7, 0.1, 0.2], 3, 2).unwrap();
        assert_eq!((sp.train.clone(), sp.val.clone(), sp.test.clone()), (0..70, 70..80, 80..100));
        let tr = WindowSet::new(&s, sp.train, 3, 2).unwrap();
        assert_eq!(tr.len(), 66);
        assert_eq!(tr.span(65), 65..70);
    }

    #[test]
    fn batch_layout() {
        let s = ramp(10, 2);
        let w = WindowSet::new(&s, 2..10, 2, 1).unwrap();
        let b = w.batch(&[0, 3]);
        assert_eq!(b.inputs.shape(), &[2, 2, 2]);
        assert_eq!(b.inputs.data(), &[4., 5., 6., 7., 10., 11., 12., 13.]);
        assert_eq!(b.targets.data(), &[8., 9., 14., 15.]);
    }

    #[test]
    fn too_short_series_states_minimum() {
        let err = split_ranges(100, [0.7, 0.1, 0.2], 24, 24).unwrap_err().to_string();
        assert!(err.contains("at least 474"), "{err}");
    }
}
