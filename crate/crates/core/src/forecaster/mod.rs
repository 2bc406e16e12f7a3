//! A small graph-temporal forecaster consuming the fused adjacency.
//!
//! Inputs `[B, P_in, N]` are lifted to `[B, T, N, C]` by a gated temporal
//! convolution, propagated twice over the normalised adjacency, passed
//! through a second gated temporal convolution and read out to
//! `[B, H_out, N]`. Temporal convolutions
//! are valid (no padding), so the readout sees `P_in - 2(K - 1)` steps; a
//! linear skip from the raw window and its one-hop propagation `Â X` is
//! added to the readout so the most recent steps reach the output directly.

mod train;
mod windows;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Binding, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Dense, Rng};

pub use train::{train, EpochRecord, Model, TrainConfig, TrainOutcome};
pub use windows::{split_ranges, train_len, window_count, Splits, WindowBatch, WindowSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecasterConfig {
    /// Hidden channels `C`.
    pub channels: usize,
    /// Temporal kernel width.
    pub kernel: usize,
    /// Observation window `P_in`.
    pub window: usize,
    /// Prediction horizon `H_out`.
    pub horizon: usize,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            kernel: 3,
            window: 24,
            horizon: 12,
        }
    }
}

impl ForecasterConfig {
    /// Time steps left after both temporal convolutions.
    pub fn reduced_len(&self) -> usize {
        self.window.saturating_sub(2 * (self.kernel.saturating_sub(1)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.kernel == 0 || self.horizon == 0 {
            return Err(Error::Config("channels, kernel and horizon must be positive".into()));
        }
        if self.reduced_len() == 0 {
            return Err(Error::Config(format!(
                "window {} too short for two temporal convolutions of width {} (need at least {})",
                self.window,
                self.kernel,
                2 * (self.kernel - 1) + 1
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Forecaster {
    config: ForecasterConfig,
    n: usize,
    /// `K -> 2C`, the two halves feeding the gated linear unit.
    pub temporal_in: Dense,
    pub graph1: Dense,
    pub graph2: Dense,
    /// Bias-free self terms of the two graph convolutions.
    pub graph1_self: Dense,
    pub graph2_self: Dense,
    /// `K·C -> 2C`, gated like `temporal_in`.
    pub temporal_out: Dense,
    /// `T2·C -> H_out`.
    pub readout: Dense,
    /// `2·P_in -> H_out` over each node's raw window and its propagated
    /// window `Â X`, added to the readout.
    pub skip: Dense,
}

impl Forecaster {
    pub fn new(store: &mut ParamStore, n: usize, config: &ForecasterConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (c, k) = (config.channels, config.kernel);
        Ok(Self {
            config: config.clone(),
            n,
            temporal_in: Dense::new(store, "forecaster.temporal_in", k, 2 * c, true, rng),
            graph1: Dense::new(store, "forecaster.graph1", c, c, true, rng),
            graph2: Dense::new(store, "forecaster.graph2", c, c, true, rng),
            graph1_self: Dense::new(store, "forecaster.graph1_self", c, c, false, rng),
            graph2_self: Dense::new(store, "forecaster.graph2_self", c, c, false, rng),
            temporal_out: Dense::new(store, "forecaster.temporal_out", k * c, 2 * c, true, rng),
            readout: Dense::new(store, "forecaster.readout", config.reduced_len() * c, config.horizon, true, rng),
            skip: Dense::new(store, "forecaster.skip", 2 * config.window, config.horizon, false, rng),
        })
    }

    pub fn config(&self) -> &ForecasterConfig {
        &self.config
    }

    /// Predicts `[B, H_out, N]` from inputs `[B, P_in, N]` and a normalised
    /// adjacency `[N, N]`.
    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var, adj: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.config.window || shape[2] != self.n {
            return Err(Error::Shape {
                op: "forecaster",
                lhs: shape,
                rhs: vec![self.config.window, self.n],
            });
        }
        if tape.shape(adj) != [self.n, self.n] {
            return Err(Error::Shape {
                op: "forecaster adjacency",
                lhs: tape.shape(adj).to_vec(),
                rhs: vec![self.n, self.n],
            });
        }
        let (b, n, c) = (shape[0], self.n, self.config.channels);
        let raw = tape.permute(x, &[0, 2, 1])?;
        let spread = tape.bmm(adj, raw)?;
        let direct = tape.concat(&[raw, spread], 2)?;
        let direct = self.skip.apply(tape, bind, direct)?;
        let x = tape.reshape(x, &[b, shape[1], n, 1])?;

        let mut h = self.gated_conv(tape, bind, x, &self.temporal_in)?;

        for (layer, own) in [(&self.graph1, &self.graph1_self), (&self.graph2, &self.graph2_self)] {
            let t = tape.shape(h)[1];
            let flat = tape.reshape(h, &[b * t, n, c])?;
            let prop = tape.bmm(adj, flat)?;
            let prop = tape.reshape(prop, &[b, t, n, c])?;
            let mixed = layer.apply(tape, bind, prop)?;
            let kept = own.apply(tape, bind, h)?;
            let sum = tape.add(mixed, kept)?;
            h = tape.relu(sum);
        }

        let h = self.gated_conv(tape, bind, h, &self.temporal_out)?;

        let t2 = tape.shape(h)[1];
        let h = tape.permute(h, &[0, 2, 1, 3])?;
        let h = tape.reshape(h, &[b, n, t2 * c])?;
        let out = self.readout.apply(tape, bind, h)?;
        let out = tape.add(out, direct)?;
        tape.permute(out, &[0, 2, 1])
    }

    /// Temporal convolution to `2C` channels `[P, Q]` followed by the gated
    /// linear unit `P ⊙ sigmoid(Q)`.
    fn gated_conv(&self, tape: &mut Tape, bind: &Binding, x: Var, layer: &Dense) -> Result<Var> {
        let c = self.config.channels;
        let y = self.temporal_conv(tape, bind, x, layer)?;
        let p = tape.narrow(y, 3, 0, c)?;
        let q = tape.narrow(y, 3, c, c)?;
        let q = tape.sigmoid(q);
        tape.mul(p, q)
    }

    /// Valid convolution along axis 1 of `[B, T, N, C_in]`: the `K` shifted
    /// views are stacked on the channel axis and mapped by one dense layer,
    /// whose input row `k·C_in + c` weighs channel `c` at offset `k`.
    fn temporal_conv(&self, tape: &mut Tape, bind: &Binding, x: Var, layer: &Dense) -> Result<Var> {
        let k = self.config.kernel;
        let t = tape.shape(x)[1];
        let out_len = t + 1 - k;
        let views = (0..k)
            .map(|o| tape.narrow(x, 1, o, out_len))
            .collect::<Result<Vec<_>>>()?;
        let stacked = tape.concat(&views, 3)?;
        layer.apply(tape, bind, stacked)
    }
}

/// `D^{-1/2} (|W| + I) D^{-1/2}` with `D` the row sums of `|W| + I`.
pub fn normalize_adjacency(tape: &mut Tape, w: Var) -> Result<Var> {
    let n = tape.shape(w)[0];
    let a = tape.abs(w);
    let eye = tape.constant(Array::identity(n));
    let a = tape.add(a, eye)?;
    let deg = tape.sum_axis(a, 1)?;
    let dinv = tape.powf(deg, -0.5);
    let rows = tape.reshape(dinv, &[n, 1])?;
    let cols = tape.reshape(dinv, &[1, n])?;
    let a = tape.mul(a, rows)?;
    tape.mul(a, cols)
}

/// Mean absolute difference.
pub fn l1_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    if tape.shape(pred) != tape.shape(target) {
        return Err(Error::Shape {
            op: "l1_loss",
            lhs: tape.shape(pred).to_vec(),
            rhs: tape.shape(target).to_vec(),
        });
    }
    let d = tape.sub(pred, target)?;
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// 1-based forecast step.
    pub step: usize,
    pub mae: f64,
    pub rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    /// Per forecast step, filled when predictions are `[B, H, N]`.
    pub per_step: Vec<StepMetrics>,
}

impl Metrics {
    /// Metrics at 1-based step `h`.
    pub fn at_step(&self, h: usize) -> Option<&StepMetrics> {
        self.per_step.iter().find(|s| s.step == h)
    }
}

fn mae_rmse(errors: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut abs, mut sq, mut count) = (0.0, 0.0, 0usize);
    for e in errors {
        abs += e.abs();
        sq += e * e;
        count += 1;
    }
    let c = count.max(1) as f64;
    (abs / c, (sq / c).sqrt())
}

/// MAE and RMSE over all entries, and per step along axis 1 for 3-D inputs.
pub fn evaluate(pred: &Array, target: &Array) -> Result<Metrics> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape {
            op: "evaluate",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    let errs = || pred.data().iter().zip(target.data()).map(|(p, t)| p - t);
    let (mae, rmse) = mae_rmse(errs());
    let mut per_step = Vec::new();
    if let [b, h, n] = *pred.shape() {
        for s in 0..h {
            let idx = (0..b).flat_map(move |i| (0..n).map(move |j| (i * h + s) * n + j));
            let (m, r) = mae_rmse(idx.map(|k| pred.data()[k] - target.data()[k]));
            per_step.push(StepMetrics {
                step: s + 1,
                mae: m,
                rmse: r,
            });
        }
    }
    Ok(Metrics { mae, rmse, per_step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng;

    #[test]
    fn zero_adjacency_normalises_to_identity() {
        let mut tape = Tape::new();
        let w = tape.constant(Array::zeros(vec![4, 4]));
        let a = normalize_adjacency(&mut tape, w).unwrap();
        assert_eq!(tape.value(a), &Array::identity(4));
    }

    #[test]
    fn normalised_adjacency_is_symmetric() {
        let mut tape = Tape::new();
        let w = tape.constant(Array::new(vec![3, 3], vec![0., -2., 1., -2., 0., 0.5, 1., 0.5, 0.]).unwrap());
        let a = normalize_adjacency(&mut tape, w).unwrap();
        let v = tape.value(a);
        for i in 0..3 {
            for j in 0..3 {
                assert!((v.get(&[i, j]) - v.get(&[j, i])).abs() < 1e-15);
            }
        }
        // Row 0: |W|+I = [1, 2, 1], degrees [4, 3.5, 2.5].
        assert!((v.get(&[0, 1]) - 2.0 / (4.0f64 * 3.5).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn l1_examples() {
        let mut tape = Tape::new();
        let p = tape.constant(Array::from_vec(vec![1.0, 2.0]));
        let t = tape.constant(Array::from_vec(vec![0.0, 4.0]));
        let l = l1_loss(&mut tape, p, t).unwrap();
        assert_eq!(tape.value(l).item(), 1.5);
        let l = l1_loss(&mut tape, p, p).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
        let shifted = tape.add_scalar(p, 0.25);
        let l = l1_loss(&mut tape, shifted, p).unwrap();
        assert_eq!(tape.value(l).item(), 0.25);
    }

    #[test]
    fn metric_examples() {
        let m = evaluate(&Array::from_vec(vec![3.0, -4.0]), &Array::zeros(vec![2])).unwrap();
        assert!((m.mae - 3.5).abs() < 1e-12);
        assert!((m.rmse - 12.5f64.sqrt()).abs() < 1e-12);
        let z = Array::full(vec![2, 3, 2], 0.7);
        let m = evaluate(&z, &z).unwrap();
        assert_eq!((m.mae, m.rmse), (0.0, 0.0));
        assert_eq!(m.per_step.len(), 3);
    }

    #[test]
    fn per_step_slices_axis_one() {
        let pred = Array::new(vec![1, 2, 2], vec![1., 1., 0., 2.]).unwrap();
        let m = evaluate(&pred, &Array::zeros(vec![1, 2, 2])).unwrap();
        assert_eq!(m.at_step(1).unwrap().mae, 1.0);
        assert_eq!(m.at_step(2).unwrap().mae, 1.0);
        assert!((m.at_step(2).unwrap().rmse - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn forward_shapes() {
        for (c, win, h) in [(4, 24, 12), (2, 5, 1), (3, 10, 24)] {
            let cfg = ForecasterConfig {
                channels: c,
                kernel: 3,
                window: win,
                horizon: h,
            };
            let mut store = ParamStore::new();
            let f = Forecaster::new(&mut store, 3, &cfg, &mut rng(0)).unwrap();
            let mut tape = Tape::new();
            let bind = store.bind(&mut tape);
            let x = tape.constant(Array::full(vec![2, win, 3], 0.5));
            let a = tape.constant(Array::identity(3));
            let y = f.forward(&mut tape, &bind, x, a).unwrap();
            assert_eq!(tape.shape(y), &[2, h, 3]);
        }
    }

    #[test]
    fn window_too_short_is_rejected() {
        let cfg = ForecasterConfig {
            window: 4,
            ..ForecasterConfig::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("at least 5"));
    }
}
