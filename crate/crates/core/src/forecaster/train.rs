//! Joint training of the fusion stack and the forecaster.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, Array, Binding, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::forecaster::{
    evaluate, l1_loss, normalize_adjacency, Forecaster, ForecasterConfig, Metrics, Splits, WindowBatch,
    WindowSet,
};
use crate::fusion::{FusionConfig, FusionStack, FusionTrace};
use crate::graphs::{GraphSet, WeightMatrix};
use crate::nn::rng;

const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub fusion: FusionConfig,
    pub forecaster: ForecasterConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            fusion: FusionConfig::default(),
            forecaster: ForecasterConfig::default(),
            adam: AdamConfig::default(),
            batch_size: 32,
            epochs: 40,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.fusion.validate()?;
        self.forecaster.validate()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.adam.lr)));
        }
        Ok(())
    }
}

/// All trainable state: one parameter store shared by the fusion stack
/// (including the weight tensor) and the forecaster.
#[derive(Clone, Debug)]
pub struct Model {
    pub store: ParamStore,
    pub fusion: FusionStack,
    pub forecaster: Forecaster,
}

/// Forward pass results for one batch.
#[derive(Clone, Debug)]
pub struct PipelineTrace {
    pub fusion: FusionTrace,
    pub adjacency: Var,
    pub prediction: Var,
    pub loss: Var,
}

impl Model {
    /// Initialises every parameter from `cfg.seed`, fusion first.
    pub fn new(graphs: &GraphSet, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng(cfg.seed);
        let mut store = ParamStore::new();
        let fusion = FusionStack::new(&mut store, graphs, &cfg.fusion, &mut r)?;
        let forecaster = Forecaster::new(&mut store, graphs.n(), &cfg.forecaster, &mut r)?;
        Ok(Self {
            store,
            fusion,
            forecaster,
        })
    }

    /// Fusion, normalisation, forecaster and L1 loss on one batch.
    pub fn pipeline(&self, tape: &mut Tape, bind: &Binding, batch: &WindowBatch) -> Result<PipelineTrace> {
        let fusion = self.fusion.forward(tape, bind)?;
        let adjacency = normalize_adjacency(tape, fusion.fused)?;
        let x = tape.constant(batch.inputs.clone());
        let y = tape.constant(batch.targets.clone());
        let prediction = self.forecaster.forward(tape, bind, x, adjacency)?;
        let loss = l1_loss(tape, prediction, y)?;
        Ok(PipelineTrace {
            fusion,
            adjacency,
            prediction,
            loss,
        })
    }

    /// Scalar loss on frozen parameters.
    pub fn loss(&self, batch: &WindowBatch) -> Result<f64> {
        let mut tape = Tape::new();
        let bind = self.store.bind_frozen(&mut tape);
        let t = self.pipeline(&mut tape, &bind, batch)?;
        Ok(tape.value(t.loss).item())
    }

    /// Normalised adjacency on frozen parameters.
    pub fn adjacency(&self) -> Result<Array> {
        let mut tape = Tape::new();
        let bind = self.store.bind_frozen(&mut tape);
        let f = self.fusion.forward(&mut tape, &bind)?;
        let a = normalize_adjacency(&mut tape, f.fused)?;
        Ok(tape.value(a).clone())
    }

    pub fn fused_matrix(&self) -> Result<WeightMatrix> {
        self.fusion.fused_matrix(&self.store)
    }

    /// Predictions and targets `[B, H_out, N]` for every window of `set`,
    /// in window order.
    pub fn predict(&self, set: &WindowSet) -> Result<(Array, Array)> {
        let adj = self.adjacency()?;
        let (mut preds, mut targets) = (Vec::new(), Vec::new());
        let idx: Vec<usize> = (0..set.len()).collect();
        for chunk in idx.chunks(EVAL_BATCH) {
            let batch = set.batch(chunk);
            let mut tape = Tape::new();
            let bind = self.store.bind_frozen(&mut tape);
            let a = tape.constant(adj.clone());
            let x = tape.constant(batch.inputs);
            let p = self.forecaster.forward(&mut tape, &bind, x, a)?;
            preds.extend_from_slice(tape.value(p).data());
            targets.extend_from_slice(batch.targets.data());
        }
        let fc = self.forecaster.config();
        let n = self.fusion.n();
        let shape = vec![set.len(), fc.horizon, n];
        Ok((Array::new(shape.clone(), preds)?, Array::new(shape, targets)?))
    }

    pub fn evaluate(&self, set: &WindowSet) -> Result<Metrics> {
        let (p, t) = self.predict(set)?;
        evaluate(&p, &t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub train_loss: f64,
    pub val_mae: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation MAE.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Training-set MAE before the first update.
    pub initial_train_mae: f64,
}

/// Trains on the training range of a time-major `[P, N]` series, selecting
/// the epoch with the best validation MAE.
pub fn train(series: &Array, splits: &Splits, graphs: &GraphSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut model = Model::new(graphs, cfg)?;
    let (w, h) = (cfg.forecaster.window, cfg.forecaster.horizon);
    if series.ndim() != 2 || series.shape()[1] != graphs.n() {
        return Err(Error::Shape {
            op: "train",
            lhs: series.shape().to_vec(),
            rhs: vec![graphs.n()],
        });
    }
    let train_set = WindowSet::new(series, splits.train.clone(), w, h)?;
    let val_set = WindowSet::new(series, splits.val.clone(), w, h)?;

    let initial_train_mae = model.evaluate(&train_set)?.mae;
    let mut shuffle = rng(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train_set.batch(chunk);
            let mut tape = Tape::new();
            let bind = model.store.bind(&mut tape);
            let trace = model.pipeline(&mut tape, &bind, &batch)?;
            let loss = tape.value(trace.loss).item();
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite training loss at epoch {epoch}, batch {}",
                    b + 1
                )));
            }
            let grads = tape.backward(trace.loss)?;
            model.store.adam_step(&bind, &grads, &cfg.adam)?;
            total += loss;
            batches += 1;
        }
        let val_mae = model.evaluate(&val_set)?.mae;
        if !val_mae.is_finite() {
            return Err(Error::Numerical(format!("non-finite validation error after epoch {epoch}")));
        }
        history.push(EpochRecord {
            epoch,
            train_loss: total / batches as f64,
            val_mae,
        });
        if best.as_ref().is_none_or(|(v, _, _)| val_mae < *v) {
            best = Some((val_mae, epoch, model.store.clone()));
        }
    }

    let (_, best_epoch, store) = best.expect("at least one epoch");
    model.store = store;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        initial_train_mae,
    })
}
