//! Minibatch Adam on the normalized-criteria MSE.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{squared_error, target_matrix, EstimatorError, EstimatorInput, EstimatorModel, Network, OUTPUTS};
use crate::dataset::DatasetRecord;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Samples per parallel work item. Gradients of the chunks are summed in
    /// chunk order, so results do not depend on the worker count.
    pub chunk_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 128,
            epochs: 30,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            chunk_size: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        let bad = |m: &str| Err(EstimatorError::Train(m.into()));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.batch_size == 0 || self.chunk_size == 0 {
            return bad("batch_size and chunk_size must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch; for epoch 0, the loss of the
    /// initial weights on the whole training split.
    pub train_loss: f64,
    pub val_loss: f64,
}

pub struct TrainOutcome {
    /// Snapshot with the lowest validation loss.
    pub model: EstimatorModel,
    pub history: Vec<EpochStats>,
}

struct Adam {
    m: Network<f64>,
    v: Network<f64>,
    step: i32,
}

impl Adam {
    fn new(net: &Network<f64>) -> Self {
        Self {
            m: net.zeros_like(),
            v: net.zeros_like(),
            step: 0,
        }
    }

    fn update(&mut self, net: &mut Network<f64>, grad: &Network<f64>, cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let g = grad.tensors();
        let params = net.tensors_mut();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, m), v), (_, _, g)) in params.into_iter().zip(ms).zip(vs).zip(g) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.adam_eps);
            }
        }
    }
}

/// Summed squared error and gradient (scaled by `scale`) of a batch, computed
/// chunk by chunk and reduced in chunk order.
fn batch_gradient(
    model: &EstimatorModel,
    inputs: &[&EstimatorInput],
    targets: &[[f64; 4]],
    chunk: usize,
    scale: f64,
) -> Result<(f64, Network<f64>), EstimatorError> {
    let parts: Vec<Result<(f64, Network<f64>), EstimatorError>> = inputs
        .par_chunks(chunk)
        .zip(targets.par_chunks(chunk))
        .map(|(x, t)| {
            let b = model.batch(x)?;
            let cache = model.network.forward_cached(&b)?;
            let (sse, d) = squared_error(&cache.output, &target_matrix(t));
            Ok((sse, model.network.backward(&b, &cache, &(d * scale))))
        })
        .collect();
    let mut total = 0.0;
    let mut grad: Option<Network<f64>> = None;
    for p in parts {
        let (sse, g) = p?;
        total += sse;
        match grad.as_mut() {
            Some(acc) => acc.add_scaled(&g, 1.0),
            None => grad = Some(g),
        }
    }
    Ok((total, grad.unwrap_or_else(|| model.network.zeros_like())))
}

/// Mean loss over a whole split.
pub fn evaluate(model: &EstimatorModel, inputs: &[EstimatorInput], targets: &[[f64; 4]], chunk: usize) -> Result<f64, EstimatorError> {
    let parts: Vec<Result<f64, EstimatorError>> = inputs
        .par_chunks(chunk.max(1))
        .zip(targets.par_chunks(chunk.max(1)))
        .map(|(x, t)| {
            let refs: Vec<&EstimatorInput> = x.iter().collect();
            let out = model.forward_batch(&refs)?;
            Ok(squared_error(&out, &target_matrix(t)).0)
        })
        .collect();
    let mut sse = 0.0;
    for p in parts {
        sse += p?;
    }
    Ok(sse / (OUTPUTS * inputs.len().max(1)) as f64)
}

fn split_data(records: &[DatasetRecord]) -> (Vec<EstimatorInput>, Vec<[f64; 4]>) {
    (records.iter().map(EstimatorInput::from_record).collect(), records.iter().map(|r| r.criteria_norm).collect())
}

/// Trains `model` in place of its current weights and returns the best
/// validation snapshot. `on_epoch` sees every history entry as it is produced.
pub fn train(
    model: EstimatorModel,
    train_set: &[DatasetRecord],
    val_set: &[DatasetRecord],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome, EstimatorError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(EstimatorError::EmptySplit("train"));
    }
    if val_set.is_empty() {
        return Err(EstimatorError::EmptySplit("val"));
    }
    for r in train_set.iter().chain(val_set) {
        model.check_kind(r.sample.plant.kind())?;
    }
    let (train_x, train_y) = split_data(train_set);
    let (val_x, val_y) = split_data(val_set);
    let chunk = cfg.chunk_size;

    let mut model = model;
    let mut adam = Adam::new(&model.network);
    let first = EpochStats {
        epoch: 0,
        train_loss: evaluate(&model, &train_x, &train_y, chunk)?,
        val_loss: evaluate(&model, &val_x, &val_y, chunk)?,
    };
    on_epoch(&first);
    let mut history = vec![first];
    let mut best = (first.val_loss, 0usize, model.network.clone());

    let mut order: Vec<usize> = (0..train_x.len()).collect();
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut sse = 0.0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let xs: Vec<&EstimatorInput> = idx.iter().map(|&i| &train_x[i]).collect();
            let ys: Vec<[f64; 4]> = idx.iter().map(|&i| train_y[i]).collect();
            let scale = 1.0 / (OUTPUTS * idx.len()) as f64;
            let (batch_sse, grad) = batch_gradient(&model, &xs, &ys, chunk, scale)?;
            if !batch_sse.is_finite() || !grad.is_finite() {
                return Err(EstimatorError::NonFinite {
                    epoch,
                    batch: bi,
                    lr: cfg.learning_rate,
                });
            }
            sse += batch_sse;
            adam.update(&mut model.network, &grad, cfg);
        }
        let val_loss = evaluate(&model, &val_x, &val_y, chunk)?;
        if !val_loss.is_finite() {
            return Err(EstimatorError::NonFinite {
                epoch,
                batch: order.len().div_ceil(cfg.batch_size),
                lr: cfg.learning_rate,
            });
        }
        let stats = EpochStats {
            epoch,
            train_loss: sse / (OUTPUTS * train_x.len()) as f64,
            val_loss,
        };
        on_epoch(&stats);
        history.push(stats);
        if val_loss < best.0 {
            best = (val_loss, epoch, model.network.clone());
        }
    }

    model.network = best.2;
    model.metadata.seed = cfg.seed;
    model.metadata.epochs_run = cfg.epochs;
    model.metadata.best_epoch = best.1;
    model.metadata.best_val_loss = Some(best.0);
    model.metadata.train_records = train_x.len();
    Ok(TrainOutcome { model, history })
}

pub fn write_history_csv(path: &Path, history: &[EpochStats]) -> Result<(), EstimatorError> {
    let io = |source| EstimatorError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "epoch,train_loss,val_loss").map_err(io)?;
    for h in history {
        writeln!(f, "{},{},{}", h.epoch, h.train_loss, h.val_loss).map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Runs `steps` full-batch Adam updates on `records`; returns the loss
/// before each step followed by the final loss.
pub fn overfit(model: &mut EstimatorModel, records: &[DatasetRecord], cfg: &TrainConfig, steps: usize) -> Result<Vec<f64>, EstimatorError> {
    cfg.validate()?;
    let (x, y) = split_data(records);
    let refs: Vec<&EstimatorInput> = x.iter().collect();
    let scale = 1.0 / (OUTPUTS * x.len().max(1)) as f64;
    let mut adam = Adam::new(&model.network);
    let mut losses = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let (sse, grad) = batch_gradient(model, &refs, &y, cfg.chunk_size, scale)?;
        losses.push(sse * scale);
        adam.update(&mut model.network, &grad, cfg);
    }
    losses.push(evaluate(model, &x, &y, cfg.chunk_size)?);
    Ok(losses)
}
