//! Neural performance estimator: maps a plant's basic-experiment transient,
//! candidate observer eigenvalues and the operating conditions to the four
//! normalized criteria.

mod io;
mod network;
mod train;

use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::EigenTriple;
use crate::dataset::{denormalize_criteria, ranges, DatasetRecord, LAMBDA_RANGE};
use crate::plant::PlantKind;
use crate::sim::CriteriaVector;

pub use io::{load_model, save_model, MODEL_MAGIC};
pub use network::{BatchInput, Dense, EstimatorConfig, ForwardCache, Network, AUX_INPUTS, KERNEL, OUTPUTS, POOL};
pub use train::{evaluate, overfit, train, write_history_csv, EpochStats, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("invalid estimator configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("model trained for {model} cannot serve {requested}")]
    KindMismatch { model: PlantKind, requested: PlantKind },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (learning rate {lr})")]
    NonFinite { epoch: usize, batch: usize, lr: f64 },
    #[error("invalid training configuration: {0}")]
    Train(String),
    #[error("model file {path}: {msg}")]
    Format { path: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Raw (unnormalized) network inputs for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorInput {
    pub transient: Vec<[f64; 3]>,
    pub lambda: EigenTriple<f64>,
    pub sigma_n: f64,
    pub x_test0: [f64; 2],
    pub x0: [f64; 2],
}

impl EstimatorInput {
    pub fn from_record(r: &DatasetRecord) -> Self {
        Self {
            transient: r.basic_transient.clone(),
            lambda: r.sample.lambda,
            sigma_n: r.sample.plant.noise.sigma_n,
            x_test0: r.sample.x_test0,
            x0: r.sample.x0,
        }
    }
}

/// Input normalization. Scalars use the sampling ranges of the plant kind;
/// the transient channels are divided by their RMS over the training split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub kind: PlantKind,
    pub transient_rms: [f64; 3],
}

impl FeatureScaling {
    pub fn unit(kind: PlantKind) -> Self {
        Self {
            kind,
            transient_rms: [1.0; 3],
        }
    }

    pub fn fit(kind: PlantKind, records: &[DatasetRecord]) -> Self {
        let mut sq = [0.0; 3];
        let mut n = 0usize;
        for r in records {
            for row in &r.basic_transient {
                for c in 0..3 {
                    sq[c] += row[c] * row[c];
                }
            }
            n += r.basic_transient.len();
        }
        let transient_rms = sq.map(|s| {
            let rms = (s / n.max(1) as f64).sqrt();
            if rms.is_finite() && rms > 0.0 {
                rms
            } else {
                1.0
            }
        });
        Self { kind, transient_rms }
    }

    /// Eigenvalue mapped from `[-80, -1]` to `[0, 1]`.
    pub fn lambda(&self, v: f64) -> f64 {
        let (lo, hi) = LAMBDA_RANGE;
        (v - lo) / (hi - lo)
    }

    /// `(sigma_n, x_test0, x0)` mapped to `[0, 1]`.
    pub fn aux(&self, sigma_n: f64, x_test0: [f64; 2], x0: [f64; 2]) -> [f64; AUX_INPUTS] {
        let r = ranges(self.kind);
        let lin = |v: f64, (lo, hi): (f64, f64)| (v - lo) / (hi - lo);
        [
            lin(sigma_n, r.sigma_n),
            lin(x_test0[0], r.x),
            lin(x_test0[1], r.x),
            lin(x0[0], r.x),
            lin(x0[1], r.x),
        ]
    }

    /// `[3, len]` transient block of one sample.
    pub fn transient(&self, rows: &[[f64; 3]]) -> Array2<f64> {
        Array2::from_shape_fn((3, rows.len()), |(c, t)| rows[t][c] / self.transient_rms[c])
    }

    /// Ascending normalized eigenvalues; the fixed order makes the summed
    /// embedding exactly invariant to the order the triple was given in.
    pub fn lambda_column(&self, lam: &EigenTriple<f64>) -> [f64; 3] {
        lam.canonical().as_array().map(|v| self.lambda(v))
    }

    pub fn batch(&self, inputs: &[&EstimatorInput], len: usize) -> Result<BatchInput<f64>, EstimatorError> {
        let b = inputs.len();
        let mut transient = Array2::zeros((3, b * len));
        let mut lambda = Array2::zeros((1, 3 * b));
        let mut aux = Array2::zeros((AUX_INPUTS, b));
        for (i, x) in inputs.iter().enumerate() {
            if x.transient.len() != len {
                return Err(EstimatorError::Shape(format!("transient has {} rows, expected {len}", x.transient.len())));
            }
            for (t, row) in x.transient.iter().enumerate() {
                for c in 0..3 {
                    transient[[c, i * len + t]] = row[c] / self.transient_rms[c];
                }
            }
            for (j, v) in self.lambda_column(&x.lambda).into_iter().enumerate() {
                lambda[[0, 3 * i + j]] = v;
            }
            for (j, v) in self.aux(x.sigma_n, x.x_test0, x.x0).into_iter().enumerate() {
                aux[[j, i]] = v;
            }
        }
        Ok(BatchInput {
            transient,
            lambda,
            aux,
            batch: b,
        })
    }
}

/// Training conventions, stored with every model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub loss: String,
    pub init: String,
    pub padding: String,
    pub shuffle: String,
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub train_records: usize,
}

impl ModelMetadata {
    pub fn untrained(seed: u64) -> Self {
        Self {
            loss: "mse over the 4 normalized criteria".into(),
            init: "he-uniform (relu layers), glorot-uniform (sigmoid layer), zero biases".into(),
            padding: "same (zero), kernel 3; max-pool 2 drops a trailing odd sample".into(),
            shuffle: "per-epoch permutation seeded by (seed, epoch)".into(),
            seed,
            epochs_run: 0,
            best_epoch: 0,
            best_val_loss: None,
            train_records: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorModel {
    pub network: Network<f64>,
    pub scaling: FeatureScaling,
    pub metadata: ModelMetadata,
}

impl EstimatorModel {
    pub fn new(config: EstimatorConfig, scaling: FeatureScaling, seed: u64) -> Result<Self, EstimatorError> {
        Ok(Self {
            network: Network::new(config, seed)?,
            scaling,
            metadata: ModelMetadata::untrained(seed),
        })
    }

    pub fn kind(&self) -> PlantKind {
        self.scaling.kind
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.network.config
    }

    pub fn batch(&self, inputs: &[&EstimatorInput]) -> Result<BatchInput<f64>, EstimatorError> {
        self.scaling.batch(inputs, self.config().transient_len)
    }

    /// Normalized criteria for each input, `[4, batch]`.
    pub fn forward_batch(&self, inputs: &[&EstimatorInput]) -> Result<Array2<f64>, EstimatorError> {
        self.network.forward(&self.batch(inputs)?)
    }

    pub fn forward(&self, input: &EstimatorInput) -> Result<[f64; 4], EstimatorError> {
        let out = self.forward_batch(&[input])?;
        Ok([out[[0, 0]], out[[1, 0]], out[[2, 0]], out[[3, 0]]])
    }

    pub fn predict_criteria(&self, input: &EstimatorInput, kind: PlantKind) -> Result<CriteriaVector<f64>, EstimatorError> {
        self.check_kind(kind)?;
        Ok(denormalize_criteria(&self.forward(input)?, kind))
    }

    pub fn check_kind(&self, kind: PlantKind) -> Result<(), EstimatorError> {
        if kind != self.kind() {
            return Err(EstimatorError::KindMismatch {
                model: self.kind(),
                requested: kind,
            });
        }
        Ok(())
    }

    /// Embeddings of the eigenvalue-independent inputs, computed once so a
    /// grid of eigenvalue triples only runs the small blocks and the head.
    pub fn context(&self, transient: &[[f64; 3]], sigma_n: f64, x_test0: [f64; 2], x0: [f64; 2], kind: PlantKind) -> Result<ContextEmbedding<'_>, EstimatorError> {
        self.check_kind(kind)?;
        let len = self.config().transient_len;
        if transient.len() != len {
            return Err(EstimatorError::Shape(format!("transient has {} rows, expected {len}", transient.len())));
        }
        let t = self.network.transient_embedding(&self.scaling.transient(transient), 1);
        let a = Array2::from_shape_vec((AUX_INPUTS, 1), self.scaling.aux(sigma_n, x_test0, x0).to_vec()).expect("aux shape");
        let aux = self.network.aux_embedding(&a);
        Ok(ContextEmbedding { model: self, transient: t, aux })
    }
}

pub struct ContextEmbedding<'a> {
    model: &'a EstimatorModel,
    transient: Array2<f64>,
    aux: Array2<f64>,
}

impl ContextEmbedding<'_> {
    /// Denormalized criteria for every triple, in input order.
    pub fn predict(&self, lambdas: &[EigenTriple<f64>]) -> Vec<CriteriaVector<f64>> {
        let b = lambdas.len();
        if b == 0 {
            return Vec::new();
        }
        let mut lam = Array2::zeros((1, 3 * b));
        for (i, l) in lambdas.iter().enumerate() {
            for (j, v) in self.model.scaling.lambda_column(l).into_iter().enumerate() {
                lam[[0, 3 * i + j]] = v;
            }
        }
        let lam_emb = self.model.network.lambda_embedding(&lam);
        let t = self.transient.broadcast((self.transient.nrows(), b)).expect("single column");
        let a = self.aux.broadcast((self.aux.nrows(), b)).expect("single column");
        let out = self.model.network.predict_from_embeddings(t, lam_emb.view(), a);
        out.axis_iter(Axis(1))
            .map(|c| denormalize_criteria(&[c[0], c[1], c[2], c[3]], self.model.kind()))
            .collect()
    }
}

/// Mean squared error over the 4 outputs.
pub fn loss(pred: &[f64; 4], target: &[f64; 4]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / 4.0
}

/// Summed squared error of a batch and its gradient w.r.t. the outputs.
/// Dividing both by `4 * batch` gives the mean loss.
pub fn squared_error(pred: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    let diff = pred - target;
    let sse = diff.iter().map(|d| d * d).sum();
    (sse, diff * 2.0)
}

/// `[4, batch]` target matrix.
pub fn target_matrix(targets: &[[f64; 4]]) -> Array2<f64> {
    Array2::from_shape_fn((OUTPUTS, targets.len()), |(o, b)| targets[b][o])
}

/// Mean loss and parameter gradient of a batch.
pub fn loss_and_gradient(net: &Network<f64>, x: &BatchInput<f64>, target: &Array2<f64>) -> Result<(f64, Network<f64>), EstimatorError> {
    let cache = net.forward_cached(x)?;
    let (sse, d) = squared_error(&cache.output, target);
    let scale = 1.0 / (OUTPUTS * x.batch) as f64;
    let g = net.backward(x, &cache, &(d * scale));
    Ok((sse * scale, g))
}

/// Central finite differences on `samples` random parameters against the
/// analytic gradient; returns the largest relative error
/// `|fd - an| / max(|fd| + |an|, 1e-6)`.
pub fn gradient_check(net: &Network<f64>, x: &BatchInput<f64>, target: &Array2<f64>, samples: usize, seed: u64) -> Result<f64, EstimatorError> {
    const H: f64 = 1e-5;
    let (_, grad) = loss_and_gradient(net, x, target)?;
    let analytic: Vec<f64> = grad.tensors().iter().flat_map(|(_, _, v)| v.iter().copied()).collect();
    let total = analytic.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, total, samples.min(total)).into_vec();
    let eval = |net: &Network<f64>| -> Result<f64, EstimatorError> {
        let out = net.forward(x)?;
        Ok(squared_error(&out, target).0 / (OUTPUTS * x.batch) as f64)
    };
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for idx in picks {
        let orig = param_mut(&mut probe, idx);
        let v = *orig;
        *param_mut(&mut probe, idx) = v + H;
        let up = eval(&probe)?;
        *param_mut(&mut probe, idx) = v - H;
        let down = eval(&probe)?;
        *param_mut(&mut probe, idx) = v;
        let fd = (up - down) / (2.0 * H);
        let an = analytic[idx];
        worst = worst.max((fd - an).abs() / (fd.abs() + an.abs()).max(1e-6));
    }
    Ok(worst)
}

fn param_mut(net: &mut Network<f64>, mut idx: usize) -> &mut f64 {
    for t in net.tensors_mut() {
        if idx < t.len() {
            return &mut t[idx];
        }
        idx -= t.len();
    }
    panic!("parameter index out of range")
}

/// Mean absolute percentage error per criterion, skipping targets with
/// `|true| < floor` (reported alongside as the count used).
pub fn mape(pred: &[CriteriaVector<f64>], truth: &[CriteriaVector<f64>], floor: f64) -> ([f64; 4], [usize; 4]) {
    let mut sum = [0.0; 4];
    let mut n = [0usize; 4];
    for (p, t) in pred.iter().zip(truth) {
        let (p, t) = (p.to_array(), t.to_array());
        for c in 0..4 {
            if t[c].abs() >= floor {
                sum[c] += ((p[c] - t[c]) / t[c]).abs();
                n[c] += 1;
            }
        }
    }
    let m = std::array::from_fn(|c| if n[c] > 0 { 100.0 * sum[c] / n[c] as f64 } else { f64::NAN });
    (m, n)
}

/// Normalized outputs for every record, in `chunk`-sized batches.
pub fn predict_records(model: &EstimatorModel, records: &[DatasetRecord], chunk: usize) -> Result<Vec<[f64; 4]>, EstimatorError> {
    let inputs: Vec<EstimatorInput> = records.iter().map(EstimatorInput::from_record).collect();
    let mut out = Vec::with_capacity(records.len());
    for c in inputs.chunks(chunk.max(1)) {
        let refs: Vec<&EstimatorInput> = c.iter().collect();
        let y = model.forward_batch(&refs)?;
        out.extend(y.axis_iter(Axis(1)).map(|c| [c[0], c[1], c[2], c[3]]));
    }
    Ok(out)
}
