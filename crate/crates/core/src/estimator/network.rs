//! Forward and backward passes of the performance-estimation network.
//!
//! Activations are kept as `[features, columns]` matrices. Convolution inputs
//! use `[channels, batch * length]` with each sample's time axis contiguous,
//! so every layer is a single GEMM (convolutions through im2col).

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EstimatorError;
use crate::scalar::Real;

/// Convolution kernel width; the padding scheme assumes 3.
pub const KERNEL: usize = 3;
/// Max-pool window.
pub const POOL: usize = 2;
/// Auxiliary inputs: `sigma_n`, `x_test0`, `x0`.
pub const AUX_INPUTS: usize = 5;
/// Regression outputs.
pub const OUTPUTS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub conv_blocks: usize,
    pub base_filters: usize,
    pub conv_kernel: usize,
    pub pool: usize,
    pub transient_len: usize,
    pub transient_channels: usize,
    pub transient_fc: usize,
    pub lambda_fc_sizes: [usize; 2],
    pub aux_fc_sizes: [usize; 2],
    pub head_sizes: [usize; 3],
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            conv_blocks: 8,
            base_filters: 8,
            conv_kernel: KERNEL,
            pool: POOL,
            transient_len: 1000,
            transient_channels: 3,
            transient_fc: 512,
            lambda_fc_sizes: [32, 64],
            aux_fc_sizes: [32, 64],
            head_sizes: [512, 256, OUTPUTS],
        }
    }
}

impl EstimatorConfig {
    /// Reduced-width variant used for desk-scale runs.
    pub fn desk() -> Self {
        Self {
            base_filters: 4,
            ..Self::default()
        }
    }

    /// Length of the time axis entering conv block `b` (and after the last one for `b = conv_blocks`).
    pub fn length_at(&self, b: usize) -> usize {
        (0..b).fold(self.transient_len, |l, _| l / self.pool)
    }

    pub fn filters(&self, b: usize) -> usize {
        self.base_filters << b
    }

    pub fn conv_out_len(&self) -> usize {
        self.length_at(self.conv_blocks)
    }

    pub fn flat_features(&self) -> usize {
        self.conv_out_len() * self.filters(self.conv_blocks - 1)
    }

    pub fn concat_features(&self) -> usize {
        self.transient_fc + self.lambda_fc_sizes[1] + self.aux_fc_sizes[1]
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        let bad = |m: String| Err(EstimatorError::Config(m));
        if self.conv_kernel != KERNEL || self.pool != POOL {
            return bad(format!("only kernel {KERNEL} and pool {POOL} are supported"));
        }
        if self.conv_blocks == 0 || self.base_filters == 0 || self.transient_channels == 0 {
            return bad("conv_blocks, base_filters and transient_channels must be positive".into());
        }
        if self.conv_out_len() < 1 {
            return bad(format!(
                "{} pooling stages leave no samples of a length-{} transient",
                self.conv_blocks, self.transient_len
            ));
        }
        if self.head_sizes[2] != OUTPUTS {
            return bad(format!("the head must end with {OUTPUTS} units"));
        }
        let widths = [self.transient_fc, self.lambda_fc_sizes[0], self.lambda_fc_sizes[1], self.aux_fc_sizes[0], self.aux_fc_sizes[1], self.head_sizes[0], self.head_sizes[1]];
        if widths.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        Ok(())
    }
}

/// Fully connected layer `y = W x + b`. Convolutions reuse it with `W` of
/// shape `[out, in * KERNEL]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            w: Array2::zeros((out, inp)),
            b: Array1::zeros(out),
        }
    }

    fn init(out: usize, inp: usize, limit: f64, rng: &mut ChaCha8Rng) -> Self {
        let w = Array2::from_shape_fn((out, inp), |_| T::lit(rng.gen_range(-limit..limit)));
        Self { w, b: Array1::zeros(out) }
    }

    /// He-uniform, for layers followed by a ReLU.
    fn he(out: usize, inp: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::init(out, inp, (6.0 / inp as f64).sqrt(), rng)
    }

    /// Glorot-uniform, for the sigmoid output layer.
    fn glorot(out: usize, inp: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::init(out, inp, (6.0 / (inp + out) as f64).sqrt(), rng)
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut y = self.w.dot(&x);
        y += &self.b.view().insert_axis(Axis(1));
        y
    }

    /// Accumulates parameter gradients into `g`; returns the input gradient when asked.
    fn backward(&self, x: ArrayView2<T>, dy: &Array2<T>, g: &mut Dense<T>, need_dx: bool) -> Option<Array2<T>> {
        g.w += &dy.dot(&x.t());
        g.b += &dy.sum_axis(Axis(1));
        need_dx.then(|| self.w.t().dot(dy))
    }

    fn cast<U: Real>(&self) -> Dense<U> {
        Dense {
            w: self.w.mapv(|v| U::lit(v.to_f64_lossy())),
            b: self.b.mapv(|v| U::lit(v.to_f64_lossy())),
        }
    }
}

fn relu_inplace<T: Real>(a: &mut Array2<T>) {
    a.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

/// Zeroes `d` where the (post-activation) `a` is not positive.
fn relu_backward<T: Real>(d: &mut Array2<T>, a: &Array2<T>) {
    d.zip_mut_with(a, |g, &v| {
        if v <= T::zero() {
            *g = T::zero();
        }
    });
}

/// Sigmoid kept strictly inside `(0, 1)`.
fn sigmoid<T: Real>(v: T) -> T {
    let s = T::one() / (T::one() + (-v).exp());
    s.max(T::epsilon()).min(T::one() - T::epsilon())
}

/// `[cin, batch * len]` to `[cin * KERNEL, batch * len]` with zero "same" padding.
fn im2col<T: Real>(a: &Array2<T>, batch: usize, len: usize) -> Array2<T> {
    let cin = a.nrows();
    let mut cols = Array2::zeros((cin * KERNEL, batch * len));
    for c in 0..cin {
        let src = a.row(c);
        let src = src.as_slice().expect("contiguous rows");
        for k in 0..KERNEL {
            let mut dst_row = cols.row_mut(c * KERNEL + k);
            let dst = dst_row.as_slice_mut().expect("contiguous rows");
            for b in 0..batch {
                let base = b * len;
                // output t reads input t + k - 1
                let (lo, hi) = (if k == 0 { 1 } else { 0 }, if k == KERNEL - 1 { len - 1 } else { len });
                for t in lo..hi {
                    dst[base + t] = src[base + t + k - 1];
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
fn col2im<T: Real>(cols: &Array2<T>, cin: usize, batch: usize, len: usize) -> Array2<T> {
    let mut a = Array2::zeros((cin, batch * len));
    for c in 0..cin {
        let mut dst_row = a.row_mut(c);
        let dst = dst_row.as_slice_mut().expect("contiguous rows");
        for k in 0..KERNEL {
            let src = cols.row(c * KERNEL + k);
            let src = src.as_slice().expect("contiguous rows");
            for b in 0..batch {
                let base = b * len;
                let (lo, hi) = (if k == 0 { 1 } else { 0 }, if k == KERNEL - 1 { len - 1 } else { len });
                for t in lo..hi {
                    dst[base + t + k - 1] += src[base + t];
                }
            }
        }
    }
    a
}

/// Non-overlapping max-pool of width 2; a trailing odd sample is dropped.
/// Returns the pooled map and which element of each pair won.
fn maxpool<T: Real>(a: &Array2<T>, batch: usize, len: usize) -> (Array2<T>, Vec<bool>) {
    let half = len / POOL;
    let c = a.nrows();
    let mut out = Array2::zeros((c, batch * half));
    let mut second = vec![false; c * batch * half];
    for ch in 0..c {
        let src = a.row(ch);
        let src = src.as_slice().expect("contiguous rows");
        let mut dst_row = out.row_mut(ch);
        let dst = dst_row.as_slice_mut().expect("contiguous rows");
        for b in 0..batch {
            for j in 0..half {
                let (x0, x1) = (src[b * len + 2 * j], src[b * len + 2 * j + 1]);
                let o = b * half + j;
                if x1 > x0 {
                    dst[o] = x1;
                    second[ch * batch * half + o] = true;
                } else {
                    dst[o] = x0;
                }
            }
        }
    }
    (out, second)
}

fn maxpool_backward<T: Real>(d: &Array2<T>, second: &[bool], batch: usize, len: usize) -> Array2<T> {
    let half = len / POOL;
    let c = d.nrows();
    let mut out = Array2::zeros((c, batch * len));
    for ch in 0..c {
        let src = d.row(ch);
        let src = src.as_slice().expect("contiguous rows");
        let mut dst_row = out.row_mut(ch);
        let dst = dst_row.as_slice_mut().expect("contiguous rows");
        for b in 0..batch {
            for j in 0..half {
                let o = b * half + j;
                let pick = if second[ch * batch * half + o] { 1 } else { 0 };
                dst[b * len + 2 * j + pick] = src[o];
            }
        }
    }
    out
}

/// Normalized network inputs for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchInput<T> {
    /// `[channels, batch * len]`.
    pub transient: Array2<T>,
    /// `[1, 3 * batch]`, each sample's eigenvalues ascending.
    pub lambda: Array2<T>,
    /// `[AUX_INPUTS, batch]`.
    pub aux: Array2<T>,
    pub batch: usize,
}

/// All trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    pub config: EstimatorConfig,
    pub conv: Vec<Dense<T>>,
    pub transient_fc: Dense<T>,
    pub lambda_fc: [Dense<T>; 2],
    pub aux_fc: [Dense<T>; 2],
    pub head: [Dense<T>; 3],
}

struct ConvCache<T> {
    cols: Array2<T>,
    act: Array2<T>,
    second: Vec<bool>,
    len: usize,
}

/// Intermediate values of one forward pass.
pub struct ForwardCache<T> {
    conv: Vec<ConvCache<T>>,
    flat: Array2<T>,
    t_emb: Array2<T>,
    lam_h1: Array2<T>,
    lam_h2: Array2<T>,
    aux_h1: Array2<T>,
    aux_h2: Array2<T>,
    concat: Array2<T>,
    head_h1: Array2<T>,
    head_h2: Array2<T>,
    pub output: Array2<T>,
}

impl<T: Real> Network<T> {
    fn build(config: EstimatorConfig, mut make: impl FnMut(usize, usize, bool) -> Dense<T>) -> Self {
        let mut cin = config.transient_channels;
        let mut conv = Vec::with_capacity(config.conv_blocks);
        for b in 0..config.conv_blocks {
            let cout = config.filters(b);
            conv.push(make(cout, cin * KERNEL, false));
            cin = cout;
        }
        let [l1, l2] = config.lambda_fc_sizes;
        let [a1, a2] = config.aux_fc_sizes;
        let [h1, h2, h3] = config.head_sizes;
        Self {
            config,
            conv,
            transient_fc: make(config.transient_fc, config.flat_features(), false),
            lambda_fc: [make(l1, 1, false), make(l2, l1, false)],
            aux_fc: [make(a1, AUX_INPUTS, false), make(a2, a1, false)],
            head: [make(h1, config.concat_features(), false), make(h2, h1, false), make(h3, h2, true)],
        }
    }

    pub fn new(config: EstimatorConfig, seed: u64) -> Result<Self, EstimatorError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self::build(config, |o, i, last| if last { Dense::glorot(o, i, &mut rng) } else { Dense::he(o, i, &mut rng) }))
    }

    pub fn zeros(config: EstimatorConfig) -> Self {
        Self::build(config, |o, i, _| Dense::zeros(o, i))
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config)
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            config: self.config,
            conv: self.conv.iter().map(Dense::cast).collect(),
            transient_fc: self.transient_fc.cast(),
            lambda_fc: [self.lambda_fc[0].cast(), self.lambda_fc[1].cast()],
            aux_fc: [self.aux_fc[0].cast(), self.aux_fc[1].cast()],
            head: [self.head[0].cast(), self.head[1].cast(), self.head[2].cast()],
        }
    }

    /// Named layers in a fixed order.
    pub fn layers(&self) -> Vec<(String, &Dense<T>)> {
        let mut out: Vec<(String, &Dense<T>)> = self.conv.iter().enumerate().map(|(i, d)| (format!("conv{i}"), d)).collect();
        out.push(("transient_fc".into(), &self.transient_fc));
        for (i, d) in self.lambda_fc.iter().enumerate() {
            out.push((format!("lambda_fc{i}"), d));
        }
        for (i, d) in self.aux_fc.iter().enumerate() {
            out.push((format!("aux_fc{i}"), d));
        }
        for (i, d) in self.head.iter().enumerate() {
            out.push((format!("head{i}"), d));
        }
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Dense<T>> {
        let mut out: Vec<&mut Dense<T>> = self.conv.iter_mut().collect();
        out.push(&mut self.transient_fc);
        out.extend(self.lambda_fc.iter_mut());
        out.extend(self.aux_fc.iter_mut());
        out.extend(self.head.iter_mut());
        out
    }

    /// Every parameter tensor as a flat slice, in [`Network::layers`] order
    /// (weight then bias of each layer).
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out = Vec::new();
        for (name, d) in self.layers() {
            out.push((format!("{name}.w"), d.w.shape().to_vec(), d.w.as_slice().expect("standard layout")));
            out.push((format!("{name}.b"), d.b.shape().to_vec(), d.b.as_slice().expect("standard layout")));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for d in self.layers_mut() {
            out.push(d.w.as_slice_mut().expect("standard layout"));
            out.push(d.b.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, _, v)| v.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, v)| v.iter().all(|x| x.is_finite()))
    }

    /// `self += scale * other`, parameter by parameter.
    pub fn add_scaled(&mut self, other: &Network<T>, scale: T) {
        for (a, b) in self.layers_mut().into_iter().zip(other.layers()) {
            a.w.scaled_add(scale, &b.1.w);
            a.b.scaled_add(scale, &b.1.b);
        }
    }

    fn check_input(&self, x: &BatchInput<T>) -> Result<(), EstimatorError> {
        let c = &self.config;
        let want = [
            ("transient", (c.transient_channels, x.batch * c.transient_len), x.transient.dim()),
            ("lambda", (1, 3 * x.batch), x.lambda.dim()),
            ("aux", (AUX_INPUTS, x.batch), x.aux.dim()),
        ];
        for (name, expected, got) in want {
            if expected != got {
                return Err(EstimatorError::Shape(format!("{name}: expected {expected:?}, got {got:?}")));
            }
        }
        Ok(())
    }

    /// Transient block: conv stack, flatten, FC + ReLU. Returns `[transient_fc, batch]`.
    pub fn transient_embedding(&self, transient: &Array2<T>, batch: usize) -> Array2<T> {
        self.transient_forward(transient, batch, None)
    }

    fn transient_forward(&self, transient: &Array2<T>, batch: usize, mut cache: Option<&mut Vec<ConvCache<T>>>) -> Array2<T> {
        let mut a = transient.clone();
        let mut len = self.config.transient_len;
        for layer in &self.conv {
            let cols = im2col(&a, batch, len);
            let mut act = layer.forward(cols.view());
            relu_inplace(&mut act);
            let (pooled, second) = maxpool(&act, batch, len);
            if let Some(c) = cache.as_deref_mut() {
                c.push(ConvCache { cols, act, second, len });
            }
            a = pooled;
            len /= POOL;
        }
        let flat = flatten(&a, batch, len);
        let mut emb = self.transient_fc.forward(flat.view());
        relu_inplace(&mut emb);
        emb
    }

    /// Auxiliary block, `[aux_fc[1], batch]`.
    pub fn aux_embedding(&self, aux: &Array2<T>) -> Array2<T> {
        let mut h1 = self.aux_fc[0].forward(aux.view());
        relu_inplace(&mut h1);
        let mut h2 = self.aux_fc[1].forward(h1.view());
        relu_inplace(&mut h2);
        h2
    }

    /// Eigenvalue block: shared two-layer stream per eigenvalue, summed in
    /// ascending-eigenvalue order. Returns the per-eigenvalue activations too.
    fn lambda_streams(&self, lambda: &Array2<T>) -> (Array2<T>, Array2<T>, Array2<T>) {
        let mut h1 = self.lambda_fc[0].forward(lambda.view());
        relu_inplace(&mut h1);
        let mut h2 = self.lambda_fc[1].forward(h1.view());
        relu_inplace(&mut h2);
        let batch = lambda.ncols() / 3;
        let mut sum = Array2::zeros((h2.nrows(), batch));
        for b in 0..batch {
            let mut col = sum.column_mut(b);
            for i in 0..3 {
                col += &h2.column(3 * b + i);
            }
        }
        (h1, h2, sum)
    }

    pub fn lambda_embedding(&self, lambda: &Array2<T>) -> Array2<T> {
        self.lambda_streams(lambda).2
    }

    /// Regression head on concatenated embeddings; returns the intermediate
    /// activations and the sigmoid output.
    fn head_forward(&self, concat: &Array2<T>) -> (Array2<T>, Array2<T>, Array2<T>) {
        let mut h1 = self.head[0].forward(concat.view());
        relu_inplace(&mut h1);
        let mut h2 = self.head[1].forward(h1.view());
        relu_inplace(&mut h2);
        let out = self.head[2].forward(h2.view()).mapv(sigmoid);
        (h1, h2, out)
    }

    /// Output `[4, batch]` from precomputed transient and aux embeddings.
    pub fn predict_from_embeddings<'a>(&self, t_emb: ArrayView2<'a, T>, lam_emb: ArrayView2<'a, T>, aux_emb: ArrayView2<'a, T>) -> Array2<T> {
        let concat = ndarray::concatenate(Axis(0), &[t_emb, lam_emb, aux_emb]).expect("matching batch sizes");
        self.head_forward(&concat).2
    }

    pub fn forward(&self, x: &BatchInput<T>) -> Result<Array2<T>, EstimatorError> {
        self.check_input(x)?;
        let t_emb = self.transient_embedding(&x.transient, x.batch);
        let lam = self.lambda_embedding(&x.lambda);
        let aux = self.aux_embedding(&x.aux);
        Ok(self.predict_from_embeddings(t_emb.view(), lam.view(), aux.view()))
    }

    pub fn forward_cached(&self, x: &BatchInput<T>) -> Result<ForwardCache<T>, EstimatorError> {
        self.check_input(x)?;
        let mut conv = Vec::with_capacity(self.conv.len());
        let t_emb = self.transient_forward(&x.transient, x.batch, Some(&mut conv));
        let flat = {
            let last = conv.last().expect("at least one conv block");
            let (pooled, _) = maxpool(&last.act, x.batch, last.len);
            flatten(&pooled, x.batch, last.len / POOL)
        };
        let (lam_h1, lam_h2, lam) = self.lambda_streams(&x.lambda);
        let mut aux_h1 = self.aux_fc[0].forward(x.aux.view());
        relu_inplace(&mut aux_h1);
        let mut aux_h2 = self.aux_fc[1].forward(aux_h1.view());
        relu_inplace(&mut aux_h2);
        let concat = ndarray::concatenate(Axis(0), &[t_emb.view(), lam.view(), aux_h2.view()]).expect("matching batch sizes");
        let (head_h1, head_h2, output) = self.head_forward(&concat);
        Ok(ForwardCache {
            conv,
            flat,
            t_emb,
            lam_h1,
            lam_h2,
            aux_h1,
            aux_h2,
            concat,
            head_h1,
            head_h2,
            output,
        })
    }

    /// Gradients of the loss whose derivative w.r.t. the sigmoid output is `d_out`.
    pub fn backward(&self, x: &BatchInput<T>, cache: &ForwardCache<T>, d_out: &Array2<T>) -> Network<T> {
        let mut g = self.zeros_like();
        let batch = x.batch;

        // head
        let mut dz = d_out.clone();
        dz.zip_mut_with(&cache.output, |d, &p| *d *= p * (T::one() - p));
        let mut dh2 = self.head[2].backward(cache.head_h2.view(), &dz, &mut g.head[2], true).unwrap();
        relu_backward(&mut dh2, &cache.head_h2);
        let mut dh1 = self.head[1].backward(cache.head_h1.view(), &dh2, &mut g.head[1], true).unwrap();
        relu_backward(&mut dh1, &cache.head_h1);
        let dconcat = self.head[0].backward(cache.concat.view(), &dh1, &mut g.head[0], true).unwrap();

        let nt = self.config.transient_fc;
        let nl = self.config.lambda_fc_sizes[1];
        let mut dt = dconcat.slice(s![..nt, ..]).to_owned();
        let dlam = dconcat.slice(s![nt..nt + nl, ..]).to_owned();
        let mut daux = dconcat.slice(s![nt + nl.., ..]).to_owned();

        // auxiliary block
        relu_backward(&mut daux, &cache.aux_h2);
        let mut da1 = self.aux_fc[1].backward(cache.aux_h1.view(), &daux, &mut g.aux_fc[1], true).unwrap();
        relu_backward(&mut da1, &cache.aux_h1);
        self.aux_fc[0].backward(x.aux.view(), &da1, &mut g.aux_fc[0], false);

        // eigenvalue block: the sum hands the same gradient to all three streams
        let mut dl2 = Array2::zeros(cache.lam_h2.raw_dim());
        for b in 0..batch {
            for i in 0..3 {
                dl2.column_mut(3 * b + i).assign(&dlam.column(b));
            }
        }
        relu_backward(&mut dl2, &cache.lam_h2);
        let mut dl1 = self.lambda_fc[1].backward(cache.lam_h1.view(), &dl2, &mut g.lambda_fc[1], true).unwrap();
        relu_backward(&mut dl1, &cache.lam_h1);
        self.lambda_fc[0].backward(x.lambda.view(), &dl1, &mut g.lambda_fc[0], false);

        // transient block
        relu_backward(&mut dt, &cache.t_emb);
        let dflat = self.transient_fc.backward(cache.flat.view(), &dt, &mut g.transient_fc, true).unwrap();
        let last_len = cache.conv.last().map(|c| c.len / POOL).unwrap_or(0);
        let mut da = unflatten(&dflat, batch, last_len);
        for (i, layer) in self.conv.iter().enumerate().rev() {
            let c = &cache.conv[i];
            let mut dact = maxpool_backward(&da, &c.second, batch, c.len);
            relu_backward(&mut dact, &c.act);
            let need = i > 0;
            if let Some(dcols) = layer.backward(c.cols.view(), &dact, &mut g.conv[i], need) {
                let cin = c.cols.nrows() / KERNEL;
                da = col2im(&dcols, cin, batch, c.len);
            }
        }
        g
    }
}

/// `[c, batch * len]` to `[c * len, batch]`, channel-major features.
fn flatten<T: Real>(a: &Array2<T>, batch: usize, len: usize) -> Array2<T> {
    let c = a.nrows();
    let mut out = Array2::zeros((c * len, batch));
    for ch in 0..c {
        for b in 0..batch {
            for t in 0..len {
                out[[ch * len + t, b]] = a[[ch, b * len + t]];
            }
        }
    }
    out
}

fn unflatten<T: Real>(f: &Array2<T>, batch: usize, len: usize) -> Array2<T> {
    let c = f.nrows() / len.max(1);
    let mut out = Array2::zeros((c, batch * len));
    for ch in 0..c {
        for b in 0..batch {
            for t in 0..len {
                out[[ch, b * len + t]] = f[[ch * len + t, b]];
            }
        }
    }
    out
}
