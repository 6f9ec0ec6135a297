//! Per-client MLP encoder/decoder with exact analytic gradients, trained by
//! minibatch gradient descent on the reconstruction objective
//! `sum_i ||x_i - decode(encode(x_i))||^2`.
//!
//! A model instance is single-owner during training; forward passes are pure.

use serde::{Deserialize, Serialize};

use crate::bytes::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::RngStream;

const CHECKPOINT_MAGIC: &[u8; 4] = b"FDMV";
const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Linear => v,
        }
    }

    /// Derivative expressed in terms of the *post*-activation value.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Linear => 2,
        }
    }

    fn from_tag(tag: u8, offset: usize) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            2 => Ok(Activation::Linear),
            other => Err(Error::Deserialize {
                offset,
                detail: format!("unknown activation tag {other}"),
            }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    /// `in x out` weights.
    pub weights: Matrix,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

/// A stack of dense layers; consecutive dimensions chain.
#[derive(Debug, Clone)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    /// Glorot-uniform initialization (`±sqrt(6/(fan_in+fan_out))`), zero
    /// biases; hidden layers get `hidden_act`, the final layer is linear.
    pub fn glorot(dims: &[usize], hidden_act: Activation, rng: &mut RngStream) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = Matrix::random_uniform(fan_in, fan_out, scale, rng);
            let activation = if layers.len() + 2 == dims.len() {
                Activation::Linear
            } else {
                hidden_act
            };
            layers.push(Layer {
                weights,
                biases: vec![0.0; fan_out],
                activation,
            });
        }
        MlpParams { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weights.rows())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weights.cols())
    }

    /// Deterministic forward pass.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(x)?.into_output())
    }

    /// Forward pass retaining per-layer outputs for backprop.
    pub fn forward_cached(&self, x: &Matrix) -> Result<ForwardCache> {
        if x.cols() != self.input_dim() {
            return Err(Error::dims(
                "MlpParams::forward",
                format!("input has {} cols, network expects {}", x.cols(), self.input_dim()),
            ));
        }
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let mut next = cur.matmul(&layer.weights)?;
            for i in 0..next.rows() {
                let row = next.row_mut(i);
                for (v, &b) in row.iter_mut().zip(&layer.biases) {
                    *v = layer.activation.apply(*v + b);
                }
            }
            outputs.push(next.clone());
            cur = next;
        }
        Ok(ForwardCache {
            input: x.clone(),
            outputs,
        })
    }

    /// Backpropagate `grad_output` (the loss gradient w.r.t. the network
    /// output) through the cached pass. Returns per-layer parameter
    /// gradients and the loss gradient w.r.t. the network input.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Matrix) -> Result<(MlpGrads, Matrix)> {
        let last = cache
            .outputs
            .last()
            .expect("cache from a network with layers");
        if grad_output.rows() != last.rows() || grad_output.cols() != last.cols() {
            return Err(Error::dims(
                "MlpParams::backward",
                format!(
                    "gradient is {}x{}, output was {}x{}",
                    grad_output.rows(),
                    grad_output.cols(),
                    last.rows(),
                    last.cols()
                ),
            ));
        }
        let mut grads = vec![
            LayerGrads {
                d_weights: Matrix::zeros(0, 0),
                d_biases: Vec::new(),
            };
            self.layers.len()
        ];
        let mut upstream = grad_output.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let post = &cache.outputs[l];
            // delta = upstream ⊙ act'(post)
            let mut delta = upstream;
            for i in 0..delta.rows() {
                let drow = delta.row_mut(i);
                let prow = post.row(i);
                for (d, &y) in drow.iter_mut().zip(prow) {
                    *d *= layer.activation.derivative_from_output(y);
                }
            }
            let below = if l == 0 { &cache.input } else { &cache.outputs[l - 1] };
            let d_weights = below.matmul_transpose_a(&delta)?;
            let mut d_biases = vec![0.0; layer.biases.len()];
            for i in 0..delta.rows() {
                for (b, &d) in d_biases.iter_mut().zip(delta.row(i)) {
                    *b += d;
                }
            }
            upstream = delta.matmul_transpose_b(&layer.weights)?;
            grads[l] = LayerGrads {
                d_weights,
                d_biases,
            };
        }
        Ok((MlpGrads { layers: grads }, upstream))
    }

    /// Serialize to the self-describing checkpoint record: magic, version,
    /// layer count, per-layer dims + activation tag, then the raw
    /// little-endian f64 payload (weights row-major, then biases, per layer).
    pub fn write_checkpoint(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(CHECKPOINT_MAGIC);
        w.u8(CHECKPOINT_VERSION);
        w.u32(self.layers.len() as u32);
        for layer in &self.layers {
            w.u32(layer.weights.rows() as u32);
            w.u32(layer.weights.cols() as u32);
            w.u8(layer.activation.tag());
        }
        for layer in &self.layers {
            w.f64_slice(layer.weights.as_slice());
            w.f64_slice(&layer.biases);
        }
        w.into_vec()
    }

    pub fn read_checkpoint(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf);
        let magic = r.bytes(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Deserialize {
                offset: 0,
                detail: format!("bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"),
            });
        }
        let version = r.u8("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Deserialize {
                offset: 4,
                detail: format!("unsupported version {version}"),
            });
        }
        let count = r.u32("layer count")? as usize;
        let mut headers = Vec::with_capacity(count);
        for _ in 0..count {
            let rows = r.u32("layer rows")? as usize;
            let cols = r.u32("layer cols")? as usize;
            let tag_offset = r.offset();
            let act = Activation::from_tag(r.u8("activation")?, tag_offset)?;
            headers.push((rows, cols, act));
        }
        let mut layers = Vec::with_capacity(count);
        for (rows, cols, act) in headers {
            let wdata = r.f64_vec(rows * cols, "weights")?;
            let biases = r.f64_vec(cols, "biases")?;
            layers.push(Layer {
                weights: Matrix::new(rows, cols, wdata)?,
                biases,
                activation: act,
            });
        }
        r.finish()?;
        Ok(MlpParams { layers })
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Matrix,
    /// Post-activation output of every layer.
    outputs: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.outputs.last().expect("non-empty network")
    }

    pub fn into_output(mut self) -> Matrix {
        self.outputs.pop().expect("non-empty network")
    }
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub d_weights: Matrix,
    pub d_biases: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        MlpGrads {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrads {
                    d_weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                    d_biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for g in &mut self.layers {
            g.d_weights.scale(alpha);
            for b in &mut g.d_biases {
                *b *= alpha;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.d_weights.is_finite() && g.d_biases.iter().all(|b| b.is_finite()))
    }
}

/// One descent step: `params -= lr * grads`. A non-finite gradient is a
/// divergence.
pub fn grad_step(params: &mut MlpParams, grads: &MlpGrads, lr: f64) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::Divergence {
            step: 0,
            detail: "non-finite gradient".to_string(),
        });
    }
    for (layer, g) in params.layers.iter_mut().zip(&grads.layers) {
        layer.weights.axpy(-lr, &g.d_weights)?;
        for (b, &db) in layer.biases.iter_mut().zip(&g.d_biases) {
            *b -= lr * db;
        }
    }
    Ok(())
}

/// Reconstruction loss `sum_i ||x_i - xhat_i||^2` (a sum over samples, not a
/// mean).
pub fn recon_loss(x: &Matrix, xhat: &Matrix) -> Result<f64> {
    if x.rows() != xhat.rows() || x.cols() != xhat.cols() {
        return Err(Error::dims(
            "recon_loss",
            format!(
                "{}x{} vs {}x{}",
                x.rows(),
                x.cols(),
                xhat.rows(),
                xhat.cols()
            ),
        ));
    }
    let mut acc = 0.0;
    for (&a, &b) in x.as_slice().iter().zip(xhat.as_slice()) {
        let d = a - b;
        acc += d * d;
    }
    Ok(acc)
}

/// Encoder/decoder pair for one client.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub encoder: MlpParams,
    pub decoder: MlpParams,
}

/// Architecture and optimizer settings for one client's autoencoder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AeConfig {
    /// Raw feature dimension of the view.
    pub input_dim: usize,
    /// Embedded dimension.
    pub embed_dim: usize,
    /// Hidden layer widths of the encoder; the decoder mirrors them.
    pub hidden: Vec<usize>,
    /// Learning rate applied to the batch-averaged gradient.
    pub learning_rate: f64,
    /// Minibatch size; the full dataset is used when smaller than this.
    pub batch_size: usize,
    /// Reconstruction-only steps in the first round.
    pub pretrain_iters: usize,
    /// Momentum coefficient; 0 means plain gradient descent.
    pub momentum: f64,
}

impl AeConfig {
    pub fn new(input_dim: usize) -> Self {
        AeConfig {
            input_dim,
            embed_dim: 10,
            hidden: vec![256, 64],
            learning_rate: 1e-3,
            batch_size: 256,
            pretrain_iters: 500,
            momentum: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embed_dim == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidConfig {
                detail: "all layer sizes must be at least 1".to_string(),
            });
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig {
                detail: format!("learning rate must be positive, got {}", self.learning_rate),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig {
                detail: "batch size must be at least 1".to_string(),
            });
        }
        Ok(())
    }

    fn encoder_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(self.embed_dim);
        dims
    }

    fn decoder_dims(&self) -> Vec<usize> {
        let mut dims = self.encoder_dims();
        dims.reverse();
        dims
    }
}

impl Autoencoder {
    pub fn init(cfg: &AeConfig, rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        Ok(Autoencoder {
            encoder: MlpParams::glorot(&cfg.encoder_dims(), Activation::Relu, rng),
            decoder: MlpParams::glorot(&cfg.decoder_dims(), Activation::Relu, rng),
        })
    }

    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        let z = self.encoder.forward(x)?;
        z.check_finite("encode")?;
        Ok(z)
    }

    pub fn decode(&self, z: &Matrix) -> Result<Matrix> {
        let xhat = self.decoder.forward(z)?;
        xhat.check_finite("decode")?;
        Ok(xhat)
    }
}

/// Momentum state matching an autoencoder's parameter layout.
#[derive(Debug, Clone)]
pub struct Velocity {
    encoder: MlpGrads,
    decoder: MlpGrads,
}

impl Velocity {
    pub fn zeros(ae: &Autoencoder) -> Self {
        Velocity {
            encoder: MlpGrads::zeros_like(&ae.encoder),
            decoder: MlpGrads::zeros_like(&ae.decoder),
        }
    }
}

/// One reconstruction-only descent step on the rows of `x` indexed by
/// `batch`; returns the batch-mean per-sample loss.
pub fn recon_step(
    ae: &mut Autoencoder,
    x: &Matrix,
    batch: &[usize],
    cfg: &AeConfig,
    velocity: &mut Velocity,
    step: usize,
) -> Result<f64> {
    let xb = x.select_rows(batch);
    let enc_cache = ae.encoder.forward_cached(&xb)?;
    let dec_cache = ae.decoder.forward_cached(enc_cache.output())?;
    let xhat = dec_cache.output();
    let loss = recon_loss(&xb, xhat)?;
    if !loss.is_finite() {
        return Err(Error::Divergence {
            step,
            detail: format!("reconstruction loss is {loss}"),
        });
    }
    // dL/dXhat = 2 (Xhat - X)
    let mut grad_out = xhat.sub(&xb)?;
    grad_out.scale(2.0);
    let (dec_grads, d_z) = ae.decoder.backward(&dec_cache, &grad_out)?;
    let (enc_grads, _) = ae.encoder.backward(&enc_cache, &d_z)?;
    apply_step(ae, enc_grads, dec_grads, batch.len(), cfg, velocity, step)?;
    Ok(loss / batch.len() as f64)
}

/// Update both networks from summed-over-batch gradients: gradients are
/// batch-averaged, folded into the momentum buffers, and applied.
pub fn apply_step(
    ae: &mut Autoencoder,
    mut enc_grads: MlpGrads,
    mut dec_grads: MlpGrads,
    batch_len: usize,
    cfg: &AeConfig,
    velocity: &mut Velocity,
    step: usize,
) -> Result<()> {
    let inv = 1.0 / batch_len as f64;
    enc_grads.scale(inv);
    dec_grads.scale(inv);
    if !enc_grads.is_finite() || !dec_grads.is_finite() {
        return Err(Error::Divergence {
            step,
            detail: "non-finite gradient".to_string(),
        });
    }
    fold_momentum(&mut velocity.encoder, &enc_grads, cfg.momentum)?;
    fold_momentum(&mut velocity.decoder, &dec_grads, cfg.momentum)?;
    grad_step(&mut ae.encoder, &velocity.encoder, cfg.learning_rate)?;
    grad_step(&mut ae.decoder, &velocity.decoder, cfg.learning_rate)?;
    Ok(())
}

fn fold_momentum(velocity: &mut MlpGrads, grads: &MlpGrads, momentum: f64) -> Result<()> {
    for (v, g) in velocity.layers.iter_mut().zip(&grads.layers) {
        v.d_weights.scale(momentum);
        v.d_weights.add_assign(&g.d_weights)?;
        for (vb, &gb) in v.d_biases.iter_mut().zip(&g.d_biases) {
            *vb = momentum * *vb + gb;
        }
    }
    Ok(())
}

/// Draw a minibatch; full-batch (no rng draw) when the dataset fits.
pub fn draw_batch(n: usize, batch_size: usize, rng: &mut RngStream) -> Vec<usize> {
    if n <= batch_size {
        (0..n).collect()
    } else {
        rng.sample_distinct(n, batch_size)
    }
}

/// Reconstruction-only pretraining: `pretrain_iters` minibatch steps.
/// Returns the per-step batch-mean loss trace.
pub fn pretrain(
    ae: &mut Autoencoder,
    x: &Matrix,
    cfg: &AeConfig,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    if cfg.pretrain_iters == 0 {
        return Err(Error::InvalidConfig {
            detail: "pretrain_iters must be at least 1".to_string(),
        });
    }
    cfg.validate()?;
    let mut velocity = Velocity::zeros(ae);
    let mut trace = Vec::with_capacity(cfg.pretrain_iters);
    for step in 0..cfg.pretrain_iters {
        let batch = draw_batch(x.rows(), cfg.batch_size, rng);
        let loss = recon_step(ae, x, &batch, cfg, &mut velocity, step).map_err(|e| match e {
            Error::Divergence { detail, .. } => Error::Divergence { step, detail },
            other => other,
        })?;
        trace.push(loss);
    }
    Ok(trace)
}
