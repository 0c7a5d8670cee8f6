//! Generalized feature autoencoder.
//!
//! An MLP encoder maps D-dimensional embeddings to k-dimensional latents and
//! a mirrored decoder maps them back. It is trained once on a cross-scene
//! corpus, then frozen: frozen weights are rounded to `f32` so that the GAEW
//! file holds them exactly.

mod corpus;
mod format;
mod loss;
mod train;

pub use corpus::{load_corpus, save_corpus, EmbeddingCorpus, Split};
pub use format::{load_autoencoder, read_autoencoder, save_autoencoder, write_autoencoder, AE_MAGIC, AE_VERSION};
pub use loss::{ae_loss, cosine, dot, norm, LossMode, LossValue, COS_EPS};
pub use train::{
    fidelity_report, fit, loss_and_gradients, train_autoencoder, EpochStat, FidelityReport, RowFidelity, TrainConfig, TrainReport, MSE_CONVENTION,
};

pub(crate) use loss::cosine_grad_into;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scene::SceneError;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("autoencoder is frozen")]
    Frozen,
    #[error("autoencoder must be frozen for this operation")]
    NotFrozen,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },
    #[error("non-finite input")]
    NonFinite,
    #[error(transparent)]
    Format(#[from] SceneError),
    #[error("sidecar: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    pub(crate) fn tag(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
        }
    }

    pub(crate) fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Fully connected layer y = act(W x + b), with W stored out × in.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self, CodecError> {
        if weight.nrows() != bias.len() {
            return Err(CodecError::Architecture(format!("weight has {} rows but bias has {} entries", weight.nrows(), bias.len())));
        }
        Ok(Self { weight, bias, activation })
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self { weight: Array2::zeros((output, input)), bias: Array1::zeros(output), activation }
    }

    /// He-uniform for ReLU layers, Glorot-uniform for linear ones; zero bias.
    pub fn init(input: usize, output: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let bound = match activation {
            Activation::Relu => (6.0 / input as f64).sqrt(),
            Activation::Identity => (6.0 / (input + output) as f64).sqrt(),
        };
        let weight = Array2::from_shape_simple_fn((output, input), || rng.random_range(-bound..bound));
        Self { weight, bias: Array1::zeros(output), activation }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// Batch forward: rows of `x` are samples.
    pub(crate) fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        if self.activation == Activation::Relu {
            y.mapv_inplace(|v| v.max(0.0));
        }
        y
    }
}

/// Hidden widths for the standard architecture: D→256→128→k and its mirror.
pub const STANDARD_HIDDEN: [usize; 2] = [256, 128];

#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    input_dim: usize,
    latent_dim: usize,
    encoder: Vec<Dense>,
    decoder: Vec<Dense>,
    frozen: bool,
}

impl Autoencoder {
    /// Checks that layer shapes chain D → … → k → … → D.
    pub fn from_layers(encoder: Vec<Dense>, decoder: Vec<Dense>) -> Result<Self, CodecError> {
        let arch = |m: &str| Err(CodecError::Architecture(m.to_string()));
        let (Some(first), Some(last)) = (encoder.first(), decoder.last()) else {
            return arch("encoder and decoder need at least one layer each");
        };
        let input_dim = first.input_dim();
        let latent_dim = encoder.last().unwrap().output_dim();
        for pair in encoder.windows(2).chain(decoder.windows(2)) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return arch("consecutive layer shapes do not chain");
            }
        }
        if decoder[0].input_dim() != latent_dim {
            return arch("decoder input does not match encoder output");
        }
        if last.output_dim() != input_dim {
            return arch("decoder output does not match encoder input");
        }
        if input_dim == 0 || latent_dim == 0 {
            return arch("dimensions must be positive");
        }
        for l in encoder.iter().chain(&decoder) {
            if l.weight.nrows() != l.bias.len() {
                return arch("bias length does not match weight rows");
            }
        }
        Ok(Self { input_dim, latent_dim, encoder, decoder, frozen: false })
    }

    /// Standard MLP: ReLU hidden layers, linear latent and output layers.
    /// A hidden width narrower than k is widened to k.
    pub fn standard(input_dim: usize, latent_dim: usize, rng: &mut impl Rng) -> Result<Self, CodecError> {
        if input_dim == 0 || latent_dim == 0 {
            return Err(CodecError::Architecture("dimensions must be positive".into()));
        }
        let hidden: Vec<usize> = STANDARD_HIDDEN.iter().map(|&h| h.max(latent_dim)).collect();
        Self::mlp(input_dim, latent_dim, &hidden, rng)
    }

    /// MLP with the given encoder hidden widths; the decoder mirrors them.
    pub fn mlp(input_dim: usize, latent_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self, CodecError> {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(latent_dim);
        let build = |widths: &[usize], rng: &mut _| -> Vec<Dense> {
            let n = widths.len() - 1;
            (0..n)
                .map(|i| {
                    let act = if i + 1 == n { Activation::Identity } else { Activation::Relu };
                    Dense::init(widths[i], widths[i + 1], act, rng)
                })
                .collect()
        };
        let encoder = build(&widths, rng);
        widths.reverse();
        let decoder = build(&widths, rng);
        Self::from_layers(encoder, decoder)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn encoder(&self) -> &[Dense] {
        &self.encoder
    }

    pub fn decoder(&self) -> &[Dense] {
        &self.decoder
    }

    /// Mutable access to every layer, encoder first. Rejected once frozen.
    pub fn layers_mut(&mut self) -> Result<impl Iterator<Item = &mut Dense>, CodecError> {
        if self.frozen {
            return Err(CodecError::Frozen);
        }
        Ok(self.encoder.iter_mut().chain(self.decoder.iter_mut()))
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.encoder.iter().chain(&self.decoder)
    }

    /// Rounds parameters to f32 precision and makes them immutable.
    pub fn freeze(&mut self) {
        if self.frozen {
            return;
        }
        for l in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            l.weight.mapv_inplace(|v| v as f32 as f64);
            l.bias.mapv_inplace(|v| v as f32 as f64);
        }
        self.frozen = true;
    }

    pub(crate) fn mark_frozen(&mut self) {
        self.frozen = true;
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// SHA-256 over every parameter's bit pattern; changes iff any weight changes.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for l in self.layers() {
            for v in l.weight.iter().chain(l.bias.iter()) {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn encode(&self, f: &[f64]) -> Result<Vec<f64>, CodecError> {
        check_vec(f, self.input_dim)?;
        Ok(run(&self.encoder, row(f)).into_raw_vec_and_offset().0)
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>, CodecError> {
        check_vec(z, self.latent_dim)?;
        Ok(run(&self.decoder, row(z)).into_raw_vec_and_offset().0)
    }

    /// Encodes every row of an M×D batch.
    pub fn encode_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, CodecError> {
        check_cols(&x, self.input_dim)?;
        Ok(run(&self.encoder, x.to_owned()))
    }

    /// Decodes every row of an M×k batch.
    pub fn decode_batch(&self, z: ArrayView2<f64>) -> Result<Array2<f64>, CodecError> {
        check_cols(&z, self.latent_dim)?;
        Ok(run(&self.decoder, z.to_owned()))
    }

    pub fn reconstruct_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, CodecError> {
        let z = self.encode_batch(x)?;
        self.decode_batch(z.view())
    }
}

fn row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("1×n")
}

fn run(layers: &[Dense], x: Array2<f64>) -> Array2<f64> {
    layers.iter().fold(x, |a, l| l.forward(a.view()))
}

fn check_vec(v: &[f64], expected: usize) -> Result<(), CodecError> {
    if v.len() != expected {
        return Err(CodecError::DimMismatch { expected, found: v.len() });
    }
    if !v.iter().all(|x| x.is_finite()) {
        return Err(CodecError::NonFinite);
    }
    Ok(())
}

fn check_cols(x: &ArrayView2<f64>, expected: usize) -> Result<(), CodecError> {
    if x.ncols() != expected {
        return Err(CodecError::DimMismatch { expected, found: x.ncols() });
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(CodecError::NonFinite);
    }
    Ok(())
}

/// Forward pass that keeps every layer's output for backprop.
pub(crate) struct Trace {
    /// `acts[0]` is the input; `acts[i + 1]` is the output of layer i.
    pub acts: Vec<Array2<f64>>,
}

pub(crate) fn forward_trace(ae: &Autoencoder, x: Array2<f64>) -> Trace {
    let mut acts = Vec::with_capacity(ae.encoder.len() + ae.decoder.len() + 1);
    acts.push(x);
    for l in ae.layers() {
        let next = l.forward(acts.last().unwrap().view());
        acts.push(next);
    }
    Trace { acts }
}

/// Gradients for one layer, same shapes as the layer.
pub(crate) struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Backpropagates ∂L/∂output through every layer.
pub(crate) fn backward(ae: &Autoencoder, trace: &Trace, grad_out: Array2<f64>) -> Vec<LayerGrad> {
    let layers: Vec<&Dense> = ae.layers().collect();
    let mut grads: Vec<LayerGrad> = Vec::with_capacity(layers.len());
    let mut upstream = grad_out;
    for (i, l) in layers.iter().enumerate().rev() {
        let out = &trace.acts[i + 1];
        if l.activation == Activation::Relu {
            ndarray::Zip::from(&mut upstream).and(out).for_each(|g, &y| {
                if y <= 0.0 {
                    *g = 0.0;
                }
            });
        }
        let input = &trace.acts[i];
        let weight = upstream.t().dot(input);
        let bias = upstream.sum_axis(Axis(0));
        if i > 0 {
            upstream = upstream.dot(&l.weight);
        }
        grads.push(LayerGrad { weight, bias });
    }
    grads.reverse();
    grads
}
