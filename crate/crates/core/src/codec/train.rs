use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::ae_loss_into;
use super::{backward, cosine, forward_trace, Autoencoder, CodecError, EmbeddingCorpus, LayerGrad, LossMode, Split};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss_mode: LossMode,
    /// Weight λ of the cosine term.
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { loss_mode: LossMode::L1Cos, lambda: 0.5, lr: 1e-3, batch_size: 256, epochs: 100, seed: 0, max_steps: None }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CodecError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(CodecError::Config(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CodecError::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(CodecError::Config("batch_size must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: Vec<EpochStat>,
    pub gradient_steps: usize,
    pub val_mse: f64,
    pub val_cosine: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowFidelity {
    pub mse: f64,
    pub cosine: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    /// How `mse` is normalized.
    pub mse_convention: String,
    pub rows: Vec<RowFidelity>,
    pub mean_mse: f64,
    pub mean_cosine: f64,
}

pub const MSE_CONVENTION: &str = "per-row sum of squared errors divided by D, averaged over rows";

/// Weight and bias gradient of one layer.
type LayerGrads = (Array2<f64>, Array1<f64>);

/// Batch mean loss and per-layer gradients of that mean.
pub fn loss_and_gradients(ae: &Autoencoder, batch: ArrayView2<f64>, mode: LossMode, lambda: f64) -> Result<(f64, Vec<LayerGrads>), CodecError> {
    let (loss, grads) = batch_step(ae, batch, mode, lambda)?;
    Ok((loss, grads.into_iter().map(|g| (g.weight, g.bias)).collect()))
}

fn batch_step(ae: &Autoencoder, batch: ArrayView2<f64>, mode: LossMode, lambda: f64) -> Result<(f64, Vec<LayerGrad>), CodecError> {
    if batch.ncols() != ae.input_dim() {
        return Err(CodecError::DimMismatch { expected: ae.input_dim(), found: batch.ncols() });
    }
    let b = batch.nrows();
    let trace = forward_trace(ae, batch.to_owned());
    let out = trace.acts.last().unwrap();
    let mut grad = Array2::zeros(out.raw_dim());
    let mut total = 0.0;
    for ((f, f_hat), mut g) in batch.outer_iter().zip(out.outer_iter()).zip(grad.outer_iter_mut()) {
        let (loss, _, _) = ae_loss_into(
            f.as_slice().expect("contiguous row"),
            f_hat.as_slice().expect("contiguous row"),
            mode,
            lambda,
            g.as_slice_mut().expect("contiguous row"),
        );
        total += loss;
    }
    grad /= b as f64;
    Ok((total / b as f64, backward(ae, &trace, grad)))
}

struct Adam {
    m: Vec<LayerGrad>,
    v: Vec<LayerGrad>,
    t: i32,
    lr: f64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(ae: &Autoencoder, lr: f64) -> Self {
        let zeros = || ae.layers().map(|l| LayerGrad { weight: Array2::zeros(l.weight.raw_dim()), bias: Array1::zeros(l.bias.len()) }).collect();
        Self { m: zeros(), v: zeros(), t: 0, lr }
    }

    fn step(&mut self, ae: &mut Autoencoder, grads: &[LayerGrad]) -> Result<(), CodecError> {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let lr = self.lr;
        for (((layer, g), m), v) in ae.layers_mut()?.zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            };
            ndarray::Zip::from(&mut layer.weight).and(&g.weight).and(&mut m.weight).and(&mut v.weight).for_each(update);
            ndarray::Zip::from(&mut layer.bias).and(&g.bias).and(&mut m.bias).and(&mut v.bias).for_each(update);
        }
        Ok(())
    }
}

/// Trains an unfrozen autoencoder in place on the corpus train split, then freezes it.
pub fn fit(mut ae: Autoencoder, corpus: &EmbeddingCorpus, cfg: &TrainConfig) -> Result<(Autoencoder, TrainReport), CodecError> {
    cfg.validate()?;
    if ae.is_frozen() {
        return Err(CodecError::Frozen);
    }
    if corpus.dim() != ae.input_dim() {
        return Err(CodecError::DimMismatch { expected: ae.input_dim(), found: corpus.dim() });
    }
    let train = corpus.indices(Split::Train);
    if train.is_empty() {
        return Err(CodecError::Corpus("corpus has no train split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ae00);
    let mut adam = Adam::new(&ae, cfg.lr);
    let mut order = train.clone();
    let mut curve = Vec::new();
    let mut steps = 0usize;
    let budget = cfg.max_steps.unwrap_or(usize::MAX);
    'epochs: for epoch in 0..cfg.epochs {
        if steps >= budget {
            break;
        }
        order.shuffle(&mut rng);
        let (mut sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if steps >= budget {
                curve.push(EpochStat { epoch, steps, train_loss: sum / batches.max(1) as f64 });
                break 'epochs;
            }
            let batch = corpus.rows().select(Axis(0), chunk);
            let (loss, grads) = batch_step(&ae, batch.view(), cfg.loss_mode, cfg.lambda)?;
            if !loss.is_finite() {
                return Err(CodecError::Divergence { epoch, step: steps, loss });
            }
            adam.step(&mut ae, &grads)?;
            steps += 1;
            sum += loss;
            batches += 1;
        }
        curve.push(EpochStat { epoch, steps, train_loss: sum / batches.max(1) as f64 });
    }
    ae.freeze();
    let val = fidelity_report(&ae, &corpus.select_or_all(Split::Val).view())?;
    if !(val.mean_mse.is_finite() && val.mean_cosine.is_finite()) {
        return Err(CodecError::Divergence { epoch: cfg.epochs, step: steps, loss: val.mean_mse });
    }
    Ok((ae, TrainReport { curve, gradient_steps: steps, val_mse: val.mean_mse, val_cosine: val.mean_cosine }))
}

/// Builds the standard architecture for latent width `k`, seeded from `cfg.seed`, and fits it.
pub fn train_autoencoder(corpus: &EmbeddingCorpus, k: usize, cfg: &TrainConfig) -> Result<(Autoencoder, TrainReport), CodecError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ae = Autoencoder::standard(corpus.dim(), k, &mut rng)?;
    fit(ae, corpus, cfg)
}

/// Reconstruction MSE (sum of squares / D) and cosine per row, with means.
pub fn fidelity_report(ae: &Autoencoder, rows: &ArrayView2<f64>) -> Result<FidelityReport, CodecError> {
    if !ae.is_frozen() {
        return Err(CodecError::NotFrozen);
    }
    if rows.nrows() == 0 {
        return Err(CodecError::EmptyCorpus);
    }
    let recon = ae.reconstruct_batch(rows.view())?;
    let d = rows.ncols() as f64;
    let per: Vec<RowFidelity> = rows
        .outer_iter()
        .zip(recon.outer_iter())
        .map(|(f, g)| {
            let mse = f.iter().zip(g.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / d;
            let cos = cosine(&f.to_vec(), &g.to_vec());
            RowFidelity { mse, cosine: cos }
        })
        .collect();
    let n = per.len() as f64;
    Ok(FidelityReport {
        mse_convention: MSE_CONVENTION.to_string(),
        mean_mse: per.iter().map(|r| r.mse).sum::<f64>() / n,
        mean_cosine: per.iter().map(|r| r.cosine).sum::<f64>() / n,
        rows: per,
    })
}
