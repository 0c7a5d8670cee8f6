use serde::{Deserialize, Serialize};

/// Norms below this make the cosine term degenerate: cos is taken as 0 with zero gradient.
pub const COS_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// ‖f − f̂‖₁ + λ(1 − cos)
    #[default]
    L1Cos,
    /// ‖f − f̂‖₂² + λ(1 − cos)
    MseCos,
}

/// Loss value split into its terms, plus ∂loss/∂f̂.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub reconstruction: f64,
    /// 1 − cos, before weighting.
    pub cosine_gap: f64,
    pub grad: Vec<f64>,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity, defined as 0 when either norm is below [`COS_EPS`].
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na < COS_EPS || nb < COS_EPS {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Adds `scale · ∂cos(x, y)/∂x` into `grad` and returns cos(x, y).
pub(crate) fn cosine_grad_into(x: &[f64], y: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
    let (nx, ny) = (norm(x), norm(y));
    if nx < COS_EPS || ny < COS_EPS {
        return 0.0;
    }
    let c = dot(x, y) / (nx * ny);
    let (a, b) = (scale / (nx * ny), scale * c / (nx * nx));
    for ((g, &xi), &yi) in grad.iter_mut().zip(x).zip(y) {
        *g += a * yi - b * xi;
    }
    c
}

/// Writes ∂loss/∂f̂ into `grad` and returns (loss, reconstruction, 1 − cos).
pub(crate) fn ae_loss_into(f: &[f64], f_hat: &[f64], mode: LossMode, lambda: f64, grad: &mut [f64]) -> (f64, f64, f64) {
    let mut recon = 0.0;
    for ((g, &a), &b) in grad.iter_mut().zip(f_hat).zip(f) {
        let r = a - b;
        match mode {
            LossMode::L1Cos => {
                recon += r.abs();
                *g = if r > 0.0 {
                    1.0
                } else if r < 0.0 {
                    -1.0
                } else {
                    0.0
                };
            }
            LossMode::MseCos => {
                recon += r * r;
                *g = 2.0 * r;
            }
        }
    }
    let c = cosine_grad_into(f_hat, f, -lambda, grad);
    let gap = 1.0 - c;
    (recon + lambda * gap, recon, gap)
}

/// Per-row autoencoder loss and its exact gradient with respect to `f_hat`.
pub fn ae_loss(f: &[f64], f_hat: &[f64], mode: LossMode, lambda: f64) -> LossValue {
    assert_eq!(f.len(), f_hat.len(), "ae_loss needs equal-length vectors");
    let mut grad = vec![0.0; f.len()];
    let (loss, reconstruction, cosine_gap) = ae_loss_into(f, f_hat, mode, lambda, &mut grad);
    LossValue { loss, reconstruction, cosine_gap, grad }
}
