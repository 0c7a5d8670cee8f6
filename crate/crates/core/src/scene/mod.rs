//! Explicit Gaussian scene representation, pinhole cameras and the binary
//! file formats shared by every stage of the pipeline.

mod camera;
pub(crate) mod format;
mod tensor;

pub use camera::Camera;
pub use format::{load_scene, read_scene, save_scene, write_scene, SCENE_MAGIC, SCENE_VERSION};
pub use tensor::{load_tensor, read_tensor, save_tensor, write_tensor, Tensor, TENSOR_MAGIC};

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Quaternions whose norm is within this distance of 1 are accepted as-is.
pub const QUAT_UNIT_TOL: f64 = 1e-6;
/// Quaternions whose norm is off by more than this are treated as corrupt.
pub const QUAT_RENORM_TOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    MagicMismatch { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid gaussian {index}: {reason}")]
    InvalidGaussian { index: usize, reason: String },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("metadata: {0}")]
    Metadata(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One splat. Fields are stored in `f32` to match the on-disk layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub mu: [f32; 3],
    pub scale: [f32; 3],
    /// Unit quaternion stored as (w, x, y, z).
    pub rotation: [f32; 4],
    pub color: [f32; 3],
    pub opacity: f32,
    pub latent: Vec<f32>,
}

impl Gaussian {
    /// Builds a validated Gaussian, renormalizing a slightly off-unit quaternion.
    pub fn new(mu: [f32; 3], scale: [f32; 3], rotation: [f32; 4], color: [f32; 3], opacity: f32, latent: Vec<f32>) -> Result<Self, SceneError> {
        let mut g = Self { mu, scale, rotation, color, opacity, latent };
        g.rotation = normalize_quat(g.rotation).map_err(|reason| SceneError::InvalidGaussian { index: 0, reason })?;
        g.validate().map_err(|reason| SceneError::InvalidGaussian { index: 0, reason })?;
        Ok(g)
    }

    /// Axis-aligned isotropic splat with identity rotation.
    pub fn isotropic(mu: [f32; 3], scale: f32, color: [f32; 3], opacity: f32, latent: Vec<f32>) -> Result<Self, SceneError> {
        Self::new(mu, [scale; 3], [1.0, 0.0, 0.0, 0.0], color, opacity, latent)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.mu.iter().all(|v| v.is_finite()) {
            return Err("non-finite position".into());
        }
        if !self.scale.iter().all(|&s| s.is_finite() && s > 0.0) {
            return Err(format!("scale must be positive, got {:?}", self.scale));
        }
        let n = quat_norm(&self.rotation);
        if (n - 1.0).abs() > QUAT_UNIT_TOL {
            return Err(format!("quaternion norm {n} is not unit"));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(format!("opacity {} outside [0,1]", self.opacity));
        }
        if !self.color.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(format!("color {:?} outside [0,1]", self.color));
        }
        if !self.latent.iter().all(|v| v.is_finite()) {
            return Err("non-finite latent".into());
        }
        Ok(())
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let [w, x, y, z] = self.rotation.map(f64::from);
        UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)).to_rotation_matrix().into_inner()
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.mu[0] as f64, self.mu[1] as f64, self.mu[2] as f64)
    }
}

fn quat_norm(q: &[f32; 4]) -> f64 {
    q.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

/// Leaves near-unit quaternions bit-identical, renormalizes small drift and
/// rejects anything further off.
pub(crate) fn normalize_quat(q: [f32; 4]) -> Result<[f32; 4], String> {
    let n = quat_norm(&q);
    if !n.is_finite() {
        return Err("non-finite quaternion".into());
    }
    if (n - 1.0).abs() <= QUAT_UNIT_TOL {
        return Ok(q);
    }
    if (n - 1.0).abs() > QUAT_RENORM_TOL {
        return Err(format!("quaternion norm {n} too far from 1"));
    }
    Ok(q.map(|v| (v as f64 / n) as f32))
}

/// Σ = R·diag(scale²)·Rᵀ.
pub fn covariance_of(g: &Gaussian) -> Matrix3<f64> {
    let r = g.rotation_matrix();
    let s2 = Vector3::new((g.scale[0] as f64).powi(2), (g.scale[1] as f64).powi(2), (g.scale[2] as f64).powi(2));
    let cov = r * Matrix3::from_diagonal(&s2) * r.transpose();
    // symmetrize away rounding
    (cov + cov.transpose()) * 0.5
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneMetadata {
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub params: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub gaussians: Vec<Gaussian>,
    pub latent_dim: usize,
    pub metadata: SceneMetadata,
}

impl Scene {
    pub fn new(gaussians: Vec<Gaussian>, latent_dim: usize, metadata: SceneMetadata) -> Result<Self, SceneError> {
        let scene = Self { gaussians, latent_dim, metadata };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        for (index, g) in self.gaussians.iter().enumerate() {
            if g.latent.len() != self.latent_dim {
                return Err(SceneError::DimensionMismatch(format!(
                    "gaussian {index} has latent length {}, scene latent_dim is {}",
                    g.latent.len(),
                    self.latent_dim
                )));
            }
            g.validate().map_err(|reason| SceneError::InvalidGaussian { index, reason })?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Same geometry and appearance with every latent replaced by zeros of width `dim`.
    pub fn with_latent_dim(&self, dim: usize) -> Scene {
        let gaussians = self.gaussians.iter().map(|g| Gaussian { latent: vec![0.0; dim], ..g.clone() }).collect();
        Scene { gaussians, latent_dim: dim, metadata: self.metadata.clone() }
    }

    /// Latents as a row-major N×d matrix in f64.
    pub fn latent_matrix(&self) -> Vec<f64> {
        self.gaussians.iter().flat_map(|g| g.latent.iter().map(|&v| v as f64)).collect()
    }

    pub fn set_latents(&mut self, latents: &[f64]) {
        assert_eq!(latents.len(), self.len() * self.latent_dim);
        for (g, row) in self.gaussians.iter_mut().zip(latents.chunks_exact(self.latent_dim.max(1))) {
            for (dst, &src) in g.latent.iter_mut().zip(row) {
                *dst = src as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn gaussian(scale: [f32; 3], rotation: [f32; 4]) -> Gaussian {
        Gaussian::new([0.0; 3], scale, rotation, [0.5; 3], 0.5, vec![]).unwrap()
    }

    #[test]
    fn unit_isotropic_covariance_is_identity() {
        let cov = covariance_of(&gaussian([1.0; 3], [1.0, 0.0, 0.0, 0.0]));
        assert_relative_eq!(cov, Matrix3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn axis_scaling_squares_onto_diagonal() {
        let cov = covariance_of(&gaussian([2.0, 1.0, 1.0], [1.0, 0.0, 0.0, 0.0]));
        assert_relative_eq!(cov, Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)), epsilon = 1e-12);
    }

    #[test]
    fn quarter_turn_about_z_swaps_axes() {
        let h = std::f32::consts::FRAC_1_SQRT_2;
        let g = gaussian([2.0, 1.0, 1.0], [h, 0.0, 0.0, h]);
        // independent: explicit rotation matrix for +90° about z
        let r = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let s = Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 1.0));
        let expected = r * s * s.transpose() * r.transpose();
        assert_relative_eq!(expected, Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0)));
        assert_relative_eq!(covariance_of(&g), expected, epsilon = 1e-6);
    }

    #[test]
    fn rejects_invalid_fields() {
        assert!(Gaussian::new([0.0; 3], [0.0, 1.0, 1.0], [1.0, 0.0, 0.0, 0.0], [0.5; 3], 0.5, vec![]).is_err());
        assert!(Gaussian::new([0.0; 3], [1.0; 3], [1.0, 0.0, 0.0, 0.0], [0.5; 3], 1.5, vec![]).is_err());
        assert!(Gaussian::new([0.0; 3], [1.0; 3], [1.0, 0.0, 0.0, 0.0], [1.2, 0.0, 0.0], 0.5, vec![]).is_err());
        assert!(Gaussian::new([0.0; 3], [1.0; 3], [1.1, 0.0, 0.0, 0.0], [0.5; 3], 0.5, vec![]).is_err());
    }

    #[test]
    fn slightly_off_unit_quaternion_is_renormalized() {
        let g = gaussian([1.0; 3], [1.0005, 0.0, 0.0, 0.0]);
        assert!((quat_norm(&g.rotation) - 1.0).abs() <= QUAT_UNIT_TOL);
    }

    #[test]
    fn scene_rejects_mixed_latent_dims() {
        let a = Gaussian::isotropic([0.0; 3], 1.0, [0.1; 3], 0.5, vec![0.0; 2]).unwrap();
        let b = Gaussian::isotropic([0.0; 3], 1.0, [0.1; 3], 0.5, vec![0.0; 3]).unwrap();
        assert!(matches!(Scene::new(vec![a, b], 2, SceneMetadata::default()), Err(SceneError::DimensionMismatch(_))));
    }

    proptest! {
        #[test]
        fn covariance_eigenvalues_are_squared_scales(
            s in prop::array::uniform3(0.05f32..4.0),
            q in prop::array::uniform4(-1.0f32..1.0),
        ) {
            let n = quat_norm(&q);
            prop_assume!(n > 0.1);
            let q = q.map(|v| (v as f64 / n) as f32);
            let g = Gaussian::new([0.0; 3], s, q, [0.5; 3], 0.5, vec![]).unwrap();
            let cov = covariance_of(&g);
            prop_assert!((cov - cov.transpose()).abs().max() < 1e-9);
            prop_assert!(cov.cholesky().is_some());
            let mut eig: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
            eig.sort_by(f64::total_cmp);
            let mut want: Vec<f64> = s.iter().map(|&v| (v as f64).powi(2)).collect();
            want.sort_by(f64::total_cmp);
            for (a, b) in eig.iter().zip(&want) {
                prop_assert!((a - b).abs() <= 1e-5 * b.max(1.0), "{eig:?} vs {want:?}");
            }
        }
    }
}
