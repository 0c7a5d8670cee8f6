use serde::{Deserialize, Serialize};

use super::FieldError;
use crate::codec::Autoencoder;
use crate::scene::Camera;

/// One segmented region with its D-dimensional embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskRegion {
    /// H×W row-major coverage.
    pub mask: Vec<bool>,
    pub embedding: Vec<f64>,
}

/// Supervision for one view: per hierarchy level, a set of disjoint masks.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewSupervision {
    pub view_id: usize,
    pub camera: Camera,
    pub levels: Vec<Vec<MaskRegion>>,
}

/// Encoded target latents H(v) for one view and one hierarchy level.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetFeatureMap {
    pub view_id: usize,
    pub level: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// H×W×k row-major; zero where invalid.
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl TargetFeatureMap {
    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.values[p * self.channels..(p + 1) * self.channels]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Encodes each mask's embedding with the frozen encoder and paints it over
/// the mask's pixels, one target map per (view, level). Uncovered pixels are invalid.
pub fn build_targets(views: &[ViewSupervision], ae: &Autoencoder) -> Result<Vec<TargetFeatureMap>, FieldError> {
    if !ae.is_frozen() {
        return Err(crate::codec::CodecError::NotFrozen.into());
    }
    let k = ae.latent_dim();
    let mut out = Vec::new();
    for view in views {
        let (w, h) = (view.camera.width, view.camera.height);
        for (level, masks) in view.levels.iter().enumerate() {
            let mut t =
                TargetFeatureMap { view_id: view.view_id, level, width: w, height: h, channels: k, values: vec![0.0; w * h * k], valid: vec![false; w * h] };
            for (mi, region) in masks.iter().enumerate() {
                if region.mask.len() != w * h {
                    return Err(FieldError::DimMismatch(format!("mask {mi} has {} pixels, camera has {}", region.mask.len(), w * h)));
                }
                if region.embedding.len() != ae.input_dim() {
                    return Err(FieldError::DimMismatch(format!(
                        "embedding of mask {mi} has dim {}, autoencoder expects {}",
                        region.embedding.len(),
                        ae.input_dim()
                    )));
                }
                let code = ae.encode(&region.embedding)?;
                for (p, _) in region.mask.iter().enumerate().filter(|(_, &m)| m) {
                    if t.valid[p] {
                        return Err(FieldError::OverlappingMasks { view: view.view_id, level, mask: mi, pixel: p });
                    }
                    t.valid[p] = true;
                    t.values[p * k..(p + 1) * k].copy_from_slice(&code);
                }
            }
            out.push(t);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{Activation, Dense};
    use ndarray::{Array1, Array2};

    fn slice_ae(d: usize, k: usize) -> Autoencoder {
        let enc = Dense::new(Array2::from_shape_fn((k, d), |(r, c)| (r == c) as u8 as f64), Array1::zeros(k), Activation::Identity).unwrap();
        let dec = Dense::new(Array2::from_shape_fn((d, k), |(r, c)| (r == c) as u8 as f64), Array1::zeros(d), Activation::Identity).unwrap();
        let mut ae = Autoencoder::from_layers(vec![enc], vec![dec]).unwrap();
        ae.freeze();
        ae
    }

    fn view(levels: Vec<Vec<MaskRegion>>) -> ViewSupervision {
        ViewSupervision { view_id: 0, camera: Camera::identity_pose(2.0, 2.0, 1.0, 1.0, 2, 2).unwrap(), levels }
    }

    #[test]
    fn full_frame_mask_gives_constant_map() {
        let f = vec![0.5, -0.25, 0.75, 0.1];
        let v = view(vec![vec![MaskRegion { mask: vec![true; 4], embedding: f }]]);
        let t = build_targets(&[v], &slice_ae(4, 2)).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t[0].valid.iter().all(|&v| v));
        for p in 0..4 {
            assert_eq!(t[0].pixel(p), &[0.5, -0.25]);
        }
    }

    #[test]
    fn disjoint_masks_are_piecewise_constant() {
        let a = MaskRegion { mask: vec![true, true, false, false], embedding: vec![1.0, 0.0, 0.0] };
        let b = MaskRegion { mask: vec![false, false, true, false], embedding: vec![0.0, 1.0, 0.0] };
        let t = &build_targets(&[view(vec![vec![a, b]])], &slice_ae(3, 2)).unwrap()[0];
        assert_eq!(t.valid, vec![true, true, true, false]);
        assert_eq!(t.pixel(1), &[1.0, 0.0]);
        assert_eq!(t.pixel(2), &[0.0, 1.0]);
        assert_eq!(t.pixel(3), &[0.0, 0.0]);
    }

    #[test]
    fn hierarchy_levels_yield_separate_maps() {
        let coarse = MaskRegion { mask: vec![true; 4], embedding: vec![1.0, 0.0, 0.0] };
        let fine = MaskRegion { mask: vec![true, false, false, false], embedding: vec![0.0, 0.0, 1.0] };
        let t = build_targets(&[view(vec![vec![coarse], vec![fine]])], &slice_ae(3, 3)).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!((t[0].level, t[1].level), (0, 1));
        // pixel 0 is covered at both levels, each with its own code
        assert_eq!(t[0].pixel(0), &[1.0, 0.0, 0.0]);
        assert_eq!(t[1].pixel(0), &[0.0, 0.0, 1.0]);
        assert_eq!(t[0].valid_count(), 4);
        assert_eq!(t[1].valid_count(), 1);
    }

    #[test]
    fn errors() {
        let bad_dim = MaskRegion { mask: vec![true; 4], embedding: vec![1.0; 5] };
        assert!(matches!(build_targets(&[view(vec![vec![bad_dim]])], &slice_ae(3, 2)), Err(FieldError::DimMismatch(_))));
        let a = MaskRegion { mask: vec![true; 4], embedding: vec![1.0, 0.0, 0.0] };
        assert!(matches!(build_targets(&[view(vec![vec![a.clone(), a]])], &slice_ae(3, 2)), Err(FieldError::OverlappingMasks { .. })));
    }
}
