//! GAEW autoencoder weights (little-endian):
//! ```text
//! "GAEW" | u32 version=1 | u32 D | u32 k | u32 encoder layers | u32 decoder layers
//! per layer, encoder first: u32 in | u32 out | u32 activation (0 linear, 1 relu)
//!                           | f32 weight[out × in] row-major | f32 bias[out]
//! ```
//! Loaded autoencoders are frozen.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Activation, Autoencoder, CodecError, Dense};
use crate::scene::format::Reader;
use crate::scene::SceneError;

pub const AE_MAGIC: [u8; 4] = *b"GAEW";
pub const AE_VERSION: u32 = 1;

pub fn write_autoencoder(ae: &Autoencoder) -> Vec<u8> {
    let mut out = Vec::new();
    let u = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    out.extend_from_slice(&AE_MAGIC);
    u(&mut out, AE_VERSION as usize);
    u(&mut out, ae.input_dim());
    u(&mut out, ae.latent_dim());
    u(&mut out, ae.encoder().len());
    u(&mut out, ae.decoder().len());
    for l in ae.layers() {
        u(&mut out, l.input_dim());
        u(&mut out, l.output_dim());
        u(&mut out, l.activation.tag() as usize);
        for v in l.weight.iter().chain(l.bias.iter()) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn read_autoencoder(bytes: &[u8]) -> Result<Autoencoder, CodecError> {
    let mut r = Reader::new(bytes);
    r.magic(AE_MAGIC)?;
    let version = r.u32()?;
    if version != AE_VERSION {
        return Err(SceneError::UnsupportedVersion(version).into());
    }
    let d = r.u32()? as usize;
    let k = r.u32()? as usize;
    let n_enc = r.u32()? as usize;
    let n_dec = r.u32()? as usize;
    let mut layers = Vec::with_capacity((n_enc + n_dec).min(64));
    for _ in 0..n_enc + n_dec {
        let input = r.u32()? as usize;
        let output = r.u32()? as usize;
        let tag = r.u32()?;
        let activation = Activation::from_tag(tag).ok_or_else(|| CodecError::Architecture(format!("unknown activation tag {tag}")))?;
        let n = input.checked_mul(output).ok_or_else(|| CodecError::Architecture("layer too large".into()))?;
        let w = r.f32s(n)?.into_iter().map(f64::from).collect();
        let b: Vec<f64> = r.f32s(output)?.into_iter().map(f64::from).collect();
        let weight = Array2::from_shape_vec((output, input), w).expect("sized above");
        layers.push(Dense::new(weight, Array1::from(b), activation)?);
    }
    if r.remaining() != 0 {
        return Err(SceneError::DimensionMismatch(format!("{} trailing bytes after layers", r.remaining())).into());
    }
    let decoder = layers.split_off(n_enc);
    let mut ae = Autoencoder::from_layers(layers, decoder)?;
    if ae.input_dim() != d || ae.latent_dim() != k {
        return Err(CodecError::Architecture(format!("header says D={d}, k={k} but layers give D={}, k={}", ae.input_dim(), ae.latent_dim())));
    }
    ae.mark_frozen();
    Ok(ae)
}

pub fn save_autoencoder(ae: &Autoencoder, path: impl AsRef<Path>) -> Result<(), CodecError> {
    fs::write(path, write_autoencoder(ae))?;
    Ok(())
}

pub fn load_autoencoder(path: impl AsRef<Path>) -> Result<Autoencoder, CodecError> {
    read_autoencoder(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frozen_round_trip_is_exact() {
        let mut ae = Autoencoder::standard(20, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        ae.freeze();
        let bytes = write_autoencoder(&ae);
        let back = read_autoencoder(&bytes).unwrap();
        assert_eq!(back, ae);
        assert_eq!(write_autoencoder(&back), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let mut ae = Autoencoder::standard(10, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        ae.freeze();
        let bytes = write_autoencoder(&ae);
        assert!(read_autoencoder(&bytes[..bytes.len() - 2]).is_err());
        let mut m = bytes.clone();
        m[0] = 0;
        assert!(matches!(read_autoencoder(&m), Err(CodecError::Format(SceneError::MagicMismatch { .. }))));
        let mut k = bytes;
        k[12] = 7;
        assert!(matches!(read_autoencoder(&k), Err(CodecError::Architecture(_))));
    }
}
