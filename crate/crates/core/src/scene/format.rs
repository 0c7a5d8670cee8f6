//! GSPL scene files.
//!
//! Layout (little-endian):
//! ```text
//! "GSPL" | u32 version=1 | u32 N | u32 d
//! N × f32[mu 3, scale 3, quat(w,x,y,z) 4, color 3, opacity 1, latent d]
//! u32 len | len bytes of UTF-8 JSON metadata
//! ```

use std::fs;
use std::path::Path;

use super::{normalize_quat, Gaussian, Scene, SceneError, SceneMetadata};

pub const SCENE_MAGIC: [u8; 4] = *b"GSPL";
pub const SCENE_VERSION: u32 = 1;
const FIXED_FIELDS: usize = 14;

pub fn write_scene(scene: &Scene) -> Result<Vec<u8>, SceneError> {
    let meta = serde_json::to_vec(&scene.metadata)?;
    let per = FIXED_FIELDS + scene.latent_dim;
    let mut out = Vec::with_capacity(16 + scene.len() * per * 4 + 4 + meta.len());
    out.extend_from_slice(&SCENE_MAGIC);
    out.extend_from_slice(&SCENE_VERSION.to_le_bytes());
    out.extend_from_slice(&(scene.len() as u32).to_le_bytes());
    out.extend_from_slice(&(scene.latent_dim as u32).to_le_bytes());
    for g in &scene.gaussians {
        let fixed = g.mu.iter().chain(&g.scale).chain(&g.rotation).chain(&g.color).chain(std::iter::once(&g.opacity));
        for v in fixed.chain(&g.latent) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    Ok(out)
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<(), SceneError> {
    fs::write(path, write_scene(scene)?)?;
    Ok(())
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], SceneError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(SceneError::Truncated { needed: self.pos.saturating_add(n), available: self.buf.len() })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> Result<(), SceneError> {
        let found: [u8; 4] = self.take(4)?.try_into().unwrap();
        if found != expected {
            return Err(SceneError::MagicMismatch { expected, found });
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32, SceneError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>, SceneError> {
        let bytes = self.take(n.checked_mul(4).ok_or(SceneError::Truncated { needed: usize::MAX, available: self.buf.len() })?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn read_scene(bytes: &[u8]) -> Result<Scene, SceneError> {
    let mut r = Reader::new(bytes);
    r.magic(SCENE_MAGIC)?;
    let version = r.u32()?;
    if version != SCENE_VERSION {
        return Err(SceneError::UnsupportedVersion(version));
    }
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    let per = FIXED_FIELDS + d;
    let body = n
        .checked_mul(per)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| SceneError::DimensionMismatch(format!("N={n}, d={d} overflows the addressable size")))?;
    if body > r.remaining() {
        return Err(SceneError::Truncated { needed: 16 + body, available: bytes.len() });
    }
    let mut gaussians = Vec::with_capacity(n);
    for index in 0..n {
        let v = r.f32s(per)?;
        let rotation = normalize_quat([v[6], v[7], v[8], v[9]]).map_err(|reason| SceneError::InvalidGaussian { index, reason })?;
        let g =
            Gaussian { mu: [v[0], v[1], v[2]], scale: [v[3], v[4], v[5]], rotation, color: [v[10], v[11], v[12]], opacity: v[13], latent: v[14..].to_vec() };
        g.validate().map_err(|reason| SceneError::InvalidGaussian { index, reason })?;
        gaussians.push(g);
    }
    let meta_len = r.u32()? as usize;
    let meta: SceneMetadata = serde_json::from_slice(r.take(meta_len)?)?;
    if r.remaining() != 0 {
        return Err(SceneError::DimensionMismatch(format!("{} trailing bytes after metadata; header N={n}, d={d} disagrees with file length", r.remaining())));
    }
    Ok(Scene { gaussians, latent_dim: d, metadata: meta })
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene, SceneError> {
    read_scene(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scene(n: usize, d: usize) -> Scene {
        let gaussians = (0..n)
            .map(|i| {
                let t = i as f32;
                Gaussian::new(
                    [t, -t, 0.5 * t],
                    [0.1 + t * 0.01, 0.2, 0.3],
                    [1.0, 0.0, 0.0, 0.0],
                    [0.2, 0.4, 0.6],
                    0.75,
                    (0..d).map(|j| (i * d + j) as f32 * 0.001 - 0.5).collect(),
                )
                .unwrap()
            })
            .collect();
        Scene::new(gaussians, d, SceneMetadata { name: "t".into(), seed: 7, params: serde_json::json!({"a": 1}) }).unwrap()
    }

    #[test]
    fn resave_is_byte_identical() {
        let s = scene(1, 4);
        let bytes = write_scene(&s).unwrap();
        let back = read_scene(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(write_scene(&back).unwrap(), bytes);
    }

    #[test]
    fn file_size_matches_layout() {
        let s = scene(1000, 16);
        let meta = serde_json::to_vec(&s.metadata).unwrap();
        // header 16 bytes, 30 floats per splat, u32 length prefix
        assert_eq!(write_scene(&s).unwrap().len(), 16 + 1000 * 30 * 4 + 4 + meta.len());
    }

    #[test]
    fn distinct_errors_for_corruption() {
        let bytes = write_scene(&scene(3, 2)).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_scene(&bad), Err(SceneError::MagicMismatch { .. })));
        assert!(matches!(read_scene(&bytes[..bytes.len() - 5]), Err(SceneError::Truncated { .. })));
        assert!(matches!(read_scene(&bytes[..40]), Err(SceneError::Truncated { .. })));
        let mut long = bytes.clone();
        long.extend_from_slice(&[0; 8]);
        assert!(matches!(read_scene(&long), Err(SceneError::DimensionMismatch(_))));
        let mut wrong_d = bytes.clone();
        wrong_d[12..16].copy_from_slice(&1u32.to_le_bytes());
        assert!(read_scene(&wrong_d).is_err());
        let mut version = bytes;
        version[4] = 9;
        assert!(matches!(read_scene(&version), Err(SceneError::UnsupportedVersion(9))));
    }

    #[test]
    fn corrupt_quaternion_is_rejected_but_drift_is_repaired() {
        let s = scene(1, 0);
        let mut bytes = write_scene(&s).unwrap();
        // w sits after mu(3) and scale(3)
        let w_off = 16 + 6 * 4;
        bytes[w_off..w_off + 4].copy_from_slice(&1.0002f32.to_le_bytes());
        let g = &read_scene(&bytes).unwrap().gaussians[0];
        assert!((g.rotation[0] - 1.0).abs() < 1e-6);
        bytes[w_off..w_off + 4].copy_from_slice(&1.5f32.to_le_bytes());
        assert!(matches!(read_scene(&bytes), Err(SceneError::InvalidGaussian { .. })));
    }

    fn arb_gaussian(d: usize) -> impl Strategy<Value = Gaussian> {
        (
            prop::array::uniform3(-10.0f32..10.0),
            prop::array::uniform3(0.01f32..3.0),
            prop::array::uniform4(-1.0f32..1.0),
            prop::array::uniform3(0.0f32..=1.0),
            0.0f32..=1.0,
            prop::collection::vec(-5.0f32..5.0, d),
        )
            .prop_filter_map("degenerate quaternion", |(mu, scale, q, color, opacity, latent)| {
                let n = q.iter().map(|v| v * v).sum::<f32>().sqrt();
                if n < 0.1 {
                    return None;
                }
                Gaussian::new(mu, scale, q.map(|v| v / n), color, opacity, latent).ok()
            })
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(
            (d, gs) in (0usize..6).prop_flat_map(|d| (Just(d), prop::collection::vec(arb_gaussian(d), 1..20))),
            seed in any::<u64>(),
            name in "[a-z]{0,8}",
        ) {
            let s = Scene { gaussians: gs, latent_dim: d, metadata: SceneMetadata { name, seed, params: serde_json::Value::Null } };
            let bytes = write_scene(&s).unwrap();
            let back = read_scene(&bytes).unwrap();
            prop_assert_eq!(&back, &s);
            prop_assert_eq!(write_scene(&back).unwrap(), bytes);
        }
    }
}
