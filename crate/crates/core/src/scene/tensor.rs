//! GTEN dense tensors: `"GTEN" | u32 rank | u32 dims[rank] | f32 data`,
//! little-endian, row-major.

use std::fs;
use std::path::Path;

use super::format::Reader;
use super::SceneError;

pub const TENSOR_MAGIC: [u8; 4] = *b"GTEN";

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self, SceneError> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(SceneError::DimensionMismatch(format!("dims {dims:?} hold {n} values, got {}", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Result<Self, SceneError> {
        Self::new(dims, data.iter().map(|&v| v as f32).collect())
    }

    pub fn from_bools(dims: Vec<usize>, data: &[bool]) -> Result<Self, SceneError> {
        Self::new(dims, data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn expect_dims(&self, dims: &[usize]) -> Result<(), SceneError> {
        if self.dims != dims {
            return Err(SceneError::DimensionMismatch(format!("expected tensor dims {dims:?}, found {:?}", self.dims)));
        }
        Ok(())
    }
}

pub fn write_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.dims.len() + 4 * t.data.len());
    out.extend_from_slice(&TENSOR_MAGIC);
    out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
    for &d in &t.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_tensor(bytes: &[u8]) -> Result<Tensor, SceneError> {
    let mut r = Reader::new(bytes);
    r.magic(TENSOR_MAGIC)?;
    let rank = r.u32()? as usize;
    let mut dims = Vec::with_capacity(rank.min(16));
    for _ in 0..rank {
        dims.push(r.u32()? as usize);
    }
    let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| SceneError::DimensionMismatch(format!("dims {dims:?} overflow")))?;
    let data = r.f32s(n)?;
    if r.remaining() != 0 {
        return Err(SceneError::DimensionMismatch(format!("{} trailing bytes after tensor {dims:?}", r.remaining())));
    }
    Ok(Tensor { dims, data })
}

pub fn save_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<(), SceneError> {
    fs::write(path, write_tensor(t))?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor, SceneError> {
    read_tensor(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_header_then_row_major_floats() {
        let t = Tensor::new(vec![2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let b = write_tensor(&t);
        assert_eq!(&b[..4], b"GTEN");
        assert_eq!(b.len(), 4 + 4 + 8 + 24);
        assert_eq!(f32::from_le_bytes(b[16 + 4 * 4..16 + 5 * 4].try_into().unwrap()), 4.0);
    }

    #[test]
    fn corrupt_tensors_are_rejected() {
        let b = write_tensor(&Tensor::new(vec![4], vec![1.0; 4]).unwrap());
        assert!(matches!(read_tensor(&b[..b.len() - 1]), Err(SceneError::Truncated { .. })));
        let mut m = b.clone();
        m[1] = b'X';
        assert!(matches!(read_tensor(&m), Err(SceneError::MagicMismatch { .. })));
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(dims in prop::collection::vec(0usize..5, 0..4), seed in any::<u32>()) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n).map(|i| (i as f32 + seed as f32).sin()).collect();
            let t = Tensor::new(dims, data).unwrap();
            prop_assert_eq!(read_tensor(&write_tensor(&t)).unwrap(), t);
        }
    }
}
