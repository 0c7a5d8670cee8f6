use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use super::CodecError;
use crate::scene::{load_tensor, save_tensor, Tensor};

/// Row norms must be within this of 1.
pub const UNIT_NORM_TOL: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

/// M unit-norm embeddings with concept labels and a train/val split.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingCorpus {
    rows: Array2<f64>,
    labels: Vec<u32>,
    split: Vec<Split>,
    label_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    labels: Vec<u32>,
    split: Vec<Split>,
    label_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<String>,
}

impl EmbeddingCorpus {
    pub fn new(rows: Array2<f64>, labels: Vec<u32>, split: Vec<Split>, label_names: Vec<String>) -> Result<Self, CodecError> {
        let m = rows.nrows();
        if m == 0 || rows.ncols() == 0 {
            return Err(CodecError::EmptyCorpus);
        }
        if labels.len() != m || split.len() != m {
            return Err(CodecError::Corpus(format!("{m} rows but {} labels and {} split tags", labels.len(), split.len())));
        }
        for (i, r) in rows.outer_iter().enumerate() {
            let n = r.dot(&r).sqrt();
            if !((n - 1.0).abs() <= UNIT_NORM_TOL) {
                return Err(CodecError::Corpus(format!("row {i} has norm {n}, expected unit norm")));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| !label_names.is_empty() && l as usize >= label_names.len()) {
            return Err(CodecError::Corpus(format!("label {bad} has no name")));
        }
        Ok(Self { rows, labels, split, label_names })
    }

    /// Normalizes each row to unit norm first. Zero rows are rejected.
    pub fn from_unnormalized(mut rows: Array2<f64>, labels: Vec<u32>, split: Vec<Split>, label_names: Vec<String>) -> Result<Self, CodecError> {
        for (i, mut r) in rows.outer_iter_mut().enumerate() {
            let n = r.dot(&r).sqrt();
            if !(n > 0.0 && n.is_finite()) {
                return Err(CodecError::Corpus(format!("row {i} cannot be normalized")));
            }
            r /= n;
        }
        Self::new(rows, labels, split, label_names)
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.rows.row(i)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn split(&self) -> &[Split] {
        &self.split
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == which).collect()
    }

    pub fn select(&self, which: Split) -> Array2<f64> {
        self.rows.select(Axis(0), &self.indices(which))
    }

    /// Rows of `which`, or every row when that split is empty.
    pub fn select_or_all(&self, which: Split) -> Array2<f64> {
        let idx = self.indices(which);
        if idx.is_empty() {
            self.rows.clone()
        } else {
            self.rows.select(Axis(0), &idx)
        }
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes the M×D GTEN tensor at `path` and a JSON label sidecar next to it.
pub fn save_corpus(corpus: &EmbeddingCorpus, path: impl AsRef<Path>, provenance: Option<&str>) -> Result<(), CodecError> {
    let path = path.as_ref();
    let t = Tensor::from_f64(vec![corpus.len(), corpus.dim()], corpus.rows.as_slice().expect("standard layout"))?;
    save_tensor(&t, path)?;
    let sidecar = Sidecar {
        labels: corpus.labels.clone(),
        split: corpus.split.clone(),
        label_names: corpus.label_names.clone(),
        provenance: provenance.map(str::to_string),
    };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

/// Rows stored in f32 are renormalized on load.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<EmbeddingCorpus, CodecError> {
    let path = path.as_ref();
    let t = load_tensor(path)?;
    let [m, d] = t.dims[..] else {
        return Err(CodecError::Corpus(format!("corpus tensor must be rank 2, found dims {:?}", t.dims)));
    };
    let sidecar: Sidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    let rows = Array2::from_shape_vec((m, d), t.to_f64()).expect("dims checked");
    EmbeddingCorpus::from_unnormalized(rows, sidecar.labels, sidecar.split, sidecar.label_names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn validates_unit_rows() {
        let rows = array![[1.0, 0.0], [0.6, 0.8]];
        assert!(EmbeddingCorpus::new(rows.clone(), vec![0, 1], vec![Split::Train, Split::Val], vec![]).is_ok());
        assert!(EmbeddingCorpus::new(array![[2.0, 0.0]], vec![0], vec![Split::Train], vec![]).is_err());
        assert!(EmbeddingCorpus::new(rows, vec![0], vec![Split::Train], vec![]).is_err());
        let c = EmbeddingCorpus::from_unnormalized(array![[3.0, 4.0]], vec![0], vec![Split::Train], vec!["a".into()]).unwrap();
        assert!((c.row(0)[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.gten");
        let c = EmbeddingCorpus::new(array![[1.0, 0.0], [0.0, 1.0]], vec![0, 1], vec![Split::Train, Split::Val], vec!["x".into(), "y".into()]).unwrap();
        save_corpus(&c, &p, Some("hash")).unwrap();
        assert_eq!(load_corpus(&p).unwrap(), c);
    }
}
