//! Synthetic ground truth: concept dictionaries of controlled intrinsic
//! dimension, embedding corpora around them, and splat worlds with masks.

mod random;
mod world;

pub use random::random_scene;
pub use world::{gen_world, load_world, save_world, SyntheticWorld, WorldConfig};

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, EmbeddingCorpus, Split};
use crate::raster::RenderError;
use crate::scene::{load_tensor, save_tensor, SceneError, Tensor};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("no feasible layout after {0} attempts")]
    InfeasibleLayout(usize),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DictionaryConfig {
    pub concepts: usize,
    pub dim: usize,
    pub intrinsic_dim: usize,
    pub noise: f64,
}

impl Default for DictionaryConfig {
    fn default() -> Self {
        Self { concepts: 64, dim: 512, intrinsic_dim: 12, noise: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConceptDictionary {
    /// C×D, unit rows.
    pub concepts: Array2<f64>,
    pub labels: Vec<String>,
    pub intrinsic_dim: usize,
    pub noise: f64,
    pub seed: u64,
}

fn unit_gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Each concept is normalize(√(1−ε²)·u + ε·n) with u a random unit vector in
/// a shared r-dimensional subspace and n a random unit vector in ℝᴰ.
pub fn gen_dictionary(cfg: &DictionaryConfig, seed: u64) -> Result<ConceptDictionary, SynthError> {
    let DictionaryConfig { concepts: c, dim: d, intrinsic_dim: r, noise } = *cfg;
    if c == 0 || d == 0 || r == 0 || r > d {
        return Err(SynthError::Params(format!("need C ≥ 1 and 1 ≤ r ≤ D, got C={c}, D={d}, r={r}")));
    }
    if !(0.0..=1.0).contains(&noise) {
        return Err(SynthError::Params(format!("noise must be in [0, 1], got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::<f64>::from_fn(d, r, |_, _| rng.sample(StandardNormal));
    let basis = g.qr().q();
    let keep = (1.0 - noise * noise).sqrt();
    let mut concepts = Array2::zeros((c, d));
    for mut row in concepts.outer_iter_mut() {
        let coeff = nalgebra::DVector::from_vec(unit_gaussian(&mut rng, r));
        let u = &basis * coeff;
        let n = unit_gaussian(&mut rng, d);
        let v: Vec<f64> = (0..d).map(|i| keep * u[i] + noise * n[i]).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (o, x) in row.iter_mut().zip(v) {
            *o = x / norm;
        }
    }
    Ok(ConceptDictionary { concepts, labels: (0..c).map(|i| format!("concept_{i:03}")).collect(), intrinsic_dim: r, noise, seed })
}

impl ConceptDictionary {
    pub fn len(&self) -> usize {
        self.concepts.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.concepts.ncols()
    }

    pub fn concept(&self, i: usize) -> Vec<f64> {
        self.concepts.row(i).to_vec()
    }

    /// Share of total squared singular values captured by the top `rank`.
    pub fn energy_fraction(&self, rank: usize) -> f64 {
        let m = DMatrix::from_row_slice(self.len(), self.dim(), self.concepts.as_slice().expect("standard layout"));
        let mut s: Vec<f64> = m.singular_values().iter().map(|v| v * v).collect();
        s.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = s.iter().sum();
        s.iter().take(rank).sum::<f64>() / total
    }
}

/// `samples_per_concept` rows per concept, each normalize(concept + jitter·g)
/// with g ~ N(0, I/D). A seeded shuffle tags 10% of rows as validation.
pub fn gen_corpus(dict: &ConceptDictionary, samples_per_concept: usize, jitter: f64, seed: u64) -> Result<EmbeddingCorpus, SynthError> {
    if !(jitter >= 0.0 && jitter.is_finite()) {
        return Err(SynthError::Params(format!("jitter must be ≥ 0, got {jitter}")));
    }
    if samples_per_concept == 0 {
        return Err(SynthError::Params("samples_per_concept must be ≥ 1".into()));
    }
    let (c, d) = (dict.len(), dict.dim());
    let m = c * samples_per_concept;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = jitter / (d as f64).sqrt();
    let mut rows = Array2::zeros((m, d));
    let mut labels = Vec::with_capacity(m);
    for (i, mut row) in rows.outer_iter_mut().enumerate() {
        let concept = i / samples_per_concept;
        labels.push(concept as u32);
        for (o, &x) in row.iter_mut().zip(dict.concepts.row(concept)) {
            let n: f64 = rng.sample(StandardNormal);
            *o = x + sd * n;
        }
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);
    let n_val = (m as f64 * 0.1).round() as usize;
    let mut split = vec![Split::Train; m];
    for &i in &order[..n_val] {
        split[i] = Split::Val;
    }
    Ok(EmbeddingCorpus::from_unnormalized(rows, labels, split, dict.labels.clone())?)
}

#[derive(Serialize, Deserialize)]
struct DictionarySidecar {
    labels: Vec<String>,
    intrinsic_dim: usize,
    noise: f64,
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<String>,
}

/// C×D GTEN at `path` plus a JSON sidecar with labels and generation parameters.
pub fn save_dictionary(dict: &ConceptDictionary, path: impl AsRef<Path>, provenance: Option<&str>) -> Result<(), SynthError> {
    let path = path.as_ref();
    let t = Tensor::from_f64(vec![dict.len(), dict.dim()], dict.concepts.as_slice().expect("standard layout"))?;
    save_tensor(&t, path)?;
    let side = DictionarySidecar {
        labels: dict.labels.clone(),
        intrinsic_dim: dict.intrinsic_dim,
        noise: dict.noise,
        seed: dict.seed,
        provenance: provenance.map(str::to_string),
    };
    fs::write(path.with_extension("json"), serde_json::to_string_pretty(&side)? + "\n")?;
    Ok(())
}

/// Concepts come back at f32 precision, renormalized.
pub fn load_dictionary(path: impl AsRef<Path>) -> Result<ConceptDictionary, SynthError> {
    let path = path.as_ref();
    let t = load_tensor(path)?;
    let [c, d] = t.dims[..] else {
        return Err(SynthError::Params(format!("dictionary tensor must be rank 2, found dims {:?}", t.dims)));
    };
    let side: DictionarySidecar = serde_json::from_slice(&fs::read(path.with_extension("json"))?)?;
    if side.labels.len() != c {
        return Err(SynthError::Params(format!("{} labels for {c} concepts", side.labels.len())));
    }
    let mut concepts = Array2::from_shape_vec((c, d), t.to_f64()).expect("dims checked");
    for mut row in concepts.outer_iter_mut() {
        let n = row.dot(&row).sqrt();
        if !(n > 0.0) {
            return Err(SynthError::Params("dictionary has a zero concept".into()));
        }
        row /= n;
    }
    Ok(ConceptDictionary { concepts, labels: side.labels, intrinsic_dim: side.intrinsic_dim, noise: side.noise, seed: side.seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dictionary_round_trip() {
        let dd = dict(6, 20, 3, 0.05);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("dict.gten");
        save_dictionary(&dd, &p, Some("x")).unwrap();
        let back = load_dictionary(&p).unwrap();
        assert_eq!((back.labels.clone(), back.intrinsic_dim, back.seed), (dd.labels.clone(), 3, 7));
        for (a, b) in back.concepts.iter().zip(dd.concepts.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    fn dict(c: usize, d: usize, r: usize, noise: f64) -> ConceptDictionary {
        gen_dictionary(&DictionaryConfig { concepts: c, dim: d, intrinsic_dim: r, noise }, 7).unwrap()
    }

    #[test]
    fn low_rank_energy() {
        let dd = dict(200, 512, 12, 0.05);
        for r in dd.concepts.outer_iter() {
            assert!((r.dot(&r) - 1.0).abs() < 1e-12);
        }
        let e = dd.energy_fraction(12);
        assert!(e >= 1.0 - 0.05 * 0.05, "energy {e}");
    }

    #[test]
    fn noiseless_dictionary_is_exactly_rank_r() {
        assert!(dict(50, 64, 5, 0.0).energy_fraction(5) > 1.0 - 1e-12);
    }

    #[test]
    fn full_rank_looks_isotropic() {
        // uniform on the sphere: mean of each coordinate ≈ 0, mean square ≈ 1/D
        let dd = dict(4000, 8, 8, 0.0);
        for col in dd.concepts.columns() {
            assert!(col.mean().unwrap().abs() < 0.03);
            assert!((col.mapv(|x| x * x).mean().unwrap() - 0.125).abs() < 0.01);
        }
    }

    #[test]
    fn seeds_reproduce() {
        assert_eq!(dict(10, 32, 4, 0.1), dict(10, 32, 4, 0.1));
        let other = gen_dictionary(&DictionaryConfig { concepts: 10, dim: 32, intrinsic_dim: 4, noise: 0.1 }, 8).unwrap();
        assert_ne!(dict(10, 32, 4, 0.1).concepts, other.concepts);
    }

    #[test]
    fn rejects_bad_rank() {
        let cfg = DictionaryConfig { concepts: 3, dim: 4, intrinsic_dim: 5, noise: 0.0 };
        assert!(matches!(gen_dictionary(&cfg, 0), Err(SynthError::Params(_))));
    }

    #[test]
    fn corpus_counts_and_split() {
        let dd = dict(10, 64, 6, 0.05);
        let c = gen_corpus(&dd, 100, 0.1, 3).unwrap();
        assert_eq!(c.len(), 1000);
        assert_eq!(c.indices(Split::Val).len(), 100);
        assert_eq!(c.labels()[250], 2);
        assert_eq!(gen_corpus(&dd, 100, 0.1, 3).unwrap(), c);
    }

    #[test]
    fn zero_jitter_reproduces_concepts() {
        let dd = dict(5, 32, 3, 0.05);
        let c = gen_corpus(&dd, 2, 0.0, 1).unwrap();
        for i in 0..10 {
            for (a, b) in c.row(i).iter().zip(dd.concepts.row(i / 2)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jitter_keeps_rows_near_their_concept() {
        let dd = dict(10, 512, 12, 0.05);
        let c = gen_corpus(&dd, 50, 0.1, 9).unwrap();
        let mean: f64 = (0..c.len()).map(|i| c.row(i).dot(&dd.concepts.row(c.labels()[i] as usize))).sum::<f64>() / c.len() as f64;
        assert!((0.95..=1.0).contains(&mean), "{mean}");
    }
}
