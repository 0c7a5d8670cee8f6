//! Open-vocabulary queries against rendered latent maps.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{cosine, Autoencoder, CodecError};
use crate::raster::FeatureMap;

/// Pixels whose accumulated alpha is below this are background.
pub const BACKGROUND_ALPHA: f64 = 0.01;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("query embedding has norm {0}, expected 1")]
    NotUnitNorm(f64),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub embedding: Vec<f64>,
}

impl Query {
    pub fn new(id: impl Into<String>, embedding: Vec<f64>) -> Result<Self, QueryError> {
        let n = crate::codec::norm(&embedding);
        if !((n - 1.0).abs() <= 1e-5) {
            return Err(QueryError::NotUnitNorm(n));
        }
        Ok(Self { id: id.into(), embedding })
    }
}

/// Inclusive pixel box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn contains(&self, (x, y): (usize, usize)) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }

    /// Tight box around the true pixels of an H×W mask, `None` if empty.
    pub fn of_mask(mask: &[bool], width: usize) -> Option<Self> {
        let mut b: Option<Self> = None;
        for (p, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            let (x, y) = (p % width, p / width);
            b = Some(match b {
                None => Self { x0: x, y0: y, x1: x, y1: y },
                Some(b) => Self { x0: b.x0.min(x), y0: b.y0.min(y), x1: b.x1.max(x), y1: b.y1.max(y) },
            });
        }
        b
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub width: usize,
    pub height: usize,
    pub relevancy: Vec<f64>,
    pub mask: Vec<bool>,
    pub loc_point: (usize, usize),
    pub score_at_loc: f64,
}

/// Decoded features of one rendered view; background rows are left empty.
#[derive(Clone, Debug)]
pub struct DecodedMap {
    pub width: usize,
    pub height: usize,
    /// Covered pixel indices, row-major.
    pub pixels: Vec<usize>,
    /// One decoded row per covered pixel.
    pub features: Array2<f64>,
}

/// Decodes each covered pixel in one batch. The rendered latent is divided by
/// the pixel's accumulated alpha first, so a faint edge decodes like the
/// splats behind it rather than like a shrunken code.
pub fn decode_map(z: &FeatureMap, alpha_sum: &[f64], ae: &Autoencoder) -> Result<DecodedMap, QueryError> {
    if z.channels != ae.latent_dim() {
        return Err(QueryError::DimMismatch(format!("map has {} channels, autoencoder latent is {}", z.channels, ae.latent_dim())));
    }
    if alpha_sum.len() != z.pixels() {
        return Err(QueryError::DimMismatch(format!("{} alpha values for {} pixels", alpha_sum.len(), z.pixels())));
    }
    let pixels: Vec<usize> = (0..z.pixels()).filter(|&p| alpha_sum[p] >= BACKGROUND_ALPHA).collect();
    let mut latents = Array2::zeros((pixels.len(), z.channels));
    for (mut row, &p) in latents.outer_iter_mut().zip(&pixels) {
        let a = alpha_sum[p];
        for (o, v) in row.iter_mut().zip(z.pixel(p)) {
            *o = v / a;
        }
    }
    let features = ae.decode_batch(latents.view())?;
    Ok(DecodedMap { width: z.width, height: z.height, pixels, features })
}

impl DecodedMap {
    /// Cosine of each covered pixel against the query; background is −1.
    pub fn relevancy(&self, q: &Query) -> Result<Vec<f64>, QueryError> {
        if q.embedding.len() != self.features.ncols() {
            return Err(QueryError::DimMismatch(format!("query dim {} vs decoded {}", q.embedding.len(), self.features.ncols())));
        }
        let mut out = vec![-1.0; self.width * self.height];
        let scores: Vec<f64> = self.features.outer_iter().map(|f| cosine(f.as_slice().expect("standard layout"), &q.embedding).clamp(-1.0, 1.0)).collect();
        for (&p, s) in self.pixels.iter().zip(scores) {
            out[p] = s;
        }
        Ok(out)
    }

    pub fn query(&self, q: &Query, threshold: f64) -> Result<QueryResult, QueryError> {
        let relevancy = self.relevancy(q)?;
        let mask = segment(&relevancy, threshold);
        let loc_point = localize(&relevancy, self.width);
        let score_at_loc = relevancy[loc_point.1 * self.width + loc_point.0];
        Ok(QueryResult { width: self.width, height: self.height, relevancy, mask, loc_point, score_at_loc })
    }
}

/// Relevancy of every pixel of a rendered latent map against one query.
pub fn relevancy_map(z: &FeatureMap, alpha_sum: &[f64], ae: &Autoencoder, q: &Query) -> Result<Vec<f64>, QueryError> {
    if q.embedding.len() != ae.input_dim() {
        return Err(QueryError::DimMismatch(format!("query dim {} vs autoencoder {}", q.embedding.len(), ae.input_dim())));
    }
    decode_map(z, alpha_sum, ae)?.relevancy(q)
}

pub fn segment(relevancy: &[f64], threshold: f64) -> Vec<bool> {
    relevancy.iter().map(|&r| r >= threshold).collect()
}

/// Argmax pixel as (x, y); ties go to the smallest row-major index.
pub fn localize(relevancy: &[f64], width: usize) -> (usize, usize) {
    let mut best = 0;
    for (i, &r) in relevancy.iter().enumerate() {
        if r > relevancy[best] {
            best = i;
        }
    }
    (best % width.max(1), best / width.max(1))
}

pub fn query(z: &FeatureMap, alpha_sum: &[f64], ae: &Autoencoder, q: &Query, threshold: f64) -> Result<QueryResult, QueryError> {
    if q.embedding.len() != ae.input_dim() {
        return Err(QueryError::DimMismatch(format!("query dim {} vs autoencoder {}", q.embedding.len(), ae.input_dim())));
    }
    decode_map(z, alpha_sum, ae)?.query(q, threshold)
}

pub fn iou(mask: &[bool], gt: &[bool]) -> Result<f64, QueryError> {
    if mask.len() != gt.len() {
        return Err(QueryError::DimMismatch(format!("mask has {} pixels, ground truth {}", mask.len(), gt.len())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in mask.iter().zip(gt) {
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Mean IoU over (prediction, ground truth) pairs; 0 for an empty list.
pub fn miou(pairs: &[(&[bool], &[bool])]) -> Result<f64, QueryError> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut s = 0.0;
    for (m, g) in pairs {
        s += iou(m, g)?;
    }
    Ok(s / pairs.len() as f64)
}

pub fn localization_accuracy(hits: &[((usize, usize), BBox)]) -> f64 {
    if hits.is_empty() {
        return 0.0;
    }
    hits.iter().filter(|(p, b)| b.contains(*p)).count() as f64 / hits.len() as f64
}

/// Projects valid-pixel latents onto their top three principal components,
/// min-max scaled to [0, 1] per channel. Invalid pixels and missing
/// components are 0.5. Each component is signed so its largest-magnitude
/// loading is positive.
pub fn pca_visualize(z: &FeatureMap, valid: &[bool]) -> Result<Vec<f64>, QueryError> {
    if valid.len() != z.pixels() {
        return Err(QueryError::DimMismatch(format!("{} validity flags for {} pixels", valid.len(), z.pixels())));
    }
    let k = z.channels;
    let idx: Vec<usize> = (0..z.pixels()).filter(|&p| valid[p]).collect();
    let mut out = vec![0.5; z.pixels() * 3];
    if idx.len() < 3 || k == 0 {
        return Ok(out);
    }
    let n = idx.len() as f64;
    let mut mean = vec![0.0; k];
    for &p in &idx {
        for (m, v) in mean.iter_mut().zip(z.pixel(p)) {
            *m += v / n;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(k, k);
    for &p in &idx {
        let c: Vec<f64> = z.pixel(p).iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..k {
            for j in i..k {
                cov[(i, j)] += c[i] * c[j] / n;
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);

    for (ch, &e) in order.iter().take(3).enumerate() {
        if eig.eigenvalues[e] <= 1e-12 * scale.max(1.0) {
            continue;
        }
        let mut axis: Vec<f64> = eig.eigenvectors.column(e).iter().copied().collect();
        let lead = (0..k).fold(0, |b, i| if axis[i].abs() > axis[b].abs() { i } else { b });
        if axis[lead] < 0.0 {
            axis.iter_mut().for_each(|a| *a = -*a);
        }
        let proj: Vec<f64> = idx.iter().map(|&p| z.pixel(p).iter().zip(&mean).zip(&axis).map(|((v, m), a)| (v - m) * a).sum()).collect();
        let (lo, hi) = proj.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        if hi - lo <= 0.0 {
            continue;
        }
        for (&p, v) in idx.iter().zip(proj) {
            out[p * 3 + ch] = (v - lo) / (hi - lo);
        }
    }
    Ok(out)
}
