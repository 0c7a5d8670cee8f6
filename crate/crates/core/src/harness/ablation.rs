use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{config_hash, derive_seed, provenance_line, HarnessError};
use crate::codec::{train_autoencoder, CodecError, EmbeddingCorpus, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub ks: Vec<usize>,
    /// Shared budget; `seed` is replaced per k by a derived stream.
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { ks: vec![3, 8, 16, 32, 64], train: TrainConfig::default(), seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub k: usize,
    pub val_mse: f64,
    pub val_cosine: f64,
    pub gradient_steps: usize,
    pub train_seconds: f64,
    /// Set when this k diverged; the metrics are then NaN.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
    pub corpus_id: String,
    pub config_hash: String,
}

#[derive(Serialize)]
struct Hashed<'a> {
    config: &'a AblationConfig,
    corpus_id: &'a str,
}

/// One autoencoder per k with the same budget; a diverging k is recorded and the sweep moves on.
pub fn run_ablation(corpus: &EmbeddingCorpus, corpus_id: &str, cfg: &AblationConfig) -> Result<AblationResult, HarnessError> {
    if cfg.ks.is_empty() {
        return Err(HarnessError::Config("ks must be non-empty".into()));
    }
    if cfg.ks.windows(2).any(|w| w[0] >= w[1]) || cfg.ks[0] == 0 {
        return Err(HarnessError::Config(format!("ks must be positive and strictly increasing, got {:?}", cfg.ks)));
    }
    cfg.train.validate()?;
    let mut rows = Vec::with_capacity(cfg.ks.len());
    for &k in &cfg.ks {
        let train = TrainConfig { seed: derive_seed(cfg.seed, k as u64), ..cfg.train.clone() };
        let t0 = Instant::now();
        let out = train_autoencoder(corpus, k, &train);
        let secs = t0.elapsed().as_secs_f64();
        rows.push(match out {
            Ok((_, rep)) => {
                AblationRow { k, val_mse: rep.val_mse, val_cosine: rep.val_cosine, gradient_steps: rep.gradient_steps, train_seconds: secs, error: None }
            }
            Err(e @ (CodecError::Divergence { .. } | CodecError::NonFinite)) => {
                AblationRow { k, val_mse: f64::NAN, val_cosine: f64::NAN, gradient_steps: 0, train_seconds: secs, error: Some(e.to_string()) }
            }
            Err(e) => return Err(e.into()),
        });
    }
    Ok(AblationResult { rows, corpus_id: corpus_id.to_string(), config_hash: config_hash(&Hashed { config: cfg, corpus_id }) })
}

impl AblationResult {
    /// Metrics only; identical across reruns of the same config.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# {}\n# corpus {}\nk,val_mse,val_cosine,gradient_steps,status\n", provenance_line(&self.config_hash), self.corpus_id);
        for r in &self.rows {
            let status = if r.error.is_some() { "diverged" } else { "ok" };
            writeln!(s, "{},{:.9e},{:.9},{},{}", r.k, r.val_mse, r.val_cosine, r.gradient_steps, status).unwrap();
        }
        s
    }

    /// Wall-clock per k, kept apart from the metrics file.
    pub fn timing_csv(&self) -> String {
        let mut s = format!("# {}\nk,train_seconds\n", provenance_line(&self.config_hash));
        for r in &self.rows {
            writeln!(s, "{},{:.6}", r.k, r.train_seconds).unwrap();
        }
        s
    }

    /// Two stacked line charts: validation cosine and log10 MSE against k.
    pub fn to_svg(&self) -> String {
        let ok: Vec<&AblationRow> = self.rows.iter().filter(|r| r.error.is_none()).collect();
        let labels: Vec<String> = ok.iter().map(|r| r.k.to_string()).collect();
        let cos: Vec<f64> = ok.iter().map(|r| r.val_cosine).collect();
        let mse: Vec<f64> = ok.iter().map(|r| r.val_mse.max(1e-300).log10()).collect();
        let mut s = String::new();
        writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#).unwrap();
        writeln!(s, "<!-- {} -->", provenance_line(&self.config_hash)).unwrap();
        writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="520" height="560" font-family="sans-serif" font-size="12">"#).unwrap();
        writeln!(s, r#"<rect width="520" height="560" fill="white"/>"#).unwrap();
        panel(&mut s, 20.0, "validation cosine", &labels, &cos, "#1f5fa8");
        panel(&mut s, 290.0, "log10 validation MSE", &labels, &mse, "#b4442c");
        s.push_str("</svg>\n");
        s
    }
}

fn panel(s: &mut String, top: f64, title: &str, labels: &[String], ys: &[f64], color: &str) {
    let (left, width, height) = (70.0, 420.0, 200.0);
    let bottom = top + 30.0 + height;
    writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="middle" font-size="14">{title}</text>"#, left + width / 2.0, top + 15.0).unwrap();
    writeln!(s, r#"<line x1="{left}" y1="{bottom:.1}" x2="{:.1}" y2="{bottom:.1}" stroke="black"/>"#, left + width).unwrap();
    writeln!(s, r#"<line x1="{left}" y1="{:.1}" x2="{left}" y2="{bottom:.1}" stroke="black"/>"#, top + 30.0).unwrap();
    if ys.is_empty() {
        return;
    }
    let (mut lo, mut hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.08 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let n = ys.len();
    let x = |i: usize| if n == 1 { left + width / 2.0 } else { left + 20.0 + (width - 40.0) * i as f64 / (n - 1) as f64 };
    let y = |v: f64| bottom - height * (v - lo) / (hi - lo);
    for t in 0..=4 {
        let v = lo + (hi - lo) * t as f64 / 4.0;
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"#, left - 6.0, y(v) + 4.0).unwrap();
    }
    let pts: Vec<String> = ys.iter().enumerate().map(|(i, &v)| format!("{:.1},{:.1}", x(i), y(v))).collect();
    writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" ")).unwrap();
    for (i, (&v, l)) in ys.iter().zip(labels).enumerate() {
        writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3.5" fill="{color}"/>"#, x(i), y(v)).unwrap();
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{l}</text>"#, x(i), bottom + 16.0).unwrap();
    }
    writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">k</text>"#, left + width / 2.0, bottom + 32.0).unwrap();
}
