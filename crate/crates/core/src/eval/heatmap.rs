//! Pearson correlation between high-level routing vectors of template prompts.

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::qagen::{TemplateBank, TemplateKind};

/// Pearson correlation; `None` when either vector has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub labels: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
    /// Indices of constant vectors. Their off-diagonal correlations are 0.
    pub zero_variance: Vec<usize>,
}

/// Correlation matrix between routing vectors, one per prompt label.
pub fn routing_heatmap(labels: &[String], vectors: &[Vec<f64>]) -> Result<Heatmap> {
    if labels.len() != vectors.len() {
        return Err(Error::Metric(format!(
            "{} labels for {} routing vectors",
            labels.len(),
            vectors.len()
        )));
    }
    if vectors.len() < 2 {
        return Err(Error::Metric("a heatmap needs at least two routing vectors".into()));
    }
    let width = vectors[0].len();
    if vectors.iter().any(|v| v.len() != width) {
        return Err(Error::Metric("routing vectors differ in length".into()));
    }
    let k = vectors.len();
    let mut matrix = vec![vec![0.0; k]; k];
    let mut zero_variance = Vec::new();
    for i in 0..k {
        if pearson(&vectors[i], &vectors[i]).is_none() {
            zero_variance.push(i);
        }
        matrix[i][i] = 1.0;
        for j in 0..i {
            let r = pearson(&vectors[i], &vectors[j]).unwrap_or(0.0);
            matrix[i][j] = r;
            matrix[j][i] = r;
        }
    }
    Ok(Heatmap {
        labels: labels.to_vec(),
        matrix,
        zero_variance,
    })
}

impl Heatmap {
    /// Header `prompt,<labels…>`, then one row per prompt.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = std::iter::once("prompt").chain(self.labels.iter().map(String::as_str)).collect();
        w.write_record(&header).expect("in-memory write");
        for (label, row) in self.labels.iter().zip(&self.matrix) {
            let fields: Vec<String> = std::iter::once(label.clone())
                .chain(row.iter().map(|r| format!("{r:.6}")))
                .collect();
            w.write_record(&fields).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }
}

/// Every multitask question rendered for every label name: with the
/// bundled bank and four labels, 60 prompts. Returns (label, prompt text).
pub fn template_prompts(bank: &TemplateBank, label_names: &[String]) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for name in label_names {
        for t in bank.of_kind(TemplateKind::Multitask) {
            out.push((format!("{name} | {}", t.tasks.to_string().replace(',', "+")), t.question.replace("{label}", name)));
        }
    }
    out
}

/// Deterministic stand-in for a language-model prompt embedding: signed
/// feature hashing of lower-cased words, scaled to unit length.
pub fn hashed_prompt_embedding(text: &str, dim: usize) -> Array1<f64> {
    let mut v = Array1::<f64>::zeros(dim);
    for word in text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
    {
        let digest = Sha256::digest(word.to_lowercase().as_bytes());
        let bucket = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) % dim as u64;
        let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
        v[bucket as usize] += sign;
    }
    let norm = v.dot(&v).sqrt();
    if norm > 0.0 {
        v /= norm;
    }
    v
}
