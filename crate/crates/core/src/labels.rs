//! Caption provisioning and label-discrimination analysis.
//!
//! Action names can be turned into caption text two ways: a fixed template
//! with one `{}` slot, or a manifest file of hand-written explanatory
//! captions (`name<TAB>caption` per line) with template fallback for names
//! the file does not cover. Everything is offline and deterministic.
//!
//! The similarity report quantifies how separable a label set is under the
//! embedding: the full cosine matrix, each label's nearest neighbors, and the
//! mean off-diagonal cosine. Richer captions should drive that mean down.

use crate::error::{CoreError, Result};
use crate::numerics::{dot, Matrix};
use crate::recognition::LabelSet;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

pub const DEFAULT_TEMPLATE: &str = "a video of {}";

/// Source of caption text for action names.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionProvider {
    template: String,
    entries: Option<BTreeMap<String, String>>,
}

impl CaptionProvider {
    /// Template-only provider. The template must contain exactly one `{}`.
    pub fn template(template: &str) -> Result<CaptionProvider> {
        if template.matches("{}").count() != 1 {
            return Err(CoreError::Config(format!(
                "caption template {template:?} must contain exactly one {{}} slot"
            )));
        }
        Ok(CaptionProvider {
            template: template.to_string(),
            entries: None,
        })
    }

    /// Manifest-backed provider with the default template as fallback.
    pub fn from_file(path: &Path) -> Result<CaptionProvider> {
        let text = std::fs::read_to_string(path)?;
        Self::from_manifest_text(&text)
    }

    /// Parse manifest content: one `name<TAB>caption` per line; blank lines
    /// and `#` comments are skipped; duplicates and empty fields are errors.
    pub fn from_manifest_text(text: &str) -> Result<CaptionProvider> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (name, caption) = line.split_once('\t').ok_or_else(|| {
                CoreError::Format(format!(
                    "manifest line {}: expected name<TAB>caption, got {line:?}",
                    lineno + 1
                ))
            })?;
            let (name, caption) = (name.trim(), caption.trim());
            if name.is_empty() || caption.is_empty() {
                return Err(CoreError::Format(format!(
                    "manifest line {}: empty name or caption",
                    lineno + 1
                )));
            }
            if entries
                .insert(name.to_string(), caption.to_string())
                .is_some()
            {
                return Err(CoreError::Format(format!(
                    "manifest line {}: duplicate name {name:?}",
                    lineno + 1
                )));
            }
        }
        Ok(CaptionProvider {
            template: DEFAULT_TEMPLATE.to_string(),
            entries: Some(entries),
        })
    }

    pub fn is_file_backed(&self) -> bool {
        self.entries.is_some()
    }

    /// Names of all stored manifest entries, in sorted order; empty for a
    /// pure template provider.
    pub fn names(&self) -> Vec<&str> {
        self.entries
            .as_ref()
            .map(|e| e.keys().map(String::as_str).collect())
            .unwrap_or_default()
    }

    /// Caption for an action name: the stored caption when present, the
    /// formatted template otherwise.
    pub fn caption(&self, name: &str) -> Result<String> {
        if name.trim().is_empty() {
            return Err(CoreError::Config("action name must be nonempty".into()));
        }
        if let Some(entries) = &self.entries {
            if let Some(c) = entries.get(name) {
                return Ok(c.clone());
            }
        }
        Ok(self.template.replace("{}", name))
    }
}

impl Default for CaptionProvider {
    fn default() -> Self {
        CaptionProvider::template(DEFAULT_TEMPLATE).expect("default template is valid")
    }
}

/// One neighbor row in the similarity report.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Neighbor {
    pub name: String,
    pub cosine: f64,
}

/// Pairwise label-similarity analysis.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct SimilarityReport {
    pub names: Vec<String>,
    /// Symmetric M x M cosine matrix with unit diagonal.
    pub matrix: Matrix,
    /// Per label: the `k` most similar other labels, best first.
    pub top_neighbors: Vec<Vec<Neighbor>>,
    pub mean_off_diagonal: f64,
}

/// Build the similarity report. Embeddings are unit-norm by `LabelSet`
/// invariant, so cosines are plain dot products; the diagonal is set to 1
/// exactly.
pub fn label_similarity_report(labels: &LabelSet, top_k: usize) -> Result<SimilarityReport> {
    let m = labels.len();
    let mut matrix = Matrix::zeros(m, m);
    for i in 0..m {
        *matrix.at_mut(i, i) = 1.0;
        for j in 0..i {
            let c = dot(&labels.entry(i).embedding, &labels.entry(j).embedding)?;
            *matrix.at_mut(i, j) = c;
            *matrix.at_mut(j, i) = c;
        }
    }
    let mut off_sum = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                off_sum += matrix.at(i, j);
            }
        }
    }
    let mean_off_diagonal = off_sum / (m * (m - 1)) as f64;
    let k = top_k.min(m - 1);
    let top_neighbors = (0..m)
        .map(|i| {
            let mut others: Vec<usize> = (0..m).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| {
                matrix
                    .at(i, b)
                    .partial_cmp(&matrix.at(i, a))
                    .expect("finite cosines")
                    .then(a.cmp(&b))
            });
            others
                .into_iter()
                .take(k)
                .map(|j| Neighbor {
                    name: labels.entry(j).name.clone(),
                    cosine: matrix.at(i, j),
                })
                .collect()
        })
        .collect();
    Ok(SimilarityReport {
        names: labels.entries().iter().map(|e| e.name.clone()).collect(),
        matrix,
        top_neighbors,
        mean_off_diagonal,
    })
}

impl SimilarityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Fixed-column CSV: header row of names, then one row per label with its
    /// cosines, then a final summary row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("label");
        for n in &self.names {
            let _ = write!(out, ",{n}");
        }
        out.push('\n');
        for (i, n) in self.names.iter().enumerate() {
            out.push_str(n);
            for j in 0..self.names.len() {
                let _ = write!(out, ",{:.6}", self.matrix.at(i, j));
            }
            out.push('\n');
        }
        let _ = write!(out, "mean_off_diagonal,{:.6}", self.mean_off_diagonal);
        out.push('\n');
        out
    }
}
