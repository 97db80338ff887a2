//! Evaluation protocols: zero-shot, SimpleShot few-shot, generalized
//! zero-shot, the text-type cross matrix, and intrinsic separability.

mod fewshot;
mod intrinsic;
mod matrix;
mod zeroshot;

pub use fewshot::{nearest_centroid_predict, simpleshot, simpleshot_predictions};
pub use intrinsic::{intrinsic_separability, loo_centroid_purity, pca_2d, silhouette, IntrinsicScores};
pub use matrix::{texttype_matrix, TextTypeMatrix};
pub use zeroshot::{gzsl, predict_nearest_class, zeroshot, GzslOutcome};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::models::{ModelError, Vocab};
use crate::synth::{ManifestRecord, SynthTree};
use crate::taxonomy::{Taxon, TaxonId, TaxonomyStore};
use crate::texttypes::{apply_template, render, LabelText, TextType};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Synth(#[from] crate::synth::SynthError),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("class {class} has {count} images; the protocol needs more than {needed}")]
    TooFewImages {
        class: String,
        count: usize,
        needed: usize,
    },
    #[error("catalogs overlap on taxon {0}")]
    CatalogOverlap(String),
    #[error("taxon {0} is not in the catalog")]
    NotInCatalog(String),
    #[error("missing checkpoint for training text type {0}")]
    MissingCheckpoint(String),
    #[error("intrinsic evaluation needs at least two groups with two points each; {0}")]
    Degenerate(String),
}

/// Which protocol produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Zeroshot,
    Fewshot(usize),
    Gzsl,
    TexttypeMatrix,
    Intrinsic,
}

impl Protocol {
    pub fn id(self) -> &'static str {
        match self {
            Protocol::Zeroshot => "zeroshot",
            Protocol::Fewshot(_) => "fewshot",
            Protocol::Gzsl => "gzsl",
            Protocol::TexttypeMatrix => "texttype-matrix",
            Protocol::Intrinsic => "intrinsic",
        }
    }

    pub fn k(self) -> Option<usize> {
        match self {
            Protocol::Fewshot(k) => Some(k),
            _ => None,
        }
    }
}

/// A flat tab-separated table attached to a report.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Accuracy summary for one protocol run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub task: String,
    pub protocol: Protocol,
    /// One accuracy per seed; a single entry for deterministic protocols.
    pub per_seed: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation, present only with at least two seeds.
    pub std: Option<f64>,
    pub config_hash: String,
    /// Protocol-specific scalar findings.
    pub extras: BTreeMap<String, String>,
    pub table: Table,
}

impl EvalReport {
    /// Builds the summary from per-seed accuracies.
    pub fn from_accuracies(
        task: &str,
        protocol: Protocol,
        per_seed: Vec<f64>,
        config_hash: &str,
    ) -> EvalReport {
        let mean = per_seed.iter().sum::<f64>() / per_seed.len().max(1) as f64;
        let std = if per_seed.len() >= 2 {
            let var = per_seed.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
                / (per_seed.len() - 1) as f64;
            Some(var.sqrt())
        } else {
            None
        };
        EvalReport {
            task: task.to_string(),
            protocol,
            per_seed,
            mean,
            std,
            config_hash: config_hash.to_string(),
            extras: BTreeMap::new(),
            table: Table::default(),
        }
    }
}

/// Ordered class list with every renderable text per entry. The order is
/// fixed at construction; prediction ties break to the lowest index.
#[derive(Debug, Clone)]
pub struct ClassCatalog {
    entries: Vec<CatalogEntry>,
    by_taxon: BTreeMap<TaxonId, usize>,
}

#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub taxon_id: TaxonId,
    texts: BTreeMap<TextType, String>,
}

impl ClassCatalog {
    /// Renders every available text type for each taxon, keeping the given
    /// order.
    pub fn build(store: &TaxonomyStore, taxon_ids: &[TaxonId]) -> Result<ClassCatalog, EvalError> {
        if taxon_ids.is_empty() {
            return Err(EvalError::Empty("catalog"));
        }
        let mut entries = Vec::with_capacity(taxon_ids.len());
        let mut by_taxon = BTreeMap::new();
        for id in taxon_ids {
            let taxon: &Taxon = store
                .get(id)
                .ok_or_else(|| EvalError::NotInCatalog(id.to_string()))?;
            let mut texts = BTreeMap::new();
            for t in TextType::CONCRETE {
                if let Ok(LabelText { text, .. }) = render(taxon, t) {
                    texts.insert(t, text);
                }
            }
            by_taxon.insert(id.clone(), entries.len());
            entries.push(CatalogEntry {
                taxon_id: id.clone(),
                texts,
            });
        }
        Ok(ClassCatalog { entries, by_taxon })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn index_of(&self, id: &TaxonId) -> Option<usize> {
        self.by_taxon.get(id).copied()
    }

    /// Class text under the requested type, falling back to the taxonomic
    /// name (always renderable) when the type is unavailable for an entry.
    pub fn text(&self, index: usize, test_type: TextType) -> &str {
        let entry = &self.entries[index];
        entry
            .texts
            .get(&test_type)
            .or_else(|| entry.texts.get(&TextType::Taxonomic))
            .expect("taxonomic text is always renderable")
    }

    /// Templated prompts for the whole catalog under one test type.
    pub fn prompts(&self, test_type: TextType) -> Vec<String> {
        (0..self.entries.len())
            .map(|i| {
                apply_template(&LabelText {
                    text: self.text(i, test_type).to_string(),
                    text_type: test_type,
                    taxon_id: self.entries[i].taxon_id.clone(),
                })
            })
            .collect()
    }
}

/// Embeds manifest records in catalog-independent order via the tree.
pub(crate) fn record_images(
    tree: &SynthTree,
    records: &[&ManifestRecord],
) -> Result<Vec<Vec<f32>>, EvalError> {
    records
        .iter()
        .map(|r| tree.render_for_taxon(&r.taxon_id, r.image_seed).map_err(EvalError::from))
        .collect()
}

/// Tokenizes catalog prompts for the text tower.
pub(crate) fn tokenize_prompts(
    vocab: &Vocab,
    prompts: &[String],
) -> Result<Vec<Vec<usize>>, EvalError> {
    prompts
        .iter()
        .map(|p| vocab.tokenize(p).map_err(EvalError::from))
        .collect()
}
