//! The five label text formats, the prompt template, and the per-step
//! mixed-type sampler.

use rand::Rng;
use thiserror::Error;

use crate::taxonomy::{Taxon, TaxonId};

/// Label text formats. `Mixture` is a training configuration, not a
/// renderable format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TextType {
    Common,
    Scientific,
    Taxonomic,
    SciCom,
    TaxCom,
    Mixture,
}

impl TextType {
    /// The five renderable formats, in catalog/table order.
    pub const CONCRETE: [TextType; 5] = [
        TextType::Common,
        TextType::Scientific,
        TextType::Taxonomic,
        TextType::SciCom,
        TextType::TaxCom,
    ];

    /// All training configurations: the five concrete formats plus mixture.
    pub const TRAINING: [TextType; 6] = [
        TextType::Common,
        TextType::Scientific,
        TextType::Taxonomic,
        TextType::SciCom,
        TextType::TaxCom,
        TextType::Mixture,
    ];

    pub fn id(self) -> &'static str {
        match self {
            TextType::Common => "common",
            TextType::Scientific => "scientific",
            TextType::Taxonomic => "taxonomic",
            TextType::SciCom => "sci-com",
            TextType::TaxCom => "tax-com",
            TextType::Mixture => "mixture",
        }
    }

    pub fn from_id(id: &str) -> Option<TextType> {
        TextType::TRAINING.into_iter().find(|t| t.id() == id)
    }
}

impl std::fmt::Display for TextType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

/// A rendered label text for one taxon.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelText {
    pub text: String,
    pub text_type: TextType,
    pub taxon_id: TaxonId,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TextTypeError {
    #[error("text type {text_type} is unavailable for taxon {taxon}: {missing}")]
    Unavailable {
        text_type: TextType,
        taxon: String,
        missing: &'static str,
    },
    #[error("mixture is a training configuration and cannot be rendered")]
    MixtureNotRenderable,
    #[error("taxon {0} supports no text type")]
    NoAvailableType(String),
}

fn unavailable(t: TextType, taxon: &Taxon, missing: &'static str) -> TextTypeError {
    TextTypeError::Unavailable {
        text_type: t,
        taxon: taxon.taxon_id.to_string(),
        missing,
    }
}

/// Renders one taxon in one concrete format.
///
/// Formats: Common is the first common name; Scientific is
/// `"<genus> <species>"`; Taxonomic joins labels from kingdom to the
/// deepest present rank; the `+Com` variants append
/// `" with common name <common>"`.
pub fn render(taxon: &Taxon, t: TextType) -> Result<LabelText, TextTypeError> {
    let common = || {
        taxon
            .common_names
            .first()
            .cloned()
            .ok_or_else(|| unavailable(t, taxon, "common name"))
    };
    let scientific = || {
        taxon
            .labels
            .binomial()
            .ok_or_else(|| unavailable(t, taxon, "genus and species"))
    };

    let text = match t {
        TextType::Common => common()?,
        TextType::Scientific => scientific()?,
        TextType::Taxonomic => taxon.taxonomic_name(),
        TextType::SciCom => format!("{} with common name {}", scientific()?, common()?),
        TextType::TaxCom => {
            format!("{} with common name {}", taxon.taxonomic_name(), common()?)
        }
        TextType::Mixture => return Err(TextTypeError::MixtureNotRenderable),
    };
    debug_assert!(!text.is_empty());
    Ok(LabelText {
        text,
        text_type: t,
        taxon_id: taxon.taxon_id.clone(),
    })
}

/// Wraps a rendered label in the standard prompt template.
pub fn apply_template(label: &LabelText) -> String {
    format!("a photo of {}", label.text)
}

/// The concrete formats [`render`] would accept for this taxon, in
/// [`TextType::CONCRETE`] order.
pub fn available_types(taxon: &Taxon) -> Vec<TextType> {
    TextType::CONCRETE
        .into_iter()
        .filter(|&t| render(taxon, t).is_ok())
        .collect()
}

/// Uniform draw over the taxon's available concrete formats.
pub fn sample_type<R: Rng>(taxon: &Taxon, rng: &mut R) -> Result<TextType, TextTypeError> {
    let available = available_types(taxon);
    if available.is_empty() {
        return Err(TextTypeError::NoAvailableType(taxon.taxon_id.to_string()));
    }
    Ok(available[rng.gen_range(0..available.len())])
}
