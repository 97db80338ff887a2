//! Taxonomy ingestion and canonicalization.
//!
//! Raw taxon records arrive as prioritized tabular dumps. [`merge`] folds
//! them into a single [`TaxonomyStore`] in which every taxon carries a
//! prefix-closed run of rank labels, homonyms stay distinct, and lookups by
//! scientific or common name are served from prebuilt indexes.

mod merge;
mod parse;
mod store_io;

pub use merge::{detect_homonyms, merge, HomonymEntry, MergeOutcome};
pub use parse::{parse_dump, parse_dump_str, DumpFormat, ParsedDump};
pub use store_io::parse_store_str;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// The seven taxonomic ranks, ordered from most to least inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rank {
    Kingdom,
    Phylum,
    Class,
    Order,
    Family,
    Genus,
    Species,
}

impl Rank {
    /// All ranks in hierarchy order.
    pub const ALL: [Rank; 7] = [
        Rank::Kingdom,
        Rank::Phylum,
        Rank::Class,
        Rank::Order,
        Rank::Family,
        Rank::Genus,
        Rank::Species,
    ];

    /// Number of ranks in the hierarchy.
    pub const COUNT: usize = 7;

    /// Position in the hierarchy, kingdom = 0 .. species = 6.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(idx: usize) -> Option<Rank> {
        Rank::ALL.get(idx).copied()
    }

    /// Lowercase rank name as used in file headers and CLI flags.
    pub fn name(self) -> &'static str {
        match self {
            Rank::Kingdom => "kingdom",
            Rank::Phylum => "phylum",
            Rank::Class => "class",
            Rank::Order => "order",
            Rank::Family => "family",
            Rank::Genus => "genus",
            Rank::Species => "species",
        }
    }

    pub fn from_name(name: &str) -> Option<Rank> {
        Rank::ALL.iter().copied().find(|r| r.name() == name)
    }
}

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Opaque stable taxon identifier, assigned deterministically after merge.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaxonId(pub String);

impl TaxonId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TaxonId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A contiguous run of rank labels starting at kingdom.
///
/// Prefix closure is enforced at construction: a label at rank `r` implies
/// labels at every rank above `r`. Lower ranks may be absent.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RankLabels(Vec<String>);

impl RankLabels {
    /// Builds from labels ordered kingdom downward. Fails on an empty list,
    /// an empty label, or a label containing a reserved separator character
    /// (tab or semicolon) after normalization.
    pub fn new(labels: Vec<String>) -> Result<RankLabels, TaxonomyError> {
        if labels.is_empty() || labels.len() > Rank::COUNT {
            return Err(TaxonomyError::InvalidLabelRun(labels.len()));
        }
        let labels: Vec<String> = labels.iter().map(|l| normalize_label(l)).collect();
        for label in &labels {
            if label.is_empty() {
                return Err(TaxonomyError::EmptyLabel);
            }
            if label.contains(['\t', ';', ',']) {
                return Err(TaxonomyError::SeparatorInLabel(label.clone()));
            }
        }
        Ok(RankLabels(labels))
    }

    /// Deepest labeled rank.
    pub fn depth(&self) -> Rank {
        Rank::from_index(self.0.len() - 1).expect("length bounded by construction")
    }

    pub fn get(&self, rank: Rank) -> Option<&str> {
        self.0.get(rank.index()).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.0
    }

    pub fn genus(&self) -> Option<&str> {
        self.get(Rank::Genus)
    }

    pub fn species(&self) -> Option<&str> {
        self.get(Rank::Species)
    }

    /// `"<genus> <species>"` when both ranks are present.
    pub fn binomial(&self) -> Option<String> {
        match (self.genus(), self.species()) {
            (Some(g), Some(s)) => Some(format!("{g} {s}")),
            _ => None,
        }
    }

    /// Labels above `rank`, i.e. the strict prefix ending just before it.
    pub fn prefix_above(&self, rank: Rank) -> &[String] {
        &self.0[..rank.index().min(self.0.len())]
    }

    /// True when `self` is a proper prefix of `other`.
    pub fn is_proper_prefix_of(&self, other: &RankLabels) -> bool {
        self.0.len() < other.0.len() && other.0[..self.0.len()] == self.0[..]
    }
}

/// Trim surrounding whitespace and collapse internal runs to single spaces.
/// Case is preserved: taxonomic labels are case-significant.
pub fn normalize_label(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One canonicalized taxonomy entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxon {
    pub taxon_id: TaxonId,
    pub labels: RankLabels,
    /// Ordered vernacular names; the first entry is the default.
    pub common_names: Vec<String>,
    /// Provenance tag of the winning (highest-priority) source.
    pub source: String,
}

impl Taxon {
    /// Space-joined labels from kingdom to the deepest present rank.
    pub fn taxonomic_name(&self) -> String {
        self.labels.labels().join(" ")
    }
}

/// One raw row from a source dump, already normalized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpRecord {
    pub labels: RankLabels,
    pub common_names: Vec<String>,
    /// Per-record provenance override; `None` means the dump's own tag.
    /// Set when a merged store is re-expressed as a dump so that a second
    /// merge reproduces the original provenance.
    pub source: Option<String>,
}

/// A prioritized batch of raw records from one source.
#[derive(Debug, Clone)]
pub struct SourceDump {
    /// Provenance tag, usually the file stem.
    pub tag: String,
    /// Lower number = more authoritative.
    pub priority: u32,
    pub records: Vec<DumpRecord>,
}

/// A non-fatal problem encountered while parsing or merging.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// 1-based input line, or 0 when the problem is not tied to a line.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            f.write_str(&self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("unknown dump format id {0:?}")]
    UnknownFormat(String),
    #[error("header mismatch: expected {expected:?}, found {found:?}")]
    HeaderMismatch { expected: String, found: String },
    #[error("file is empty; a header line is required")]
    MissingHeader,
    #[error("label run of length {0} is outside 1..=7")]
    InvalidLabelRun(usize),
    #[error("empty label after normalization")]
    EmptyLabel,
    #[error("label {0:?} contains a reserved separator character")]
    SeparatorInLabel(String),
    #[error("merge requires at least one dump")]
    NoDumps,
    #[error("duplicate priority {0} across dumps")]
    DuplicatePriority(u32),
    #[error("malformed store file at line {line}: {message}")]
    MalformedStore { line: usize, message: String },
    #[error("unknown taxon id {0}")]
    UnknownTaxon(String),
}

/// Canonical taxonomy with name indexes. Immutable after [`merge`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaxonomyStore {
    taxa: Vec<Taxon>,
    by_id: BTreeMap<TaxonId, usize>,
    /// Binomial ("Genus species") -> taxon ids. Entries with more than one
    /// id are exactly the species-level homonyms.
    sci_index: BTreeMap<String, Vec<TaxonId>>,
    /// Genus label -> taxon ids of every taxon bearing it.
    genus_index: BTreeMap<String, Vec<TaxonId>>,
    common_index: BTreeMap<String, Vec<TaxonId>>,
}

impl TaxonomyStore {
    /// Builds a store from finished taxa. Ids are assigned here: taxa are
    /// sorted by their full label tuple and numbered in that order, so the
    /// result is independent of insertion order.
    pub(crate) fn from_taxa(mut drafts: Vec<(RankLabels, Vec<String>, String)>) -> TaxonomyStore {
        drafts.sort_by(|a, b| a.0.cmp(&b.0));
        let taxa: Vec<Taxon> = drafts
            .into_iter()
            .enumerate()
            .map(|(i, (labels, common_names, source))| Taxon {
                taxon_id: TaxonId(format!("t{i:06}")),
                labels,
                common_names,
                source,
            })
            .collect();
        TaxonomyStore::index(taxa)
    }

    pub(crate) fn index(taxa: Vec<Taxon>) -> TaxonomyStore {
        let mut store = TaxonomyStore {
            taxa,
            ..TaxonomyStore::default()
        };
        for (i, taxon) in store.taxa.iter().enumerate() {
            store.by_id.insert(taxon.taxon_id.clone(), i);
            if let Some(binomial) = taxon.labels.binomial() {
                store
                    .sci_index
                    .entry(binomial)
                    .or_default()
                    .push(taxon.taxon_id.clone());
            }
            if let Some(genus) = taxon.labels.genus() {
                store
                    .genus_index
                    .entry(genus.to_string())
                    .or_default()
                    .push(taxon.taxon_id.clone());
            }
            for name in &taxon.common_names {
                store
                    .common_index
                    .entry(name.clone())
                    .or_default()
                    .push(taxon.taxon_id.clone());
            }
        }
        store
    }

    pub fn taxa(&self) -> &[Taxon] {
        &self.taxa
    }

    pub fn len(&self) -> usize {
        self.taxa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taxa.is_empty()
    }

    pub fn get(&self, id: &TaxonId) -> Option<&Taxon> {
        self.by_id.get(id).map(|&i| &self.taxa[i])
    }

    /// Looks up a scientific name: a full binomial, or a bare genus label.
    pub fn lookup_scientific(&self, name: &str) -> &[TaxonId] {
        let name = normalize_label(name);
        self.sci_index
            .get(&name)
            .or_else(|| self.genus_index.get(&name))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn lookup_common(&self, name: &str) -> &[TaxonId] {
        self.common_index
            .get(&normalize_label(name))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub(crate) fn sci_index(&self) -> &BTreeMap<String, Vec<TaxonId>> {
        &self.sci_index
    }

    pub(crate) fn genus_index(&self) -> &BTreeMap<String, Vec<TaxonId>> {
        &self.genus_index
    }

    /// Fraction of taxa labeled at each rank, or `None` for an empty store
    /// (the fractions are undefined, not zero).
    pub fn labeling_coverage(&self) -> Option<[f64; Rank::COUNT]> {
        if self.taxa.is_empty() {
            return None;
        }
        let mut counts = [0usize; Rank::COUNT];
        for taxon in &self.taxa {
            for i in 0..=taxon.labels.depth().index() {
                counts[i] += 1;
            }
        }
        let total = self.taxa.len() as f64;
        Some(counts.map(|c| c as f64 / total))
    }

    /// Re-expresses the store as a single dump, preserving per-taxon
    /// provenance so that a second merge reproduces this store exactly.
    pub fn as_dump(&self, tag: &str, priority: u32) -> SourceDump {
        SourceDump {
            tag: tag.to_string(),
            priority,
            records: self
                .taxa
                .iter()
                .map(|t| DumpRecord {
                    labels: t.labels.clone(),
                    common_names: t.common_names.clone(),
                    source: Some(t.source.clone()),
                })
                .collect(),
        }
    }
}
