//! Priority merge of prioritized source dumps into one canonical store.
//!
//! Records are matched across sources in four stages, from strongest to
//! weakest evidence of identity:
//!
//! 1. exact full-tuple match;
//! 2. binomial match with kingdom agreement (cross-source only; conflicting
//!    intermediate ranks are resolved in favor of the higher-priority
//!    source, which is what turns `class=Birds` into `class=Aves`);
//! 3. a deeper record extends a stored prefix when it is the only candidate
//!    extension (rank backfill);
//! 4. a shallower record folds into the single stored taxon it prefixes.
//!
//! Anything that matches nothing becomes a new taxon. Within one dump the
//! full label tuple is the identity, so same-source records that share a
//! binomial under different higher ranks stay distinct (homonyms).

use std::collections::BTreeMap;

use super::{
    Diagnostic, Rank, RankLabels, SourceDump, TaxonId, TaxonomyError, TaxonomyStore,
};

/// Result of [`merge`]: the canonical store plus non-fatal findings.
#[derive(Debug, Clone)]
pub struct MergeOutcome {
    pub store: TaxonomyStore,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone)]
struct DraftTaxon {
    labels: RankLabels,
    common_names: Vec<String>,
    source: String,
}

impl DraftTaxon {
    fn append_names(&mut self, names: &[String]) {
        for name in names {
            if !self.common_names.contains(name) {
                self.common_names.push(name.clone());
            }
        }
    }
}

/// Merges dumps by descending authority (ascending priority number).
///
/// The outcome depends only on the priorities, never on the order of the
/// `dumps` slice.
pub fn merge(dumps: &[SourceDump]) -> Result<MergeOutcome, TaxonomyError> {
    if dumps.is_empty() {
        return Err(TaxonomyError::NoDumps);
    }
    let mut ordered: Vec<&SourceDump> = dumps.iter().collect();
    ordered.sort_by_key(|d| d.priority);
    for pair in ordered.windows(2) {
        if pair[0].priority == pair[1].priority {
            return Err(TaxonomyError::DuplicatePriority(pair[0].priority));
        }
    }

    let mut diagnostics = Vec::new();
    let mut taxa: Vec<DraftTaxon> = Vec::new();

    for dump in ordered {
        let batch = dedupe_within_dump(dump, &mut diagnostics);
        fold_batch(&mut taxa, batch);
    }

    let store = TaxonomyStore::from_taxa(
        taxa.into_iter()
            .map(|d| (d.labels, d.common_names, d.source))
            .collect(),
    );
    Ok(MergeOutcome { store, diagnostics })
}

/// Collapses same-tuple records inside one dump. On a common-name conflict
/// the first occurrence wins and a diagnostic is recorded.
fn dedupe_within_dump(dump: &SourceDump, diagnostics: &mut Vec<Diagnostic>) -> Vec<DraftTaxon> {
    let mut by_tuple: BTreeMap<Vec<String>, DraftTaxon> = BTreeMap::new();
    for record in &dump.records {
        let source = record.source.clone().unwrap_or_else(|| dump.tag.clone());
        let key = record.labels.labels().to_vec();
        match by_tuple.get_mut(&key) {
            None => {
                by_tuple.insert(
                    key,
                    DraftTaxon {
                        labels: record.labels.clone(),
                        common_names: record.common_names.clone(),
                        source,
                    },
                );
            }
            Some(existing) => {
                if existing.common_names.is_empty() {
                    existing.common_names = record.common_names.clone();
                } else if !record.common_names.is_empty()
                    && record.common_names != existing.common_names
                {
                    diagnostics.push(Diagnostic {
                        line: 0,
                        message: format!(
                            "dump {:?}: duplicate hierarchy {:?} with conflicting common names; keeping the first occurrence",
                            dump.tag,
                            record.labels.labels().join(" "),
                        ),
                    });
                }
            }
        }
    }
    by_tuple.into_values().collect()
}

/// Folds one dump's deduplicated records into the working taxa list.
/// All matching is evaluated against the state at batch start, so records
/// inside one dump never merge with each other here.
fn fold_batch(taxa: &mut Vec<DraftTaxon>, batch: Vec<DraftTaxon>) {
    let snapshot: Vec<RankLabels> = taxa.iter().map(|t| t.labels.clone()).collect();
    let tuple_index: BTreeMap<Vec<String>, usize> = snapshot
        .iter()
        .enumerate()
        .map(|(i, l)| (l.labels().to_vec(), i))
        .collect();
    let mut binomial_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, labels) in snapshot.iter().enumerate() {
        if let Some(b) = labels.binomial() {
            binomial_index.entry(b).or_default().push(i);
        }
    }

    // Number of extension candidates per stored taxon: deeper stored taxa
    // it prefixes, plus incoming records that would extend it. A stored
    // prefix is only extended when that count is exactly one.
    let mut extension_pressure: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, shallow) in snapshot.iter().enumerate() {
        for deeper in &snapshot {
            if shallow.is_proper_prefix_of(deeper) {
                *extension_pressure.entry(i).or_default() += 1;
            }
        }
    }

    #[derive(Debug)]
    enum Action {
        MergeInto(usize),
        Extend(usize),
        Insert,
    }

    let mut pending: Vec<(DraftTaxon, Action)> = Vec::new();
    for record in batch {
        let action = if let Some(&i) = tuple_index.get(&record.labels.labels().to_vec()) {
            Action::MergeInto(i)
        } else if let Some(i) = binomial_target(&record, &snapshot, &binomial_index) {
            Action::MergeInto(i)
        } else {
            let deepest_prefix = snapshot
                .iter()
                .enumerate()
                .filter(|(_, s)| s.is_proper_prefix_of(&record.labels))
                .max_by_key(|(_, s)| s.labels().len())
                .map(|(i, _)| i);
            if let Some(i) = deepest_prefix {
                *extension_pressure.entry(i).or_default() += 1;
                Action::Extend(i)
            } else {
                let extended: Vec<usize> = snapshot
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| record.labels.is_proper_prefix_of(s))
                    .map(|(i, _)| i)
                    .collect();
                match extended.as_slice() {
                    [single] => Action::MergeInto(*single),
                    _ => Action::Insert,
                }
            }
        };
        pending.push((record, action));
    }

    for (record, action) in pending {
        match action {
            Action::MergeInto(i) => {
                taxa[i].append_names(&record.common_names);
            }
            Action::Extend(i) => {
                if extension_pressure.get(&i) == Some(&1) {
                    taxa[i].labels = record.labels;
                    taxa[i].append_names(&record.common_names);
                } else {
                    taxa.push(record);
                }
            }
            Action::Insert => taxa.push(record),
        }
    }
}

/// Cross-source identity by scientific name: same binomial and same
/// kingdom. A kingdom mismatch marks a homonym, which stays distinct.
/// When several stored taxa qualify (already-registered homonyms), the one
/// agreeing with the record on the most ranks wins; remaining ties go to
/// the lexicographically smallest tuple, which is the lowest index.
fn binomial_target(
    record: &DraftTaxon,
    snapshot: &[RankLabels],
    binomial_index: &BTreeMap<String, Vec<usize>>,
) -> Option<usize> {
    let binomial = record.labels.binomial()?;
    let kingdom = record.labels.get(Rank::Kingdom)?;
    let candidates = binomial_index.get(&binomial)?;
    candidates
        .iter()
        .copied()
        .filter(|&i| snapshot[i].get(Rank::Kingdom) == Some(kingdom))
        .max_by_key(|&i| {
            let agreement = Rank::ALL
                .iter()
                .filter(|&&r| snapshot[i].get(r) == record.labels.get(r))
                .count();
            (agreement, std::cmp::Reverse(i))
        })
}

/// One ambiguous scientific-name key and the taxa that share it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HomonymEntry {
    /// A full binomial, or a bare genus label for genus-level homonyms.
    pub name: String,
    pub taxon_ids: Vec<TaxonId>,
}

/// Reports every scientific-name label shared by taxa that differ at some
/// higher rank: full binomials borne by several taxa, and genus labels
/// reused across distinct higher-rank lineages. Sorted by name.
pub fn detect_homonyms(store: &TaxonomyStore) -> Vec<HomonymEntry> {
    let mut entries: BTreeMap<String, Vec<TaxonId>> = BTreeMap::new();

    for (binomial, ids) in store.sci_index() {
        if ids.len() >= 2 {
            entries.insert(binomial.clone(), ids.clone());
        }
    }

    for (genus, ids) in store.genus_index() {
        if ids.len() < 2 {
            continue;
        }
        let mut lineages: Vec<&[String]> = ids
            .iter()
            .filter_map(|id| store.get(id))
            .map(|t| t.labels.prefix_above(Rank::Genus))
            .collect();
        lineages.sort();
        lineages.dedup();
        if lineages.len() >= 2 {
            entries.entry(genus.clone()).or_insert_with(|| ids.clone());
        }
    }

    entries
        .into_iter()
        .map(|(name, taxon_ids)| HomonymEntry { name, taxon_ids })
        .collect()
}
