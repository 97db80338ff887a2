//! Manifest persistence and the rare-species holdout split.
//!
//! Manifest rows are `image_id<TAB>taxon_id<TAB>image_seed<TAB>split`,
//! UTF-8, one record per line, with `#` header comments carrying the tool
//! version and config hash.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SynthError;
use crate::taxonomy::{TaxonId, TaxonomyStore};

const MANIFEST_MAGIC: &str = "# microtol manifest v1";

/// Which protocol a record serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    HoldoutTest,
}

impl Split {
    pub fn id(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::HoldoutTest => "holdout-test",
        }
    }

    pub fn from_id(id: &str) -> Option<Split> {
        match id {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            "holdout-test" => Some(Split::HoldoutTest),
            _ => None,
        }
    }
}

/// One image sample. The payload is regenerable from
/// `(taxon, image_seed)`, so the manifest is the dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub image_id: String,
    pub taxon_id: TaxonId,
    pub image_seed: u64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    pub config_hash: String,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MANIFEST_MAGIC);
        out.push('\n');
        out.push_str(&format!("# tool {}\n", crate::TOOL_VERSION));
        out.push_str(&format!("# config {}\n", self.config_hash));
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                r.image_id,
                r.taxon_id,
                r.image_seed,
                r.split.id()
            ));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), SynthError> {
        std::fs::write(path, self.to_text()).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Manifest, SynthError> {
        let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })?;
        parse_manifest_str(&text)
    }

    pub fn split_records(&self, split: Split) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// Records per taxon within one split, keyed in taxon order.
    pub fn by_taxon(&self, split: Split) -> BTreeMap<&TaxonId, Vec<&ManifestRecord>> {
        let mut map: BTreeMap<&TaxonId, Vec<&ManifestRecord>> = BTreeMap::new();
        for r in self.records.iter().filter(|r| r.split == split) {
            map.entry(&r.taxon_id).or_default().push(r);
        }
        map
    }

    /// Every taxon id must resolve in the accompanying store.
    pub fn validate_against(&self, store: &TaxonomyStore) -> Result<(), SynthError> {
        for r in &self.records {
            if store.get(&r.taxon_id).is_none() {
                return Err(SynthError::UnknownTaxon(r.taxon_id.to_string()));
            }
        }
        Ok(())
    }
}

/// Parses manifest text. Exposed for fuzzing.
pub fn parse_manifest_str(text: &str) -> Result<Manifest, SynthError> {
    let mut records = Vec::new();
    let mut config_hash = String::new();
    let mut seen_magic = false;
    let mut seen_ids = std::collections::BTreeSet::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if line == MANIFEST_MAGIC {
                seen_magic = true;
            } else if let Some(hash) = rest.trim().strip_prefix("config ") {
                config_hash = hash.trim().to_string();
            }
            continue;
        }
        if !seen_magic {
            return Err(SynthError::MalformedManifest {
                line: line_no,
                message: format!("missing {MANIFEST_MAGIC:?} header"),
            });
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(SynthError::MalformedManifest {
                line: line_no,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let image_id = fields[0].to_string();
        if image_id.is_empty() || !seen_ids.insert(image_id.clone()) {
            return Err(SynthError::MalformedManifest {
                line: line_no,
                message: format!("empty or duplicate image id {image_id:?}"),
            });
        }
        let image_seed = fields[2].parse().map_err(|_| SynthError::MalformedManifest {
            line: line_no,
            message: format!("bad image seed {:?}", fields[2]),
        })?;
        let split = Split::from_id(fields[3]).ok_or_else(|| SynthError::MalformedManifest {
            line: line_no,
            message: format!("unknown split {:?}", fields[3]),
        })?;
        records.push(ManifestRecord {
            image_id,
            taxon_id: TaxonId(fields[1].to_string()),
            image_seed,
            split,
        });
    }
    if !seen_magic {
        return Err(SynthError::MalformedManifest {
            line: 0,
            message: format!("missing {MANIFEST_MAGIC:?} header"),
        });
    }
    Ok(Manifest {
        records,
        config_hash,
    })
}

/// The rare-species holdout: species removed from training entirely.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RareSplit {
    pub holdout_species: Vec<TaxonId>,
    pub per_species_test_count: usize,
}

/// Selects `n_species` species with at least `min_images` train images,
/// removes all their records from train, and keeps exactly `k_test` images
/// each in the holdout-test split. Fully seeded.
pub fn make_rare_split(
    manifest: &Manifest,
    n_species: usize,
    min_images: usize,
    k_test: usize,
    seed: u64,
) -> Result<(RareSplit, Manifest), SynthError> {
    if k_test > min_images {
        return Err(SynthError::KTestTooLarge { k_test, min_images });
    }
    let by_taxon = manifest.by_taxon(Split::Train);
    let qualifying: Vec<&TaxonId> = by_taxon
        .iter()
        .filter(|(_, recs)| recs.len() >= min_images)
        .map(|(id, _)| *id)
        .collect();
    if qualifying.len() < n_species {
        return Err(SynthError::InsufficientSpecies {
            needed: n_species,
            available: qualifying.len(),
            min_images,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = qualifying;
    pool.shuffle(&mut rng);
    let mut chosen: Vec<TaxonId> = pool[..n_species].iter().map(|id| (*id).clone()).collect();
    chosen.sort();

    // Per chosen species, pick which train images survive as holdout-test.
    let mut keep: BTreeMap<&TaxonId, Vec<&str>> = BTreeMap::new();
    for id in &chosen {
        let recs = &by_taxon[id];
        let mut indices: Vec<usize> = (0..recs.len()).collect();
        indices.shuffle(&mut rng);
        let mut picked: Vec<&str> = indices[..k_test]
            .iter()
            .map(|&i| recs[i].image_id.as_str())
            .collect();
        picked.sort_unstable();
        keep.insert(id, picked);
    }

    let holdout: std::collections::BTreeSet<&TaxonId> = chosen.iter().collect();
    let mut records = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        if r.split == Split::Train && holdout.contains(&r.taxon_id) {
            if keep[&r.taxon_id].binary_search(&r.image_id.as_str()).is_ok() {
                records.push(ManifestRecord {
                    split: Split::HoldoutTest,
                    ..r.clone()
                });
            }
            // other records of held-out species are dropped entirely
        } else {
            records.push(r.clone());
        }
    }

    Ok((
        RareSplit {
            holdout_species: chosen,
            per_species_test_count: k_test,
        },
        Manifest {
            records,
            config_hash: manifest.config_hash.clone(),
        },
    ))
}
