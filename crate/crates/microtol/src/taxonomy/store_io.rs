//! Canonical store serialization: one tab-separated row per taxon.
//!
//! Row layout: taxon_id, the seven rank cells (empty only as a suffix),
//! semicolon-joined common names, source tag. Comment lines starting with
//! `#` carry the artifact header (tool version, config hash).

use std::path::Path;

use super::{Rank, RankLabels, Taxon, TaxonId, TaxonomyError, TaxonomyStore};

const STORE_MAGIC: &str = "# microtol store v1";

impl TaxonomyStore {
    /// Serializes the store. `config_hash` is embedded in the header so the
    /// artifact records what produced it.
    pub fn to_tsv(&self, config_hash: &str) -> String {
        let mut out = String::new();
        out.push_str(STORE_MAGIC);
        out.push('\n');
        out.push_str(&format!("# tool {}\n", crate::TOOL_VERSION));
        out.push_str(&format!("# config {config_hash}\n"));
        for taxon in self.taxa() {
            out.push_str(taxon.taxon_id.as_str());
            for rank in Rank::ALL {
                out.push('\t');
                out.push_str(taxon.labels.get(rank).unwrap_or(""));
            }
            out.push('\t');
            out.push_str(&taxon.common_names.join(";"));
            out.push('\t');
            out.push_str(&taxon.source);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<(), TaxonomyError> {
        std::fs::write(path, self.to_tsv(config_hash)).map_err(|source| TaxonomyError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<TaxonomyStore, TaxonomyError> {
        let text = std::fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        parse_store_str(&text)
    }
}

/// Parses store text. Exposed for fuzzing.
pub fn parse_store_str(text: &str) -> Result<TaxonomyStore, TaxonomyError> {
    let mut taxa: Vec<Taxon> = Vec::new();
    let mut seen_magic = false;
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if line == STORE_MAGIC {
                seen_magic = true;
            }
            continue;
        }
        if !seen_magic {
            return Err(TaxonomyError::MalformedStore {
                line: line_no,
                message: format!("missing {STORE_MAGIC:?} header"),
            });
        }
        taxa.push(parse_store_row(line, line_no)?);
    }
    if !seen_magic {
        return Err(TaxonomyError::MalformedStore {
            line: 0,
            message: format!("missing {STORE_MAGIC:?} header"),
        });
    }

    // Ids must be unique for the indexes to resolve.
    let mut ids: Vec<&str> = taxa.iter().map(|t| t.taxon_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(dup) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(TaxonomyError::MalformedStore {
            line: 0,
            message: format!("duplicate taxon id {:?}", dup[0]),
        });
    }
    Ok(TaxonomyStore::index(taxa))
}

fn parse_store_row(line: &str, line_no: usize) -> Result<Taxon, TaxonomyError> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 10 {
        return Err(TaxonomyError::MalformedStore {
            line: line_no,
            message: format!("expected 10 tab-separated fields, found {}", fields.len()),
        });
    }
    let id = fields[0].trim();
    if id.is_empty() {
        return Err(TaxonomyError::MalformedStore {
            line: line_no,
            message: "empty taxon id".to_string(),
        });
    }

    let rank_cells = &fields[1..8];
    let run_len = rank_cells.iter().take_while(|c| !c.trim().is_empty()).count();
    if rank_cells[run_len..].iter().any(|c| !c.trim().is_empty()) {
        return Err(TaxonomyError::MalformedStore {
            line: line_no,
            message: "rank labels are not a contiguous prefix".to_string(),
        });
    }
    let labels = RankLabels::new(rank_cells[..run_len].iter().map(|c| c.to_string()).collect())
        .map_err(|e| TaxonomyError::MalformedStore {
            line: line_no,
            message: e.to_string(),
        })?;

    let common_names: Vec<String> = fields[8]
        .split(';')
        .map(super::normalize_label)
        .filter(|n| !n.is_empty())
        .collect();

    Ok(Taxon {
        taxon_id: TaxonId(id.to_string()),
        labels,
        common_names,
        source: fields[9].trim().to_string(),
    })
}
