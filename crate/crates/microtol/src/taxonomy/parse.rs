//! Parsers for the three tabular dump layouts.
//!
//! All layouts are UTF-8, comma-separated, one header line. Malformed rows
//! go to a diagnostics list instead of being dropped silently.

use std::path::Path;

use super::{normalize_label, Diagnostic, DumpRecord, RankLabels, SourceDump, TaxonomyError};

/// The three documented dump layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpFormat {
    /// Seven rank columns plus a common-name column. The common-name cell
    /// may carry several names joined by semicolons.
    RanksCommon,
    /// Seven rank columns, no common name.
    Ranks,
    /// Kingdom through family only, mirroring family-granularity sources.
    FamilyTruncated,
}

impl DumpFormat {
    pub const ALL: [DumpFormat; 3] = [
        DumpFormat::RanksCommon,
        DumpFormat::Ranks,
        DumpFormat::FamilyTruncated,
    ];

    pub fn id(self) -> &'static str {
        match self {
            DumpFormat::RanksCommon => "ranks-common",
            DumpFormat::Ranks => "ranks",
            DumpFormat::FamilyTruncated => "family",
        }
    }

    pub fn from_id(id: &str) -> Result<DumpFormat, TaxonomyError> {
        DumpFormat::ALL
            .into_iter()
            .find(|f| f.id() == id)
            .ok_or_else(|| TaxonomyError::UnknownFormat(id.to_string()))
    }

    /// Expected header line, byte-exact.
    pub fn header(self) -> &'static str {
        match self {
            DumpFormat::RanksCommon => {
                "kingdom,phylum,class,order,family,genus,species,common_name"
            }
            DumpFormat::Ranks => "kingdom,phylum,class,order,family,genus,species",
            DumpFormat::FamilyTruncated => "kingdom,phylum,class,order,family",
        }
    }

    /// Picks the format whose header matches the given first line.
    pub fn detect(header: &str) -> Option<DumpFormat> {
        DumpFormat::ALL.into_iter().find(|f| f.header() == header.trim_end_matches('\r'))
    }

    /// Number of rank columns in this layout.
    fn rank_columns(self) -> usize {
        match self {
            DumpFormat::RanksCommon | DumpFormat::Ranks => 7,
            DumpFormat::FamilyTruncated => 5,
        }
    }

    fn total_columns(self) -> usize {
        match self {
            DumpFormat::RanksCommon => 8,
            DumpFormat::Ranks => 7,
            DumpFormat::FamilyTruncated => 5,
        }
    }
}

/// A parsed dump plus the rows that could not be used.
#[derive(Debug, Clone)]
pub struct ParsedDump {
    pub dump: SourceDump,
    pub diagnostics: Vec<Diagnostic>,
}

/// Reads one dump file. `tag` becomes the provenance tag of its records.
pub fn parse_dump(
    path: &Path,
    format: DumpFormat,
    tag: &str,
    priority: u32,
) -> Result<ParsedDump, TaxonomyError> {
    let text = std::fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dump_str(&text, format, tag, priority)
}

/// Parses dump text. Split out from [`parse_dump`] for tests and fuzzing.
pub fn parse_dump_str(
    text: &str,
    format: DumpFormat,
    tag: &str,
    priority: u32,
) -> Result<ParsedDump, TaxonomyError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(TaxonomyError::MissingHeader)?;
    let header = header.trim_end_matches('\r');
    if header != format.header() {
        return Err(TaxonomyError::HeaderMismatch {
            expected: format.header().to_string(),
            found: header.to_string(),
        });
    }

    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    for (idx, raw_line) in lines.enumerate() {
        let line_no = idx + 2; // 1-based, after the header
        let line = raw_line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        match parse_row(line, format) {
            Ok(record) => records.push(record),
            Err(message) => diagnostics.push(Diagnostic {
                line: line_no,
                message,
            }),
        }
    }

    Ok(ParsedDump {
        dump: SourceDump {
            tag: tag.to_string(),
            priority,
            records,
        },
        diagnostics,
    })
}

fn parse_row(line: &str, format: DumpFormat) -> Result<DumpRecord, String> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != format.total_columns() {
        return Err(format!(
            "expected {} fields, found {}",
            format.total_columns(),
            fields.len()
        ));
    }

    let rank_fields = &fields[..format.rank_columns()];
    let normalized: Vec<String> = rank_fields.iter().map(|f| normalize_label(f)).collect();

    // Labels must form a contiguous run from kingdom down. A gap (an empty
    // cell with a filled cell below it) cannot be repaired here: backfill
    // comes from other sources, not from guessing.
    let run_len = normalized.iter().take_while(|l| !l.is_empty()).count();
    if run_len == 0 {
        return Err("no rank labels".to_string());
    }
    if let Some(gap) = normalized[run_len..].iter().position(|l| !l.is_empty()) {
        return Err(format!(
            "missing intermediate rank: {} is empty but {} is labeled",
            super::Rank::from_index(run_len).expect("run_len < 7").name(),
            super::Rank::from_index(run_len + gap).expect("bounded").name(),
        ));
    }

    let labels =
        RankLabels::new(normalized[..run_len].to_vec()).map_err(|e| e.to_string())?;

    let common_names = if format == DumpFormat::RanksCommon {
        parse_common_names(fields[7])?
    } else {
        Vec::new()
    };

    Ok(DumpRecord {
        labels,
        common_names,
        source: None,
    })
}

/// Splits a semicolon-joined common-name cell into normalized names.
fn parse_common_names(cell: &str) -> Result<Vec<String>, String> {
    let mut names = Vec::new();
    for part in cell.split(';') {
        let name = normalize_label(part);
        if name.is_empty() {
            continue;
        }
        if name.contains(['\t', ',']) {
            return Err(format!("common name {name:?} contains a separator"));
        }
        if !names.contains(&name) {
            names.push(name);
        }
    }
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::Rank;

    const MAGPIE_ROW: &str =
        "Animalia,Chordata,Aves,Passeriformes,Corvidae,Pica,hudsonia,black-billed magpie";

    #[test]
    fn full_row_yields_seven_ranks_and_one_common_name() {
        let text = format!("{}\n{}\n", DumpFormat::RanksCommon.header(), MAGPIE_ROW);
        let parsed = parse_dump_str(&text, DumpFormat::RanksCommon, "a", 0).unwrap();
        assert!(parsed.diagnostics.is_empty());
        assert_eq!(parsed.dump.records.len(), 1);
        let rec = &parsed.dump.records[0];
        assert_eq!(rec.labels.depth(), Rank::Species);
        assert_eq!(rec.labels.get(Rank::Class), Some("Aves"));
        assert_eq!(rec.common_names, vec!["black-billed magpie".to_string()]);
    }

    #[test]
    fn empty_file_with_header_yields_no_records() {
        let text = format!("{}\n", DumpFormat::Ranks.header());
        let parsed = parse_dump_str(&text, DumpFormat::Ranks, "a", 0).unwrap();
        assert!(parsed.dump.records.is_empty());
        assert!(parsed.diagnostics.is_empty());
    }

    #[test]
    fn blank_species_truncates_to_genus() {
        let text = format!(
            "{}\nAnimalia,Chordata,Aves,Passeriformes,Corvidae,Pica,\n",
            DumpFormat::Ranks.header()
        );
        let parsed = parse_dump_str(&text, DumpFormat::Ranks, "a", 0).unwrap();
        assert_eq!(parsed.dump.records.len(), 1);
        assert_eq!(parsed.dump.records[0].labels.depth(), Rank::Genus);
    }

    #[test]
    fn intermediate_gap_goes_to_diagnostics() {
        // Genus missing but species present.
        let text = format!(
            "{}\nAnimalia,Chordata,Aves,Passeriformes,Corvidae,,hudsonia\n",
            DumpFormat::Ranks.header()
        );
        let parsed = parse_dump_str(&text, DumpFormat::Ranks, "a", 0).unwrap();
        assert!(parsed.dump.records.is_empty());
        assert_eq!(parsed.diagnostics.len(), 1);
        assert!(parsed.diagnostics[0].message.contains("genus"));
    }

    #[test]
    fn header_mismatch_is_an_error() {
        let err = parse_dump_str("genus,species\n", DumpFormat::Ranks, "a", 0).unwrap_err();
        assert!(matches!(err, TaxonomyError::HeaderMismatch { .. }));
    }

    #[test]
    fn detect_maps_headers_to_formats() {
        for f in DumpFormat::ALL {
            assert_eq!(DumpFormat::detect(f.header()), Some(f));
        }
        assert_eq!(DumpFormat::detect("id,name"), None);
    }

    #[test]
    fn semicolon_cell_carries_multiple_common_names() {
        let text = format!(
            "{}\nAnimalia,Chordata,Aves,Passeriformes,Corvidae,Pica,hudsonia,black-billed magpie;American magpie\n",
            DumpFormat::RanksCommon.header()
        );
        let parsed = parse_dump_str(&text, DumpFormat::RanksCommon, "a", 0).unwrap();
        assert_eq!(
            parsed.dump.records[0].common_names,
            vec!["black-billed magpie".to_string(), "American magpie".to_string()]
        );
    }

    #[test]
    fn wrong_field_count_goes_to_diagnostics() {
        let text = format!("{}\nAnimalia,Chordata\n", DumpFormat::Ranks.header());
        let parsed = parse_dump_str(&text, DumpFormat::Ranks, "a", 0).unwrap();
        assert!(parsed.dump.records.is_empty());
        assert_eq!(parsed.diagnostics.len(), 1);
    }
}
