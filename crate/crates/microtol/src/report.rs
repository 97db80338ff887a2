//! Report serialization.
//!
//! Two artifacts per protocol run: a key-value report and a flat
//! tab-separated table. The key-value grammar is line-based:
//!
//! ```text
//! # microtol report v1        <- required magic comment
//! key = value                 <- keys are [a-z0-9_.-]+, unique
//! # wallclock: ...            <- optional footer, ignored on comparison
//! ```

use std::path::Path;

use thiserror::Error;

use crate::eval::{EvalReport, Protocol, Table};

const REPORT_MAGIC: &str = "# microtol report v1";
const TABLE_MAGIC: &str = "# microtol table v1";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("malformed report at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// A parsed key-value report: ordered pairs with unique keys.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReportDoc {
    pub entries: Vec<(String, String)>,
}

impl ReportDoc {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || "._-".contains(c))
}

/// Renders the key-value artifact, ending with a wall-clock footer. The
/// footer is the only line that varies across identical runs.
pub fn render_report(report: &EvalReport, wallclock: &str) -> String {
    let mut out = String::new();
    out.push_str(REPORT_MAGIC);
    out.push('\n');
    let mut push = |k: &str, v: &str| {
        debug_assert!(valid_key(k), "bad report key {k}");
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(v);
        out.push('\n');
    };
    push("task", &report.task);
    push("protocol", report.protocol.id());
    if let Some(k) = report.protocol.k() {
        push("k", &k.to_string());
    }
    push("tool", crate::TOOL_VERSION);
    push("config", &report.config_hash);
    push("seeds", &report.per_seed.len().to_string());
    for (i, acc) in report.per_seed.iter().enumerate() {
        push(&format!("seed.{i}.accuracy"), &format!("{acc:.6}"));
    }
    push("mean", &format!("{:.6}", report.mean));
    if let Some(std) = report.std {
        push("std", &format!("{std:.6}"));
    }
    for (k, v) in &report.extras {
        push(&format!("extra.{k}"), v);
    }
    out.push_str(&format!("# wallclock: {wallclock}\n"));
    out
}

/// Parses the key-value grammar. Comments and blank lines are skipped;
/// the magic header is required; duplicate or malformed keys fail.
pub fn parse_report_str(text: &str) -> Result<ReportDoc, ReportError> {
    let mut doc = ReportDoc::default();
    let mut seen_magic = false;
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if line == REPORT_MAGIC {
                seen_magic = true;
            }
            continue;
        }
        if !seen_magic {
            return Err(ReportError::Malformed {
                line: line_no,
                message: format!("missing {REPORT_MAGIC:?} header"),
            });
        }
        let (key, value) = line.split_once(" = ").ok_or_else(|| ReportError::Malformed {
            line: line_no,
            message: "expected `key = value`".to_string(),
        })?;
        if !valid_key(key) {
            return Err(ReportError::Malformed {
                line: line_no,
                message: format!("invalid key {key:?}"),
            });
        }
        if doc.get(key).is_some() {
            return Err(ReportError::Malformed {
                line: line_no,
                message: format!("duplicate key {key:?}"),
            });
        }
        doc.entries.push((key.to_string(), value.to_string()));
    }
    if !seen_magic {
        return Err(ReportError::Malformed {
            line: 0,
            message: format!("missing {REPORT_MAGIC:?} header"),
        });
    }
    Ok(doc)
}

/// Renders the flat table artifact.
pub fn render_table(table: &Table, config_hash: &str) -> String {
    let mut out = String::new();
    out.push_str(TABLE_MAGIC);
    out.push('\n');
    out.push_str(&format!("# tool {}\n", crate::TOOL_VERSION));
    out.push_str(&format!("# config {config_hash}\n"));
    out.push_str(&table.header.join("\t"));
    out.push('\n');
    for row in &table.rows {
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

/// Strips footer lines (wall-clock) for byte comparison of otherwise
/// deterministic artifacts.
pub fn strip_wallclock(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with("# wallclock:"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn save_report(report: &EvalReport, path: &Path, wallclock: &str) -> Result<(), ReportError> {
    std::fs::write(path, render_report(report, wallclock)).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn save_table(table: &Table, config_hash: &str, path: &Path) -> Result<(), ReportError> {
    std::fs::write(path, render_table(table, config_hash)).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reconstructs the core summary from a parsed document, for round-trip
/// checks and downstream tooling.
pub fn report_from_doc(doc: &ReportDoc) -> Result<EvalReport, ReportError> {
    let get = |key: &str| {
        doc.get(key).ok_or_else(|| ReportError::Malformed {
            line: 0,
            message: format!("missing key {key:?}"),
        })
    };
    let protocol = match get("protocol")? {
        "zeroshot" => Protocol::Zeroshot,
        "fewshot" => {
            let k = get("k")?.parse().map_err(|_| ReportError::Malformed {
                line: 0,
                message: "bad k".to_string(),
            })?;
            Protocol::Fewshot(k)
        }
        "gzsl" => Protocol::Gzsl,
        "texttype-matrix" => Protocol::TexttypeMatrix,
        "intrinsic" => Protocol::Intrinsic,
        other => {
            return Err(ReportError::Malformed {
                line: 0,
                message: format!("unknown protocol {other:?}"),
            })
        }
    };
    let seeds: usize = get("seeds")?.parse().map_err(|_| ReportError::Malformed {
        line: 0,
        message: "bad seeds".to_string(),
    })?;
    let mut per_seed = Vec::with_capacity(seeds);
    for i in 0..seeds {
        let v = get(&format!("seed.{i}.accuracy"))?;
        per_seed.push(v.parse().map_err(|_| ReportError::Malformed {
            line: 0,
            message: format!("bad accuracy {v:?}"),
        })?);
    }
    if per_seed.is_empty() {
        return Err(ReportError::Malformed {
            line: 0,
            message: "report carries no per-seed accuracies".to_string(),
        });
    }
    let mut report = EvalReport::from_accuracies(get("task")?, protocol, per_seed, get("config")?);
    for (k, v) in &doc.entries {
        if let Some(name) = k.strip_prefix("extra.") {
            report.extras.insert(name.to_string(), v.clone());
        }
    }
    Ok(report)
}
