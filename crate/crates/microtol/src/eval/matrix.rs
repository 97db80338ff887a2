//! Train-type x test-type zero-shot accuracy matrix.

use std::collections::BTreeMap;

use crate::models::{ClipModel, Vocab};
use crate::synth::{ManifestRecord, SynthTree};
use crate::texttypes::TextType;

use super::{zeroshot, ClassCatalog, EvalError, Table};

/// 6 training configurations x 5 test text types.
#[derive(Debug, Clone, PartialEq)]
pub struct TextTypeMatrix {
    /// Row order follows [`TextType::TRAINING`]; columns follow
    /// [`TextType::CONCRETE`].
    pub accuracies: Vec<[f64; 5]>,
}

impl TextTypeMatrix {
    pub fn get(&self, train: TextType, test: TextType) -> Option<f64> {
        let row = TextType::TRAINING.iter().position(|&t| t == train)?;
        let col = TextType::CONCRETE.iter().position(|&t| t == test)?;
        Some(self.accuracies[row][col])
    }

    /// Smallest accuracy across test types for one training row.
    pub fn row_min(&self, train: TextType) -> Option<f64> {
        let row = TextType::TRAINING.iter().position(|&t| t == train)?;
        self.accuracies[row]
            .iter()
            .copied()
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))))
    }

    pub fn to_table(&self) -> Table {
        let mut header = vec!["train\\test".to_string()];
        header.extend(TextType::CONCRETE.iter().map(|t| t.id().to_string()));
        let rows = TextType::TRAINING
            .iter()
            .zip(&self.accuracies)
            .map(|(train, row)| {
                let mut cells = vec![train.id().to_string()];
                cells.extend(row.iter().map(|a| format!("{a:.6}")));
                cells
            })
            .collect();
        Table { header, rows }
    }
}

/// Runs zero-shot for every (training checkpoint, test text type) pair on
/// the same holdout records. One model per training type is required.
pub fn texttype_matrix(
    models: &BTreeMap<TextType, ClipModel>,
    vocab: &Vocab,
    tree: &SynthTree,
    catalog: &ClassCatalog,
    records: &[&ManifestRecord],
    config_hash: &str,
) -> Result<TextTypeMatrix, EvalError> {
    for train in TextType::TRAINING {
        if !models.contains_key(&train) {
            return Err(EvalError::MissingCheckpoint(train.id().to_string()));
        }
    }
    let mut accuracies = Vec::with_capacity(TextType::TRAINING.len());
    for train in TextType::TRAINING {
        let model = &models[&train];
        let mut row = [0.0f64; 5];
        for (col, test) in TextType::CONCRETE.into_iter().enumerate() {
            let report = zeroshot(model, vocab, tree, catalog, records, test, config_hash)?;
            row[col] = report.mean;
        }
        accuracies.push(row);
    }
    Ok(TextTypeMatrix { accuracies })
}
