//! Label-level vocabulary and tokenizer.
//!
//! Every distinct rank label is one token, including multi-word labels
//! such as species epithets with authorship. Common names contribute their
//! individual words. Tokenization is greedy longest-match over
//! whitespace-separated words, so a multi-word label collapses back into
//! its single token.

use std::collections::BTreeMap;

use crate::taxonomy::{Rank, TaxonomyStore};

use super::ModelError;

const TEMPLATE_WORDS: [&str; 6] = ["a", "photo", "of", "with", "common", "name"];

/// Bijective string <-> id mapping with PAD = 0, BOS = 1, EOS = 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    by_token: BTreeMap<String, usize>,
    tokens: Vec<String>,
    /// Longest vocabulary entry measured in whitespace words.
    max_words: usize,
}

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;

impl Vocab {
    /// Builds the vocabulary for a store: specials, template words, every
    /// distinct rank label, and every common-name word, in sorted order.
    pub fn build(store: &TaxonomyStore) -> Vocab {
        let mut entries = std::collections::BTreeSet::new();
        for word in TEMPLATE_WORDS {
            entries.insert(word.to_string());
        }
        for taxon in store.taxa() {
            for rank in Rank::ALL {
                if let Some(label) = taxon.labels.get(rank) {
                    entries.insert(label.to_string());
                }
            }
            for name in &taxon.common_names {
                for word in name.split_whitespace() {
                    entries.insert(word.to_string());
                }
            }
        }

        let mut tokens = vec!["<pad>".to_string(), "<bos>".to_string(), "<eos>".to_string()];
        tokens.extend(entries);
        let by_token = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        let max_words = tokens
            .iter()
            .map(|t| t.split_whitespace().count().max(1))
            .max()
            .unwrap_or(1);
        Vocab {
            by_token,
            tokens,
            max_words,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.by_token.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Greedy longest-match tokenization over whitespace words. Unknown
    /// words are an error: the vocabulary is closed over the store.
    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>, ModelError> {
        let words: Vec<&str> = text.split_whitespace().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < words.len() {
            let mut matched = None;
            let longest = self.max_words.min(words.len() - i);
            for n in (1..=longest).rev() {
                let candidate = words[i..i + n].join(" ");
                if let Some(id) = self.id(&candidate) {
                    matched = Some((id, n));
                    break;
                }
            }
            match matched {
                Some((id, n)) => {
                    out.push(id);
                    i += n;
                }
                None => return Err(ModelError::UnknownToken(words[i].to_string())),
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::{merge, DumpRecord, RankLabels, SourceDump};

    fn store_with(rows: &[(&[&str], &[&str])]) -> TaxonomyStore {
        let records = rows
            .iter()
            .map(|(labels, common)| DumpRecord {
                labels: RankLabels::new(labels.iter().map(|s| s.to_string()).collect()).unwrap(),
                common_names: common.iter().map(|s| s.to_string()).collect(),
                source: None,
            })
            .collect();
        merge(&[SourceDump {
            tag: "t".into(),
            priority: 0,
            records,
        }])
        .unwrap()
        .store
    }

    const MAGPIE: [&str; 7] = [
        "Animalia",
        "Chordata",
        "Aves",
        "Passeriformes",
        "Corvidae",
        "Pica",
        "hudsonia",
    ];

    #[test]
    fn specials_are_fixed_and_mapping_is_bijective() {
        let vocab = Vocab::build(&store_with(&[(&MAGPIE, &["black-billed magpie"])]));
        assert_eq!(vocab.token(PAD), Some("<pad>"));
        assert_eq!(vocab.token(BOS), Some("<bos>"));
        assert_eq!(vocab.token(EOS), Some("<eos>"));
        for id in 0..vocab.len() {
            let tok = vocab.token(id).unwrap();
            assert_eq!(vocab.id(tok), Some(id));
        }
    }

    #[test]
    fn rank_labels_are_single_tokens() {
        let vocab = Vocab::build(&store_with(&[(&MAGPIE, &["black-billed magpie"])]));
        let ids = vocab
            .tokenize("a photo of Animalia Chordata Aves Passeriformes Corvidae Pica hudsonia")
            .unwrap();
        assert_eq!(ids.len(), 10);
    }

    #[test]
    fn multi_word_species_label_is_one_token() {
        let mut labels = MAGPIE;
        labels[6] = "sensibilis L.";
        let vocab = Vocab::build(&store_with(&[(&labels, &[])]));
        let ids = vocab.tokenize("Pica sensibilis L.").unwrap();
        assert_eq!(ids.len(), 2);
        assert_eq!(vocab.token(ids[1]), Some("sensibilis L."));
    }

    #[test]
    fn common_name_words_tokenize_individually() {
        let vocab = Vocab::build(&store_with(&[(&MAGPIE, &["black-billed magpie"])]));
        let ids = vocab.tokenize("black-billed magpie with common name magpie").unwrap();
        assert_eq!(ids.len(), 6);
    }

    #[test]
    fn unknown_words_error() {
        let vocab = Vocab::build(&store_with(&[(&MAGPIE, &[])]));
        assert!(matches!(
            vocab.tokenize("a photo of Corvus"),
            Err(ModelError::UnknownToken(w)) if w == "Corvus"
        ));
    }
}
