//! Zero-shot and generalized zero-shot classification.

use crate::models::{ClipModel, Vocab};
use crate::synth::{ManifestRecord, SynthTree};
use crate::texttypes::TextType;

use super::{
    record_images, tokenize_prompts, ClassCatalog, EvalError, EvalReport, Protocol, Table,
};

/// Nearest-class prediction by cosine similarity. Rows must be normalized
/// (dot product equals cosine); ties break to the lowest class index.
pub fn predict_nearest_class(image_embs: &[Vec<f32>], class_embs: &[Vec<f32>]) -> Vec<usize> {
    image_embs
        .iter()
        .map(|img| {
            let mut best = 0usize;
            let mut best_sim = f32::NEG_INFINITY;
            for (c, class) in class_embs.iter().enumerate() {
                let sim: f32 = img.iter().zip(class).map(|(a, b)| a * b).sum();
                if sim > best_sim {
                    best_sim = sim;
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Embeds texts in bounded chunks so tapes stay small.
pub(crate) fn embed_texts_chunked(
    model: &ClipModel,
    seqs: &[Vec<usize>],
) -> Result<Vec<Vec<f32>>, EvalError> {
    let width = model.dims.embed_dim;
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(256) {
        let emb = model.embed_texts(chunk)?;
        out.extend(emb.data().chunks(width).map(|r| r.to_vec()));
    }
    Ok(out)
}

pub(crate) fn embed_images_chunked(
    model: &ClipModel,
    rows: &[Vec<f32>],
) -> Result<Vec<Vec<f32>>, EvalError> {
    let width = model.dims.embed_dim;
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(256) {
        let emb = model.embed_images(chunk)?;
        out.extend(emb.data().chunks(width).map(|r| r.to_vec()));
    }
    Ok(out)
}

/// Zero-shot accuracy: every class text is templated, tokenized, encoded,
/// and normalized; images predict their nearest class text. Deterministic,
/// so the report carries a single accuracy.
pub fn zeroshot(
    model: &ClipModel,
    vocab: &Vocab,
    tree: &SynthTree,
    catalog: &ClassCatalog,
    records: &[&ManifestRecord],
    test_type: TextType,
    config_hash: &str,
) -> Result<EvalReport, EvalError> {
    if catalog.is_empty() {
        return Err(EvalError::Empty("catalog"));
    }
    if records.is_empty() {
        return Err(EvalError::Empty("test set"));
    }
    let class_embs = embed_texts_chunked(model, &tokenize_prompts(vocab, &catalog.prompts(test_type))?)?;
    let image_embs = embed_images_chunked(model, &record_images(tree, records)?)?;
    let predictions = predict_nearest_class(&image_embs, &class_embs);

    let mut correct = 0usize;
    for (record, &pred) in records.iter().zip(&predictions) {
        let truth = catalog
            .index_of(&record.taxon_id)
            .ok_or_else(|| EvalError::NotInCatalog(record.taxon_id.to_string()))?;
        if pred == truth {
            correct += 1;
        }
    }
    let accuracy = correct as f64 / records.len() as f64;
    let mut report = EvalReport::from_accuracies(
        &format!("zeroshot-{}", test_type.id()),
        Protocol::Zeroshot,
        vec![accuracy],
        config_hash,
    );
    report
        .extras
        .insert("test_text_type".to_string(), test_type.id().to_string());
    report.table = Table {
        header: vec!["test_type".into(), "accuracy".into()],
        rows: vec![vec![test_type.id().to_string(), format!("{accuracy:.6}")]],
    };
    Ok(report)
}

/// Generalized zero-shot outcome: accuracy over the union label set plus
/// how much prediction mass landed on seen labels.
#[derive(Debug, Clone)]
pub struct GzslOutcome {
    pub report: EvalReport,
    /// Fraction of unseen-class test images predicted as a seen label.
    pub seen_confusion_mass: f64,
}

/// Classifies unseen-class images against the union of seen and unseen
/// catalogs. Accuracy counts only exact unseen-class hits.
pub fn gzsl(
    model: &ClipModel,
    vocab: &Vocab,
    tree: &SynthTree,
    seen: &ClassCatalog,
    unseen: &ClassCatalog,
    records: &[&ManifestRecord],
    test_type: TextType,
    config_hash: &str,
) -> Result<GzslOutcome, EvalError> {
    for entry in seen.entries() {
        if unseen.index_of(&entry.taxon_id).is_some() {
            return Err(EvalError::CatalogOverlap(entry.taxon_id.to_string()));
        }
    }
    if unseen.is_empty() {
        return Err(EvalError::Empty("unseen catalog"));
    }
    if records.is_empty() {
        return Err(EvalError::Empty("test set"));
    }

    // Union prompts: seen entries first, then unseen; ties keep favoring
    // the lower (seen) index exactly as in a plain argmax over the union.
    let mut prompts = seen.prompts(test_type);
    prompts.extend(unseen.prompts(test_type));
    let class_embs = embed_texts_chunked(model, &tokenize_prompts(vocab, &prompts)?)?;
    let image_embs = embed_images_chunked(model, &record_images(tree, records)?)?;
    let predictions = predict_nearest_class(&image_embs, &class_embs);

    let offset = seen.len();
    let mut correct = 0usize;
    let mut confused_to_seen = 0usize;
    for (record, &pred) in records.iter().zip(&predictions) {
        let truth = unseen
            .index_of(&record.taxon_id)
            .ok_or_else(|| EvalError::NotInCatalog(record.taxon_id.to_string()))?;
        if pred == offset + truth {
            correct += 1;
        }
        if pred < offset {
            confused_to_seen += 1;
        }
    }
    let accuracy = correct as f64 / records.len() as f64;
    let seen_confusion_mass = confused_to_seen as f64 / records.len() as f64;

    let mut report = EvalReport::from_accuracies(
        &format!("gzsl-{}", test_type.id()),
        Protocol::Gzsl,
        vec![accuracy],
        config_hash,
    );
    report.extras.insert(
        "seen_confusion_mass".to_string(),
        format!("{seen_confusion_mass:.6}"),
    );
    report
        .extras
        .insert("seen_classes".to_string(), seen.len().to_string());
    report
        .extras
        .insert("unseen_classes".to_string(), unseen.len().to_string());
    report.table = Table {
        header: vec![
            "test_type".into(),
            "accuracy".into(),
            "seen_confusion_mass".into(),
        ],
        rows: vec![vec![
            test_type.id().to_string(),
            format!("{accuracy:.6}"),
            format!("{seen_confusion_mass:.6}"),
        ]],
    };
    Ok(GzslOutcome {
        report,
        seen_confusion_mass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_equal_to_class_text_predicts_that_class() {
        // Orthonormal class embeddings; each image equals one of them.
        let classes = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let images = vec![classes[2].clone(), classes[0].clone()];
        assert_eq!(predict_nearest_class(&images, &classes), vec![2, 0]);
    }

    #[test]
    fn ties_break_to_the_lowest_index() {
        let classes = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let images = vec![vec![1.0, 0.0]];
        assert_eq!(predict_nearest_class(&images, &classes), vec![0]);
    }

    #[test]
    fn single_class_catalog_is_always_correct() {
        let classes = vec![vec![0.6, 0.8]];
        let images = vec![vec![-1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(predict_nearest_class(&images, &classes), vec![0, 0]);
    }
}
