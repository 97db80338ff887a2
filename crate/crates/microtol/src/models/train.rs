//! The seeded training loop shared by the three objectives.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::synth::{Manifest, ManifestRecord, Split, SynthTree};
use crate::taxonomy::{Rank, Taxon, TaxonId};
use crate::tensor::{AdamW, AdamWConfig, Checkpoint, Schedule, Tape, Tensor, Var};
use crate::texttypes::{apply_template, render, sample_type, TextType};

use super::encoders::{rows_tensor, ClassifierModel, ClipModel, ModelDims};
use super::loss::{clip_loss, flat_ce_loss, hier_ce_loss};
use super::vocab::Vocab;
use super::{ModelError, Objective};

// Stream separators so init, batch sampling, and text-type draws never
// share generator state.
const INIT_STREAM: u64 = 0x494e4954;
const BATCH_STREAM: u64 = 0x42415443;
const TEXT_STREAM: u64 = 0x54455854;

/// Knobs of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub objective: Objective,
    /// Only meaningful for the contrastive objective.
    pub text_type: TextType,
    pub batch_size: usize,
    pub steps: u32,
    pub warmup_steps: u32,
    pub max_lr: f32,
    pub adamw: AdamWConfig,
    pub dims: ModelDims,
    pub log_interval: u32,
    pub val_interval: u32,
    /// Fraction of each species' train images held out for
    /// best-checkpoint selection.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::Clip,
            text_type: TextType::Mixture,
            batch_size: 128,
            steps: 1200,
            warmup_steps: 100,
            max_lr: 1e-3,
            adamw: AdamWConfig::default(),
            dims: ModelDims::default(),
            log_interval: 50,
            val_interval: 200,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

/// One `step<TAB>lr<TAB>loss` record.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub step: u32,
    pub lr: f32,
    pub loss: f32,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_checkpoint: Checkpoint,
    /// Lowest-validation-loss snapshot; equals the final checkpoint when
    /// no validation split exists.
    pub best_checkpoint: Checkpoint,
    pub log: Vec<LogEntry>,
}

impl TrainOutcome {
    pub fn log_text(&self) -> String {
        let mut out = String::new();
        for e in &self.log {
            out.push_str(&format!("{}\t{}\t{}\n", e.step, e.lr, e.loss));
        }
        out
    }
}

struct Sample<'a> {
    record: &'a ManifestRecord,
    taxon: &'a Taxon,
    species_index: usize,
}

enum ModelKind {
    Clip(ClipModel),
    Classifier(ClassifierModel),
}

impl ModelKind {
    fn params(&self) -> &super::ParamSet {
        match self {
            ModelKind::Clip(m) => &m.params,
            ModelKind::Classifier(m) => &m.params,
        }
    }

    fn params_mut(&mut self) -> &mut super::ParamSet {
        match self {
            ModelKind::Clip(m) => &mut m.params,
            ModelKind::Classifier(m) => &mut m.params,
        }
    }
}

/// Per-rank `label -> class index` maps in lexicographic label order,
/// covering exactly the taxa present in the train split.
fn label_maps(taxa: &[&Taxon]) -> Vec<BTreeMap<String, usize>> {
    Rank::ALL
        .iter()
        .map(|&rank| {
            let labels: std::collections::BTreeSet<String> = taxa
                .iter()
                .filter_map(|t| t.labels.get(rank))
                .map(str::to_string)
                .collect();
            labels.into_iter().enumerate().map(|(i, l)| (l, i)).collect()
        })
        .collect()
}

/// Runs the step loop and returns the final and best-validation
/// checkpoints plus the training log. Fully seeded and deterministic.
pub fn train(
    cfg: &TrainConfig,
    tree: &SynthTree,
    manifest: &Manifest,
    config_hash: &str,
) -> Result<TrainOutcome, ModelError> {
    let store = tree.store();
    manifest.validate_against(store)?;

    // Deterministic validation carve: within each species the train images
    // are ordered by image id and every stride-th goes to validation.
    let mut by_taxon: BTreeMap<&TaxonId, Vec<&ManifestRecord>> = BTreeMap::new();
    for r in manifest.records.iter().filter(|r| r.split == Split::Train) {
        by_taxon.entry(&r.taxon_id).or_default().push(r);
    }
    let stride = if cfg.val_fraction > 0.0 {
        (1.0 / cfg.val_fraction).round().max(1.0) as usize
    } else {
        0
    };
    let mut train_samples = Vec::new();
    let mut val_samples = Vec::new();
    for (taxon_id, mut records) in by_taxon {
        records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let taxon = store.get(taxon_id).expect("validated above");
        let species_index = tree
            .species_index(taxon_id)
            .ok_or_else(|| ModelError::UnknownTaxonLabel(taxon_id.to_string()))?;
        for (i, record) in records.into_iter().enumerate() {
            let sample = Sample {
                record,
                taxon,
                species_index,
            };
            if stride > 0 && i % stride == 0 {
                val_samples.push(sample);
            } else {
                train_samples.push(sample);
            }
        }
    }
    if train_samples.is_empty() {
        return Err(ModelError::Invalid("no train records".into()));
    }

    let train_taxa: Vec<&Taxon> = {
        let mut seen = std::collections::BTreeSet::new();
        train_samples
            .iter()
            .filter(|s| seen.insert(&s.taxon.taxon_id))
            .map(|s| s.taxon)
            .collect()
    };
    let maps = label_maps(&train_taxa);

    let vocab = Vocab::build(store);
    let mut rng_init = ChaCha8Rng::seed_from_u64(cfg.seed ^ INIT_STREAM);
    let mut model = match cfg.objective {
        Objective::Clip => ModelKind::Clip(ClipModel::init(&cfg.dims, vocab.len(), &mut rng_init)),
        Objective::FlatCe => {
            let widths = vec![maps[Rank::Species.index()].len()];
            ModelKind::Classifier(ClassifierModel::init(&cfg.dims, &widths, &mut rng_init))
        }
        Objective::HierCe => {
            let widths: Vec<usize> = maps.iter().map(BTreeMap::len).collect();
            ModelKind::Classifier(ClassifierModel::init(&cfg.dims, &widths, &mut rng_init))
        }
    };

    let mut opt = AdamW::new(cfg.adamw, &model.params().sizes());
    let schedule = Schedule::new(cfg.max_lr, cfg.warmup_steps, cfg.steps)?;

    let mut rng_batch = ChaCha8Rng::seed_from_u64(cfg.seed ^ BATCH_STREAM);
    let mut rng_text = ChaCha8Rng::seed_from_u64(cfg.seed ^ TEXT_STREAM);

    let mut log = Vec::new();
    let mut best: Option<(f32, u64, Vec<Tensor>)> = None;

    for step in 1..=cfg.steps {
        let lr = schedule.lr_at(step)?;
        let batch: Vec<&Sample> = (0..cfg.batch_size)
            .map(|_| &train_samples[rng_batch.gen_range(0..train_samples.len())])
            .collect();

        let tape = Tape::new();
        let (loss, leaves) = {
            let leaves = model.params().leaves(&tape);
            let loss = forward_batch(
                &model,
                tree,
                &vocab,
                &maps,
                cfg.objective,
                cfg.text_type,
                &tape,
                &leaves,
                &batch,
                Some(&mut rng_text),
            )?;
            (loss, leaves)
        };

        let loss_value = loss.value().item()?;
        if !loss_value.is_finite() {
            return Err(ModelError::NonFiniteLoss {
                step,
                value: loss_value,
            });
        }
        loss.backward()?;
        let grads: Vec<Tensor> = leaves
            .iter()
            .map(|v| v.grad())
            .collect::<Result<_, _>>()?;

        {
            let params = model.params_mut();
            let (tensors, names) = params.tensors_and_names_mut();
            opt.step(tensors, names, &grads, lr)?;
        }

        if step == 1 || step % cfg.log_interval == 0 || step == cfg.steps {
            log::info!("step {step} lr {lr:.3e} loss {loss_value:.4}");
            log.push(LogEntry {
                step,
                lr,
                loss: loss_value,
            });
        }

        if !val_samples.is_empty() && (step % cfg.val_interval == 0 || step == cfg.steps) {
            let val_loss = validation_loss(cfg, &model, tree, &vocab, &maps, &val_samples)?;
            log::info!("step {step} validation loss {val_loss:.4}");
            let better = best.as_ref().map(|(b, _, _)| val_loss < *b).unwrap_or(true);
            if better {
                best = Some((val_loss, step as u64, model.params().tensors().to_vec()));
            }
        }
    }

    let final_checkpoint = model
        .params()
        .to_checkpoint(cfg.steps as u64, config_hash);
    let best_checkpoint = match best {
        Some((_, step, tensors)) => Checkpoint {
            tensors: model.params().names().iter().cloned().zip(tensors).collect(),
            step,
            config_hash: config_hash.to_string(),
        },
        None => final_checkpoint.clone(),
    };

    Ok(TrainOutcome {
        final_checkpoint,
        best_checkpoint,
        log,
    })
}

/// Regenerates the batch's image vectors from their seeds.
fn batch_images(tree: &SynthTree, batch: &[&Sample]) -> Vec<Vec<f32>> {
    batch
        .iter()
        .map(|s| tree.render_image(s.species_index, s.record.image_seed))
        .collect()
}

/// Per-rank class labels for a classifier batch.
fn class_labels(
    maps: &[BTreeMap<String, usize>],
    batch: &[&Sample],
    rank: Rank,
) -> Result<Vec<usize>, ModelError> {
    batch
        .iter()
        .map(|s| {
            let label = s
                .taxon
                .labels
                .get(rank)
                .ok_or_else(|| ModelError::UnknownTaxonLabel(s.taxon.taxon_id.to_string()))?;
            maps[rank.index()]
                .get(label)
                .copied()
                .ok_or_else(|| ModelError::UnknownTaxonLabel(s.taxon.taxon_id.to_string()))
        })
        .collect()
}

/// Forward pass for one batch under the configured objective.
///
/// For the contrastive objective with `Mixture`, each sample draws
/// uniformly from its taxon's available text types; a fixed type falls
/// back to the always-available taxonomic name when the taxon cannot
/// render it. Passing no text generator (validation) pins taxonomic text.
#[allow(clippy::too_many_arguments)]
fn forward_batch(
    model: &ModelKind,
    tree: &SynthTree,
    vocab: &Vocab,
    maps: &[BTreeMap<String, usize>],
    objective: Objective,
    text_type: TextType,
    tape: &Tape,
    leaves: &[Var],
    batch: &[&Sample],
    mut rng_text: Option<&mut ChaCha8Rng>,
) -> Result<Var, ModelError> {
    let images = batch_images(tree, batch);
    let dims: &ModelDims = match model {
        ModelKind::Clip(m) => &m.dims,
        ModelKind::Classifier(m) => &m.dims,
    };
    let x = tape.constant(rows_tensor(&images, dims.feature_dim)?);

    match (model, objective) {
        (ModelKind::Clip(m), Objective::Clip) => {
            let mut token_seqs = Vec::with_capacity(batch.len());
            for sample in batch {
                let t = match text_type {
                    TextType::Mixture => match rng_text.as_deref_mut() {
                        Some(rng) => sample_type(sample.taxon, rng)?,
                        None => TextType::Taxonomic,
                    },
                    fixed => {
                        if render(sample.taxon, fixed).is_ok() {
                            fixed
                        } else {
                            TextType::Taxonomic
                        }
                    }
                };
                let text = apply_template(&render(sample.taxon, t)?);
                token_seqs.push(vocab.tokenize(&text)?);
            }
            let refs: Vec<&[usize]> = token_seqs.iter().map(Vec::as_slice).collect();
            let img_emb = m.image.forward(leaves, &x)?.l2_normalize(1)?;
            let txt_emb = m.text.encode(tape, leaves, &refs)?;
            clip_loss(&img_emb, &txt_emb, &leaves[m.log_temp.0])
        }
        (ModelKind::Classifier(m), Objective::FlatCe) => {
            let feats = m.features(leaves, &x)?;
            let logits = m.logits(leaves, &feats)?;
            let labels = class_labels(maps, batch, Rank::Species)?;
            flat_ce_loss(&logits[0], &labels)
        }
        (ModelKind::Classifier(m), Objective::HierCe) => {
            let feats = m.features(leaves, &x)?;
            let logits = m.logits(leaves, &feats)?;
            let labels: Vec<Vec<usize>> = Rank::ALL
                .iter()
                .map(|&r| class_labels(maps, batch, r))
                .collect::<Result<_, _>>()?;
            hier_ce_loss(&logits, &labels)
        }
        _ => Err(ModelError::Invalid(
            "objective does not match the model kind".into(),
        )),
    }
}

/// Mean loss over the validation samples, processed in training-sized
/// chunks with constant leaves. Text is pinned to the taxonomic name so
/// the measure is deterministic and comparable across evaluations.
fn validation_loss(
    cfg: &TrainConfig,
    model: &ModelKind,
    tree: &SynthTree,
    vocab: &Vocab,
    maps: &[BTreeMap<String, usize>],
    val_samples: &[Sample],
) -> Result<f32, ModelError> {
    let mut total = 0.0f64;
    let mut weight = 0.0f64;
    for chunk in val_samples.chunks(cfg.batch_size) {
        if chunk.len() < 2 && cfg.objective == Objective::Clip {
            continue; // a single-pair contrastive loss is identically zero
        }
        let tape = Tape::new();
        let leaves: Vec<Var> = model
            .params()
            .tensors()
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        let refs: Vec<&Sample> = chunk.iter().collect();
        let loss = forward_batch(
            model,
            tree,
            vocab,
            maps,
            cfg.objective,
            cfg.text_type,
            &tape,
            &leaves,
            &refs,
            None,
        )?;
        total += loss.value().item()? as f64 * chunk.len() as f64;
        weight += chunk.len() as f64;
    }
    if weight == 0.0 {
        return Ok(f32::INFINITY);
    }
    Ok((total / weight) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{build_tree, SynthConfig};

    fn smoke_setup() -> (SynthTree, Manifest) {
        let cfg = SynthConfig {
            branching: [1, 1, 1, 1, 1, 1, 2],
            images_per_species: 8,
            feature_dim: 12,
            noise_sigma: 0.1,
            seed: 5,
            ..SynthConfig::default()
        };
        let tree = build_tree(&cfg).unwrap();
        let manifest = tree.generate_manifest("smoke");
        (tree, manifest)
    }

    fn smoke_train_config(objective: Objective) -> TrainConfig {
        TrainConfig {
            objective,
            batch_size: 8,
            steps: 50,
            warmup_steps: 5,
            max_lr: 2e-3,
            dims: ModelDims {
                feature_dim: 12,
                embed_dim: 16,
                image_hidden: 24,
                text_width: 16,
                text_layers: 1,
                text_heads: 2,
                max_seq_len: 16,
            },
            log_interval: 10,
            val_interval: 25,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn clip_smoke_descends() {
        let (tree, manifest) = smoke_setup();
        let out = train(&smoke_train_config(Objective::Clip), &tree, &manifest, "h").unwrap();
        let first = out.log.first().unwrap().loss;
        let last = out.log.last().unwrap().loss;
        assert!(last < first, "loss went {first} -> {last}");
    }

    #[test]
    fn ce_and_hce_smoke_descend() {
        let (tree, manifest) = smoke_setup();
        for objective in [Objective::FlatCe, Objective::HierCe] {
            let out = train(&smoke_train_config(objective), &tree, &manifest, "h").unwrap();
            let first = out.log.first().unwrap().loss;
            let last = out.log.last().unwrap().loss;
            assert!(last < first, "{objective:?} loss went {first} -> {last}");
        }
    }

    #[test]
    fn identical_seeds_give_bitwise_identical_checkpoints() {
        let (tree, manifest) = smoke_setup();
        let cfg = smoke_train_config(Objective::Clip);
        let a = train(&cfg, &tree, &manifest, "h").unwrap();
        let b = train(&cfg, &tree, &manifest, "h").unwrap();
        assert_eq!(
            a.final_checkpoint.to_bytes(),
            b.final_checkpoint.to_bytes()
        );
        assert_eq!(a.best_checkpoint.to_bytes(), b.best_checkpoint.to_bytes());
        assert_eq!(a.log, b.log);

        let mut other = cfg;
        other.seed = 4;
        let c = train(&other, &tree, &manifest, "h").unwrap();
        assert_ne!(a.final_checkpoint.to_bytes(), c.final_checkpoint.to_bytes());
    }

    #[test]
    fn log_lines_are_tab_separated() {
        let (tree, manifest) = smoke_setup();
        let mut cfg = smoke_train_config(Objective::FlatCe);
        cfg.steps = 12;
        let out = train(&cfg, &tree, &manifest, "h").unwrap();
        let text = out.log_text();
        for line in text.lines() {
            assert_eq!(line.split('\t').count(), 3);
        }
    }
}
