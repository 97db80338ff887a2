//! Procedural hierarchical benchmark data.
//!
//! A complete seven-level tree is generated from a seed. Every node carries
//! a Gaussian feature embedding; an image of a species is the rank-weighted
//! sum of its ancestor embeddings plus per-image noise, so visual structure
//! is shared along the hierarchy exactly as the training mechanism assumes.

mod manifest;
mod shards;

pub use manifest::{
    make_rare_split, parse_manifest_str, Manifest, ManifestRecord, RareSplit, Split,
};
pub use shards::{parse_shard, VectorShard};

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::taxonomy::{Rank, RankLabels, TaxonId, TaxonomyStore};
use crate::tensor::Tensor;

/// Stream domain separators so the tree, the manifest, and per-image noise
/// never share a generator state.
const MANIFEST_STREAM: u64 = 0x4d414e49; // "MANI"

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("branching product {species} exceeds the species cap {cap}")]
    SpeciesCap { species: u64, cap: u64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("only {available} species have at least {min_images} images; {needed} required")]
    InsufficientSpecies {
        needed: usize,
        available: usize,
        min_images: usize,
    },
    #[error("k_test {k_test} exceeds min_images {min_images}")]
    KTestTooLarge { k_test: usize, min_images: usize },
    #[error("unknown taxon id {0} in manifest")]
    UnknownTaxon(String),
    #[error("malformed manifest at line {line}: {message}")]
    MalformedManifest { line: usize, message: String },
    #[error("malformed shard: {0}")]
    MalformedShard(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Generator parameters for the synthetic tree.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Children per node at each rank; the product is the species count.
    pub branching: [usize; Rank::COUNT],
    pub images_per_species: usize,
    pub feature_dim: usize,
    /// Visual signal scale contributed by each rank.
    pub rank_weights: [f32; Rank::COUNT],
    pub noise_sigma: f32,
    /// Fraction of species that share a common name with a sibling entry,
    /// mirroring many-to-one vernacular naming.
    pub common_name_share: f64,
    /// Hard ceiling on the number of species a config may request.
    pub species_cap: u64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            branching: [2, 2, 2, 3, 3, 3, 3],
            images_per_species: 20,
            feature_dim: 64,
            rank_weights: [1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4],
            noise_sigma: 0.25,
            common_name_share: 0.1,
            species_cap: 100_000,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn species_count(&self) -> u64 {
        self.branching.iter().map(|&b| b as u64).product()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.branching.iter().any(|&b| b == 0) {
            return Err(SynthError::InvalidConfig("branching entries must be positive".into()));
        }
        if self.rank_weights.iter().any(|&w| w <= 0.0) {
            return Err(SynthError::InvalidConfig("rank weights must be positive".into()));
        }
        if self.images_per_species == 0 || self.feature_dim == 0 {
            return Err(SynthError::InvalidConfig(
                "images_per_species and feature_dim must be positive".into(),
            ));
        }
        if self.noise_sigma < 0.0 {
            return Err(SynthError::InvalidConfig("noise_sigma must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.common_name_share) {
            return Err(SynthError::InvalidConfig("common_name_share must be in [0,1]".into()));
        }
        let species = self.species_count();
        if species > self.species_cap {
            return Err(SynthError::SpeciesCap {
                species,
                cap: self.species_cap,
            });
        }
        Ok(())
    }
}

/// The generated tree: canonical store plus per-node feature embeddings.
#[derive(Debug, Clone)]
pub struct SynthTree {
    config: SynthConfig,
    store: TaxonomyStore,
    /// `levels[r]` holds the embeddings of every node at rank `r`,
    /// concatenated; node `i` occupies `i*dim..(i+1)*dim`.
    levels: Vec<Vec<f32>>,
    /// Species index (path order) -> taxon id, and the inverse.
    species_ids: Vec<TaxonId>,
    species_by_id: BTreeMap<TaxonId, usize>,
}

const RANK_LETTERS: [char; Rank::COUNT] = ['K', 'P', 'C', 'O', 'F', 'G', 'S'];

/// Builds the complete tree: deterministic path-encoded labels, synthetic
/// common names, and seeded Gaussian node embeddings.
pub fn build_tree(config: &SynthConfig) -> Result<SynthTree, SynthError> {
    config.validate()?;
    let dim = config.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut level_sizes = [0usize; Rank::COUNT];
    let mut size = 1usize;
    for (r, &b) in config.branching.iter().enumerate() {
        size *= b;
        level_sizes[r] = size;
    }
    let species_count = level_sizes[Rank::COUNT - 1];

    let levels: Vec<Vec<f32>> = level_sizes
        .iter()
        .map(|&n| Tensor::randn(&[n * dim], 1.0, &mut rng).data().to_vec())
        .collect();

    // Common-name sharing: the first `shared` species pair up.
    let mut shared = (config.common_name_share * species_count as f64).floor() as usize;
    shared -= shared % 2;

    let mut drafts = Vec::with_capacity(species_count);
    for s in 0..species_count {
        let path = species_path(&config.branching, s);
        let labels: Vec<String> = (0..Rank::COUNT)
            .map(|r| {
                let mut label = String::new();
                label.push(RANK_LETTERS[r]);
                for (d, p) in path.iter().enumerate().take(r + 1) {
                    label.push(if d == 0 { '_' } else { '-' });
                    label.push_str(&p.to_string());
                }
                label
            })
            .collect();
        let name_id = if s < shared { s / 2 } else { shared / 2 + (s - shared) };
        let common = format!("critter{name_id:04}");
        let labels = RankLabels::new(labels).expect("generated labels are well-formed");
        drafts.push((labels, vec![common], "synth".to_string()));
    }
    let store = TaxonomyStore::from_taxa(drafts);

    // Recover the species-index ordering: path indices are encoded in the
    // species label, and from_taxa reassigned ids in sorted label order.
    let mut species_ids = vec![TaxonId(String::new()); species_count];
    let mut species_by_id = BTreeMap::new();
    for taxon in store.taxa() {
        let label = taxon.labels.get(Rank::Species).expect("complete tree");
        let path = parse_path(label);
        let s = flatten_path(&config.branching, &path);
        species_ids[s] = taxon.taxon_id.clone();
        species_by_id.insert(taxon.taxon_id.clone(), s);
    }

    Ok(SynthTree {
        config: config.clone(),
        store,
        levels,
        species_ids,
        species_by_id,
    })
}

/// Child index at each rank for a species in path order.
fn species_path(branching: &[usize; Rank::COUNT], species: usize) -> [usize; Rank::COUNT] {
    let mut path = [0usize; Rank::COUNT];
    let mut rem = species;
    for r in (0..Rank::COUNT).rev() {
        path[r] = rem % branching[r];
        rem /= branching[r];
    }
    path
}

fn parse_path(species_label: &str) -> Vec<usize> {
    species_label[2..] // strip the "S_" prefix
        .split('-')
        .map(|p| p.parse().expect("generated labels encode the path"))
        .collect()
}

fn flatten_path(branching: &[usize; Rank::COUNT], path: &[usize]) -> usize {
    let mut idx = 0;
    for (r, &p) in path.iter().enumerate() {
        idx = idx * branching[r] + p;
    }
    idx
}

impl SynthTree {
    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    pub fn store(&self) -> &TaxonomyStore {
        &self.store
    }

    pub fn species_count(&self) -> usize {
        self.species_ids.len()
    }

    pub fn species_ids(&self) -> &[TaxonId] {
        &self.species_ids
    }

    pub fn species_index(&self, id: &TaxonId) -> Option<usize> {
        self.species_by_id.get(id).copied()
    }

    /// Absolute node index at each rank along the species' ancestor path.
    fn ancestor_nodes(&self, species: usize) -> [usize; Rank::COUNT] {
        let path = species_path(&self.config.branching, species);
        let mut nodes = [0usize; Rank::COUNT];
        let mut acc = 0;
        for r in 0..Rank::COUNT {
            acc = acc * self.config.branching[r] + path[r];
            nodes[r] = acc;
        }
        nodes
    }

    pub fn node_embedding(&self, rank: Rank, node: usize) -> &[f32] {
        let dim = self.config.feature_dim;
        &self.levels[rank.index()][node * dim..(node + 1) * dim]
    }

    /// Renders one image: the rank-weighted sum of ancestor embeddings plus
    /// Gaussian noise drawn from `image_seed`. Bit-exact per
    /// `(species, image_seed)`.
    pub fn render_image(&self, species: usize, image_seed: u64) -> Vec<f32> {
        let dim = self.config.feature_dim;
        let nodes = self.ancestor_nodes(species);
        let mut out = vec![0.0f32; dim];
        for r in 0..Rank::COUNT {
            let w = self.config.rank_weights[r];
            let emb = self.node_embedding(Rank::ALL[r], nodes[r]);
            for (o, &e) in out.iter_mut().zip(emb) {
                *o += w * e;
            }
        }
        if self.config.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(image_seed);
            let noise = Tensor::randn(&[dim], self.config.noise_sigma, &mut rng);
            for (o, &n) in out.iter_mut().zip(noise.data()) {
                *o += n;
            }
        }
        out
    }

    pub fn render_for_taxon(&self, id: &TaxonId, image_seed: u64) -> Result<Vec<f32>, SynthError> {
        let species = self
            .species_index(id)
            .ok_or_else(|| SynthError::UnknownTaxon(id.to_string()))?;
        Ok(self.render_image(species, image_seed))
    }

    /// Generates the initial manifest: every image in the train split, ids
    /// and seeds drawn deterministically from the config seed.
    pub fn generate_manifest(&self, config_hash: &str) -> Manifest {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ MANIFEST_STREAM);
        let mut records = Vec::with_capacity(self.species_count() * self.config.images_per_species);
        for (s, taxon_id) in self.species_ids.iter().enumerate() {
            for j in 0..self.config.images_per_species {
                records.push(ManifestRecord {
                    image_id: format!("img-{s:04}-{j:03}"),
                    taxon_id: taxon_id.clone(),
                    image_seed: rand::Rng::gen(&mut rng),
                    split: Split::Train,
                });
            }
        }
        Manifest {
            records,
            config_hash: config_hash.to_string(),
        }
    }
}
