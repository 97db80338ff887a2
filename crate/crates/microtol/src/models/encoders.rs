//! The image MLP, the causal transformer text tower, and the two model
//! assemblies built from them.

use rand::{Rng, SeedableRng};

use crate::tensor::{Checkpoint, Tape, Tensor, TensorError, Var};

use super::params::{ParamId, ParamSet};
use super::vocab::{BOS, EOS, PAD};
use super::ModelError;

/// Architecture widths shared by every model kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Input image vector width.
    pub feature_dim: usize,
    /// Shared embedding width E.
    pub embed_dim: usize,
    /// Hidden width of the image MLP.
    pub image_hidden: usize,
    /// Text tower width D.
    pub text_width: usize,
    pub text_layers: usize,
    pub text_heads: usize,
    /// Maximum token sequence length S, including BOS and EOS.
    pub max_seq_len: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            feature_dim: 64,
            embed_dim: 64,
            image_hidden: 128,
            text_width: 64,
            text_layers: 2,
            text_heads: 4,
            max_seq_len: 16,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn init<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Linear {
        let std = 1.0 / (in_dim as f32).sqrt();
        Linear {
            w: params.add(&format!("{name}.w"), Tensor::randn(&[in_dim, out_dim], std, rng)),
            b: params.add(&format!("{name}.b"), Tensor::zeros(&[out_dim])),
        }
    }

    /// `x @ w + b` on the trailing two axes.
    fn forward(&self, leaves: &[Var], x: &Var) -> Result<Var, TensorError> {
        x.matmul(&leaves[self.w.0])?.add(&leaves[self.b.0])
    }
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

impl Norm {
    fn init(params: &mut ParamSet, name: &str, dim: usize) -> Norm {
        Norm {
            gamma: params.add(&format!("{name}.g"), Tensor::full(&[dim], 1.0)),
            beta: params.add(&format!("{name}.b"), Tensor::zeros(&[dim])),
        }
    }

    fn forward(&self, leaves: &[Var], x: &Var) -> Result<Var, TensorError> {
        x.layer_norm(&leaves[self.gamma.0], &leaves[self.beta.0], 1e-5)
    }
}

/// Two-hidden-layer MLP from image vectors to the shared embedding space.
#[derive(Debug, Clone)]
pub struct ImageEncoder {
    l1: Linear,
    l2: Linear,
    l3: Linear,
}

impl ImageEncoder {
    fn init<R: Rng>(params: &mut ParamSet, prefix: &str, dims: &ModelDims, rng: &mut R) -> Self {
        ImageEncoder {
            l1: Linear::init(params, &format!("{prefix}.l1"), dims.feature_dim, dims.image_hidden, rng),
            l2: Linear::init(params, &format!("{prefix}.l2"), dims.image_hidden, dims.image_hidden, rng),
            l3: Linear::init(params, &format!("{prefix}.l3"), dims.image_hidden, dims.embed_dim, rng),
        }
    }

    /// `[B, feature_dim] -> [B, embed_dim]`, unnormalized.
    pub fn forward(&self, leaves: &[Var], x: &Var) -> Result<Var, TensorError> {
        let h = self.l1.forward(leaves, x)?.gelu();
        let h = self.l2.forward(leaves, &h)?.gelu();
        self.l3.forward(leaves, &h)
    }
}

#[derive(Debug, Clone)]
struct TextBlock {
    ln1: Norm,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ln2: Norm,
    mlp1: Linear,
    mlp2: Linear,
}

/// Causal autoregressive transformer over the label vocabulary.
///
/// Position `p` only sees tokens at or before `p`, so a taxonomic name's
/// later ranks condition on the earlier ones and never the reverse.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    dims: ModelDims,
    tok_emb: ParamId,
    pos_emb: ParamId,
    blocks: Vec<TextBlock>,
    ln_f: Norm,
    proj: ParamId,
}

impl TextEncoder {
    fn init<R: Rng>(
        params: &mut ParamSet,
        prefix: &str,
        dims: &ModelDims,
        vocab_size: usize,
        rng: &mut R,
    ) -> Self {
        let d = dims.text_width;
        let tok_emb = params.add(
            &format!("{prefix}.tok_emb"),
            Tensor::randn(&[vocab_size, d], 0.02, rng),
        );
        let pos_emb = params.add(
            &format!("{prefix}.pos_emb"),
            Tensor::randn(&[dims.max_seq_len, d], 0.01, rng),
        );
        let blocks = (0..dims.text_layers)
            .map(|i| {
                let p = format!("{prefix}.block{i}");
                TextBlock {
                    ln1: Norm::init(params, &format!("{p}.ln1"), d),
                    wq: Linear::init(params, &format!("{p}.wq"), d, d, rng),
                    wk: Linear::init(params, &format!("{p}.wk"), d, d, rng),
                    wv: Linear::init(params, &format!("{p}.wv"), d, d, rng),
                    wo: Linear::init(params, &format!("{p}.wo"), d, d, rng),
                    ln2: Norm::init(params, &format!("{p}.ln2"), d),
                    mlp1: Linear::init(params, &format!("{p}.mlp1"), d, 2 * d, rng),
                    mlp2: Linear::init(params, &format!("{p}.mlp2"), 2 * d, d, rng),
                }
            })
            .collect();
        let ln_f = Norm::init(params, &format!("{prefix}.ln_f"), d);
        let proj = params.add(
            &format!("{prefix}.proj"),
            Tensor::randn(&[d, dims.embed_dim], 1.0 / (d as f32).sqrt(), rng),
        );
        TextEncoder {
            dims: *dims,
            tok_emb,
            pos_emb,
            blocks,
            ln_f,
            proj,
        }
    }

    /// Pads sequences with BOS/EOS/PAD and returns `(ids, eos_positions, s)`.
    fn pack(&self, seqs: &[&[usize]]) -> Result<(Vec<usize>, Vec<usize>, usize), ModelError> {
        let longest = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let s = longest + 2;
        if s > self.dims.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                len: s,
                max: self.dims.max_seq_len,
            });
        }
        let mut ids = Vec::with_capacity(seqs.len() * s);
        let mut eos_positions = Vec::with_capacity(seqs.len());
        for seq in seqs {
            ids.push(BOS);
            ids.extend_from_slice(seq);
            ids.push(EOS);
            eos_positions.push(seq.len() + 1);
            ids.resize(ids.len() + (s - seq.len() - 2), PAD);
        }
        Ok((ids, eos_positions, s))
    }

    /// Additive causal mask: zero at or below the diagonal, a large
    /// negative constant above, so softmax zeroes future positions.
    fn causal_mask(s: usize) -> Tensor {
        let mut data = vec![0.0f32; s * s];
        for i in 0..s {
            for j in (i + 1)..s {
                data[i * s + j] = -1e9;
            }
        }
        Tensor::new(vec![s, s], data).expect("mask shape")
    }

    /// Hidden states after the final layer norm: `[B, S, D]`, plus the EOS
    /// position of every row.
    pub fn hidden(
        &self,
        tape: &Tape,
        leaves: &[Var],
        seqs: &[&[usize]],
    ) -> Result<(Var, Vec<usize>), ModelError> {
        let (ids, eos_positions, s) = self.pack(seqs)?;
        let b = seqs.len();
        let d = self.dims.text_width;
        let h = self.dims.text_heads;
        let dh = d / h;

        let mut x = leaves[self.tok_emb.0]
            .embedding(&ids)?
            .reshape(&[b, s, d])?;
        let pos = leaves[self.pos_emb.0].slice(0, 0, s)?;
        x = x.add(&pos)?;
        let mask = tape.constant(Self::causal_mask(s));

        for block in &self.blocks {
            let normed = block.ln1.forward(leaves, &x)?;
            let q = block.wq.forward(leaves, &normed)?;
            let k = block.wk.forward(leaves, &normed)?;
            let v = block.wv.forward(leaves, &normed)?;
            let split = |t: &Var| -> Result<Var, TensorError> {
                t.reshape(&[b, s, h, dh])?.permute(&[0, 2, 1, 3])
            };
            let (q, k, v) = (split(&q)?, split(&k)?, split(&v)?);
            let scores = q
                .matmul(&k.permute(&[0, 1, 3, 2])?)?
                .mul_scalar(1.0 / (dh as f32).sqrt())
                .add(&mask)?;
            let attn = scores.softmax().matmul(&v)?;
            let merged = attn.permute(&[0, 2, 1, 3])?.reshape(&[b, s, d])?;
            let out = block.wo.forward(leaves, &merged)?;
            x = x.add(&out)?;

            let normed = block.ln2.forward(leaves, &x)?;
            let mlp = block
                .mlp2
                .forward(leaves, &block.mlp1.forward(leaves, &normed)?.gelu())?;
            x = x.add(&mlp)?;
        }
        let x = self.ln_f.forward(leaves, &x)?;
        Ok((x, eos_positions))
    }

    /// Unit-norm text embeddings taken at the EOS position: `[B, E]`.
    pub fn encode(
        &self,
        tape: &Tape,
        leaves: &[Var],
        seqs: &[&[usize]],
    ) -> Result<Var, ModelError> {
        let (hidden, eos_positions) = self.hidden(tape, leaves, seqs)?;
        let pooled = hidden.take_positions(&eos_positions)?;
        Ok(pooled.matmul(&leaves[self.proj.0])?.l2_normalize(1)?)
    }
}

/// Contrastive model: both encoders plus the learnable temperature.
#[derive(Debug, Clone)]
pub struct ClipModel {
    pub dims: ModelDims,
    pub params: ParamSet,
    pub image: ImageEncoder,
    pub text: TextEncoder,
    pub log_temp: ParamId,
    pub vocab_size: usize,
}

impl ClipModel {
    /// Fresh model. `log_temperature` starts at `ln(1/0.07)`.
    pub fn init<R: Rng>(dims: &ModelDims, vocab_size: usize, rng: &mut R) -> ClipModel {
        let mut params = ParamSet::new();
        let image = ImageEncoder::init(&mut params, "image", dims, rng);
        let text = TextEncoder::init(&mut params, "text", dims, vocab_size, rng);
        let log_temp = params.add("logit_scale", Tensor::scalar((1.0 / 0.07f32).ln()));
        ClipModel {
            dims: *dims,
            params,
            image,
            text,
            log_temp,
            vocab_size,
        }
    }

    pub fn from_checkpoint(
        dims: &ModelDims,
        vocab_size: usize,
        ckpt: &Checkpoint,
    ) -> Result<ClipModel, ModelError> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = ClipModel::init(dims, vocab_size, &mut rng);
        model.params.load_values(ckpt)?;
        Ok(model)
    }

    /// Inference-time image embeddings, row-normalized. Constant leaves:
    /// no gradients are tracked.
    pub fn embed_images(&self, rows: &[Vec<f32>]) -> Result<Tensor, ModelError> {
        let tape = Tape::new();
        let leaves: Vec<Var> = self
            .params
            .tensors()
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        let x = tape.constant(rows_tensor(rows, self.dims.feature_dim)?);
        let emb = self.image.forward(&leaves, &x)?.l2_normalize(1)?;
        Ok(emb.value())
    }

    /// Inference-time text embeddings for tokenized sequences.
    pub fn embed_texts(&self, seqs: &[Vec<usize>]) -> Result<Tensor, ModelError> {
        let tape = Tape::new();
        let leaves: Vec<Var> = self
            .params
            .tensors()
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        let refs: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
        let emb = self.text.encode(&tape, &leaves, &refs)?;
        Ok(emb.value())
    }
}

/// Image trunk plus one linear head per classification task.
#[derive(Debug, Clone)]
pub struct ClassifierModel {
    pub dims: ModelDims,
    pub params: ParamSet,
    pub trunk: ImageEncoder,
    heads: Vec<Linear>,
    pub head_widths: Vec<usize>,
}

impl ClassifierModel {
    /// `head_widths` holds the class count per head: one entry for the
    /// flat objective, seven (one per rank) for the hierarchical one.
    pub fn init<R: Rng>(dims: &ModelDims, head_widths: &[usize], rng: &mut R) -> ClassifierModel {
        let mut params = ParamSet::new();
        let trunk = ImageEncoder::init(&mut params, "trunk", dims, rng);
        let heads = head_widths
            .iter()
            .enumerate()
            .map(|(i, &w)| Linear::init(&mut params, &format!("head{i}"), dims.embed_dim, w, rng))
            .collect();
        ClassifierModel {
            dims: *dims,
            params,
            trunk,
            heads,
            head_widths: head_widths.to_vec(),
        }
    }

    pub fn from_checkpoint(
        dims: &ModelDims,
        head_widths: &[usize],
        ckpt: &Checkpoint,
    ) -> Result<ClassifierModel, ModelError> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = ClassifierModel::init(dims, head_widths, &mut rng);
        model.params.load_values(ckpt)?;
        Ok(model)
    }

    pub fn features(&self, leaves: &[Var], x: &Var) -> Result<Var, TensorError> {
        self.trunk.forward(leaves, x)
    }

    /// Per-head logits over the trunk features.
    pub fn logits(&self, leaves: &[Var], features: &Var) -> Result<Vec<Var>, TensorError> {
        self.heads
            .iter()
            .map(|h| h.forward(leaves, features))
            .collect()
    }

    /// Inference-time trunk features (the embedding used by the few-shot
    /// and intrinsic protocols).
    pub fn embed_images(&self, rows: &[Vec<f32>]) -> Result<Tensor, ModelError> {
        let tape = Tape::new();
        let leaves: Vec<Var> = self
            .params
            .tensors()
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        let x = tape.constant(rows_tensor(rows, self.dims.feature_dim)?);
        Ok(self.trunk.forward(&leaves, &x)?.value())
    }
}

/// Stacks equal-width rows into a `[N, dim]` tensor.
pub(crate) fn rows_tensor(rows: &[Vec<f32>], dim: usize) -> Result<Tensor, ModelError> {
    let mut data = Vec::with_capacity(rows.len() * dim);
    for row in rows {
        if row.len() != dim {
            return Err(ModelError::Invalid(format!(
                "image vector width {} does not match feature_dim {dim}",
                row.len()
            )));
        }
        data.extend_from_slice(row);
    }
    Tensor::new(vec![rows.len(), dim], data).map_err(ModelError::from)
}
