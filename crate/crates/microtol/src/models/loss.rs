//! The contrastive objective and the two cross-entropy baselines.

use crate::taxonomy::Rank;
use crate::tensor::{TensorError, Var};

use super::ModelError;

/// Maximum effective temperature scale; `exp(log_temperature)` is clamped
/// here before use.
pub const MAX_TEMPERATURE_SCALE: f32 = 100.0;

/// Row-norm tolerance for the contrastive inputs. Deviations signal a
/// caller bug, not data noise.
const NORM_TOLERANCE: f32 = 1e-4;

/// Symmetric InfoNCE over in-batch pairs.
///
/// `logits = exp(log_temperature) * (I @ T^t)`; the loss averages the
/// row-wise and column-wise cross-entropies against the diagonal. Both
/// inputs must be `[B, E]` with unit-norm rows.
pub fn clip_loss(image: &Var, text: &Var, log_temperature: &Var) -> Result<Var, ModelError> {
    let (si, st) = (image.shape(), text.shape());
    if si.len() != 2 || si != st {
        return Err(TensorError::ShapeMismatch {
            op: "clip_loss",
            lhs: si,
            rhs: st,
        }
        .into());
    }
    check_rows_normalized("clip_loss images", image)?;
    check_rows_normalized("clip_loss texts", text)?;

    let b = si[0];
    let scale = log_temperature.exp().clamp_max(MAX_TEMPERATURE_SCALE);
    let logits = image.matmul(&text.permute(&[1, 0])?)?.mul(&scale)?;
    let diagonal: Vec<usize> = (0..b).collect();

    let image_to_text = logits
        .log_softmax()
        .pick_class(&diagonal)?
        .mean()
        .mul_scalar(-1.0);
    let text_to_image = logits
        .permute(&[1, 0])?
        .log_softmax()
        .pick_class(&diagonal)?
        .mean()
        .mul_scalar(-1.0);
    Ok(image_to_text.add(&text_to_image)?.mul_scalar(0.5))
}

fn check_rows_normalized(op: &'static str, rows: &Var) -> Result<(), ModelError> {
    let value = rows.value();
    let width = value.shape()[1];
    for (row, chunk) in value.data().chunks(width).enumerate() {
        let norm = chunk.iter().map(|x| x * x).sum::<f32>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(TensorError::NotNormalized { op, row, norm }.into());
        }
    }
    Ok(())
}

/// Mean softmax cross-entropy for `[N, C]` logits.
pub fn flat_ce_loss(logits: &Var, labels: &[usize]) -> Result<Var, ModelError> {
    let shape = logits.shape();
    if shape.len() != 2 || labels.len() != shape[0] {
        return Err(TensorError::InvalidShape {
            op: "flat_ce_loss",
            shape,
            message: "expected [N, C] logits with one label per row".into(),
        }
        .into());
    }
    let width = shape[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= width) {
        return Err(ModelError::LabelRange {
            label: bad,
            width,
        });
    }
    Ok(logits
        .log_softmax()
        .pick_class(labels)?
        .mean()
        .mul_scalar(-1.0))
}

/// Hierarchical multitask objective: the sum over the seven ranks of the
/// per-rank cross-entropy, so the trunk must stay useful at every rank.
pub fn hier_ce_loss(
    per_rank_logits: &[Var],
    per_rank_labels: &[Vec<usize>],
) -> Result<Var, ModelError> {
    if per_rank_logits.len() != Rank::COUNT || per_rank_labels.len() != Rank::COUNT {
        return Err(ModelError::RankCount {
            expected: Rank::COUNT,
            found: per_rank_logits.len().min(per_rank_labels.len()),
        });
    }
    let mut total: Option<Var> = None;
    for (logits, labels) in per_rank_logits.iter().zip(per_rank_labels) {
        let term = flat_ce_loss(logits, labels)?;
        total = Some(match total {
            None => term,
            Some(acc) => acc.add(&term)?,
        });
    }
    Ok(total.expect("seven ranks"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    fn unit_rows(tape: &Tape, rows: &[&[f32]]) -> Var {
        let width = rows[0].len();
        let mut data = Vec::new();
        for row in rows {
            let norm: f32 = row.iter().map(|x| x * x).sum::<f32>().sqrt();
            data.extend(row.iter().map(|x| x / norm));
        }
        tape.constant(Tensor::new(vec![rows.len(), width], data).unwrap())
    }

    #[test]
    fn single_pair_loss_is_zero() {
        let tape = Tape::new();
        let i = unit_rows(&tape, &[&[1.0, 0.0]]);
        let t = unit_rows(&tape, &[&[1.0, 0.0]]);
        let lt = tape.constant(Tensor::scalar(0.0));
        let loss = clip_loss(&i, &t, &lt).unwrap();
        assert!(loss.value().item().unwrap().abs() < 1e-7);
    }

    #[test]
    fn identity_similarity_pair_matches_hand_value() {
        // B = 2, unit temperature, orthonormal matched rows: each softmax
        // row is [e, 1] normalized, so the loss is ln(1 + 1/e) = 0.3133.
        let tape = Tape::new();
        let i = unit_rows(&tape, &[&[1.0, 0.0], &[0.0, 1.0]]);
        let t = unit_rows(&tape, &[&[1.0, 0.0], &[0.0, 1.0]]);
        let lt = tape.constant(Tensor::scalar(0.0));
        let loss = clip_loss(&i, &t, &lt).unwrap().value().item().unwrap();
        assert!((loss - 0.313_261_7).abs() < 1e-4, "loss {loss}");
    }

    #[test]
    fn identical_rows_give_ln_b() {
        let tape = Tape::new();
        let row: &[f32] = &[0.6, 0.8];
        let i = unit_rows(&tape, &[row, row, row, row]);
        let t = unit_rows(&tape, &[row, row, row, row]);
        let lt = tape.constant(Tensor::scalar(1.7));
        let loss = clip_loss(&i, &t, &lt).unwrap().value().item().unwrap();
        assert!((loss - (4.0f32).ln()).abs() < 1e-5, "loss {loss}");
    }

    #[test]
    fn unnormalized_rows_are_rejected() {
        let tape = Tape::new();
        let bad = tape.constant(Tensor::new(vec![1, 2], vec![2.0, 0.0]).unwrap());
        let ok = unit_rows(&tape, &[&[1.0, 0.0]]);
        let lt = tape.constant(Tensor::scalar(0.0));
        assert!(clip_loss(&bad, &ok, &lt).is_err());
    }

    #[test]
    fn temperature_scale_is_clamped() {
        // An extreme log temperature must behave exactly like scale = 100.
        let tape = Tape::new();
        let i = unit_rows(&tape, &[&[1.0, 0.0], &[0.0, 1.0]]);
        let t = unit_rows(&tape, &[&[0.8, 0.6], &[0.6, 0.8]]);
        let hot = tape.constant(Tensor::scalar(50.0));
        let pinned = tape.constant(Tensor::scalar(100.0f32.ln()));
        let a = clip_loss(&i, &t, &hot).unwrap().value().item().unwrap();
        let b = clip_loss(&i, &t, &pinned).unwrap().value().item().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn clip_loss_is_permutation_invariant() {
        let tape = Tape::new();
        let i = unit_rows(&tape, &[&[1.0, 0.2], &[-0.3, 1.0], &[0.5, -0.5]]);
        let t = unit_rows(&tape, &[&[0.9, 0.1], &[0.2, -1.0], &[0.7, 0.7]]);
        let lt = tape.constant(Tensor::scalar(1.0));
        let base = clip_loss(&i, &t, &lt).unwrap().value().item().unwrap();

        // Apply the same row permutation to both sides.
        let perm = [2usize, 0, 1];
        let pick = |v: &Var| {
            let val = v.value();
            let rows: Vec<&[f32]> = perm
                .iter()
                .map(|&r| &val.data()[r * 2..(r + 1) * 2])
                .collect();
            unit_rows(&tape, &rows)
        };
        let (ip, tp) = (pick(&i), pick(&t));
        let permuted = clip_loss(&ip, &tp, &lt).unwrap().value().item().unwrap();
        assert_eq!(base, permuted);
    }

    #[test]
    fn uniform_flat_ce_is_ln_c() {
        let tape = Tape::new();
        let logits = tape.constant(Tensor::zeros(&[3, 4]));
        let loss = flat_ce_loss(&logits, &[0, 1, 3]).unwrap().value().item().unwrap();
        assert!((loss - (4.0f32).ln()).abs() < 1e-6);
    }

    #[test]
    fn confident_correct_logits_drive_loss_to_zero() {
        let tape = Tape::new();
        let mut data = vec![0.0; 2 * 3];
        data[0] = 30.0; // row 0, class 0
        data[3 + 2] = 30.0; // row 1, class 2
        let logits = tape.constant(Tensor::new(vec![2, 3], data).unwrap());
        let loss = flat_ce_loss(&logits, &[0, 2]).unwrap().value().item().unwrap();
        assert!(loss.abs() < 1e-5, "loss {loss}");
    }

    #[test]
    fn label_out_of_range_is_an_error() {
        let tape = Tape::new();
        let logits = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(
            flat_ce_loss(&logits, &[0, 3]),
            Err(ModelError::LabelRange { label: 3, width: 3 })
        ));
    }

    #[test]
    fn uniform_hier_ce_sums_per_rank_ln() {
        let tape = Tape::new();
        let widths = [2usize, 3, 4, 5, 6, 7, 8];
        let logits: Vec<Var> = widths
            .iter()
            .map(|&w| tape.constant(Tensor::zeros(&[2, w])))
            .collect();
        let labels: Vec<Vec<usize>> = widths.iter().map(|_| vec![0, 1]).collect();
        let loss = hier_ce_loss(&logits, &labels).unwrap().value().item().unwrap();
        let expected: f32 = widths.iter().map(|&w| (w as f32).ln()).sum();
        assert!((loss - expected).abs() < 1e-5, "loss {loss} vs {expected}");
    }

    #[test]
    fn hier_ce_equals_sum_of_flat_terms() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let tape = Tape::new();
        let widths = [3usize, 4, 2, 5, 3, 4, 6];
        let logits: Vec<Var> = widths
            .iter()
            .map(|&w| tape.constant(Tensor::randn(&[4, w], 1.0, &mut rng)))
            .collect();
        let labels: Vec<Vec<usize>> = widths.iter().map(|&w| vec![0, w - 1, 1, 0]).collect();
        let hier = hier_ce_loss(&logits, &labels).unwrap().value().item().unwrap();
        let sum: f32 = logits
            .iter()
            .zip(&labels)
            .map(|(lg, lb)| flat_ce_loss(lg, lb).unwrap().value().item().unwrap())
            .sum();
        assert!((hier - sum).abs() < 1e-5);
    }

    #[test]
    fn wrong_rank_count_is_rejected() {
        let tape = Tape::new();
        let logits = vec![tape.constant(Tensor::zeros(&[1, 2]))];
        let labels = vec![vec![0usize]];
        assert!(matches!(
            hier_ce_loss(&logits, &labels),
            Err(ModelError::RankCount { .. })
        ));
    }

    #[test]
    fn hier_ce_dominates_species_flat_ce_on_shared_logits() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let tape = Tape::new();
            let widths = [2usize, 2, 3, 3, 4, 5, 6];
            let logits: Vec<Var> = widths
                .iter()
                .map(|&w| tape.constant(Tensor::randn(&[3, w], 1.5, &mut rng)))
                .collect();
            let labels: Vec<Vec<usize>> =
                widths.iter().map(|&w| vec![0, (w - 1).min(2), w - 1]).collect();
            let hier = hier_ce_loss(&logits, &labels).unwrap().value().item().unwrap();
            let species_only = flat_ce_loss(&logits[6], &labels[6])
                .unwrap()
                .value()
                .item()
                .unwrap();
            assert!(hier >= species_only - 1e-6);
        }
    }
}
