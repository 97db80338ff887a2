//! SimpleShot nearest-centroid few-shot evaluation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EvalError, EvalReport, Protocol, Table};

/// Nearest centroid under Euclidean distance; ties break to the lowest
/// class index.
pub fn nearest_centroid_predict(tests: &[Vec<f32>], centroids: &[Vec<f32>]) -> Vec<usize> {
    tests
        .iter()
        .map(|t| {
            let mut best = 0usize;
            let mut best_d = f32::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d: f32 = t
                    .iter()
                    .zip(centroid)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn l2_normalized(v: &[f32]) -> Vec<f32> {
    let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm <= 1e-8 {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|x| x / norm).collect()
    }
}

/// SimpleShot predictions for explicit shot assignments: centroid per
/// class from its shot rows, mean-of-centroids subtraction, l2
/// normalization of both sides, then nearest centroid for every test row.
pub fn simpleshot_predictions(
    embeddings: &[Vec<f32>],
    shots: &[Vec<usize>],
    test_indices: &[usize],
) -> Vec<usize> {
    let dim = embeddings.first().map(Vec::len).unwrap_or(0);
    let mut centroids = Vec::with_capacity(shots.len());
    for class_shots in shots {
        let mut centroid = vec![0.0f32; dim];
        for &i in class_shots {
            for (acc, &v) in centroid.iter_mut().zip(&embeddings[i]) {
                *acc += v;
            }
        }
        for v in centroid.iter_mut() {
            *v /= class_shots.len() as f32;
        }
        centroids.push(centroid);
    }

    let mut mu = vec![0.0f32; dim];
    for c in &centroids {
        for (m, &v) in mu.iter_mut().zip(c) {
            *m += v;
        }
    }
    for m in mu.iter_mut() {
        *m /= centroids.len() as f32;
    }

    let centered: Vec<Vec<f32>> = centroids
        .iter()
        .map(|c| l2_normalized(&c.iter().zip(&mu).map(|(a, b)| a - b).collect::<Vec<_>>()))
        .collect();
    let tests: Vec<Vec<f32>> = test_indices
        .iter()
        .map(|&i| {
            l2_normalized(
                &embeddings[i]
                    .iter()
                    .zip(&mu)
                    .map(|(a, b)| a - b)
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    nearest_centroid_predict(&tests, &centered)
}

/// One seeded SimpleShot experiment over precomputed embeddings.
///
/// Per seed: sample `k` shots per class; centroid = shot mean; subtract
/// the mean of all centroids from every centroid and test vector;
/// l2-normalize both; classify the remaining images by nearest centroid.
pub fn simpleshot(
    embeddings: &[Vec<f32>],
    class_of: &[usize],
    n_classes: usize,
    k: usize,
    n_seeds: u32,
    seed: u64,
    config_hash: &str,
) -> Result<EvalReport, EvalError> {
    assert_eq!(embeddings.len(), class_of.len());
    if n_classes == 0 || embeddings.is_empty() {
        return Err(EvalError::Empty("few-shot input"));
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in class_of.iter().enumerate() {
        members.entry(c).or_default().push(i);
    }
    for c in 0..n_classes {
        let count = members.get(&c).map(Vec::len).unwrap_or(0);
        if count <= k {
            return Err(EvalError::TooFewImages {
                class: format!("class {c}"),
                count,
                needed: k,
            });
        }
    }

    let mut per_seed = Vec::with_capacity(n_seeds as usize);
    for s in 0..n_seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s as u64));
        let mut shots = Vec::with_capacity(n_classes);
        let mut test_indices = Vec::new();
        for c in 0..n_classes {
            let mut pool = members[&c].clone();
            pool.shuffle(&mut rng);
            let (chosen, rest) = pool.split_at(k);
            shots.push(chosen.to_vec());
            test_indices.extend(rest.iter().copied());
        }
        test_indices.sort_unstable();

        let predictions = simpleshot_predictions(embeddings, &shots, &test_indices);
        let correct = predictions
            .iter()
            .zip(&test_indices)
            .filter(|(&pred, &i)| pred == class_of[i])
            .count();
        per_seed.push(correct as f64 / test_indices.len() as f64);
    }

    let mut report = EvalReport::from_accuracies(
        &format!("fewshot-k{k}"),
        Protocol::Fewshot(k),
        per_seed,
        config_hash,
    );
    report.extras.insert("k".to_string(), k.to_string());
    report
        .extras
        .insert("classes".to_string(), n_classes.to_string());
    report.table = Table {
        header: vec!["seed".into(), "accuracy".into()],
        rows: report
            .per_seed
            .iter()
            .enumerate()
            .map(|(i, a)| vec![i.to_string(), format!("{a:.6}")])
            .collect(),
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_shot_identical_point_classifies_correctly() {
        // Two far-apart classes, two points each; whatever shot is drawn,
        // the remaining point sits on top of it.
        let embeddings = vec![
            vec![10.0, 0.0],
            vec![10.0, 0.0],
            vec![-10.0, 0.0],
            vec![-10.0, 0.0],
        ];
        let classes = vec![0, 0, 1, 1];
        let report = simpleshot(&embeddings, &classes, 2, 1, 3, 0, "h").unwrap();
        assert_eq!(report.mean, 1.0);
    }

    #[test]
    fn equidistant_tie_goes_to_the_lowest_class() {
        let tests = vec![vec![0.0, 0.0]];
        let centroids = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        assert_eq!(nearest_centroid_predict(&tests, &centroids), vec![0]);
    }

    #[test]
    fn class_with_too_few_images_is_an_error() {
        let embeddings = vec![vec![1.0], vec![2.0], vec![3.0]];
        let classes = vec![0, 0, 1];
        assert!(matches!(
            simpleshot(&embeddings, &classes, 2, 1, 1, 0, "h"),
            Err(EvalError::TooFewImages { .. })
        ));
    }

    #[test]
    fn same_seed_reproduces_accuracies() {
        let embeddings: Vec<Vec<f32>> = (0..30)
            .map(|i| vec![(i % 3) as f32 * 5.0 + (i as f32) * 0.01, (i / 3) as f32 * 0.02])
            .collect();
        let classes: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let a = simpleshot(&embeddings, &classes, 3, 2, 5, 11, "h").unwrap();
        let b = simpleshot(&embeddings, &classes, 3, 2, 5, 11, "h").unwrap();
        assert_eq!(a.per_seed, b.per_seed);
        let c = simpleshot(&embeddings, &classes, 3, 2, 5, 12, "h").unwrap();
        assert!(a.per_seed != c.per_seed || a.mean == c.mean);
    }
}
