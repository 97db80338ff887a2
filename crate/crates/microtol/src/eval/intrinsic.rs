//! Intrinsic embedding analysis: silhouette, leave-one-out centroid
//! purity, and a 2-D PCA projection for plotting.

use std::collections::BTreeMap;

use super::EvalError;

/// Silhouette and purity for one grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct IntrinsicScores {
    pub silhouette: f64,
    pub purity: f64,
    pub groups: usize,
}

fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (*x - *y) as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn group_members(groups: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &g) in groups.iter().enumerate() {
        map.entry(g).or_default().push(i);
    }
    map
}

fn check_grouping(embeddings: &[Vec<f32>], groups: &[usize]) -> Result<BTreeMap<usize, Vec<usize>>, EvalError> {
    assert_eq!(embeddings.len(), groups.len());
    let members = group_members(groups);
    if members.len() < 2 {
        return Err(EvalError::Degenerate(format!(
            "found {} group(s)",
            members.len()
        )));
    }
    if let Some((g, m)) = members.iter().find(|(_, m)| m.len() < 2) {
        return Err(EvalError::Degenerate(format!(
            "group {g} has {} point(s)",
            m.len()
        )));
    }
    Ok(members)
}

/// Mean silhouette score under Euclidean distance.
///
/// Per point, `a` is the mean distance to its own group (excluding
/// itself), `b` the smallest mean distance to another group, and the
/// score is `(b - a) / max(a, b)`. When both spreads are zero (all points
/// coincide) the score is defined as 0.
pub fn silhouette(embeddings: &[Vec<f32>], groups: &[usize]) -> Result<f64, EvalError> {
    let members = check_grouping(embeddings, groups)?;
    let mut total = 0.0f64;
    for (i, emb) in embeddings.iter().enumerate() {
        let own = groups[i];
        let a = {
            let mates = &members[&own];
            mates
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| euclidean(emb, &embeddings[j]))
                .sum::<f64>()
                / (mates.len() - 1) as f64
        };
        let b = members
            .iter()
            .filter(|(&g, _)| g != own)
            .map(|(_, m)| {
                m.iter().map(|&j| euclidean(emb, &embeddings[j])).sum::<f64>() / m.len() as f64
            })
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        total += if denom == 0.0 { 0.0 } else { (b - a) / denom };
    }
    Ok(total / embeddings.len() as f64)
}

/// Leave-one-out nearest-centroid purity: each point is classified by the
/// nearest group centroid, with its own group's centroid recomputed
/// without it. Ties go to the lowest group key.
pub fn loo_centroid_purity(embeddings: &[Vec<f32>], groups: &[usize]) -> Result<f64, EvalError> {
    let members = check_grouping(embeddings, groups)?;
    let dim = embeddings[0].len();
    let sums: BTreeMap<usize, Vec<f64>> = members
        .iter()
        .map(|(&g, m)| {
            let mut acc = vec![0.0f64; dim];
            for &i in m {
                for (a, &v) in acc.iter_mut().zip(&embeddings[i]) {
                    *a += v as f64;
                }
            }
            (g, acc)
        })
        .collect();

    let mut correct = 0usize;
    for (i, emb) in embeddings.iter().enumerate() {
        let own = groups[i];
        let mut best_group = usize::MAX;
        let mut best_d = f64::INFINITY;
        for (&g, m) in &members {
            let (sum, count) = (&sums[&g], m.len());
            let centroid: Vec<f64> = if g == own {
                sum.iter()
                    .zip(emb)
                    .map(|(s, &v)| (s - v as f64) / (count - 1) as f64)
                    .collect()
            } else {
                sum.iter().map(|s| s / count as f64).collect()
            };
            let d: f64 = emb
                .iter()
                .zip(&centroid)
                .map(|(&v, c)| (v as f64 - c) * (v as f64 - c))
                .sum();
            if d < best_d {
                best_d = d;
                best_group = g;
            }
        }
        if best_group == own {
            correct += 1;
        }
    }
    Ok(correct as f64 / embeddings.len() as f64)
}

/// Both scores for one grouping.
pub fn intrinsic_separability(
    embeddings: &[Vec<f32>],
    groups: &[usize],
) -> Result<IntrinsicScores, EvalError> {
    let n_groups = check_grouping(embeddings, groups)?.len();
    Ok(IntrinsicScores {
        silhouette: silhouette(embeddings, groups)?,
        purity: loo_centroid_purity(embeddings, groups)?,
        groups: n_groups,
    })
}

/// Projects points onto the top two principal axes of their covariance.
/// Power iteration with deflation; fully deterministic. Axis signs are
/// fixed so the largest-magnitude component is positive.
pub fn pca_2d(embeddings: &[Vec<f32>]) -> Vec<[f64; 2]> {
    let n = embeddings.len();
    if n == 0 {
        return Vec::new();
    }
    let d = embeddings[0].len();
    let mut mean = vec![0.0f64; d];
    for e in embeddings {
        for (m, &v) in mean.iter_mut().zip(e) {
            *m += v as f64;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let centered: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|e| e.iter().zip(&mean).map(|(&v, m)| v as f64 - m).collect())
        .collect();

    let mut cov = vec![0.0f64; d * d];
    for row in &centered {
        for i in 0..d {
            let ri = row[i];
            if ri == 0.0 {
                continue;
            }
            for j in 0..d {
                cov[i * d + j] += ri * row[j];
            }
        }
    }
    let scale = 1.0 / n.max(1) as f64;
    for c in cov.iter_mut() {
        *c *= scale;
    }

    let axis1 = dominant_eigenvector(&cov, d);
    // Deflate and repeat for the second axis.
    let lambda1 = quadratic_form(&cov, &axis1, d);
    let mut deflated = cov.clone();
    for i in 0..d {
        for j in 0..d {
            deflated[i * d + j] -= lambda1 * axis1[i] * axis1[j];
        }
    }
    let axis2 = dominant_eigenvector(&deflated, d);

    centered
        .iter()
        .map(|row| {
            [
                row.iter().zip(&axis1).map(|(r, a)| r * a).sum(),
                row.iter().zip(&axis2).map(|(r, a)| r * a).sum(),
            ]
        })
        .collect()
}

fn quadratic_form(m: &[f64], v: &[f64], d: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..d {
        let mut row = 0.0;
        for j in 0..d {
            row += m[i * d + j] * v[j];
        }
        total += v[i] * row;
    }
    total
}

fn dominant_eigenvector(m: &[f64], d: usize) -> Vec<f64> {
    // Deterministic start: uniform direction.
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    for _ in 0..200 {
        let mut next = vec![0.0f64; d];
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += m[i * d + j] * v[j];
            }
            next[i] = acc;
        }
        let norm: f64 = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            break; // zero-variance direction; keep the previous vector
        }
        for x in next.iter_mut() {
            *x /= norm;
        }
        v = next;
    }
    // Fix the sign by the largest-magnitude component.
    let lead = v
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.abs().partial_cmp(&b.abs()).expect("finite"))
        .map(|(i, _)| i)
        .unwrap_or(0);
    if v[lead] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
    v
}
