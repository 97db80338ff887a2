//! Finite-difference gradient oracle.
//!
//! Every differentiable op and both composed losses are checked against
//! central finite differences (h = 1e-3) of an independent f64 forward
//! reimplementation. The reference path shares no code with the engine:
//! it recomputes each op directly on f64 buffers, so an agreement failure
//! pinpoints a backward-rule bug.

use microtol::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-3;
const REL_TOL: f64 = 1e-3;
/// Relative error floor: below this magnitude, f32 rounding dominates and
/// the comparison degenerates; the floor makes it an absolute check.
const MAG_FLOOR: f64 = 1e-2;

/// Independent f64 forward implementations.
mod reference {
    pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                for j in 0..n {
                    out[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        out
    }

    pub fn add_suffix(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter()
            .enumerate()
            .map(|(i, &x)| x + b[i % b.len()])
            .collect()
    }

    pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
        if b.len() == 1 {
            a.iter().map(|x| x * b[0]).collect()
        } else {
            a.iter().zip(b).map(|(x, y)| x * y).collect()
        }
    }

    pub fn relu(a: &[f64]) -> Vec<f64> {
        a.iter().map(|&x| x.max(0.0)).collect()
    }

    pub fn gelu(a: &[f64]) -> Vec<f64> {
        // Must match the engine's tanh approximation, including constants.
        const C: f64 = 0.797_884_56;
        const A: f64 = 0.044_715;
        a.iter()
            .map(|&x| 0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh()))
            .collect()
    }

    pub fn layer_norm(a: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
        let n = gamma.len();
        let mut out = vec![0.0; a.len()];
        for (r, row) in a.chunks(n).enumerate() {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..n {
                out[r * n + j] = (row[j] - mean) * inv * gamma[j] + beta[j];
            }
        }
        out
    }

    pub fn softmax(a: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; a.len()];
        for (r, row) in a.chunks(n).enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for j in 0..n {
                out[r * n + j] = exps[j] / sum;
            }
        }
        out
    }

    pub fn log_softmax(a: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; a.len()];
        for (r, row) in a.chunks(n).enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
            for j in 0..n {
                out[r * n + j] = row[j] - lse;
            }
        }
        out
    }

    pub fn l2_normalize_rows(a: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; a.len()];
        for (r, row) in a.chunks(n).enumerate() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            let scale = if norm <= 1e-8 { 0.0 } else { 1.0 / norm };
            for j in 0..n {
                out[r * n + j] = row[j] * scale;
            }
        }
        out
    }

    pub fn clamp_max(a: &[f64], max: f64) -> Vec<f64> {
        a.iter().map(|&x| x.min(max)).collect()
    }

    /// Mean cross-entropy of `[n, c]` logits against the given classes.
    pub fn flat_ce(logits: &[f64], classes: &[usize], c: usize) -> f64 {
        let lp = log_softmax(logits, c);
        let total: f64 = classes
            .iter()
            .enumerate()
            .map(|(i, &cls)| lp[i * c + cls])
            .sum();
        -total / classes.len() as f64
    }

    /// Symmetric InfoNCE over raw (unnormalized) embeddings plus the log
    /// temperature, matching the training-time composition.
    pub fn clip_composed(raw_img: &[f64], raw_txt: &[f64], log_temp: f64, b: usize, e: usize) -> f64 {
        let img = l2_normalize_rows(raw_img, e);
        let txt = l2_normalize_rows(raw_txt, e);
        let scale = log_temp.exp().min(100.0);
        let mut logits = vec![0.0; b * b];
        for i in 0..b {
            for j in 0..b {
                let dot: f64 = (0..e).map(|d| img[i * e + d] * txt[j * e + d]).sum();
                logits[i * b + j] = scale * dot;
            }
        }
        let diag: Vec<usize> = (0..b).collect();
        let row_ce = flat_ce(&logits, &diag, b);
        let mut transposed = vec![0.0; b * b];
        for i in 0..b {
            for j in 0..b {
                transposed[j * b + i] = logits[i * b + j];
            }
        }
        let col_ce = flat_ce(&transposed, &diag, b);
        0.5 * (row_ce + col_ce)
    }
}

/// One gradient check: engine scalar graph vs f64 reference scalar.
struct Case<'a> {
    name: &'a str,
    inputs: Vec<Tensor>,
    engine: Box<dyn Fn(&Tape, &[Var]) -> Var + 'a>,
    reference: Box<dyn Fn(&[Vec<f64>]) -> f64 + 'a>,
}

fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&x| x as f64).collect()
}

fn run_case(case: Case<'_>) {
    let tape = Tape::new();
    let vars: Vec<Var> = case
        .inputs
        .iter()
        .map(|t| tape.leaf(t.clone(), true))
        .collect();
    let loss = (case.engine)(&tape, &vars);
    assert_eq!(loss.shape(), vec![1], "{}: loss must be scalar", case.name);

    // Forward agreement between the f32 engine and the f64 reference.
    let ref_inputs: Vec<Vec<f64>> = case.inputs.iter().map(to_f64).collect();
    let ref_value = (case.reference)(&ref_inputs);
    let engine_value = loss.value().item().unwrap() as f64;
    assert!(
        (engine_value - ref_value).abs() <= 1e-4 * ref_value.abs().max(1.0),
        "{}: forward disagreement {engine_value} vs {ref_value}",
        case.name
    );

    loss.backward().unwrap();

    for (vi, var) in vars.iter().enumerate() {
        let analytic = var.grad().unwrap();
        for j in 0..analytic.numel() {
            let mut plus = ref_inputs.clone();
            plus[vi][j] += H;
            let mut minus = ref_inputs.clone();
            minus[vi][j] -= H;
            let fd = ((case.reference)(&plus) - (case.reference)(&minus)) / (2.0 * H);
            let an = analytic.data()[j] as f64;
            let rel = (an - fd).abs() / fd.abs().max(MAG_FLOOR);
            assert!(
                rel < REL_TOL,
                "{}: input {vi} element {j}: analytic {an} vs fd {fd} (rel {rel:.2e})",
                case.name
            );
        }
    }
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

/// Values bounded away from a kink at `kink` by `margin`.
fn randn_away_from(rng: &mut ChaCha8Rng, shape: &[usize], kink: f32, margin: f32) -> Tensor {
    let mut t = Tensor::randn(shape, 1.0, rng);
    for v in t.data_mut() {
        if (*v - kink).abs() < margin {
            *v = kink + margin * (1.0 + (*v - kink).signum()) / 1.0_f32.max(1.0);
            if (*v - kink).abs() < margin {
                *v = kink + 2.0 * margin;
            }
        }
    }
    t
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = Tensor::randn(shape, 0.5, rng);
    for v in t.data_mut() {
        *v = v.abs() + 0.3;
    }
    t
}

/// Weighted-sum scalarization so non-scalar ops reduce deterministically.
fn weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0f32)).collect()
}

fn scalarize(tape: &Tape, out: &Var, w: &[f32]) -> Var {
    let wt = tape.constant(Tensor::new(out.shape(), w.to_vec()).unwrap());
    out.mul(&wt).unwrap().sum()
}

fn dot64(a: &[f64], w: &[f32]) -> f64 {
    a.iter().zip(w).map(|(x, &y)| x * y as f64).sum()
}

#[test]
fn elementwise_and_reduction_ops_match_finite_differences() {
    let mut instances = 0;
    for seed in 0..8u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = [3, 4];
        let w = weights(&mut rng, 12);

        // relu: inputs away from the kink at 0.
        let x = randn_away_from(&mut rng, &shape, 0.0, 0.05);
        run_case(Case {
            name: "relu",
            inputs: vec![x],
            engine: Box::new({
                let w = w.clone();
                move |tape, vars| scalarize(tape, &vars[0].relu(), &w)
            }),
            reference: Box::new({
                let w = w.clone();
                move |ins| dot64(&reference::relu(&ins[0]), &w)
            }),
        });

        let x = randn(&mut rng, &shape);
        run_case(Case {
            name: "gelu",
            inputs: vec![x],
            engine: Box::new({
                let w = w.clone();
                move |tape, vars| scalarize(tape, &vars[0].gelu(), &w)
            }),
            reference: Box::new({
                let w = w.clone();
                move |ins| dot64(&reference::gelu(&ins[0]), &w)
            }),
        });

        let x = positive(&mut rng, &shape);
        run_case(Case {
            name: "log",
            inputs: vec![x],
            engine: Box::new({
                let w = w.clone();
                move |tape, vars| scalarize(tape, &vars[0].log(), &w)
            }),
            reference: Box::new({
                let w = w.clone();
                move |ins| dot64(&ins[0].iter().map(|x| x.ln()).collect::<Vec<_>>(), &w)
            }),
        });

        let x = randn(&mut rng, &shape);
        run_case(Case {
            name: "exp",
            inputs: vec![x],
            engine: Box::new({
                let w = w.clone();
                move |tape, vars| scalarize(tape, &vars[0].exp(), &w)
            }),
            reference: Box::new({
                let w = w.clone();
                move |ins| dot64(&ins[0].iter().map(|x| x.exp()).collect::<Vec<_>>(), &w)
            }),
        });

        let x = randn(&mut rng, &shape);
        run_case(Case {
            name: "mean",
            inputs: vec![x],
            engine: Box::new(move |_, vars| vars[0].mean()),
            reference: Box::new(move |ins| ins[0].iter().sum::<f64>() / 12.0),
        });

        let x = randn(&mut rng, &shape);
        run_case(Case {
            name: "sum",
            inputs: vec![x],
            engine: Box::new(move |_, vars| vars[0].sum()),
            reference: Box::new(move |ins| ins[0].iter().sum::<f64>()),
        });

        // clamp_max: inputs away from the clamp boundary at 0.5.
        let x = randn_away_from(&mut rng, &shape, 0.5, 0.05);
        run_case(Case {
            name: "clamp_max",
            inputs: vec![x],
            engine: Box::new({
                let w = w.clone();
                move |tape, vars| scalarize(tape, &vars[0].clamp_max(0.5), &w)
            }),
            reference: Box::new({
                let w = w.clone();
                move |ins| dot64(&reference::clamp_max(&ins[0], 0.5), &w)
            }),
        });
        instances += 7;
    }
    assert!(instances >= 56);
}

#[test]
fn binary_ops_match_finite_differences() {
    for seed in 0..8u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let w = weights(&mut rng, 12);

        let (a, b) = (randn(&mut rng, &[3, 4]), randn(&mut rng, &[3, 4]));
        run_case(Case {
            name: "add_same_shape",
            inputs: vec![a, b],
            engine: Box::new({
                let w = w.clone();
                move |tape, vars| scalarize(tape, &vars[0].add(&vars[1]).unwrap(), &w)
            }),
            reference: Box::new({
                let w = w.clone();
                move |ins| dot64(&reference::add_suffix(&ins[0], &ins[1]), &w)
            }),
        });

        let (a, b) = (randn(&mut rng, &[3, 4]), randn(&mut rng, &[4]));
        run_case(Case {
            name: "add_broadcast",
            inputs: vec![a, b],
            engine: Box::new({
                let w = w.clone();
                move |tape, vars| scalarize(tape, &vars[0].add(&vars[1]).unwrap(), &w)
            }),
            reference: Box::new({
                let w = w.clone();
                move |ins| dot64(&reference::add_suffix(&ins[0], &ins[1]), &w)
            }),
        });

        let (a, b) = (randn(&mut rng, &[3, 4]), randn(&mut rng, &[3, 4]));
        run_case(Case {
            name: "mul",
            inputs: vec![a, b],
            engine: Box::new({
                let w = w.clone();
                move |tape, vars| scalarize(tape, &vars[0].mul(&vars[1]).unwrap(), &w)
            }),
            reference: Box::new({
                let w = w.clone();
                move |ins| dot64(&reference::mul(&ins[0], &ins[1]), &w)
            }),
        });

        let (a, s) = (randn(&mut rng, &[3, 4]), randn(&mut rng, &[1]));
        run_case(Case {
            name: "mul_by_scalar_tensor",
            inputs: vec![a, s],
            engine: Box::new({
                let w = w.clone();
                move |tape, vars| scalarize(tape, &vars[0].mul(&vars[1]).unwrap(), &w)
            }),
            reference: Box::new({
                let w = w.clone();
                move |ins| dot64(&reference::mul(&ins[0], &ins[1]), &w)
            }),
        });

        let (m, k, n) = (3, 4, 2);
        let (a, b) = (randn(&mut rng, &[m, k]), randn(&mut rng, &[k, n]));
        let w2 = weights(&mut rng, m * n);
        run_case(Case {
            name: "matmul_2d",
            inputs: vec![a, b],
            engine: Box::new({
                let w2 = w2.clone();
                move |tape, vars| scalarize(tape, &vars[0].matmul(&vars[1]).unwrap(), &w2)
            }),
            reference: Box::new({
                let w2 = w2.clone();
                move |ins| dot64(&reference::matmul(&ins[0], &ins[1], m, k, n), &w2)
            }),
        });

        // Batched matmul with equal leading dims.
        let (a, b) = (randn(&mut rng, &[2, 3, 4]), randn(&mut rng, &[2, 4, 2]));
        let w3 = weights(&mut rng, 2 * 3 * 2);
        run_case(Case {
            name: "matmul_batched",
            inputs: vec![a, b],
            engine: Box::new({
                let w3 = w3.clone();
                move |tape, vars| scalarize(tape, &vars[0].matmul(&vars[1]).unwrap(), &w3)
            }),
            reference: Box::new({
                let w3 = w3.clone();
                move |ins| {
                    let mut out = Vec::new();
                    for bi in 0..2 {
                        out.extend(reference::matmul(
                            &ins[0][bi * 12..(bi + 1) * 12],
                            &ins[1][bi * 8..(bi + 1) * 8],
                            3,
                            4,
                            2,
                        ));
                    }
                    dot64(&out, &w3)
                }
            }),
        });

        // 2-D rhs broadcast over a batched lhs.
        let (a, b) = (randn(&mut rng, &[2, 3, 4]), randn(&mut rng, &[4, 2]));
        let w4 = weights(&mut rng, 2 * 3 * 2);
        run_case(Case {
            name: "matmul_broadcast_rhs",
            inputs: vec![a, b],
            engine: Box::new({
                let w4 = w4.clone();
                move |tape, vars| scalarize(tape, &vars[0].matmul(&vars[1]).unwrap(), &w4)
            }),
            reference: Box::new({
                let w4 = w4.clone();
                move |ins| {
                    let mut out = Vec::new();
                    for bi in 0..2 {
                        out.extend(reference::matmul(
                            &ins[0][bi * 12..(bi + 1) * 12],
                            &ins[1],
                            3,
                            4,
                            2,
                        ));
                    }
                    dot64(&out, &w4)
                }
            }),
        });
    }
}

#[test]
fn normalization_and_softmax_ops_match_finite_differences() {
    for seed in 0..8u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let n = 5;
        let w = weights(&mut rng, 3 * n);

        let x = randn(&mut rng, &[3, n]);
        run_case(Case {
            name: "softmax",
            inputs: vec![x],
            engine: Box::new({
                let w = w.clone();
                move |tape, vars| scalarize(tape, &vars[0].softmax(), &w)
            }),
            reference: Box::new({
                let w = w.clone();
                move |ins| dot64(&reference::softmax(&ins[0], n), &w)
            }),
        });

        let x = randn(&mut rng, &[3, n]);
        run_case(Case {
            name: "log_softmax",
            inputs: vec![x],
            engine: Box::new({
                let w = w.clone();
                move |tape, vars| scalarize(tape, &vars[0].log_softmax(), &w)
            }),
            reference: Box::new({
                let w = w.clone();
                move |ins| dot64(&reference::log_softmax(&ins[0], n), &w)
            }),
        });

        let x = randn(&mut rng, &[3, n]);
        run_case(Case {
            name: "l2_normalize",
            inputs: vec![x],
            engine: Box::new({
                let w = w.clone();
                move |tape, vars| scalarize(tape, &vars[0].l2_normalize(1).unwrap(), &w)
            }),
            reference: Box::new({
                let w = w.clone();
                move |ins| dot64(&reference::l2_normalize_rows(&ins[0], n), &w)
            }),
        });

        let x = randn(&mut rng, &[3, n]);
        let gamma = positive(&mut rng, &[n]);
        let beta = randn(&mut rng, &[n]);
        run_case(Case {
            name: "layer_norm",
            inputs: vec![x, gamma, beta],
            engine: Box::new({
                let w = w.clone();
                move |tape, vars| {
                    scalarize(
                        tape,
                        &vars[0].layer_norm(&vars[1], &vars[2], 1e-5).unwrap(),
                        &w,
                    )
                }
            }),
            reference: Box::new({
                let w = w.clone();
                move |ins| dot64(&reference::layer_norm(&ins[0], &ins[1], &ins[2], 1e-5), &w)
            }),
        });
    }
}

#[test]
fn structural_ops_match_finite_differences() {
    for seed in 0..8u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);

        let (a, b) = (randn(&mut rng, &[2, 3]), randn(&mut rng, &[2, 3]));
        let w = weights(&mut rng, 12);
        run_case(Case {
            name: "concat_axis0",
            inputs: vec![a, b],
            engine: Box::new({
                let w = w.clone();
                move |tape, vars| {
                    scalarize(
                        tape,
                        &Var::concat(&[vars[0].clone(), vars[1].clone()], 0).unwrap(),
                        &w,
                    )
                }
            }),
            reference: Box::new({
                let w = w.clone();
                move |ins| {
                    let mut out = ins[0].clone();
                    out.extend_from_slice(&ins[1]);
                    dot64(&out, &w)
                }
            }),
        });

        let x = randn(&mut rng, &[3, 5]);
        let w = weights(&mut rng, 6);
        run_case(Case {
            name: "slice_axis1",
            inputs: vec![x],
            engine: Box::new({
                let w = w.clone();
                move |tape, vars| scalarize(tape, &vars[0].slice(1, 2, 2).unwrap(), &w)
            }),
            reference: Box::new({
                let w = w.clone();
                move |ins| {
                    let mut out = Vec::new();
                    for r in 0..3 {
                        out.extend_from_slice(&ins[0][r * 5 + 2..r * 5 + 4]);
                    }
                    dot64(&out, &w)
                }
            }),
        });

        let x = randn(&mut rng, &[2, 3, 4]);
        let w = weights(&mut rng, 24);
        run_case(Case {
            name: "permute",
            inputs: vec![x],
            engine: Box::new({
                let w = w.clone();
                move |tape, vars| scalarize(tape, &vars[0].permute(&[2, 0, 1]).unwrap(), &w)
            }),
            reference: Box::new({
                let w = w.clone();
                move |ins| {
                    // out[k][i][j] = in[i][j][k]
                    let mut out = vec![0.0; 24];
                    for i in 0..2 {
                        for j in 0..3 {
                            for k in 0..4 {
                                out[k * 6 + i * 3 + j] = ins[0][i * 12 + j * 4 + k];
                            }
                        }
                    }
                    dot64(&out, &w)
                }
            }),
        });

        let x = randn(&mut rng, &[2, 6]);
        let w = weights(&mut rng, 12);
        run_case(Case {
            name: "reshape",
            inputs: vec![x],
            engine: Box::new({
                let w = w.clone();
                move |tape, vars| scalarize(tape, &vars[0].reshape(&[3, 4]).unwrap(), &w)
            }),
            reference: Box::new({
                let w = w.clone();
                move |ins| dot64(&ins[0], &w)
            }),
        });

        let table = randn(&mut rng, &[5, 3]);
        let ids = vec![4usize, 0, 2, 4];
        let w = weights(&mut rng, 12);
        run_case(Case {
            name: "embedding",
            inputs: vec![table],
            engine: Box::new({
                let (w, ids) = (w.clone(), ids.clone());
                move |tape, vars| scalarize(tape, &vars[0].embedding(&ids).unwrap(), &w)
            }),
            reference: Box::new({
                let (w, ids) = (w.clone(), ids.clone());
                move |ins| {
                    let mut out = Vec::new();
                    for &id in &ids {
                        out.extend_from_slice(&ins[0][id * 3..(id + 1) * 3]);
                    }
                    dot64(&out, &w)
                }
            }),
        });

        let x = randn(&mut rng, &[3, 4, 2]);
        let positions = vec![1usize, 3, 0];
        let w = weights(&mut rng, 6);
        run_case(Case {
            name: "take_positions",
            inputs: vec![x],
            engine: Box::new({
                let (w, positions) = (w.clone(), positions.clone());
                move |tape, vars| {
                    scalarize(tape, &vars[0].take_positions(&positions).unwrap(), &w)
                }
            }),
            reference: Box::new({
                let (w, positions) = (w.clone(), positions.clone());
                move |ins| {
                    let mut out = Vec::new();
                    for (row, &p) in positions.iter().enumerate() {
                        let base = (row * 4 + p) * 2;
                        out.extend_from_slice(&ins[0][base..base + 2]);
                    }
                    dot64(&out, &w)
                }
            }),
        });

        let x = randn(&mut rng, &[4, 3]);
        let classes = vec![2usize, 0, 1, 2];
        let w = weights(&mut rng, 4);
        run_case(Case {
            name: "pick_class",
            inputs: vec![x],
            engine: Box::new({
                let (w, classes) = (w.clone(), classes.clone());
                move |tape, vars| scalarize(tape, &vars[0].pick_class(&classes).unwrap(), &w)
            }),
            reference: Box::new({
                let (w, classes) = (w.clone(), classes.clone());
                move |ins| {
                    let out: Vec<f64> = classes
                        .iter()
                        .enumerate()
                        .map(|(r, &c)| ins[0][r * 3 + c])
                        .collect();
                    dot64(&out, &w)
                }
            }),
        });
    }
}

#[test]
fn composed_losses_match_finite_differences() {
    use microtol::models::{clip_loss, flat_ce_loss, hier_ce_loss};

    for seed in 0..6u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);

        // Contrastive loss through the normalization, as trained: raw
        // embeddings in, l2-normalized inside the graph.
        let (b, e) = (4usize, 6usize);
        let raw_img = randn(&mut rng, &[b, e]);
        let raw_txt = randn(&mut rng, &[b, e]);
        let log_temp = Tensor::scalar(rng.gen_range(0.0..2.0f32));
        run_case(Case {
            name: "clip_loss_composed",
            inputs: vec![raw_img, raw_txt, log_temp],
            engine: Box::new(move |_, vars| {
                let img = vars[0].l2_normalize(1).unwrap();
                let txt = vars[1].l2_normalize(1).unwrap();
                clip_loss(&img, &txt, &vars[2]).unwrap()
            }),
            reference: Box::new(move |ins| {
                reference::clip_composed(&ins[0], &ins[1], ins[2][0], b, e)
            }),
        });

        let (n, c) = (5usize, 4usize);
        let logits = randn(&mut rng, &[n, c]);
        let labels = vec![0usize, 3, 1, 2, 0];
        run_case(Case {
            name: "flat_ce_loss",
            inputs: vec![logits],
            engine: Box::new({
                let labels = labels.clone();
                move |_, vars| flat_ce_loss(&vars[0], &labels).unwrap()
            }),
            reference: Box::new({
                let labels = labels.clone();
                move |ins| reference::flat_ce(&ins[0], &labels, c)
            }),
        });

        let widths = [2usize, 3, 2, 4, 3, 2, 5];
        let n = 3usize;
        let inputs: Vec<Tensor> = widths.iter().map(|&w| randn(&mut rng, &[n, w])).collect();
        let labels: Vec<Vec<usize>> = widths.iter().map(|&w| vec![0, w - 1, w / 2]).collect();
        run_case(Case {
            name: "hier_ce_loss",
            inputs,
            engine: Box::new({
                let labels = labels.clone();
                move |_, vars| hier_ce_loss(vars, &labels).unwrap()
            }),
            reference: Box::new({
                let labels = labels.clone();
                move |ins| {
                    ins.iter()
                        .zip(&widths)
                        .zip(&labels)
                        .map(|((block, &w), lb)| reference::flat_ce(block, lb, w))
                        .sum()
                }
            }),
        });
    }
}
