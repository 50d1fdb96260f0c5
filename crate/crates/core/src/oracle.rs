//! Reference implementations used only by tests.
//!
//! Each function here is written the slow, literal way and shares no code
//! with the production path it is compared against.

#![allow(clippy::needless_range_loop)]

use std::collections::HashMap;

use crate::projection::ProjectionParams;

fn dist(x: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..x.len() {
        s += (x[k] - y[k]).powi(2);
    }
    s.sqrt()
}

/// Literal transliteration of the in-batch N-pairs loop: outer loop over
/// positive anchors, inner loop over every other candidate, average over
/// the number of terms visited.
pub fn npairs_loss_loop(
    anchors: &[Vec<f64>],
    positives: &[Vec<f64>],
    labels: &[u8],
    margin: f64,
) -> f64 {
    let mut loss = 0.0;
    let mut count = 0usize;
    for i in 0..anchors.len() {
        if labels[i] == 1 {
            let positive_distance = dist(&anchors[i], &positives[i]);
            for j in 0..anchors.len() {
                if i != j {
                    let negative_distance = dist(&anchors[i], &positives[j]);
                    loss += f64::max(0.0, positive_distance - negative_distance + margin);
                    count += 1;
                }
            }
        }
    }
    if count > 0 {
        loss / count as f64
    } else {
        0.0
    }
}

/// Adapter output evaluated with explicit index arithmetic.
pub fn projection_formula(p: &ProjectionParams, x: &[f64]) -> Vec<f64> {
    let (d, h) = (p.embed_dim(), p.hidden_dim());
    let [w1, b1, w2, b2, w3, b3] = p.tensors();
    let mut z1 = vec![0.0; h];
    for r in 0..h {
        let mut s = b1[r];
        for c in 0..d {
            s += w1[r * d + c] * x[c];
        }
        z1[r] = if s > 0.0 { s } else { 0.0 };
    }
    let mut z2 = vec![0.0; h];
    for r in 0..h {
        let mut s = b2[r];
        for c in 0..h {
            s += w2[r * h + c] * z1[c];
        }
        z2[r] = if s > 0.0 { s } else { 0.0 };
    }
    let mut out = vec![0.0; d];
    for r in 0..d {
        let mut s = b3[r];
        for c in 0..h {
            s += w3[r * h + c] * z2[c];
        }
        out[r] = s;
    }
    out
}

/// `(f(x+h) − f(x−h)) / 2h`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, step: f64) -> f64 {
    (f(x + step) - f(x - step)) / (2.0 * step)
}

/// Relative error with a floor on the denominator so near-zero gradients
/// are compared absolutely.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Scores every row, then stable-sorts the full list best-first. Cosine
/// ranks descending, Euclidean ascending; equal scores keep row order.
pub fn full_sort_ranking(rows: &[Vec<f64>], q: &[f64], cosine: bool) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if cosine {
                let dot: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
                let nr = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nq = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                (i, dot / (nr * nq))
            } else {
                (i, dist(r, q))
            }
        })
        .collect();
    if cosine {
        scored.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap());
    } else {
        scored.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap());
    }
    scored
}

/// Metrics from an explicit confusion matrix over the sorted label set.
/// Returns `(accuracy, weighted precision, weighted recall, weighted f1)`.
pub fn confusion_matrix_metrics(gold: &[String], pred: &[String]) -> (f64, f64, f64, f64) {
    let mut labels: Vec<&String> = gold.iter().chain(pred).collect();
    labels.sort();
    labels.dedup();
    let index: HashMap<&String, usize> = labels.iter().enumerate().map(|(i, l)| (*l, i)).collect();
    let k = labels.len();
    let mut cm = vec![vec![0usize; k]; k];
    for (g, p) in gold.iter().zip(pred) {
        cm[index[g]][index[p]] += 1;
    }
    let n = gold.len() as f64;
    let correct: usize = (0..k).map(|c| cm[c][c]).sum();
    let (mut precision, mut recall, mut f1) = (0.0, 0.0, 0.0);
    for c in 0..k {
        let support: usize = cm[c].iter().sum();
        let predicted: usize = (0..k).map(|r| cm[r][c]).sum();
        let tp = cm[c][c] as f64;
        let p = if predicted == 0 {
            0.0
        } else {
            tp / predicted as f64
        };
        let r = if support == 0 {
            0.0
        } else {
            tp / support as f64
        };
        let f = if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        };
        let w = support as f64 / n;
        precision += w * p;
        recall += w * r;
        f1 += w * f;
    }
    (correct as f64 / n, precision, recall, f1)
}

/// Classic BM25 with the plus-one idf, recomputing all statistics from
/// pre-tokenized documents on every call.
pub fn bm25_scores(docs: &[Vec<String>], query: &[String], k1: f64, b: f64) -> Vec<f64> {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    docs.iter()
        .map(|doc| {
            let mut score = 0.0;
            for term in query {
                let tf = doc.iter().filter(|t| *t == term).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = docs.iter().filter(|d| d.contains(term)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                score +=
                    idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * doc.len() as f64 / avgdl));
            }
            score
        })
        .collect()
}

/// Outcome of one composed finite-difference check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub batch: usize,
    pub active_terms: usize,
    /// Parameters plus anchor coordinates compared.
    pub checked: usize,
    pub max_relative_error: f64,
}

/// Builds a random small instance (d ≤ 8, h ≤ 12, N ≤ 6) and compares the
/// analytic gradient of loss(anchors, projection(inputs)) against central
/// differences computed through [`projection_formula`] and
/// [`npairs_loss_loop`]. Instances near a hinge or ReLU kink, or with no active hinge, are
/// redrawn.
/// Gradients smaller than `1e-3` in magnitude are compared absolutely.
pub fn composed_gradient_check(seed: u64) -> GradientCheck {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::loss::{npairs_loss, LossBatch};
    use crate::projection::{init_params, ParamGrads};

    const STEP: f64 = 1e-5;
    const KINK: f64 = 1e-3;
    const MARGIN: f64 = 1.0;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let d = rng.random_range(2..=8);
        let h = rng.random_range(2..=12);
        let n = rng.random_range(2..=6);
        let mut params = init_params(d, h, rng.random()).expect("valid dims");
        for t in params.tensors_mut().into_iter().skip(1).step_by(2) {
            t.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        }
        let mut draw = |len: usize| {
            (0..len)
                .map(|_| rng.random_range(-1.5..1.5))
                .collect::<Vec<f64>>()
        };
        let anchors = draw(n * d);
        let inputs = draw(n * d);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1)).collect();
        labels[0] = 1;

        let rows = |m: &[f64]| m.chunks(d).map(<[f64]>::to_vec).collect::<Vec<_>>();
        let traces: Vec<_> = inputs
            .chunks(d)
            .map(|x| params.forward(x).expect("dims"))
            .collect();
        let near_relu = traces
            .iter()
            .any(|t| t.pre1.iter().chain(&t.pre2).any(|p| p.abs() < KINK));
        let projected: Vec<Vec<f64>> = traces.iter().map(|t| t.output.clone()).collect();
        let a_rows = rows(&anchors);
        let mut near_hinge = false;
        for i in (0..n).filter(|&i| labels[i] == 1) {
            let pos = dist(&a_rows[i], &projected[i]);
            for (j, p) in projected.iter().enumerate() {
                let neg = dist(&a_rows[i], p);
                if i != j && ((pos - neg + MARGIN).abs() < KINK || neg < KINK) {
                    near_hinge = true;
                }
            }
            near_hinge |= pos < KINK;
        }
        if near_relu || near_hinge {
            continue;
        }

        let flat: Vec<f64> = projected.concat();
        let loss = npairs_loss(&LossBatch {
            anchors: &anchors,
            candidates: &flat,
            labels: &labels,
            dim: d,
            margin: MARGIN,
        })
        .expect("valid batch");
        if loss.active_terms == 0 {
            continue;
        }
        let mut grads = ParamGrads::zeros(d, h);
        for (t, g) in traces.iter().zip(loss.grad_candidates.chunks(d)) {
            params.backward_accumulate(t, g, &mut grads).expect("dims");
        }

        let reference = |p: &ProjectionParams, a: &[Vec<f64>]| {
            let out: Vec<Vec<f64>> = rows(&inputs)
                .iter()
                .map(|x| projection_formula(p, x))
                .collect();
            npairs_loss_loop(a, &out, &labels, MARGIN)
        };

        let mut worst: f64 = 0.0;
        let mut checked = 0;
        for (t, analytic) in grads.tensors().iter().enumerate() {
            for k in 0..analytic.len() {
                let fd = central_difference(
                    |v| {
                        let mut p = params.clone();
                        p.tensors_mut()[t][k] = v;
                        reference(&p, &a_rows)
                    },
                    params.tensors()[t][k],
                    STEP,
                );
                worst = worst.max(relative_error(analytic[k], fd, KINK));
                checked += 1;
            }
        }
        for k in 0..anchors.len() {
            let fd = central_difference(
                |v| {
                    let mut a = anchors.clone();
                    a[k] = v;
                    reference(&params, &rows(&a))
                },
                anchors[k],
                STEP,
            );
            worst = worst.max(relative_error(loss.grad_anchors[k], fd, KINK));
            checked += 1;
        }
        return GradientCheck {
            embed_dim: d,
            hidden_dim: h,
            batch: n,
            active_terms: loss.active_terms,
            checked,
            max_relative_error: worst,
        };
    }
}
