//! Dense-layer kernels shared by monolithic, split, and vertical training.
//!
//! Matrices are row-major. Every reduction runs in a fixed index order so
//! that a computation split across parties reproduces the monolithic result
//! bit for bit when the parties call these same kernels.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

/// `acc[r][o] += sum_j x[r][j] * weight[j][o]`, with `j` ascending.
pub fn accumulate(acc: &mut [f64], x: &[f64], n_in: usize, weight: &[f64], n_out: usize) {
    debug_assert_eq!(weight.len(), n_in * n_out);
    for (x_row, acc_row) in x.chunks_exact(n_in).zip(acc.chunks_exact_mut(n_out)) {
        for (&xj, w_row) in x_row.iter().zip(weight.chunks_exact(n_out)) {
            for (a, &w) in acc_row.iter_mut().zip(w_row) {
                *a += xj * w;
            }
        }
    }
}

pub fn add_bias(acc: &mut [f64], bias: &[f64]) {
    for row in acc.chunks_exact_mut(bias.len()) {
        for (a, &b) in row.iter_mut().zip(bias) {
            *a += b;
        }
    }
}

/// `x * weight + bias`: accumulation over inputs first, bias added last.
pub fn affine(x: &[f64], n_in: usize, weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let n_out = bias.len();
    let mut out = vec![0.0; x.len() / n_in * n_out];
    accumulate(&mut out, x, n_in, weight, n_out);
    add_bias(&mut out, bias);
    out
}

pub fn activate(activation: Activation, pre: &[f64]) -> Vec<f64> {
    match activation {
        Activation::Tanh => pre.iter().map(|z| z.tanh()).collect(),
        Activation::Relu => pre.iter().map(|&z| if z > 0.0 { z } else { 0.0 }).collect(),
    }
}

/// Gradient w.r.t. pre-activations given the gradient w.r.t. activations.
pub fn activation_backward(activation: Activation, pre: &[f64], post: &[f64], grad_post: &[f64]) -> Vec<f64> {
    match activation {
        Activation::Tanh => post.iter().zip(grad_post).map(|(a, g)| g * (1.0 - a * a)).collect(),
        Activation::Relu => pre
            .iter()
            .zip(grad_post)
            .map(|(&z, &g)| if z > 0.0 { g } else { 0.0 })
            .collect(),
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &[f64], n_classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(n_classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / sum));
    }
    out
}

/// Cross-entropy of one row of logits against `label`, via log-sum-exp.
pub fn row_cross_entropy(row: &[f64], label: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
    sum.ln() - (row[label] - max)
}

/// Mean cross-entropy over the batch and the residuals
/// `(softmax(z) - onehot(y)) / batch`, which are the gradient of that mean
/// w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &[f64], labels: &[usize], n_classes: usize) -> (f64, Vec<f64>) {
    let rows = labels.len() as f64;
    let probs = softmax(logits, n_classes);
    let mut loss_sum = 0.0;
    for (row, &y) in logits.chunks_exact(n_classes).zip(labels) {
        loss_sum += row_cross_entropy(row, y);
    }
    let mut resid = probs;
    for (row, &y) in resid.chunks_exact_mut(n_classes).zip(labels) {
        for (o, r) in row.iter_mut().enumerate() {
            let target = if o == y { 1.0 } else { 0.0 };
            *r = (*r - target) / rows;
        }
    }
    (loss_sum / rows, resid)
}

/// `g[j][o] = sum_r x[r][j] * resid[r][o] + l2 * weight[j][o]`, `r` ascending.
pub fn weight_grad(x: &[f64], n_in: usize, resid: &[f64], weight: &[f64], l2: f64) -> Vec<f64> {
    let n_out = weight.len() / n_in;
    let mut g = vec![0.0; weight.len()];
    for (x_row, r_row) in x.chunks_exact(n_in).zip(resid.chunks_exact(n_out)) {
        for (&xj, g_row) in x_row.iter().zip(g.chunks_exact_mut(n_out)) {
            for (gv, &r) in g_row.iter_mut().zip(r_row) {
                *gv += xj * r;
            }
        }
    }
    for (gv, &w) in g.iter_mut().zip(weight) {
        *gv += l2 * w;
    }
    g
}

pub fn bias_grad(resid: &[f64], n_out: usize) -> Vec<f64> {
    let mut g = vec![0.0; n_out];
    for row in resid.chunks_exact(n_out) {
        for (gv, &r) in g.iter_mut().zip(row) {
            *gv += r;
        }
    }
    g
}

/// Gradient w.r.t. the layer input: `gx[r][j] = sum_o resid[r][o] * weight[j][o]`.
pub fn input_grad(resid: &[f64], weight: &[f64], n_in: usize) -> Vec<f64> {
    let n_out = weight.len() / n_in;
    let mut gx = Vec::with_capacity(resid.len() / n_out * n_in);
    for r_row in resid.chunks_exact(n_out) {
        for w_row in weight.chunks_exact(n_out) {
            let mut acc = 0.0;
            for (&r, &w) in r_row.iter().zip(w_row) {
                acc += r * w;
            }
            gx.push(acc);
        }
    }
    gx
}

/// `0.5 * l2 * ||weight||^2`.
pub fn l2_penalty(weight: &[f64], l2: f64) -> f64 {
    0.5 * l2 * weight.iter().map(|w| w * w).sum::<f64>()
}

/// Plain SGD: `p <- p - lr * g`.
pub fn sgd_step(params: &mut [f64], grad: &[f64], lr: f64) {
    for (p, &g) in params.iter_mut().zip(grad) {
        *p -= lr * g;
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
