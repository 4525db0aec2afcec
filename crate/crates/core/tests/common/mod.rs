//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use mms_core::model::{self, DenseLayer, NetworkParams};
use mms_core::{Architecture, ForwardResult, LinearHead, Matrix, Stream, Vector};

pub fn random_matrix(rows: usize, cols: usize, scale: f64, s: &mut Stream) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * s.gaussian())
}

pub fn random_head(n: usize, d: usize, s: &mut Stream) -> LinearHead {
    let w = random_matrix(n, d, 1.0, s);
    let b: Vector = (0..n).map(|_| s.gaussian()).collect();
    LinearHead::new(w, b).unwrap()
}

/// Forward pass through a bare head, the features being the inputs.
pub fn head_pool(head: &LinearHead, features: Matrix) -> ForwardResult {
    let logits = head.logits(&features).unwrap();
    ForwardResult { features, logits }
}

/// Solves `A x = rhs` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Vec<f64> {
    let n = rhs.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        rhs.swap(col, pivot);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            let (upper, lower) = a.split_at_mut(r);
            for (x, &p) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                *x -= f * p;
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let tail: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (rhs[r] - tail) / a[r][r];
    }
    x
}

/// Minimum-norm `dy` with `(w1 - w2)·(y + dy) + (b1 - b2) = 0`, found by
/// solving the KKT system of `min ½‖dy‖²` under that constraint:
///
/// ```text
/// [ I   a ] [dy]   [ 0 ]
/// [ aᵀ  0 ] [λ ] = [-g ]
/// ```
pub fn kkt_displacement(y: &[f64], head: &LinearHead, i1: usize, i2: usize) -> Vec<f64> {
    let d = y.len();
    let a: Vec<f64> = (0..d)
        .map(|j| head.weights[(i1, j)] - head.weights[(i2, j)])
        .collect();
    let g: f64 = a.iter().zip(y).map(|(p, q)| p * q).sum::<f64>() + head.biases[i1] - head.biases[i2];
    let mut m = vec![vec![0.0; d + 1]; d + 1];
    for j in 0..d {
        m[j][j] = 1.0;
        m[j][d] = a[j];
        m[d][j] = a[j];
    }
    let mut rhs = vec![0.0; d + 1];
    rhs[d] = -g;
    let x = solve(m, rhs);
    x[..d].to_vec()
}

/// Distance from `y` to the boundary between its top two classes, by
/// constrained minimization.
pub fn mms_oracle(y: &[f64], head: &LinearHead) -> f64 {
    let s = head.scores(y);
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let dy = kkt_displacement(y, head, order[0], order[1]);
    dy.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Smallest `t >= 0` with `f_i1(y + t·u) = f_i2(y + t·u)` along unit `u`,
/// or infinity if the line never meets the boundary.
pub fn line_hit(y: &[f64], u: &[f64], head: &LinearHead, i1: usize, i2: usize) -> f64 {
    let gap = |p: &[f64]| {
        let s = head.scores(p);
        s[i1] - s[i2]
    };
    let g0 = gap(y);
    let moved: Vec<f64> = y.iter().zip(u).map(|(a, b)| a + b).collect();
    let slope = gap(&moved) - g0;
    let t = -g0 / slope;
    if t.is_finite() && t >= 0.0 {
        t
    } else {
        f64::INFINITY
    }
}

pub fn random_network(arch: Architecture, input: usize, n: usize, s: &mut Stream) -> NetworkParams {
    let mut p = model::init_params(arch, input, n, s).unwrap();
    // Non-zero biases so their gradients are exercised too.
    if let Some(DenseLayer { biases, .. }) = p.hidden.as_mut() {
        for b in biases.as_mut_slice() {
            *b = 0.3 * s.gaussian();
        }
    }
    for b in p.head.biases.as_mut_slice() {
        *b = 0.3 * s.gaussian();
    }
    p
}

/// Largest relative error between the analytic gradient and central
/// differences with step `h`, over every parameter.
pub fn max_fd_relative_error(params: &NetworkParams, x: &Matrix, labels: &[usize], h: f64) -> f64 {
    let (_, grad) = model::loss_and_grad(params, x, labels).unwrap();
    let analytic = grad.values();
    let loss = |p: &NetworkParams| model::loss_and_grad(p, x, labels).unwrap().0;
    let mut worst: f64 = 0.0;
    for (k, &g) in analytic.iter().enumerate() {
        let mut plus = params.clone();
        *plus.values_mut()[k] += h;
        let mut minus = params.clone();
        *minus.values_mut()[k] -= h;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
        let rel = (numeric - g).abs() / (numeric.abs() + g.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}

/// Extreme-`b` positions by fully sorting `(score, index)` pairs.
pub fn full_sort_extreme(scores: &[f64], smallest: bool, b: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| {
        let c = if smallest {
            scores[i].total_cmp(&scores[j])
        } else {
            scores[j].total_cmp(&scores[i])
        };
        c.then(i.cmp(&j))
    });
    order.truncate(b);
    order.sort_unstable();
    order
}

/// Pool scores with deliberate ties: values are drawn from a small set.
pub fn tied_scores(n: usize, levels: usize, s: &mut Stream) -> Vec<f64> {
    (0..n).map(|_| s.below(levels) as f64 * 0.25).collect()
}
