//! Pairwise similarity losses and the per-item regression terms.
//!
//! Every function returns the loss value together with its gradient with respect
//! to the rows of the first operand. When both operands are the same batch
//! ([`Pairing::Within`]) the gradient includes the contribution of each row
//! appearing on the right-hand side of a pair as well.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{dot, norm, Matrix};

/// Per-pair hinge thresholds, all in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginTable(Matrix);

impl MarginTable {
    pub fn constant(rows: usize, cols: usize, margin: f64) -> Result<Self> {
        let mut m = Matrix::zeros(rows, cols);
        m.as_mut_slice().fill(margin);
        Self::new(m)
    }

    pub fn new(margins: Matrix) -> Result<Self> {
        if let Some(v) = margins.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("margin {v} outside [0, 1]")));
        }
        Ok(Self(margins))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

/// Which rows a pairwise loss compares.
#[derive(Debug, Clone, Copy)]
pub enum Pairing<'a> {
    /// Every ordered pair of rows of the first operand, self-pairs included.
    Within,
    /// Rows of the first operand against the rows of a fixed matrix.
    Against(&'a Matrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TermEval {
    pub value: f64,
    pub grad: Matrix,
    /// Fingerprint of the active hinges / sign pattern.
    pub active_set: u64,
}

fn row_norms(m: &Matrix, what: &'static str) -> Result<Vec<f64>> {
    m.iter_rows()
        .map(|r| {
            let n = norm(r);
            if n == 0.0 {
                Err(Error::DegenerateVector(what))
            } else {
                Ok(n)
            }
        })
        .collect()
}

fn check_pair_shapes(g1: &Matrix, g2: &Matrix, s: &Matrix) -> Result<()> {
    check_len(g1.cols(), g2.cols())?;
    check_len(g1.rows(), s.rows())?;
    check_len(g2.rows(), s.cols())
}

/// Margin-scalable contrastive loss over cosine similarities:
///
/// `Σ_ij ½ [ S_ij·max(M_ij − cos_ij, 0) + (1 − S_ij)·max(M_ij + cos_ij, 0) ]`
///
/// Similar pairs are pulled above cosine `M`, dissimilar pairs pushed below `−M`.
/// A constant table gives the fixed-margin form used by the label network.
pub fn margin_loss(g1: &Matrix, pairing: Pairing<'_>, s: &Matrix, margins: &MarginTable) -> Result<TermEval> {
    let g2 = match pairing {
        Pairing::Within => g1,
        Pairing::Against(g2) => g2,
    };
    check_pair_shapes(g1, g2, s)?;
    check_len(s.rows(), margins.matrix().rows())?;
    check_len(s.cols(), margins.matrix().cols())?;
    let n1 = row_norms(g1, "left pairwise operand")?;
    let n2 = match pairing {
        Pairing::Within => n1.clone(),
        Pairing::Against(g2) => row_norms(g2, "right pairwise operand")?,
    };
    let within = matches!(pairing, Pairing::Within);

    let mut value = 0.0;
    let mut grad = Matrix::zeros(g1.rows(), g1.cols());
    let mut hasher = DefaultHasher::new();
    for i in 0..g1.rows() {
        let a = g1.row(i);
        for j in 0..g2.rows() {
            let b = g2.row(j);
            let m = margins.get(i, j);
            let similar = s.get(i, j) != 0.0;
            if within && i == j {
                // cos(a, a) = 1 exactly; rounding must not flip the hinge.
                value += 0.5 * (if similar { m - 1.0 } else { m + 1.0 }).max(0.0);
                continue;
            }
            let cos = (dot(a, b) / (n1[i] * n2[j])).clamp(-1.0, 1.0);
            let slack = if similar { m - cos } else { m + cos };
            let active = slack > 0.0;
            active.hash(&mut hasher);
            if !active {
                continue;
            }
            value += 0.5 * slack;
            let d_cos = if similar { -0.5 } else { 0.5 };
            // ∂cos/∂a = b/(|a||b|) − cos·a/|a|², and symmetrically for b.
            let inv = 1.0 / (n1[i] * n2[j]);
            let (ca, cb) = (cos / (n1[i] * n1[i]), cos / (n2[j] * n2[j]));
            for (k, gk) in grad.row_mut(i).iter_mut().enumerate() {
                *gk += d_cos * (b[k] * inv - ca * a[k]);
            }
            if within {
                for (k, gk) in grad.row_mut(j).iter_mut().enumerate() {
                    *gk += d_cos * (a[k] * inv - cb * b[k]);
                }
            }
        }
    }
    Ok(TermEval { value, grad, active_set: hasher.finish() })
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Negative log-likelihood of pairwise similarity under a logistic model of the
/// half inner product, `θ_ij = ½⟨G1_i, G2_j⟩`:
///
/// `−Σ_ij ( S_ij·θ_ij − log(1 + exp θ_ij) )`
pub fn log_likelihood_pairwise(g1: &Matrix, pairing: Pairing<'_>, s: &Matrix) -> Result<TermEval> {
    let g2 = match pairing {
        Pairing::Within => g1,
        Pairing::Against(g2) => g2,
    };
    check_pair_shapes(g1, g2, s)?;
    let within = matches!(pairing, Pairing::Within);
    let mut value = 0.0;
    let mut grad = Matrix::zeros(g1.rows(), g1.cols());
    for i in 0..g1.rows() {
        let a = g1.row(i);
        for j in 0..g2.rows() {
            let b = g2.row(j);
            let theta = 0.5 * dot(a, b);
            let sij = s.get(i, j);
            value += softplus(theta) - sij * theta;
            let d_theta = sigmoid(theta) - sij;
            for (k, gk) in grad.row_mut(i).iter_mut().enumerate() {
                *gk += d_theta * 0.5 * b[k];
            }
            if within {
                for (k, gk) in grad.row_mut(j).iter_mut().enumerate() {
                    *gk += d_theta * 0.5 * a[k];
                }
            }
        }
    }
    Ok(TermEval { value, grad, active_set: 0 })
}

/// `‖pred − target‖²` over the whole batch.
pub fn squared_error(pred: &Matrix, target: &Matrix) -> Result<TermEval> {
    check_len(pred.rows(), target.rows())?;
    check_len(pred.cols(), target.cols())?;
    let mut grad = pred.clone();
    let mut value = 0.0;
    for (g, t) in grad.as_mut_slice().iter_mut().zip(target.as_slice()) {
        let d = *g - t;
        value += d * d;
        *g = 2.0 * d;
    }
    Ok(TermEval { value, grad, active_set: 0 })
}

/// `‖H − sign(H)‖²`, with `sign(H)` held fixed (`sign(0) = +1`).
pub fn quantization(h: &Matrix) -> TermEval {
    let mut hasher = DefaultHasher::new();
    let mut grad = h.clone();
    let mut value = 0.0;
    for g in grad.as_mut_slice() {
        let b = if *g < 0.0 { -1.0 } else { 1.0 };
        (b > 0.0).hash(&mut hasher);
        let d = *g - b;
        value += d * d;
        *g = 2.0 * d;
    }
    TermEval { value, grad, active_set: hasher.finish() }
}

pub(crate) fn combine_fingerprints(parts: &[u64]) -> u64 {
    let mut h = DefaultHasher::new();
    parts.hash(&mut h);
    h.finish()
}

/// Weighted sum of named loss components, as reported per batch and per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// Unweighted component values, in the objective's own order.
    pub components: Vec<f64>,
}

/// An objective evaluated on one batch: value plus gradients for each network output.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub breakdown: LossBreakdown,
    pub d_features: Matrix,
    pub d_hash: Matrix,
    pub d_class: Matrix,
    pub active_set: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn margin_loss_zero_when_hinges_inactive() {
        // Two similar items pointing the same way, one dissimilar pointing opposite.
        let g = m(&[&[1.0, 1.0], &[2.0, 2.0], &[-1.0, -1.0]]);
        let s = m(&[&[1.0, 1.0, 0.0], &[1.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let margins = MarginTable::new(m(&[&[1.0, 0.7, 0.0], &[0.7, 1.0, 0.3], &[0.0, 0.3, 1.0]])).unwrap();
        let out = margin_loss(&g, Pairing::Within, &s, &margins).unwrap();
        assert!(out.value.abs() < 1e-15, "{}", out.value);
    }

    #[test]
    fn margin_loss_single_pair() {
        let out = margin_loss(
            &m(&[&[1.0, 0.0]]),
            Pairing::Against(&m(&[&[0.0, 3.0]])),
            &m(&[&[1.0]]),
            &MarginTable::constant(1, 1, 1.0).unwrap(),
        )
        .unwrap();
        assert_eq!(out.value, 0.5);
    }

    #[test]
    fn margin_loss_rejects_zero_vectors() {
        let r = margin_loss(
            &m(&[&[0.0, 0.0]]),
            Pairing::Within,
            &m(&[&[1.0]]),
            &MarginTable::constant(1, 1, 0.0).unwrap(),
        );
        assert!(matches!(r, Err(Error::DegenerateVector(_))));
    }

    #[test]
    fn margin_table_bounds() {
        assert!(MarginTable::constant(2, 2, 1.5).is_err());
        assert!(MarginTable::constant(2, 2, -0.1).is_err());
    }

    #[test]
    fn zero_margin_hinge_sign_rule() {
        // With m = 0 a dissimilar pair costs only if cos > 0, a similar pair only if cos < 0.
        let s0 = m(&[&[0.0]]);
        let s1 = m(&[&[1.0]]);
        let zero = MarginTable::constant(1, 1, 0.0).unwrap();
        let a = m(&[&[1.0, 0.2]]);
        let pos = m(&[&[1.0, 0.0]]);
        let neg = m(&[&[-1.0, 0.0]]);
        assert!(margin_loss(&a, Pairing::Against(&pos), &s0, &zero).unwrap().value > 0.0);
        assert_eq!(margin_loss(&a, Pairing::Against(&neg), &s0, &zero).unwrap().value, 0.0);
        assert!(margin_loss(&a, Pairing::Against(&neg), &s1, &zero).unwrap().value > 0.0);
        assert_eq!(margin_loss(&a, Pairing::Against(&pos), &s1, &zero).unwrap().value, 0.0);
    }

    #[test]
    fn log_likelihood_examples() {
        let orth = log_likelihood_pairwise(
            &m(&[&[1.0, 0.0]]),
            Pairing::Against(&m(&[&[0.0, 1.0]])),
            &m(&[&[1.0]]),
        )
        .unwrap();
        assert!((orth.value - 2f64.ln()).abs() < 1e-15);

        let far = log_likelihood_pairwise(
            &m(&[&[40.0, 0.0]]),
            Pairing::Against(&m(&[&[40.0, 0.0]])),
            &m(&[&[1.0]]),
        )
        .unwrap();
        assert!(far.value >= 0.0 && far.value < 1e-12);

        // Huge dissimilar inner product stays finite.
        let big = log_likelihood_pairwise(
            &m(&[&[1e3, 0.0]]),
            Pairing::Against(&m(&[&[1e3, 0.0]])),
            &m(&[&[0.0]]),
        )
        .unwrap();
        assert!((big.value - 5e5).abs() < 1e-6);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-16);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
    }

    /// Central differences directly on the operand rows.
    fn numeric_grad(f: impl Fn(&Matrix) -> f64, x: &Matrix) -> Matrix {
        let eps = 1e-6;
        let mut g = Matrix::zeros(x.rows(), x.cols());
        for k in 0..x.as_slice().len() {
            let mut p = x.clone();
            p.as_mut_slice()[k] += eps;
            let mut q = x.clone();
            q.as_mut_slice()[k] -= eps;
            g.as_mut_slice()[k] = (f(&p) - f(&q)) / (2.0 * eps);
        }
        g
    }

    fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
        a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn pairwise_gradients_match_differences() {
        let g = m(&[&[0.3, -1.2, 0.8], &[1.1, 0.4, -0.2], &[-0.7, 0.9, 0.5], &[0.2, 0.1, 1.3]]);
        let d = m(&[&[1.0, -1.0, 1.0], &[-1.0, -1.0, 1.0]]);
        let s_within = m(&[
            &[1.0, 0.0, 1.0, 0.0],
            &[0.0, 1.0, 0.0, 1.0],
            &[1.0, 0.0, 1.0, 1.0],
            &[0.0, 1.0, 1.0, 1.0],
        ]);
        let s_dict = m(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0], &[0.0, 1.0]]);
        let mw = MarginTable::new(Matrix::from_vec(4, 4, (0..16).map(|i| (i % 5) as f64 * 0.17).collect()).unwrap())
            .unwrap();
        let md = MarginTable::constant(4, 2, 0.35).unwrap();

        let within = margin_loss(&g, Pairing::Within, &s_within, &mw).unwrap();
        let num = numeric_grad(|x| margin_loss(x, Pairing::Within, &s_within, &mw).unwrap().value, &g);
        assert!(max_abs_diff(&within.grad, &num) < 1e-8);

        let against = margin_loss(&g, Pairing::Against(&d), &s_dict, &md).unwrap();
        let num = numeric_grad(|x| margin_loss(x, Pairing::Against(&d), &s_dict, &md).unwrap().value, &g);
        assert!(max_abs_diff(&against.grad, &num) < 1e-8);

        let ll = log_likelihood_pairwise(&g, Pairing::Within, &s_within).unwrap();
        let num = numeric_grad(|x| log_likelihood_pairwise(x, Pairing::Within, &s_within).unwrap().value, &g);
        assert!(max_abs_diff(&ll.grad, &num) < 1e-8);
    }
}
