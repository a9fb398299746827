//! Library loss evaluators against the double-loop references, reported as the
//! worst relative discrepancy over `rounds` random batches.

use hashlearn::data::batch_similarity;
use hashlearn::image::{j_img_loss, j_ms, log_map_pairwise_loss, ImageNetConfig, Variant};
use hashlearn::linalg::Matrix;
use hashlearn::loss::MarginTable;
use hashlearn::semantic::{j_lab_loss, SemanticNetConfig};
use rand::Rng;

use super::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

pub fn worst_j_lab(seed: u64, rounds: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..rounds {
        let b = random_batch(&mut r);
        let w = LabWeights {
            alpha: r.random_range(0.0..3.0),
            lambda: r.random_range(0.0..3.0),
            eta: r.random_range(0.0..3.0),
            beta: r.random_range(0.0..1.0),
            margin: r.random_range(0.0..1.0),
        };
        let cfg = SemanticNetConfig {
            alpha: w.alpha,
            lambda: w.lambda,
            eta: w.eta,
            beta: w.beta,
            margin: w.margin,
            ..SemanticNetConfig::default()
        };
        let got = j_lab_loss(&b.record, &b.labels, &cfg).unwrap().breakdown.total;
        let want = naive_j_lab(b.record.features(), &b.record.hash, &b.record.class, &b.labels, &w);
        worst = worst.max(rel(got, want));
    }
    worst
}

pub fn worst_j_ms(seed: u64, rounds: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..rounds {
        let n1 = r.random_range(1..=10);
        let n2 = r.random_range(1..=10);
        let d = r.random_range(2..=12);
        let (g1, g2) = (random_matrix(&mut r, n1, d), random_matrix(&mut r, n2, d));
        let s: Vec<Vec<f64>> = (0..n1).map(|_| (0..n2).map(|_| f64::from(u8::from(r.random::<bool>()))).collect()).collect();
        let m: Vec<Vec<f64>> = (0..n1).map(|_| (0..n2).map(|_| r.random_range(0.0..=1.0)).collect()).collect();
        let table = MarginTable::new(Matrix::from_rows(&m).unwrap()).unwrap();
        let got = j_ms(&g1, &g2, &Matrix::from_rows(&s).unwrap(), &table).unwrap();
        let want = naive_margin(&g1, &g2, |i, j| s[i][j] == 1.0, |i, j| m[i][j]);
        worst = worst.max(rel(got, want));
    }
    worst
}

pub fn worst_log_map(seed: u64, rounds: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..rounds {
        let b = random_batch(&mut r);
        // Scaled so some inner products are large enough to matter for softplus.
        let mut h = b.record.hash.clone();
        h.as_mut_slice().iter_mut().for_each(|v| *v *= 3.0);
        let s = batch_similarity(&b.labels, &b.labels).unwrap();
        let got = log_map_pairwise_loss(&h, &s).unwrap();
        let want = naive_loglik(&h, &h, |i, j| similar(&b.labels[i], &b.labels[j]));
        worst = worst.max(rel(got, want));
    }
    worst
}

/// Worst discrepancy per variant, in the order full, sym, mars, cos.
pub fn worst_j_img(seed: u64, rounds: usize) -> [(String, f64); 4] {
    let mut r = rng(seed);
    let mut worst = [0.0f64; 4];
    for _ in 0..rounds {
        let b = random_batch(&mut r);
        let dict = batch_dictionary(&mut r, &b);
        let w = ImgWeights {
            alpha: r.random_range(0.0..2.0),
            lambda: r.random_range(0.0..2.0),
            gamma: r.random_range(0.0..2.0),
            mu: r.random_range(0.0..2.0),
            eta: r.random_range(0.0..2.0),
            beta: r.random_range(0.0..1.0),
        };
        let m = r.random_range(0.0..=1.0);
        let nd = NaiveDict { keys: dict.keys(), codes: dict.codes(), features: dict.features() };
        let pairs = [
            (Variant::Full, NaiveVariant::Full),
            (Variant::Sym, NaiveVariant::Sym),
            (Variant::Mars(m), NaiveVariant::Mars(m)),
            (Variant::Cos, NaiveVariant::Cos),
        ];
        for (slot, (variant, naive)) in pairs.into_iter().enumerate() {
            let cfg = ImageNetConfig {
                alpha: w.alpha,
                lambda: w.lambda,
                gamma: w.gamma,
                mu: w.mu,
                eta: w.eta,
                beta: w.beta,
                variant,
                ..ImageNetConfig::default()
            };
            let got = j_img_loss(&b.record, &b.labels, &dict, &cfg).unwrap().breakdown.total;
            let want = naive_j_img(b.record.features(), &b.record.hash, &b.record.class, &b.labels, &nd, naive, &w);
            worst[slot] = worst[slot].max(rel(got, want));
        }
    }
    let names = ["full", "sym", "mars", "cos"];
    std::array::from_fn(|i| (names[i].to_string(), worst[i]))
}
