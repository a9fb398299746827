//! Independent reference implementations: plain loops, no shared helpers from the
//! library beyond its data types.
#![allow(dead_code)]

pub mod losses;

use hashlearn::data::LabelVector;
use hashlearn::linalg::{BinaryCode, Matrix};
use hashlearn::nn::ForwardRecord;
use hashlearn::semantic::SemanticDictionary;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn similar(a: &LabelVector, b: &LabelVector) -> bool {
    a.indicators().iter().zip(b.indicators()).any(|(x, y)| *x == 1 && *y == 1)
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for k in 0..a.len() {
        ab += a[k] * b[k];
        aa += a[k] * a[k];
        bb += b[k] * b[k];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

fn hinge(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// `Σ_ij ½[S·max(M − cos, 0) + (1 − S)·max(M + cos, 0)]`.
pub fn naive_margin(g1: &Matrix, g2: &Matrix, s: impl Fn(usize, usize) -> bool, m: impl Fn(usize, usize) -> f64) -> f64 {
    let mut total = 0.0;
    for i in 0..g1.rows() {
        for j in 0..g2.rows() {
            let c = cos(g1.row(i), g2.row(j));
            total += if s(i, j) { 0.5 * hinge(m(i, j) - c) } else { 0.5 * hinge(m(i, j) + c) };
        }
    }
    total
}

/// `−Σ_ij (S·θ − log(1 + e^θ))`, `θ = ½⟨a, b⟩`.
pub fn naive_loglik(g1: &Matrix, g2: &Matrix, s: impl Fn(usize, usize) -> bool) -> f64 {
    let mut total = 0.0;
    for i in 0..g1.rows() {
        for j in 0..g2.rows() {
            let mut ip = 0.0;
            for k in 0..g1.cols() {
                ip += g1.get(i, k) * g2.get(j, k);
            }
            let theta = 0.5 * ip;
            let sv = if s(i, j) { 1.0 } else { 0.0 };
            total += (1.0 + theta.exp()).ln() - sv * theta;
        }
    }
    total
}

pub fn naive_label_error(lhat: &Matrix, labels: &[LabelVector]) -> f64 {
    let mut total = 0.0;
    for (i, l) in labels.iter().enumerate() {
        for (k, &v) in l.indicators().iter().enumerate() {
            let d = lhat.get(i, k) - v as f64;
            total += d * d;
        }
    }
    total
}

pub fn naive_quantization(h: &Matrix) -> f64 {
    let mut total = 0.0;
    for v in h.as_slice() {
        let s = if *v >= 0.0 { 1.0 } else { -1.0 };
        total += (v - s) * (v - s);
    }
    total
}

pub struct LabWeights {
    pub alpha: f64,
    pub lambda: f64,
    pub eta: f64,
    pub beta: f64,
    pub margin: f64,
}

pub fn naive_j_lab(f: &Matrix, h: &Matrix, lhat: &Matrix, labels: &[LabelVector], w: &LabWeights) -> f64 {
    let s = |i: usize, j: usize| similar(&labels[i], &labels[j]);
    let m = |_: usize, _: usize| w.margin;
    w.alpha * naive_margin(f, f, s, m)
        + w.lambda * naive_margin(h, h, s, m)
        + w.eta * naive_label_error(lhat, labels)
        + w.beta * naive_quantization(h)
}

#[derive(Clone, Copy, PartialEq, Debug)]
pub enum NaiveVariant {
    Full,
    Sym,
    Mars(f64),
    Cos,
}

pub struct ImgWeights {
    pub alpha: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub mu: f64,
    pub eta: f64,
    pub beta: f64,
}

pub struct NaiveDict<'a> {
    pub keys: &'a [LabelVector],
    pub codes: &'a [BinaryCode],
    pub features: &'a Matrix,
}

fn code_matrix(codes: &[BinaryCode]) -> Matrix {
    Matrix::from_rows(&codes.iter().map(|c| c.to_reals()).collect::<Vec<_>>()).unwrap()
}

pub fn naive_j_img(
    f: &Matrix,
    h: &Matrix,
    lhat: &Matrix,
    labels: &[LabelVector],
    dict: &NaiveDict<'_>,
    variant: NaiveVariant,
    w: &ImgWeights,
) -> f64 {
    let entry: Vec<usize> =
        labels.iter().map(|l| dict.keys.iter().position(|k| k == l).expect("label in dictionary")).collect();
    let u = code_matrix(dict.codes);
    let code_margin = |a: usize, b: usize| {
        let c = cos(u.row(a), u.row(b));
        if c > 0.0 {
            c
        } else {
            0.0
        }
    };
    let within = |i: usize, j: usize| similar(&labels[i], &labels[j]);
    let against = |i: usize, j: usize| similar(&labels[i], &dict.keys[j]);
    let tail = w.eta * naive_label_error(lhat, labels) + w.beta * naive_quantization(h);
    match variant {
        NaiveVariant::Cos => w.lambda * naive_loglik(h, h, within) + w.mu * naive_loglik(h, &u, against) + tail,
        _ => {
            let m_within = |i: usize, j: usize| match variant {
                NaiveVariant::Mars(m) => m,
                _ => code_margin(entry[i], entry[j]),
            };
            let m_against = |i: usize, j: usize| match variant {
                NaiveVariant::Mars(m) => m,
                _ => code_margin(entry[i], j),
            };
            let (gamma, mu) = if variant == NaiveVariant::Sym { (0.0, 0.0) } else { (w.gamma, w.mu) };
            w.alpha * naive_margin(f, f, within, m_within)
                + w.lambda * naive_margin(h, h, within, m_within)
                + gamma * naive_margin(f, dict.features, against, m_against)
                + mu * naive_margin(h, &u, against, m_against)
                + tail
        }
    }
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, classes: usize, extra: f64) -> Vec<LabelVector> {
    (0..n)
        .map(|_| {
            let mut ind: Vec<u8> = (0..classes).map(|_| u8::from(rng.random::<f64>() < extra)).collect();
            ind[rng.random_range(0..classes)] = 1;
            LabelVector::new(ind).unwrap()
        })
        .collect()
}

pub fn random_code(rng: &mut ChaCha8Rng, k: usize) -> BinaryCode {
    BinaryCode::new((0..k).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect()).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Result of brute-force retrieval for one query set.
pub struct BruteForce {
    pub per_query_ap: Vec<Option<f64>>,
    pub map: Option<f64>,
    /// `(radius, recall, precision)`.
    pub pr_radius: Vec<(usize, f64, f64)>,
    pub pr_rank: Vec<(usize, f64, f64)>,
    pub topk: Vec<(usize, f64)>,
}

fn hamming(a: &BinaryCode, b: &BinaryCode) -> usize {
    a.bits().iter().zip(b.bits()).filter(|(x, y)| x != y).count()
}

/// Rank by sorting `(distance, id)` pairs, then evaluate every metric by its
/// textbook definition.
pub fn brute_force(
    queries: &[BinaryCode],
    query_labels: &[LabelVector],
    db: &[BinaryCode],
    db_ids: &[u64],
    db_labels: &[LabelVector],
    cutoff: Option<usize>,
    topk: &[usize],
) -> BruteForce {
    let k_bits = db[0].len();
    let mut rankings = Vec::new();
    for q in queries {
        let mut order: Vec<(usize, u64, usize)> =
            (0..db.len()).map(|p| (hamming(q, &db[p]), db_ids[p], p)).collect();
        order.sort();
        rankings.push(order);
    }
    let rel = |qi: usize, p: usize| similar(&query_labels[qi], &db_labels[p]);

    let mut per_query_ap = Vec::new();
    for (qi, order) in rankings.iter().enumerate() {
        let total: usize = (0..db.len()).filter(|&p| rel(qi, p)).count();
        if total == 0 {
            per_query_ap.push(None);
            continue;
        }
        let limit = cutoff.unwrap_or(db.len()).min(db.len());
        let mut hits = 0.0;
        let mut sum = 0.0;
        for (i, &(_, _, p)) in order.iter().take(limit).enumerate() {
            if rel(qi, p) {
                hits += 1.0;
                sum += hits / (i as f64 + 1.0);
            }
        }
        per_query_ap.push(Some(if hits == 0.0 { 0.0 } else { sum / hits }));
    }
    let aps: Vec<f64> = per_query_ap.iter().flatten().copied().collect();
    let map = if aps.is_empty() { None } else { Some(aps.iter().sum::<f64>() / aps.len() as f64) };

    let evaluable: Vec<usize> = (0..queries.len()).filter(|&q| per_query_ap[q].is_some()).collect();
    let mut pr_radius = Vec::new();
    for r in 0..=k_bits {
        let mut recall = 0.0;
        let mut precision = 0.0;
        let mut with_hits = 0;
        for &qi in &evaluable {
            let retrieved: Vec<usize> = (0..db.len()).filter(|&p| hamming(&queries[qi], &db[p]) <= r).collect();
            let hits = retrieved.iter().filter(|&&p| rel(qi, p)).count() as f64;
            let total = (0..db.len()).filter(|&p| rel(qi, p)).count() as f64;
            recall += hits / total;
            if !retrieved.is_empty() {
                precision += hits / retrieved.len() as f64;
                with_hits += 1;
            }
        }
        if with_hits > 0 && !evaluable.is_empty() {
            pr_radius.push((r, recall / evaluable.len() as f64, precision / with_hits as f64));
        }
    }
    let mut pr_rank = Vec::new();
    for n in 1..=db.len() {
        let mut recall = 0.0;
        let mut precision = 0.0;
        for &qi in &evaluable {
            let hits = rankings[qi].iter().take(n).filter(|&&(_, _, p)| rel(qi, p)).count() as f64;
            let total = (0..db.len()).filter(|&p| rel(qi, p)).count() as f64;
            recall += hits / total;
            precision += hits / n as f64;
        }
        if !evaluable.is_empty() {
            pr_rank.push((n, recall / evaluable.len() as f64, precision / evaluable.len() as f64));
        }
    }
    let topk = topk
        .iter()
        .map(|&k| {
            let kk = k.min(db.len());
            let mut sum = 0.0;
            for &qi in &evaluable {
                sum += rankings[qi].iter().take(kk).filter(|&&(_, _, p)| rel(qi, p)).count() as f64 / kk as f64;
            }
            (k, sum / evaluable.len() as f64)
        })
        .collect();
    BruteForce { per_query_ap, map, pr_radius, pr_rank, topk }
}

/// One random retrieval instance.
pub struct Instance {
    pub queries: Vec<BinaryCode>,
    pub query_labels: Vec<LabelVector>,
    pub db: Vec<BinaryCode>,
    pub db_ids: Vec<u64>,
    pub db_labels: Vec<LabelVector>,
}

pub fn random_instance(rng: &mut ChaCha8Rng, n_db: usize, n_q: usize, k: usize, classes: usize) -> Instance {
    let mut ids: Vec<u64> = (0..n_db as u64 * 3).collect();
    // Shuffled, sparse ids so that tie-breaking by id is not the same as by position.
    for i in (1..ids.len()).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    ids.truncate(n_db);
    // A small code alphabet forces plenty of distance ties.
    let alphabet: Vec<BinaryCode> = (0..3).map(|_| random_code(rng, k)).collect();
    let code = |rng: &mut ChaCha8Rng| {
        if rng.random::<bool>() {
            alphabet[rng.random_range(0..alphabet.len())].clone()
        } else {
            random_code(rng, k)
        }
    };
    Instance {
        queries: (0..n_q).map(|_| code(rng)).collect(),
        query_labels: random_labels(rng, n_q, classes, 0.2),
        db: (0..n_db).map(|_| code(rng)).collect(),
        db_ids: ids,
        db_labels: random_labels(rng, n_db, classes, 0.2),
    }
}

/// Largest absolute difference between the library's metrics and the brute-force
/// oracle on one instance, or a description of a structural mismatch.
pub fn metric_discrepancy(inst: &Instance, cutoff: Option<usize>, topk: &[usize]) -> Result<f64, String> {
    use hashlearn::eval::{evaluate, CodeDatabase, Cutoff, EvalOptions, Labeled, PrSweep};
    let oracle = brute_force(&inst.queries, &inst.query_labels, &inst.db, &inst.db_ids, &inst.db_labels, cutoff, topk);
    let db = CodeDatabase::new(&inst.db, inst.db_ids.clone()).unwrap();
    let q = CodeDatabase::new(&inst.queries, (0..inst.queries.len() as u64).collect()).unwrap();
    let (ql, dl) = (Labeled::new(&q, &inst.query_labels).unwrap(), Labeled::new(&db, &inst.db_labels).unwrap());
    let cut = cutoff.map_or(Cutoff::All, Cutoff::Top);
    let mut worst: f64 = 0.0;
    for sweep in [PrSweep::Radius, PrSweep::Rank] {
        let opts = EvalOptions { cutoff: cut, topk: topk.to_vec(), pr_sweep: sweep };
        let run = match (evaluate(ql, dl, &opts), oracle.map) {
            (Ok(run), Some(_)) => run,
            (Err(hashlearn::Error::NoEvaluableQueries), None) => return Ok(0.0),
            (r, m) => return Err(format!("library {:?} vs oracle MAP {m:?}", r.map(|r| r.map))),
        };
        worst = worst.max((run.map - oracle.map.unwrap()).abs());
        if run.per_query_ap.len() != oracle.per_query_ap.len() {
            return Err("per-query length".into());
        }
        for (a, b) in run.per_query_ap.iter().zip(&oracle.per_query_ap) {
            match (a, b) {
                (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                (None, None) => {}
                _ => return Err(format!("exclusion mismatch {a:?} vs {b:?}")),
            }
        }
        let pr = if sweep == PrSweep::Radius { &oracle.pr_radius } else { &oracle.pr_rank };
        if run.pr.len() != pr.len() {
            return Err(format!("{sweep:?} PR has {} points, oracle {}", run.pr.len(), pr.len()));
        }
        for (p, &(t, r, pr)) in run.pr.iter().zip(pr) {
            if p.threshold != t {
                return Err(format!("PR threshold {} vs {t}", p.threshold));
            }
            worst = worst.max((p.recall - r).abs()).max((p.precision - pr).abs());
        }
        for (p, &(k, pr)) in run.topk.iter().zip(&oracle.topk) {
            if p.k != k {
                return Err("top-k grid".into());
            }
            worst = worst.max((p.precision - pr).abs());
        }
    }
    Ok(worst)
}

/// A small config that runs the whole pipeline in a few seconds.
pub fn tiny_config(dir: &std::path::Path) -> hashlearn::experiment::ExperimentConfig {
    let mut cfg = hashlearn::experiment::ExperimentConfig::default()
        .with_overrides(&[
            "data.n_per_class=60",
            "data.dim=16",
            "split.per_class_query=10",
            "split.per_class_train=30",
            "semantic.epochs=30",
            "semantic.trunk=[32, 16]",
            "semantic.batch_size=32",
            "image.epochs=30",
            "image.trunk=[32, 16]",
            "image.batch_size=32",
            "crossmodal.text_dim=24",
        ])
        .unwrap();
    cfg.output_dir = dir.to_path_buf();
    cfg
}

pub struct Batch {
    pub labels: Vec<LabelVector>,
    pub record: ForwardRecord,
}

/// Random forward record with one trunk layer and multi-label batch labels.
pub fn random_batch(r: &mut ChaCha8Rng) -> Batch {
    let n = r.random_range(2..=12);
    let classes = r.random_range(2..=6);
    let d = r.random_range(3..=10);
    let k = r.random_range(4..=16);
    let labels = random_labels(r, n, classes, 0.3);
    let record = ForwardRecord {
        input: random_matrix(r, n, 5),
        trunk: vec![random_matrix(r, n, d)],
        hash: random_matrix(r, n, k),
        class: random_matrix(r, n, classes),
    };
    Batch { labels, record }
}

/// Dictionary covering every batch label plus one unused entry; entries 0 and 1 share a code.
pub fn batch_dictionary(r: &mut ChaCha8Rng, b: &Batch) -> SemanticDictionary {
    let mut keys: Vec<LabelVector> = Vec::new();
    for l in &b.labels {
        if !keys.contains(l) {
            keys.push(l.clone());
        }
    }
    // An extra entry that no batch item addresses.
    let classes = b.labels[0].len();
    let extra = random_labels(r, 1, classes, 0.5).remove(0);
    if !keys.contains(&extra) {
        keys.push(extra);
    }
    let k = b.record.hash.cols();
    let mut codes: Vec<_> = (0..keys.len()).map(|_| random_code(r, k)).collect();
    if codes.len() > 1 {
        // Two entries sharing a code exercise the identical-code margin.
        codes[1] = codes[0].clone();
    }
    let features = random_matrix(r, keys.len(), b.record.features().cols());
    SemanticDictionary::from_parts(keys, codes, features).unwrap()
}
