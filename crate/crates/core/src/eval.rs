//! Hamming ranking and retrieval metrics.
//!
//! A query's ranking lists database items by ascending Hamming distance, ties
//! broken by ascending item id. A database item is relevant to a query when the
//! two share at least one label.
//!
//! Conventions:
//!
//! * AP at a cutoff divides by the number of relevant items *inside* the cutoff,
//!   so a perfect ranking scores 1 at any cutoff. A query whose cutoff window holds
//!   no relevant item has AP 0.
//! * Queries with no relevant item anywhere in the database are excluded from
//!   every average and counted in [`RetrievalRun::excluded_queries`].
//! * PR points are swept over Hamming radius `0..=K` by default. At each radius,
//!   recall is averaged over all evaluable queries and precision over the queries
//!   that retrieved at least one item; radii where no query retrieves anything
//!   are omitted.

use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LabelVector, MultiLabelDataset};
use crate::error::{check_len, Error, Result};
use crate::linalg::{sign_binarize, BinaryCode, Matrix, PackedCode};
use crate::nn::MlpNetwork;

/// How many ranked items an AP computation looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Cutoff {
    #[default]
    All,
    Top(usize),
}

impl Cutoff {
    fn apply(self, n: usize) -> usize {
        match self {
            Cutoff::All => n,
            Cutoff::Top(k) => k.min(n),
        }
    }
}

impl fmt::Display for Cutoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cutoff::All => f.write_str("all"),
            Cutoff::Top(k) => write!(f, "{k}"),
        }
    }
}

impl Serialize for Cutoff {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Cutoff::All => s.serialize_str("all"),
            Cutoff::Top(k) => s.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Cutoff {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(0) => Err(serde::de::Error::custom("cutoff must be positive")),
            Raw::Num(k) => Ok(Cutoff::Top(k as usize)),
            Raw::Str(s) if s.eq_ignore_ascii_case("all") => Ok(Cutoff::All),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("cutoff must be \"all\" or a count, got {s:?}"))),
        }
    }
}

/// A trained network used as a hash function: `sign` of its hash-head output.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedHashModel {
    net: MlpNetwork,
}

impl TrainedHashModel {
    pub fn new(net: MlpNetwork) -> Self {
        Self { net }
    }

    pub fn net(&self) -> &MlpNetwork {
        &self.net
    }

    pub fn hash_bits(&self) -> usize {
        self.net.architecture().hash_bits
    }

    pub fn encode(&self, features: &Matrix, ids: &[u64]) -> Result<CodeDatabase> {
        check_len(features.rows(), ids.len())?;
        let h = self.net.hash_outputs(features)?;
        let codes: Vec<BinaryCode> = h.iter_rows().map(sign_binarize).collect();
        CodeDatabase::new(&codes, ids.to_vec())
    }

    /// Encodes the rows `indices` of a dataset, keeping their ids.
    pub fn encode_items(&self, dataset: &MultiLabelDataset, indices: &[usize]) -> Result<CodeDatabase> {
        let ids: Vec<u64> = indices.iter().map(|&i| dataset.ids()[i]).collect();
        self.encode(&dataset.features().select_rows(indices), &ids)
    }
}

/// Bit-packed codes with item ids.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeDatabase {
    bits: usize,
    codes: Vec<PackedCode>,
    ids: Vec<u64>,
    /// Positions sorted by ascending id, for tie-breaking.
    by_id: Vec<usize>,
}

impl CodeDatabase {
    pub fn new(codes: &[BinaryCode], ids: Vec<u64>) -> Result<Self> {
        Self::from_packed(codes.iter().map(BinaryCode::pack).collect(), ids)
    }

    pub fn from_packed(codes: Vec<PackedCode>, ids: Vec<u64>) -> Result<Self> {
        check_len(codes.len(), ids.len())?;
        let bits = codes.first().map_or(0, PackedCode::len);
        if let Some(c) = codes.iter().find(|c| c.len() != bits) {
            return Err(Error::CodeLength(bits, c.len()));
        }
        let mut by_id: Vec<usize> = (0..ids.len()).collect();
        by_id.sort_by_key(|&p| ids[p]);
        if by_id.windows(2).any(|w| ids[w[0]] == ids[w[1]]) {
            return Err(Error::Config("database ids must be unique".into()));
        }
        Ok(Self { bits, codes, ids, by_id })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn hash_bits(&self) -> usize {
        self.bits
    }

    pub fn codes(&self) -> &[PackedCode] {
        &self.codes
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Database positions in ranked order, with the distance of each.
    fn ranked(&self, query: &PackedCode) -> Vec<(usize, u32)> {
        // Counting sort over distances 0..=K, visiting items in id order.
        let dist: Vec<u32> = self.codes.iter().map(|c| query.hamming_unchecked(c)).collect();
        let mut start = vec![0usize; self.bits + 2];
        for &d in &dist {
            start[d as usize + 1] += 1;
        }
        for k in 1..start.len() {
            start[k] += start[k - 1];
        }
        let mut out = vec![(0, 0); dist.len()];
        for &p in &self.by_id {
            let d = dist[p] as usize;
            out[start[d]] = (p, dist[p]);
            start[d] += 1;
        }
        out
    }
}

/// Database positions in ranked order.
pub fn rank_positions(query: &PackedCode, db: &CodeDatabase) -> Result<Vec<usize>> {
    if !db.is_empty() && query.len() != db.bits {
        return Err(Error::CodeLength(query.len(), db.bits));
    }
    Ok(db.ranked(query).into_iter().map(|(p, _)| p).collect())
}

/// Database item ids in ranked order.
pub fn rank(query: &PackedCode, db: &CodeDatabase) -> Result<Vec<u64>> {
    Ok(rank_positions(query, db)?.into_iter().map(|p| db.ids[p]).collect())
}

/// AP of one ranked relevance list.
pub fn average_precision(relevance: &[bool], cutoff: Cutoff) -> Result<f64> {
    if relevance.is_empty() {
        return Err(Error::EmptyInput("ranking"));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in relevance[..cutoff.apply(relevance.len())].iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(if hits == 0 { 0.0 } else { sum / hits as f64 })
}

/// Codes together with the labels that decide relevance.
#[derive(Debug, Clone, Copy)]
pub struct Labeled<'a> {
    pub codes: &'a CodeDatabase,
    pub labels: &'a [LabelVector],
}

impl<'a> Labeled<'a> {
    pub fn new(codes: &'a CodeDatabase, labels: &'a [LabelVector]) -> Result<Self> {
        check_len(codes.len(), labels.len())?;
        Ok(Self { codes, labels })
    }
}

struct QueryOutcome {
    relevance: Vec<bool>,
    distance: Vec<u32>,
    total_relevant: usize,
}

fn outcomes(queries: Labeled<'_>, db: Labeled<'_>) -> Result<Vec<QueryOutcome>> {
    check_len(queries.codes.len(), queries.labels.len())?;
    check_len(db.codes.len(), db.labels.len())?;
    if db.codes.is_empty() {
        return Err(Error::EmptyInput("database"));
    }
    if queries.codes.is_empty() {
        return Err(Error::EmptyInput("query set"));
    }
    if queries.codes.bits != db.codes.bits {
        return Err(Error::CodeLength(queries.codes.bits, db.codes.bits));
    }
    Ok((0..queries.codes.len())
        .into_par_iter()
        .map(|q| {
            let ranked = db.codes.ranked(&queries.codes.codes[q]);
            let relevance: Vec<bool> =
                ranked.iter().map(|&(p, _)| queries.labels[q].shares_with(&db.labels[p])).collect();
            let total_relevant = relevance.iter().filter(|&&r| r).count();
            QueryOutcome { relevance, distance: ranked.into_iter().map(|(_, d)| d).collect(), total_relevant }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSummary {
    pub map: f64,
    /// Per-query AP; `None` for queries without any relevant database item.
    pub per_query: Vec<Option<f64>>,
    pub evaluable_queries: usize,
    pub excluded_queries: usize,
}

fn map_from(outcomes: &[QueryOutcome], cutoff: Cutoff) -> Result<MapSummary> {
    let per_query: Vec<Option<f64>> = outcomes
        .iter()
        .map(|o| (o.total_relevant > 0).then(|| average_precision(&o.relevance, cutoff)).transpose())
        .collect::<Result<_>>()?;
    let aps: Vec<f64> = per_query.iter().flatten().copied().collect();
    if aps.is_empty() {
        return Err(Error::NoEvaluableQueries);
    }
    Ok(MapSummary {
        map: aps.iter().sum::<f64>() / aps.len() as f64,
        evaluable_queries: aps.len(),
        excluded_queries: per_query.len() - aps.len(),
        per_query,
    })
}

pub fn mean_ap(queries: Labeled<'_>, db: Labeled<'_>, cutoff: Cutoff) -> Result<MapSummary> {
    map_from(&outcomes(queries, db)?, cutoff)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrSweep {
    /// One point per Hamming radius `0..=K`.
    #[default]
    Radius,
    /// One point per rank position `1..=n`.
    Rank,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    /// Hamming radius or rank position, depending on the sweep.
    pub threshold: usize,
    pub recall: f64,
    pub precision: f64,
}

fn pr_from(outcomes: &[QueryOutcome], bits: usize, sweep: PrSweep) -> Result<Vec<PrPoint>> {
    let evaluable: Vec<&QueryOutcome> = outcomes.iter().filter(|o| o.total_relevant > 0).collect();
    if evaluable.is_empty() {
        return Err(Error::NoEvaluableQueries);
    }
    let n = evaluable[0].relevance.len();
    let thresholds: Vec<usize> = match sweep {
        PrSweep::Radius => (0..=bits).collect(),
        PrSweep::Rank => (1..=n).collect(),
    };
    // Number of items retrieved at each threshold, per query.
    let retrieved_at = |o: &QueryOutcome, t: usize| match sweep {
        PrSweep::Radius => o.distance.partition_point(|&d| d as usize <= t),
        PrSweep::Rank => t,
    };
    let mut points = Vec::with_capacity(thresholds.len());
    for t in thresholds {
        let (mut recall, mut precision, mut with_hits) = (0.0, 0.0, 0usize);
        for o in &evaluable {
            let retrieved = retrieved_at(o, t);
            let hits = o.relevance[..retrieved].iter().filter(|&&r| r).count();
            recall += hits as f64 / o.total_relevant as f64;
            if retrieved > 0 {
                precision += hits as f64 / retrieved as f64;
                with_hits += 1;
            }
        }
        if with_hits > 0 {
            points.push(PrPoint {
                threshold: t,
                recall: recall / evaluable.len() as f64,
                precision: precision / with_hits as f64,
            });
        }
    }
    Ok(points)
}

pub fn pr_curve(queries: Labeled<'_>, db: Labeled<'_>, sweep: PrSweep) -> Result<Vec<PrPoint>> {
    pr_from(&outcomes(queries, db)?, db.codes.bits, sweep)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopKPoint {
    pub k: usize,
    pub precision: f64,
}

/// `1, 100, 200, …, 1000`.
pub fn default_topk_grid() -> Vec<usize> {
    std::iter::once(1).chain((1..=10).map(|i| i * 100)).collect()
}

fn topk_from(outcomes: &[QueryOutcome], grid: &[usize]) -> Result<Vec<TopKPoint>> {
    let evaluable: Vec<&QueryOutcome> = outcomes.iter().filter(|o| o.total_relevant > 0).collect();
    if evaluable.is_empty() {
        return Err(Error::NoEvaluableQueries);
    }
    grid.iter()
        .map(|&k| {
            if k == 0 {
                return Err(Error::Config("top-k grid entries must be positive".into()));
            }
            let sum: f64 = evaluable
                .iter()
                .map(|o| {
                    let kk = k.min(o.relevance.len());
                    o.relevance[..kk].iter().filter(|&&r| r).count() as f64 / kk as f64
                })
                .sum();
            Ok(TopKPoint { k, precision: sum / evaluable.len() as f64 })
        })
        .collect()
}

/// Precision of the top `k` results, averaged over queries, for each `k` in `grid`
/// (`k` larger than the database is clipped to its size).
pub fn topk_precision(queries: Labeled<'_>, db: Labeled<'_>, grid: &[usize]) -> Result<Vec<TopKPoint>> {
    topk_from(&outcomes(queries, db)?, grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub cutoff: Cutoff,
    pub topk: Vec<usize>,
    pub pr_sweep: PrSweep,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { cutoff: Cutoff::All, topk: default_topk_grid(), pr_sweep: PrSweep::Radius }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRun {
    pub map: f64,
    pub cutoff: Cutoff,
    pub hash_bits: usize,
    pub queries: usize,
    pub database: usize,
    pub evaluable_queries: usize,
    pub excluded_queries: usize,
    pub per_query_ap: Vec<Option<f64>>,
    pub pr: Vec<PrPoint>,
    pub topk: Vec<TopKPoint>,
}

#[derive(Serialize)]
struct Summary<'a> {
    map: f64,
    cutoff: Cutoff,
    hash_bits: usize,
    queries: usize,
    database: usize,
    evaluable_queries: usize,
    excluded_queries: usize,
    pr_sweep: &'a PrSweep,
}

/// Ranks every query once and derives all metrics from the same rankings.
pub fn evaluate(queries: Labeled<'_>, db: Labeled<'_>, opts: &EvalOptions) -> Result<RetrievalRun> {
    let outs = outcomes(queries, db)?;
    let m = map_from(&outs, opts.cutoff)?;
    Ok(RetrievalRun {
        map: m.map,
        cutoff: opts.cutoff,
        hash_bits: db.codes.bits,
        queries: queries.codes.len(),
        database: db.codes.len(),
        evaluable_queries: m.evaluable_queries,
        excluded_queries: m.excluded_queries,
        per_query_ap: m.per_query,
        pr: pr_from(&outs, db.codes.bits, opts.pr_sweep)?,
        topk: topk_from(&outs, &opts.topk)?,
    })
}

impl RetrievalRun {
    /// Writes `summary.json`, `pr_curve.csv` and `topk.csv` into `dir`.
    pub fn write(&self, dir: &Path, sweep: PrSweep) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let summary = Summary {
            map: self.map,
            cutoff: self.cutoff,
            hash_bits: self.hash_bits,
            queries: self.queries,
            database: self.database,
            evaluable_queries: self.evaluable_queries,
            excluded_queries: self.excluded_queries,
            pr_sweep: &sweep,
        };
        let mut f = File::create(dir.join("summary.json"))?;
        serde_json::to_writer_pretty(&mut f, &summary)?;
        writeln!(f)?;

        let mut w = csv::Writer::from_path(dir.join("pr_curve.csv"))?;
        w.write_record([match sweep {
            PrSweep::Radius => "radius",
            PrSweep::Rank => "rank",
        }, "recall", "precision"])?;
        for p in &self.pr {
            w.write_record([p.threshold.to_string(), p.recall.to_string(), p.precision.to_string()])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("topk.csv"))?;
        w.write_record(["k", "precision"])?;
        for p in &self.topk {
            w.write_record([p.k.to_string(), p.precision.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(bits: &[i8]) -> BinaryCode {
        BinaryCode::new(bits.to_vec()).unwrap()
    }

    fn db(codes: &[&[i8]], ids: &[u64]) -> CodeDatabase {
        CodeDatabase::new(&codes.iter().map(|c| code(c)).collect::<Vec<_>>(), ids.to_vec()).unwrap()
    }

    #[test]
    fn rank_examples() {
        let d = db(&[&[1, 1, 1, 1], &[1, -1, 1, -1], &[-1, 1, 1, 1]], &[10, 11, 12]);
        let q = code(&[1, 1, 1, 1]).pack();
        // distances 0, 2, 1
        assert_eq!(rank(&q, &d).unwrap(), vec![10, 12, 11]);

        let same = db(&[&[1, -1], &[1, -1], &[1, -1]], &[7, 3, 5]);
        assert_eq!(rank(&code(&[-1, -1]).pack(), &same).unwrap(), vec![3, 5, 7]);

        assert!(matches!(rank(&code(&[1, 1, 1]).pack(), &d), Err(Error::CodeLength(3, 4))));
    }

    #[test]
    fn ap_examples() {
        let ap = average_precision(&[true, false, true, false], Cutoff::All).unwrap();
        assert!((ap - 0.5 * (1.0 + 2.0 / 3.0)).abs() < 1e-15);
        assert_eq!(average_precision(&[true; 5], Cutoff::All).unwrap(), 1.0);
        assert_eq!(average_precision(&[false; 5], Cutoff::All).unwrap(), 0.0);
        assert_eq!(average_precision(&[false, true], Cutoff::Top(1)).unwrap(), 0.0);
        assert!(average_precision(&[], Cutoff::All).is_err());
        assert_eq!(
            average_precision(&[true, false, true], Cutoff::All).unwrap(),
            average_precision(&[true, false, true], Cutoff::Top(3)).unwrap()
        );
    }

    #[test]
    fn map_of_two_queries_and_exclusion() {
        let l = |c: usize| LabelVector::one_hot(c, 3);
        let dbc = db(&[&[1, 1], &[-1, -1]], &[0, 1]);
        let dbl = [l(0), l(1)];
        // q0 (class 0) code [1,1]: rank [0, 1], relevant first → AP 1.
        // q1 (class 1) code [1,1]: rank [0, 1], relevant second → AP 0.5.
        // q2 (class 2): no relevant item, excluded.
        let qc = db(&[&[1, 1], &[1, 1], &[1, 1]], &[0, 1, 2]);
        let ql = [l(0), l(1), l(2)];
        let m = mean_ap(Labeled::new(&qc, &ql).unwrap(), Labeled::new(&dbc, &dbl).unwrap(), Cutoff::All).unwrap();
        assert_eq!(m.map, 0.75);
        assert_eq!(m.per_query, vec![Some(1.0), Some(0.5), None]);
        assert_eq!((m.evaluable_queries, m.excluded_queries), (2, 1));

        let none = [l(2)];
        let qn = db(&[&[1, 1]], &[0]);
        assert!(matches!(
            mean_ap(Labeled::new(&qn, &none).unwrap(), Labeled::new(&dbc, &dbl).unwrap(), Cutoff::All),
            Err(Error::NoEvaluableQueries)
        ));
    }

    #[test]
    fn perfect_ranking_has_unit_precision() {
        let l = |c: usize| LabelVector::one_hot(c, 2);
        let dbc = db(&[&[1, 1, 1], &[1, 1, -1], &[-1, -1, -1], &[-1, -1, 1]], &[0, 1, 2, 3]);
        let dbl = [l(0), l(0), l(1), l(1)];
        let qc = db(&[&[1, 1, 1], &[-1, -1, -1]], &[0, 1]);
        let ql = [l(0), l(1)];
        let (q, d) = (Labeled::new(&qc, &ql).unwrap(), Labeled::new(&dbc, &dbl).unwrap());
        let pr = pr_curve(q, d, PrSweep::Radius).unwrap();
        for p in &pr {
            if p.recall < 1.0 {
                assert_eq!(p.precision, 1.0);
            }
        }
        assert_eq!(pr.last().unwrap().threshold, 3);
        assert_eq!(pr.last().unwrap().recall, 1.0);
        assert!(pr.windows(2).all(|w| w[0].recall <= w[1].recall));
        let ranked = pr_curve(q, d, PrSweep::Rank).unwrap();
        assert_eq!(ranked[1].precision, 1.0);
        assert_eq!(ranked[1].recall, 1.0);
    }

    #[test]
    fn cutoff_serde() {
        #[derive(Deserialize)]
        struct W {
            c: Cutoff,
        }
        assert_eq!(toml::from_str::<W>("c = \"all\"").unwrap().c, Cutoff::All);
        assert_eq!(toml::from_str::<W>("c = 5000").unwrap().c, Cutoff::Top(5000));
        assert!(toml::from_str::<W>("c = 0").is_err());
    }

    #[test]
    fn zero_hash_head_encodes_all_ones() {
        let net = MlpNetwork::zeros(crate::nn::Architecture { input: 3, trunk: vec![4], hash_bits: 16, classes: 2 })
            .unwrap();
        let m = TrainedHashModel::new(net);
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 0.5]]).unwrap();
        let d = m.encode(&x, &[0, 1]).unwrap();
        assert_eq!(d.hash_bits(), 16);
        assert!(d.codes().iter().all(|c| c.unpack().bits().iter().all(|&b| b == 1)));
        assert_eq!(d, m.encode(&x, &[0, 1]).unwrap());
    }

    #[test]
    fn random_codes_topk_precision_matches_base_rate() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (n, k_bits, p) = (4000usize, 32usize, 0.3);
        let rand_code = |rng: &mut rand_chacha::ChaCha8Rng| {
            code(&(0..k_bits).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect::<Vec<_>>())
        };
        let dbc: Vec<_> = (0..n).map(|_| rand_code(&mut rng)).collect();
        let dbl: Vec<_> =
            (0..n).map(|_| LabelVector::one_hot(usize::from(rng.random::<f64>() >= p), 2)).collect();
        let queries = 50;
        let qc: Vec<_> = (0..queries).map(|_| rand_code(&mut rng)).collect();
        let ql = vec![LabelVector::one_hot(0, 2); queries];
        let dbcodes = CodeDatabase::new(&dbc, (0..n as u64).collect()).unwrap();
        let qcodes = CodeDatabase::new(&qc, (0..queries as u64).collect()).unwrap();
        let base = dbl.iter().filter(|l| l.has(0)).count() as f64 / n as f64;
        let pts = topk_precision(
            Labeled::new(&qcodes, &ql).unwrap(),
            Labeled::new(&dbcodes, &dbl).unwrap(),
            &[1000],
        )
        .unwrap();
        // Mean of 50 hypergeometric-like precisions at k=1000: sd ≈ sqrt(p(1-p)/(1000*50)).
        let sigma = (base * (1.0 - base) / (1000.0 * queries as f64)).sqrt();
        assert!((pts[0].precision - base).abs() < 3.0 * sigma, "{} vs {base}", pts[0].precision);
    }
}
