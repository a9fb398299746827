//! Multi-label datasets, label-overlap similarity, splits, synthetic data and CSV ingestion.

use std::collections::HashSet;
use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::Matrix;

/// Multi-hot class indicators. Always has at least one positive entry.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelVector(Vec<u8>);

impl LabelVector {
    pub fn new(indicators: Vec<u8>) -> Result<Self> {
        if let Some(col) = indicators.iter().position(|&v| v > 1) {
            return Err(Error::InvalidLabel { row: 0, col, value: indicators[col].to_string() });
        }
        if !indicators.contains(&1) {
            return Err(Error::ZeroLabelRow { row: 0 });
        }
        Ok(Self(indicators))
    }

    /// Single-class label with `class` set out of `classes`.
    pub fn one_hot(class: usize, classes: usize) -> Self {
        let mut v = vec![0; classes];
        v[class] = 1;
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn indicators(&self) -> &[u8] {
        &self.0
    }

    pub fn has(&self, class: usize) -> bool {
        self.0[class] == 1
    }

    pub fn to_reals(&self) -> Vec<f64> {
        self.0.iter().map(|&v| f64::from(v)).collect()
    }

    pub(crate) fn shares_with(&self, other: &LabelVector) -> bool {
        self.0.iter().zip(&other.0).any(|(&a, &b)| a == 1 && b == 1)
    }

    /// Number of positions where the indicator vectors differ.
    pub fn mismatches(&self, other: &LabelVector) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

/// 1 if the two label vectors share at least one class, else 0.
pub fn pairwise_similarity(a: &LabelVector, b: &LabelVector) -> Result<u8> {
    check_len(a.len(), b.len())?;
    Ok(u8::from(a.shares_with(b)))
}

/// `|a| x |b|` label-overlap matrix, stored row-major as `0.0`/`1.0`.
pub fn batch_similarity(a: &[LabelVector], b: &[LabelVector]) -> Result<Matrix> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("label list"));
    }
    let classes = a[0].len();
    for l in a.iter().chain(b) {
        check_len(classes, l.len())?;
    }
    let mut s = Matrix::zeros(a.len(), b.len());
    for (i, la) in a.iter().enumerate() {
        for (j, lb) in b.iter().enumerate() {
            if la.shares_with(lb) {
                s.set(i, j, 1.0);
            }
        }
    }
    Ok(s)
}

/// Feature matrix plus multi-hot labels, one row per item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLabelDataset {
    features: Matrix,
    labels: Vec<LabelVector>,
    ids: Vec<u64>,
}

impl MultiLabelDataset {
    pub fn new(features: Matrix, labels: Vec<LabelVector>, ids: Vec<u64>) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::RowCountMismatch { features: features.rows(), labels: labels.len() });
        }
        check_len(labels.len(), ids.len())?;
        if labels.is_empty() {
            return Err(Error::EmptyInput("dataset"));
        }
        if features.cols() == 0 {
            return Err(Error::Config("feature width must be at least 1".into()));
        }
        let classes = labels[0].len();
        if classes < 2 {
            return Err(Error::Config("at least two classes are required".into()));
        }
        for (row, l) in labels.iter().enumerate() {
            if l.len() != classes {
                return Err(Error::MalformedRow {
                    row,
                    reason: format!("expected {classes} label columns, found {}", l.len()),
                });
            }
        }
        if !features.is_finite() {
            return Err(Error::Domain("non-finite feature value".into()));
        }
        let unique: HashSet<_> = ids.iter().collect();
        if unique.len() != ids.len() {
            return Err(Error::Config("item ids must be unique".into()));
        }
        Ok(Self { features, labels, ids })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels[0].len()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[LabelVector] {
        &self.labels
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn label_rows(&self, indices: &[usize]) -> Vec<LabelVector> {
        indices.iter().map(|&i| self.labels[i].clone()).collect()
    }

    /// Same items and labels with a different feature matrix (another modality).
    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        Self::new(features, self.labels.clone(), self.ids.clone())
    }

    /// Writes `features.csv` and `labels.csv` into `dir`, both with an `id` column.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("features.csv"))?;
        let mut header = vec!["id".to_string()];
        header.extend((0..self.feature_dim()).map(|j| format!("f{j}")));
        w.write_record(&header)?;
        for (i, row) in self.features.iter_rows().enumerate() {
            let mut rec = vec![self.ids[i].to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("labels.csv"))?;
        let mut header = vec!["id".to_string()];
        header.extend((0..self.num_classes()).map(|j| format!("c{j}")));
        w.write_record(&header)?;
        for (i, l) in self.labels.iter().enumerate() {
            let mut rec = vec![self.ids[i].to_string()];
            rec.extend(l.indicators().iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a dataset previously written by [`save`](Self::save), or any pair of
    /// headerless numeric CSV files with one item per row.
    pub fn load(features_path: &Path, labels_path: &Path) -> Result<Self> {
        let (feature_ids, feature_rows) = read_table(features_path)?;
        let (label_ids, label_rows) = read_table(labels_path)?;
        if feature_rows.len() != label_rows.len() {
            return Err(Error::RowCountMismatch { features: feature_rows.len(), labels: label_rows.len() });
        }
        let mut values = Vec::with_capacity(feature_rows.len());
        let width = feature_rows.first().map_or(0, Vec::len);
        for (row, fields) in feature_rows.iter().enumerate() {
            if fields.len() != width {
                return Err(Error::MalformedRow {
                    row,
                    reason: format!("expected {width} feature columns, found {}", fields.len()),
                });
            }
            let parsed: Result<Vec<f64>> = fields
                .iter()
                .map(|f| {
                    f.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::MalformedRow {
                        row,
                        reason: format!("cannot parse feature value {f:?}"),
                    })
                })
                .collect();
            values.push(parsed?);
        }
        let mut labels = Vec::with_capacity(label_rows.len());
        for (row, fields) in label_rows.iter().enumerate() {
            let mut ind = Vec::with_capacity(fields.len());
            for (col, f) in fields.iter().enumerate() {
                match f.trim() {
                    "0" => ind.push(0),
                    "1" => ind.push(1),
                    other => return Err(Error::InvalidLabel { row, col, value: other.to_string() }),
                }
            }
            if !ind.contains(&1) {
                return Err(Error::ZeroLabelRow { row });
            }
            labels.push(LabelVector(ind));
        }
        let ids = match (feature_ids, label_ids) {
            (Some(f), Some(l)) if f != l => {
                return Err(Error::Config("feature and label files list different ids".into()))
            }
            (Some(ids), _) | (None, Some(ids)) => ids,
            (None, None) => (0..labels.len() as u64).collect(),
        };
        Self::new(Matrix::from_rows(&values)?, labels, ids)
    }
}

/// Reads a CSV table. A first row containing any non-numeric field is treated as a
/// header; if that header starts with `id`, the first column holds item ids.
fn read_table(path: &Path) -> Result<(Option<Vec<u64>>, Vec<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(File::open(path)?);
    let mut rows: Vec<Vec<String>> = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    let header = match rows.first() {
        Some(first) if first.iter().any(|f| f.trim().parse::<f64>().is_err()) => Some(rows.remove(0)),
        _ => None,
    };
    let has_id = header.as_ref().is_some_and(|h| h.first().is_some_and(|f| f.trim() == "id"));
    if !has_id {
        return Ok((None, rows));
    }
    let mut ids = Vec::with_capacity(rows.len());
    for (row, fields) in rows.iter_mut().enumerate() {
        if fields.is_empty() {
            return Err(Error::MalformedRow { row, reason: "missing id column".into() });
        }
        let id = fields.remove(0);
        ids.push(id.trim().parse::<u64>().map_err(|_| Error::MalformedRow {
            row,
            reason: format!("cannot parse id {id:?}"),
        })?);
    }
    Ok((Some(ids), rows))
}

/// Parameters of the class-prototype Gaussian generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_per_class: usize,
    pub classes: usize,
    pub dim: usize,
    pub multi_label_prob: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Generates `n_per_class * classes` items. Each class has a standard normal
/// prototype; an item gets a primary class plus every other class independently
/// with probability `multi_label_prob`, and its features are the mean of its
/// classes' prototypes plus isotropic Gaussian noise.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<MultiLabelDataset> {
    let prototypes = validate_and_prototypes(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels = synthetic_labels(spec, &mut rng);
    let features = mix_prototypes(&prototypes, &labels, spec.noise_sigma, &mut rng);
    let ids = (0..labels.len() as u64).collect();
    MultiLabelDataset::new(features, labels, ids)
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 || self.classes < 2 || self.dim == 0 {
            return Err(Error::Config("synthetic data needs n_per_class > 0, classes >= 2, dim > 0".into()));
        }
        if !(0.0..1.0).contains(&self.multi_label_prob) {
            return Err(Error::Config("multi_label_prob must lie in [0, 1)".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be non-negative".into()));
        }
        Ok(())
    }
}

fn validate_and_prototypes(spec: &SyntheticSpec) -> Result<Matrix> {
    spec.validate()?;
    // Prototypes draw from their own stream so the item stream is independent of dim.
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_9e37_79b9_7f4a);
    Ok(gaussian_matrix(spec.classes, spec.dim, &mut rng))
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape by construction")
}

fn synthetic_labels(spec: &SyntheticSpec, rng: &mut impl Rng) -> Vec<LabelVector> {
    let mut labels = Vec::with_capacity(spec.n_per_class * spec.classes);
    for primary in 0..spec.classes {
        for _ in 0..spec.n_per_class {
            let mut ind = vec![0u8; spec.classes];
            ind[primary] = 1;
            for (c, slot) in ind.iter_mut().enumerate() {
                if c != primary && rng.random::<f64>() < spec.multi_label_prob {
                    *slot = 1;
                }
            }
            labels.push(LabelVector(ind));
        }
    }
    labels
}

fn mix_prototypes(prototypes: &Matrix, labels: &[LabelVector], sigma: f64, rng: &mut impl Rng) -> Matrix {
    let dim = prototypes.cols();
    let mut features = Matrix::zeros(labels.len(), dim);
    for (i, l) in labels.iter().enumerate() {
        let members: Vec<usize> = (0..l.len()).filter(|&c| l.has(c)).collect();
        let row = features.row_mut(i);
        for &c in &members {
            for (r, p) in row.iter_mut().zip(prototypes.row(c)) {
                *r += p / members.len() as f64;
            }
        }
        for r in row.iter_mut() {
            *r += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    features
}

/// Two views of the same items (e.g. image-like features and bag-of-words-like text)
/// sharing one label matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BiModalDataset {
    modalities: Vec<(String, MultiLabelDataset)>,
}

impl BiModalDataset {
    pub fn new(modalities: Vec<(String, MultiLabelDataset)>) -> Result<Self> {
        let Some((_, first)) = modalities.first() else {
            return Err(Error::EmptyInput("modality list"));
        };
        for (name, m) in &modalities[1..] {
            if m.labels() != first.labels() || m.ids() != first.ids() {
                return Err(Error::Config(format!("modality {name} does not share the label matrix")));
            }
        }
        Ok(Self { modalities })
    }

    pub fn modalities(&self) -> &[(String, MultiLabelDataset)] {
        &self.modalities
    }

    pub fn modality(&self, name: &str) -> Option<&MultiLabelDataset> {
        self.modalities.iter().find(|(n, _)| n == name).map(|(_, d)| d)
    }
}

/// Synthetic two-modality set: an `image` view as in [`generate_synthetic`] and a
/// `text` view of `text_dim` sparse non-negative word counts. Each class owns a
/// random subset of roughly `text_dim / 8` words; an item's text activates the
/// words of its classes with Poisson-like noise, then rectifies.
pub fn generate_bimodal(spec: &SyntheticSpec, text_dim: usize) -> Result<BiModalDataset> {
    let image = generate_synthetic(spec)?;
    if text_dim == 0 {
        return Err(Error::Config("text_dim must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0x7e57));
    let words_per_class = (text_dim / 8).max(2);
    let mut vocab = Matrix::zeros(spec.classes, text_dim);
    let mut pool: Vec<usize> = (0..text_dim).collect();
    for c in 0..spec.classes {
        pool.shuffle(&mut rng);
        for &w in &pool[..words_per_class.min(text_dim)] {
            vocab.set(c, w, 1.0);
        }
    }
    let mut text = Matrix::zeros(image.len(), text_dim);
    for (i, l) in image.labels().iter().enumerate() {
        let row = text.row_mut(i);
        for c in (0..l.len()).filter(|&c| l.has(c)) {
            for (r, v) in row.iter_mut().zip(vocab.row(c)) {
                *r += v;
            }
        }
        for r in row.iter_mut() {
            let noisy = *r + spec.noise_sigma * rng.sample::<f64, _>(StandardNormal);
            *r = noisy.max(0.0);
        }
    }
    let text = image.with_features(text)?;
    BiModalDataset::new(vec![("image".into(), image), ("text".into(), text)])
}

/// Query, training and retrieval-database index sets over one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub query: Vec<usize>,
    pub train: Vec<usize>,
    pub database: Vec<usize>,
}

impl SplitSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        for &i in self.query.iter().chain(&self.train).chain(&self.database) {
            if i >= n {
                return Err(Error::Config(format!("split index {i} out of range for {n} items")));
            }
        }
        if self.train.is_empty() {
            return Err(Error::EmptyInput("training split"));
        }
        Ok(())
    }
}

/// Split parameters. Queries are always excluded from the database; training items
/// stay inside it unless `train_in_database` is false.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitParams {
    pub per_class_query: usize,
    pub per_class_train: usize,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub train_in_database: bool,
}

fn default_true() -> bool {
    true
}

/// Draws `per_class_query` queries for every class, then `per_class_train` training
/// items for every class from the remaining pool. An item counts toward a class when
/// it carries that label; classes are filled in order from a seeded shuffle.
pub fn make_split(dataset: &MultiLabelDataset, params: &SplitParams) -> Result<SplitSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let mut taken = vec![false; dataset.len()];

    let draw = |per_class: usize, taken: &mut Vec<bool>| -> Result<Vec<usize>> {
        let mut picked = Vec::new();
        for class in 0..dataset.num_classes() {
            let pool: Vec<usize> =
                order.iter().copied().filter(|&i| !taken[i] && dataset.labels()[i].has(class)).collect();
            if pool.len() < per_class {
                return Err(Error::InsufficientItems { class, requested: per_class, available: pool.len() });
            }
            for &i in &pool[..per_class] {
                taken[i] = true;
                picked.push(i);
            }
        }
        picked.sort_unstable();
        Ok(picked)
    };

    let query = draw(params.per_class_query, &mut taken)?;
    let is_query = taken.clone();
    let train = draw(params.per_class_train, &mut taken)?;
    let database = (0..dataset.len())
        .filter(|&i| if params.train_in_database { !is_query[i] } else { !taken[i] })
        .collect();
    Ok(SplitSpec { query, train, database })
}
