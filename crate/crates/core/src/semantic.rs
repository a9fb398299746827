//! Stage 1: the self-supervised label network and the semantic dictionaries.
//!
//! The label network maps a multi-hot label vector to semantic features `F`,
//! real-valued hash outputs `H` and label predictions `L̂`. It is trained with
//!
//! ```text
//! J_lab = α·Σ½[S·max(m − cos(F_i,F_j), 0) + (1−S)·max(m + cos(F_i,F_j), 0)]
//!       + λ·(same over H) + η·‖L̂ − L‖² + β·‖H − sign(H)‖²
//! ```
//!
//! over all ordered pairs of a mini-batch, self-pairs included. Once trained it
//! is run once on every distinct training label vector, producing the code
//! dictionary `U` (binarized `H`) and the feature dictionary `Q` (`F`).

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{batch_similarity, LabelVector};
use crate::error::{check_len, Error, Result};
use crate::linalg::{sign_binarize, BinaryCode, Matrix};
use crate::loss::{
    combine_fingerprints, margin_loss, quantization, squared_error, BatchLoss, LossBreakdown, MarginTable,
    Pairing,
};
use crate::nn::{Adam, Architecture, ForwardRecord, MlpNetwork};
use crate::train::{run_epochs, EpochLoss, Schedule, StepDecay};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemanticNetConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub eta: f64,
    pub beta: f64,
    pub margin: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: Option<StepDecay>,
    pub trunk: Vec<usize>,
    pub seed: u64,
}

impl Default for SemanticNetConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            lambda: 0.5,
            eta: 0.5,
            beta: 0.1,
            margin: 0.0,
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            lr_decay: None,
            trunk: vec![256, 128],
            seed: 0,
        }
    }
}

impl SemanticNetConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("alpha", self.alpha), ("lambda", self.lambda), ("eta", self.eta), ("beta", self.beta)] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Config(format!("semantic.{name} must be a finite non-negative weight, got {w}")));
            }
        }
        if !(0.0..=1.0).contains(&self.margin) {
            return Err(Error::Config(format!("semantic.margin must lie in [0, 1], got {}", self.margin)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("semantic.batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("semantic.learning_rate must be positive".into()));
        }
        if self.trunk.is_empty() || self.trunk.contains(&0) {
            return Err(Error::Config("semantic.trunk needs at least one positive width".into()));
        }
        Ok(())
    }

    pub fn architecture(&self, classes: usize, hash_bits: usize) -> Architecture {
        Architecture { input: classes, trunk: self.trunk.clone(), hash_bits, classes }
    }
}

pub(crate) fn label_matrix(labels: &[LabelVector]) -> Result<Matrix> {
    Matrix::from_rows(&labels.iter().map(LabelVector::to_reals).collect::<Vec<_>>())
}

/// `J_lab` on one batch. Components are `[J1 (features), J2 (codes), J3 (labels), J4 (quantization)]`.
pub fn j_lab_loss(record: &ForwardRecord, labels: &[LabelVector], cfg: &SemanticNetConfig) -> Result<BatchLoss> {
    let n = record.batch_size();
    if n == 0 {
        return Err(Error::EmptyInput("batch"));
    }
    check_len(n, labels.len())?;
    let s = batch_similarity(labels, labels)?;
    let margins = MarginTable::constant(n, n, cfg.margin)?;
    let j1 = margin_loss(record.features(), Pairing::Within, &s, &margins)?;
    let j2 = margin_loss(&record.hash, Pairing::Within, &s, &margins)?;
    let j3 = squared_error(&record.class, &label_matrix(labels)?)?;
    let j4 = quantization(&record.hash);

    let total = cfg.alpha * j1.value + cfg.lambda * j2.value + cfg.eta * j3.value + cfg.beta * j4.value;
    let mut d_features = j1.grad;
    d_features.as_mut_slice().iter_mut().for_each(|g| *g *= cfg.alpha);
    let mut d_hash = j2.grad;
    for (g, q) in d_hash.as_mut_slice().iter_mut().zip(j4.grad.as_slice()) {
        *g = cfg.lambda * *g + cfg.beta * q;
    }
    let mut d_class = j3.grad;
    d_class.as_mut_slice().iter_mut().for_each(|g| *g *= cfg.eta);
    Ok(BatchLoss {
        breakdown: LossBreakdown { total, components: vec![j1.value, j2.value, j3.value, j4.value] },
        d_features,
        d_hash,
        d_class,
        active_set: combine_fingerprints(&[j1.active_set, j2.active_set, j4.active_set, record.relu_pattern()]),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticTraining {
    pub net: MlpNetwork,
    pub history: Vec<EpochLoss>,
}

/// Trains the label network with Adam on `J_lab`. The inputs are the label vectors
/// themselves; deterministic for a fixed `cfg.seed`.
pub fn train_semantic(train_labels: &[LabelVector], hash_bits: usize, cfg: &SemanticNetConfig) -> Result<SemanticTraining> {
    cfg.validate()?;
    let Some(first) = train_labels.first() else {
        return Err(Error::EmptyInput("training labels"));
    };
    let mut net = MlpNetwork::new(cfg.architecture(first.len(), hash_bits), cfg.seed)?;
    let inputs = label_matrix(train_labels)?;
    let mut adam = Adam::new(cfg.learning_rate, net.num_params());
    let schedule = Schedule {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        decay: cfg.lr_decay,
        shuffle_seed: cfg.seed.wrapping_add(1),
    };
    let history = run_epochs(&mut net, &inputs, train_labels, &schedule, &mut adam, "semantic", |rec, y| {
        j_lab_loss(rec, y, cfg)
    })?;
    Ok(SemanticTraining { net, history })
}

/// Deduplicated training label vectors with their binary codes `U` and features `Q`,
/// in order of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticDictionary {
    keys: Vec<LabelVector>,
    codes: Vec<BinaryCode>,
    features: Matrix,
    index: HashMap<LabelVector, usize>,
}

/// What to do with a label vector that has no dictionary entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnseenLabels {
    #[default]
    Error,
    /// Use the entry with the fewest mismatching label positions (lowest index on ties).
    Nearest,
}

/// Runs the trained label network once per distinct label vector.
pub fn build_dictionaries(net: &MlpNetwork, train_labels: &[LabelVector]) -> Result<SemanticDictionary> {
    let mut keys: Vec<LabelVector> = Vec::new();
    let mut index = HashMap::new();
    for l in train_labels {
        check_len(net.architecture().input, l.len())?;
        if !index.contains_key(l) {
            index.insert(l.clone(), keys.len());
            keys.push(l.clone());
        }
    }
    if keys.is_empty() {
        return Err(Error::EmptyInput("training labels"));
    }
    let rec = net.forward_batch(&label_matrix(&keys)?)?;
    let codes = rec.hash.iter_rows().map(sign_binarize).collect();
    Ok(SemanticDictionary { keys, codes, features: rec.features().clone(), index })
}

impl SemanticDictionary {
    pub fn from_parts(keys: Vec<LabelVector>, codes: Vec<BinaryCode>, features: Matrix) -> Result<Self> {
        check_len(keys.len(), codes.len())?;
        check_len(keys.len(), features.rows())?;
        if keys.is_empty() {
            return Err(Error::EmptyInput("dictionary"));
        }
        let bits = codes[0].len();
        for c in &codes {
            check_len(bits, c.len())?;
        }
        let mut index = HashMap::new();
        for (i, k) in keys.iter().enumerate() {
            if index.insert(k.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate dictionary key {:?}", k.indicators())));
            }
        }
        Ok(Self { keys, codes, features, index })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn hash_bits(&self) -> usize {
        self.codes[0].len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn keys(&self) -> &[LabelVector] {
        &self.keys
    }

    pub fn codes(&self) -> &[BinaryCode] {
        &self.codes
    }

    /// The code dictionary `U` as a `len x K` matrix of `±1`.
    pub fn code_matrix(&self) -> Matrix {
        Matrix::from_rows(&self.codes.iter().map(BinaryCode::to_reals).collect::<Vec<_>>())
            .expect("uniform code length")
    }

    /// The feature dictionary `Q`.
    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn lookup(&self, label: &LabelVector) -> Result<usize> {
        self.index.get(label).copied().ok_or_else(|| Error::MissingDictionaryEntry(label.indicators().to_vec()))
    }

    pub fn resolve(&self, label: &LabelVector, policy: UnseenLabels) -> Result<usize> {
        match (self.lookup(label), policy) {
            (Ok(i), _) => Ok(i),
            (Err(e), UnseenLabels::Error) => Err(e),
            (Err(_), UnseenLabels::Nearest) => {
                check_len(self.keys[0].len(), label.len())?;
                Ok((0..self.keys.len()).min_by_key(|&i| (self.keys[i].mismatches(label), i)).expect("non-empty"))
            }
        }
    }

    /// One CSV row per entry: `l*` label bits, `u*` code bits, `q*` features.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let classes = self.keys[0].len();
        let mut header: Vec<String> = (0..classes).map(|j| format!("l{j}")).collect();
        header.extend((0..self.hash_bits()).map(|j| format!("u{j}")));
        header.extend((0..self.feature_dim()).map(|j| format!("q{j}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.keys[i].indicators().iter().map(u8::to_string).collect();
            rec.extend(self.codes[i].bits().iter().map(i8::to_string));
            rec.extend(self.features.row(i).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_reader(File::open(path)?);
        let header = r.headers()?.clone();
        let count = |p: char| header.iter().filter(|h| h.starts_with(p)).count();
        let (classes, bits, dim) = (count('l'), count('u'), count('q'));
        if classes + bits + dim != header.len() || classes == 0 || bits == 0 {
            return Err(Error::MalformedRow { row: 0, reason: "dictionary header must be l*, u*, q* columns".into() });
        }
        let (mut keys, mut codes, mut feats) = (Vec::new(), Vec::new(), Vec::new());
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::MalformedRow { row, reason: format!("expected {} fields", header.len()) });
            }
            let bad = |what: &str| Error::MalformedRow { row, reason: format!("cannot parse {what}") };
            let label: Vec<u8> = rec.iter().take(classes).map(|f| f.parse().map_err(|_| bad("label bit"))).collect::<Result<_>>()?;
            let code: Vec<i8> =
                rec.iter().skip(classes).take(bits).map(|f| f.parse().map_err(|_| bad("code bit"))).collect::<Result<_>>()?;
            let q: Vec<f64> =
                rec.iter().skip(classes + bits).map(|f| f.parse().map_err(|_| bad("feature"))).collect::<Result<_>>()?;
            keys.push(LabelVector::new(label).map_err(|e| bad(&e.to_string()))?);
            codes.push(BinaryCode::new(code).map_err(|e| bad(&e.to_string()))?);
            feats.push(q);
        }
        let features = if dim == 0 { Matrix::zeros(keys.len(), 0) } else { Matrix::from_rows(&feats)? };
        Self::from_parts(keys, codes, features)
    }
}
