//! Stage 2: the feature network trained under dictionary guidance.
//!
//! Given a batch of item features, the network's outputs `F` and `H` are tied
//!
//! * to each other within the batch (symmetric terms, `n x n` pairs), and
//! * to every entry of the frozen dictionaries `Q` and `U` (asymmetric terms,
//!   `n x C_dict` pairs, affinity 1 when the item's labels intersect the key),
//!
//! through the margin loss of [`crate::loss::margin_loss`]. The margin of each
//! pair is scaled by how close the two label vectors are in the semantic code
//! space: `M = max(0, cos(u_a, u_b))` where `u_a`, `u_b` are the dictionary
//! codes addressed by the two label vectors.
//!
//! ```text
//! J_img = α·J_ms(F, F) + λ·J_ms(H, H) + γ·J_ms(F, Q) + μ·J_ms(H, U)
//!       + η·‖L̂ − L‖² + β·‖H − sign(H)‖²
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{batch_similarity, LabelVector, MultiLabelDataset, SplitSpec};
use crate::error::{check_len, Error, Result};
use crate::linalg::{dot, norm, BinaryCode, Matrix};
use crate::loss::{
    combine_fingerprints, log_likelihood_pairwise, margin_loss, quantization, squared_error, BatchLoss,
    LossBreakdown, MarginTable, Pairing, TermEval,
};
use crate::nn::{Architecture, ForwardRecord, MlpNetwork, SgdMomentum};
use crate::semantic::{SemanticDictionary, UnseenLabels};
use crate::train::{run_epochs, EpochLoss, Schedule, StepDecay};

/// Objective variants compared in the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Variant {
    /// Scalable margins, symmetric and asymmetric terms.
    #[default]
    Full,
    /// Symmetric batch terms only; the dictionary terms are dropped.
    Sym,
    /// Every margin replaced by one constant.
    Mars(f64),
    /// Pairwise logistic likelihood on hash outputs instead of the cosine margin terms.
    Cos,
}

impl Variant {
    /// Name of the pairwise loss the variant trains with, as recorded in manifests.
    pub fn loss_name(self) -> &'static str {
        match self {
            Variant::Cos => "pairwise_log_likelihood",
            _ => "margin_scalable_cosine",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Full => f.write_str("full"),
            Variant::Sym => f.write_str("sym"),
            Variant::Mars(m) => write!(f, "mars:{m}"),
            Variant::Cos => f.write_str("cos"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "sym" => Ok(Variant::Sym),
            "cos" => Ok(Variant::Cos),
            _ => {
                let m = s
                    .strip_prefix("mars:")
                    .and_then(|m| m.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (full, sym, cos, mars:<m>)")))?;
                Ok(Variant::Mars(m))
            }
        }
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which dictionary the scalable margins are measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginSource {
    #[default]
    Codes,
    Features,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageNetConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub mu: f64,
    pub eta: f64,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub lr_decay: Option<StepDecay>,
    pub variant: Variant,
    pub margin_source: MarginSource,
    pub unseen_labels: UnseenLabels,
    pub trunk: Vec<usize>,
    pub seed: u64,
}

impl Default for ImageNetConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            lambda: 1.0,
            gamma: 0.01,
            mu: 1.0,
            eta: 2.0,
            beta: 0.05,
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-4,
            momentum: 0.9,
            lr_decay: None,
            variant: Variant::Full,
            margin_source: MarginSource::Codes,
            unseen_labels: UnseenLabels::Error,
            trunk: vec![256, 128],
            seed: 0,
        }
    }
}

impl ImageNetConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("alpha", self.alpha),
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("mu", self.mu),
            ("eta", self.eta),
            ("beta", self.beta),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Config(format!("image.{name} must be a finite non-negative weight, got {w}")));
            }
        }
        if let Variant::Mars(m) = self.variant {
            if !(0.0..=1.0).contains(&m) {
                return Err(Error::Config(format!("fixed margin must lie in [0, 1], got {m}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("image.batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("image.learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("image.momentum must lie in [0, 1)".into()));
        }
        if self.trunk.is_empty() || self.trunk.contains(&0) {
            return Err(Error::Config("image.trunk needs at least one positive width".into()));
        }
        Ok(())
    }

    pub fn architecture(&self, input: usize, hash_bits: usize, classes: usize) -> Architecture {
        Architecture { input, trunk: self.trunk.clone(), hash_bits, classes }
    }

    /// `(γ, μ)` as applied by the variant.
    fn asymmetric_weights(&self) -> (f64, f64) {
        match self.variant {
            Variant::Sym => (0.0, 0.0),
            Variant::Cos => (0.0, self.mu),
            _ => (self.gamma, self.mu),
        }
    }

    fn uses_feature_dictionary(&self) -> bool {
        self.asymmetric_weights().0 > 0.0
    }
}

/// `max(0, cos(u_a, u_b))` for two dictionary codes.
pub fn scalable_margin(u_a: &BinaryCode, u_b: &BinaryCode) -> Result<f64> {
    check_len(u_a.len(), u_b.len())?;
    if u_a.is_empty() {
        return Err(Error::DegenerateVector("empty code"));
    }
    let ip: i32 = u_a.bits().iter().zip(u_b.bits()).map(|(&x, &y)| i32::from(x) * i32::from(y)).sum();
    Ok((f64::from(ip) / u_a.len() as f64).max(0.0))
}

/// Value of the margin-scalable constraint between two sets of vectors.
pub fn j_ms(g1: &Matrix, g2: &Matrix, s: &Matrix, margins: &MarginTable) -> Result<f64> {
    Ok(margin_loss(g1, Pairing::Against(g2), s, margins)?.value)
}

/// Pairwise logistic likelihood loss over one batch of hash outputs.
pub fn log_map_pairwise_loss(h: &Matrix, s: &Matrix) -> Result<f64> {
    Ok(log_likelihood_pairwise(h, Pairing::Within, s)?.value)
}

/// `n x C_dict` affinity: 1 where the item's labels intersect dictionary key `j`.
pub fn asymmetric_affinity(labels: &[LabelVector], dict: &SemanticDictionary) -> Result<Matrix> {
    batch_similarity(labels, dict.keys())
}

/// The Stage 2 objective bound to a frozen dictionary.
#[derive(Debug, Clone)]
pub struct ImageObjective<'a> {
    dict: &'a SemanticDictionary,
    cfg: &'a ImageNetConfig,
    codes: Matrix,
    /// Scalable margin between every pair of dictionary entries.
    entry_margins: Matrix,
}

impl<'a> ImageObjective<'a> {
    pub fn new(dict: &'a SemanticDictionary, cfg: &'a ImageNetConfig) -> Result<Self> {
        cfg.validate()?;
        let codes = dict.code_matrix();
        let source = match cfg.margin_source {
            MarginSource::Codes => &codes,
            MarginSource::Features => dict.features(),
        };
        let norms: Vec<f64> = source.iter_rows().map(norm).collect();
        let c = dict.len();
        let mut entry_margins = Matrix::zeros(c, c);
        for a in 0..c {
            for b in 0..c {
                if norms[a] == 0.0 || norms[b] == 0.0 {
                    return Err(Error::DegenerateVector("dictionary entry"));
                }
                let cos = if a == b {
                    1.0
                } else if cfg.margin_source == MarginSource::Codes {
                    // ±1 codes have squared norm K exactly.
                    dot(source.row(a), source.row(b)) / codes.cols() as f64
                } else {
                    (dot(source.row(a), source.row(b)) / (norms[a] * norms[b])).clamp(-1.0, 1.0)
                };
                entry_margins.set(a, b, cos.max(0.0));
            }
        }
        Ok(Self { dict, cfg, codes, entry_margins })
    }

    /// Symmetric (`n x n`) and asymmetric (`n x C_dict`) margins for a batch whose
    /// items address dictionary entries `entries`.
    pub fn margins(&self, entries: &[usize]) -> Result<(MarginTable, MarginTable)> {
        let n = entries.len();
        let c = self.dict.len();
        if let Variant::Mars(m) = self.cfg.variant {
            return Ok((MarginTable::constant(n, n, m)?, MarginTable::constant(n, c, m)?));
        }
        let mut within = Matrix::zeros(n, n);
        for (i, &a) in entries.iter().enumerate() {
            for (j, &b) in entries.iter().enumerate() {
                within.set(i, j, self.entry_margins.get(a, b));
            }
        }
        let against = self.entry_margins.select_rows(entries);
        Ok((MarginTable::new(within)?, MarginTable::new(against)?))
    }

    /// `J_img` on one batch. Components are `[J1 .. J6]` in the order of the objective.
    pub fn evaluate(&self, record: &ForwardRecord, labels: &[LabelVector]) -> Result<BatchLoss> {
        let n = record.batch_size();
        if n == 0 {
            return Err(Error::EmptyInput("batch"));
        }
        check_len(n, labels.len())?;
        check_len(self.dict.hash_bits(), record.hash.cols())?;
        let cfg = self.cfg;
        let entries: Vec<usize> =
            labels.iter().map(|l| self.dict.resolve(l, cfg.unseen_labels)).collect::<Result<_>>()?;
        let s_within = batch_similarity(labels, labels)?;
        let s_dict = asymmetric_affinity(labels, self.dict)?;
        let f = record.features();
        let h = &record.hash;
        let (gamma, mu) = cfg.asymmetric_weights();

        let zero = |m: &Matrix| TermEval { value: 0.0, grad: Matrix::zeros(m.rows(), m.cols()), active_set: 0 };
        let (j1, j2, j3, j4) = if cfg.variant == Variant::Cos {
            let j2 = log_likelihood_pairwise(h, Pairing::Within, &s_within)?;
            let j4 = if mu > 0.0 { log_likelihood_pairwise(h, Pairing::Against(&self.codes), &s_dict)? } else { zero(h) };
            (zero(f), j2, zero(f), j4)
        } else {
            let (m_within, m_dict) = self.margins(&entries)?;
            let j1 = if cfg.alpha > 0.0 { margin_loss(f, Pairing::Within, &s_within, &m_within)? } else { zero(f) };
            let j2 = if cfg.lambda > 0.0 { margin_loss(h, Pairing::Within, &s_within, &m_within)? } else { zero(h) };
            let j3 = if gamma > 0.0 {
                check_len(self.dict.feature_dim(), f.cols())?;
                margin_loss(f, Pairing::Against(self.dict.features()), &s_dict, &m_dict)?
            } else {
                zero(f)
            };
            let j4 = if mu > 0.0 { margin_loss(h, Pairing::Against(&self.codes), &s_dict, &m_dict)? } else { zero(h) };
            (j1, j2, j3, j4)
        };
        let targets = Matrix::from_rows(&labels.iter().map(LabelVector::to_reals).collect::<Vec<_>>())?;
        let j5 = squared_error(&record.class, &targets)?;
        let j6 = quantization(h);

        let total = cfg.alpha * j1.value
            + cfg.lambda * j2.value
            + gamma * j3.value
            + mu * j4.value
            + cfg.eta * j5.value
            + cfg.beta * j6.value;

        let mut d_features = Matrix::zeros(f.rows(), f.cols());
        for ((d, a), b) in d_features.as_mut_slice().iter_mut().zip(j1.grad.as_slice()).zip(j3.grad.as_slice()) {
            *d = cfg.alpha * a + gamma * b;
        }
        let mut d_hash = Matrix::zeros(h.rows(), h.cols());
        for (((d, a), b), q) in
            d_hash.as_mut_slice().iter_mut().zip(j2.grad.as_slice()).zip(j4.grad.as_slice()).zip(j6.grad.as_slice())
        {
            *d = cfg.lambda * a + mu * b + cfg.beta * q;
        }
        let mut d_class = j5.grad;
        d_class.as_mut_slice().iter_mut().for_each(|g| *g *= cfg.eta);

        Ok(BatchLoss {
            breakdown: LossBreakdown {
                total,
                components: vec![j1.value, j2.value, j3.value, j4.value, j5.value, j6.value],
            },
            d_features,
            d_hash,
            d_class,
            active_set: combine_fingerprints(&[
                j1.active_set,
                j2.active_set,
                j3.active_set,
                j4.active_set,
                j6.active_set,
                record.relu_pattern(),
            ]),
        })
    }
}

/// One-shot evaluation of `J_img`; see [`ImageObjective`] to reuse the dictionary margins.
pub fn j_img_loss(
    record: &ForwardRecord,
    labels: &[LabelVector],
    dict: &SemanticDictionary,
    cfg: &ImageNetConfig,
) -> Result<BatchLoss> {
    ImageObjective::new(dict, cfg)?.evaluate(record, labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTraining {
    pub net: MlpNetwork,
    pub history: Vec<EpochLoss>,
}

/// Trains the feature network with momentum SGD on the rows `split.train` of `dataset`.
pub fn train_image(
    dataset: &MultiLabelDataset,
    split: &SplitSpec,
    dict: &SemanticDictionary,
    cfg: &ImageNetConfig,
) -> Result<ImageTraining> {
    split.validate(dataset.len())?;
    let features = dataset.features().select_rows(&split.train);
    let labels = dataset.label_rows(&split.train);
    train_image_on(&features, &labels, dict, cfg)
}

/// [`train_image`] on explicit training rows.
pub fn train_image_on(
    features: &Matrix,
    labels: &[LabelVector],
    dict: &SemanticDictionary,
    cfg: &ImageNetConfig,
) -> Result<ImageTraining> {
    let objective = ImageObjective::new(dict, cfg)?;
    let Some(first) = labels.first() else {
        return Err(Error::EmptyInput("training labels"));
    };
    let arch = cfg.architecture(features.cols(), dict.hash_bits(), first.len());
    if cfg.uses_feature_dictionary() && arch.feature_dim() != dict.feature_dim() {
        return Err(Error::Config(format!(
            "image trunk ends at width {} but the feature dictionary has width {}",
            arch.feature_dim(),
            dict.feature_dim()
        )));
    }
    let mut net = MlpNetwork::new(arch, cfg.seed)?;
    let mut sgd = SgdMomentum::new(cfg.learning_rate, cfg.momentum, net.num_params());
    let schedule = Schedule {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        decay: cfg.lr_decay,
        shuffle_seed: cfg.seed.wrapping_add(1),
    };
    let history =
        run_epochs(&mut net, features, labels, &schedule, &mut sgd, "image", |rec, y| objective.evaluate(rec, y))?;
    Ok(ImageTraining { net, history })
}
