//! One feature network per modality, all guided by the same label dictionaries.
//!
//! Each modality trains exactly as [`train_image`] would on its own view; the
//! networks never see each other's gradients and only meet through the shared
//! code and feature dictionaries. Retrieval across modalities encodes queries
//! with one network and the database with another.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BiModalDataset, LabelVector, MultiLabelDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions, Labeled, RetrievalRun, TrainedHashModel};
use crate::image::{train_image, ImageNetConfig};
use crate::nn::MlpNetwork;
use crate::semantic::SemanticDictionary;
use crate::train::EpochLoss;

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityTraining {
    pub name: String,
    pub net: MlpNetwork,
    pub history: Vec<EpochLoss>,
}

/// Trains one network per modality, `cfgs[j]` for modality `j`. Modalities are
/// independent and train in parallel; results come back in modality order.
pub fn train_crossmodal(
    dataset: &BiModalDataset,
    split: &SplitSpec,
    dict: &SemanticDictionary,
    cfgs: &[ImageNetConfig],
) -> Result<Vec<ModalityTraining>> {
    if cfgs.len() != dataset.modalities().len() {
        return Err(Error::Config(format!(
            "{} modality configs for {} modalities",
            cfgs.len(),
            dataset.modalities().len()
        )));
    }
    dataset
        .modalities()
        .par_iter()
        .zip(cfgs)
        .map(|((name, data), cfg)| {
            let t = train_image(data, split, dict, cfg)?;
            Ok(ModalityTraining { name: name.clone(), net: t.net, history: t.history })
        })
        .collect()
}

/// Retrieval with queries from `query_data` encoded by `net_query` against the
/// database rows of `db_data` encoded by `net_db`.
pub fn crossmodal_eval(
    net_query: &MlpNetwork,
    net_db: &MlpNetwork,
    query_data: &MultiLabelDataset,
    db_data: &MultiLabelDataset,
    split: &SplitSpec,
    opts: &EvalOptions,
) -> Result<RetrievalRun> {
    let (kq, kd) = (net_query.architecture().hash_bits, net_db.architecture().hash_bits);
    if kq != kd {
        return Err(Error::CodeLength(kq, kd));
    }
    split.validate(query_data.len())?;
    split.validate(db_data.len())?;
    let q = TrainedHashModel::new(net_query.clone()).encode_items(query_data, &split.query)?;
    let d = TrainedHashModel::new(net_db.clone()).encode_items(db_data, &split.database)?;
    let ql = query_data.label_rows(&split.query);
    let dl = db_data.label_rows(&split.database);
    evaluate(Labeled::new(&q, &ql)?, Labeled::new(&d, &dl)?, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionResult {
    pub query: String,
    pub database: String,
    pub map: f64,
    pub random_baseline: f64,
    #[serde(skip)]
    pub run: Option<RetrievalRun>,
}

/// Both directions between modalities `a` and `b` of a trained pair.
pub fn crossmodal_report(
    dataset: &BiModalDataset,
    trained: &[ModalityTraining],
    a: &str,
    b: &str,
    split: &SplitSpec,
    opts: &EvalOptions,
) -> Result<[DirectionResult; 2]> {
    let find = |name: &str| -> Result<(&MultiLabelDataset, &MlpNetwork)> {
        let data = dataset.modality(name).ok_or_else(|| Error::Config(format!("unknown modality {name:?}")))?;
        let net = trained
            .iter()
            .find(|t| t.name == name)
            .map(|t| &t.net)
            .ok_or_else(|| Error::Config(format!("modality {name:?} was not trained")))?;
        Ok((data, net))
    };
    let (da, na) = find(a)?;
    let (db, nb) = find(b)?;
    let baseline = random_ranking_map(&da.label_rows(&split.query), &db.label_rows(&split.database))?;
    let dir = |qd, qn, dd, dn, qname: &str, dname: &str| -> Result<DirectionResult> {
        let run = crossmodal_eval(qn, dn, qd, dd, split, opts)?;
        Ok(DirectionResult {
            query: qname.into(),
            database: dname.into(),
            map: run.map,
            random_baseline: baseline,
            run: Some(run),
        })
    };
    Ok([dir(da, na, db, nb, a, b)?, dir(db, nb, da, na, b, a)?])
}

/// Expected MAP@ALL of a uniformly random ranking, approximated per query by the
/// fraction of relevant database items and averaged over evaluable queries.
pub fn random_ranking_map(query_labels: &[LabelVector], db_labels: &[LabelVector]) -> Result<f64> {
    if db_labels.is_empty() {
        return Err(Error::EmptyInput("database"));
    }
    let fractions: Vec<f64> = query_labels
        .iter()
        .map(|q| db_labels.iter().filter(|d| q.shares_with(d)).count() as f64 / db_labels.len() as f64)
        .filter(|&f| f > 0.0)
        .collect();
    if fractions.is_empty() {
        return Err(Error::NoEvaluableQueries);
    }
    Ok(fractions.iter().sum::<f64>() / fractions.len() as f64)
}
