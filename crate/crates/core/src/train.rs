//! Mini-batch training loop shared by both stages.

use log::{debug, trace};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabelVector;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::loss::BatchLoss;
use crate::nn::{ForwardRecord, MlpNetwork, Optimizer};

/// Multiply the learning rate by `factor` every `every` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub every: usize,
    pub factor: f64,
}

/// Mean batch loss over one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub components: Vec<f64>,
}

pub(crate) struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub decay: Option<StepDecay>,
    pub shuffle_seed: u64,
}

/// Runs `schedule.epochs` passes over `inputs` in freshly shuffled mini-batches
/// (the last, possibly short, batch is kept) and returns the per-epoch mean loss.
pub(crate) fn run_epochs<F>(
    net: &mut MlpNetwork,
    inputs: &Matrix,
    labels: &[LabelVector],
    schedule: &Schedule,
    optimizer: &mut dyn Optimizer,
    stage: &'static str,
    mut objective: F,
) -> Result<Vec<EpochLoss>>
where
    F: FnMut(&ForwardRecord, &[LabelVector]) -> Result<BatchLoss>,
{
    if inputs.rows() != labels.len() {
        return Err(Error::RowCountMismatch { features: inputs.rows(), labels: labels.len() });
    }
    if inputs.rows() == 0 {
        return Err(Error::EmptyInput("training set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.shuffle_seed);
    let mut order: Vec<usize> = (0..inputs.rows()).collect();
    let base_lr = optimizer.learning_rate();
    let mut history = Vec::with_capacity(schedule.epochs);
    for epoch in 0..schedule.epochs {
        if let Some(d) = schedule.decay.filter(|d| d.every > 0) {
            optimizer.set_learning_rate(base_lr * d.factor.powi((epoch / d.every) as i32));
        }
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut components: Vec<f64> = Vec::new();
        let mut batches = 0;
        for (batch, idx) in order.chunks(schedule.batch_size).enumerate() {
            let x = inputs.select_rows(idx);
            let y: Vec<LabelVector> = idx.iter().map(|&i| labels[i].clone()).collect();
            let record = net.forward_batch(&x)?;
            let loss = objective(&record, &y)?;
            trace!("{stage} epoch {epoch} batch {batch}: loss {:.6} {:?}", loss.breakdown.total, loss.breakdown.components);
            if !loss.breakdown.total.is_finite() {
                return Err(Error::NonFiniteLoss { stage, epoch, batch });
            }
            let grads = net.backward(&record, &loss.d_features, &loss.d_hash, &loss.d_class)?;
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { stage, epoch, batch });
            }
            optimizer.step(net.params_mut(), &grads);
            total += loss.breakdown.total;
            if components.is_empty() {
                components = vec![0.0; loss.breakdown.components.len()];
            }
            for (c, v) in components.iter_mut().zip(&loss.breakdown.components) {
                *c += v;
            }
            batches += 1;
        }
        let scale = 1.0 / batches as f64;
        components.iter_mut().for_each(|c| *c *= scale);
        debug!("{stage} epoch {epoch}: loss {:.6}", total * scale);
        history.push(EpochLoss { epoch, total: total * scale, components });
    }
    Ok(history)
}
