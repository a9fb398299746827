//! Central finite-difference check of analytic network gradients.
//!
//! The objective is evaluated at `θ ± eps` for each parameter. Piecewise-linear
//! pieces (ReLU, hinge `max(·, 0)`, `sign`) make the loss non-differentiable on a
//! measure-zero set; a parameter whose probes land on different sides of such a
//! boundary is skipped instead of compared. Objectives report which side they are
//! on through [`Evaluation::active_set`].
//!
//! A difference quotient cannot resolve gradients finer than the rounding noise
//! of the loss itself, roughly `ε·|L| / eps`. That much of the discrepancy is
//! forgiven (`rounding_ulps` ulps of the loss) before the relative error is
//! formed; the unadjusted figure is reported alongside.

use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::MlpNetwork;

/// One evaluation of the objective under test.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// Fingerprint of every kink indicator (active ReLUs, active hinges, signs).
    pub active_set: u64,
    pub gradient: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Denominator floor so that near-zero gradients are compared absolutely.
    pub abs_floor: f64,
    /// Loss rounding allowance, in ulps of `|L|`.
    pub rounding_ulps: f64,
    /// Check at most this many parameters, sampled without replacement.
    pub max_params: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { eps: 1e-6, tolerance: 1e-4, abs_floor: 1e-6, rounding_ulps: 8.0, max_params: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Largest relative error without the rounding allowance.
    pub max_raw_relative_error: f64,
    /// Flat index and name of the parameter with the largest error.
    pub worst: Option<(usize, String)>,
    pub checked: usize,
    pub skipped: usize,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `objective(net).gradient` to central differences on the network's parameters.
pub fn finite_difference_check<F>(net: &MlpNetwork, mut objective: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: FnMut(&MlpNetwork) -> Result<Evaluation>,
{
    let base = objective(net)?;
    if !base.loss.is_finite() {
        return Err(Error::Domain(format!("objective is non-finite ({}) at the base point", base.loss)));
    }
    if base.gradient.len() != net.num_params() {
        return Err(Error::Dimension { expected: net.num_params(), got: base.gradient.len() });
    }
    let indices: Vec<usize> = match cfg.max_params {
        Some(k) if k < net.num_params() => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut v = sample(&mut rng, net.num_params(), k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..net.num_params()).collect(),
    };

    let mut probe = net.clone();
    let mut report =
        GradCheckReport { max_relative_error: 0.0, max_raw_relative_error: 0.0, worst: None, checked: 0, skipped: 0, passed: true };
    for idx in indices {
        let original = probe.params()[idx];
        probe.params_mut()[idx] = original + cfg.eps;
        let plus = objective(&probe)?;
        probe.params_mut()[idx] = original - cfg.eps;
        let minus = objective(&probe)?;
        probe.params_mut()[idx] = original;
        if !plus.loss.is_finite() || !minus.loss.is_finite() {
            return Err(Error::Domain(format!("objective is non-finite when perturbing {}", net.param_name(idx))));
        }
        if plus.active_set != base.active_set || minus.active_set != base.active_set {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus.loss - minus.loss) / (2.0 * cfg.eps);
        let analytic = base.gradient[idx];
        let resolution = cfg.rounding_ulps * f64::EPSILON * plus.loss.abs().max(minus.loss.abs()) / cfg.eps;
        let scale = analytic.abs().max(numeric.abs()).max(cfg.abs_floor);
        let err = ((analytic - numeric).abs() - resolution).max(0.0) / scale;
        report.max_raw_relative_error =
            report.max_raw_relative_error.max(relative_error(analytic, numeric, cfg.abs_floor));
        report.checked += 1;
        if err > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = err;
            report.worst = Some((idx, net.param_name(idx)));
        }
    }
    report.passed = report.max_relative_error <= cfg.tolerance;
    Ok(report)
}
