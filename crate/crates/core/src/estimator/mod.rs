//! Throughput-range estimation with a bounded two-headed network.
//!
//! A shared feature-extraction trunk feeds two linear heads: the prediction
//! head emits the baseline next-slot throughput `V_f`, the error-estimation
//! head emits `V_e`, the expected magnitude of the prediction's own error.
//! Together they form the range `[V_f - V_e, V_f + V_e]` handed to rate
//! control. The prediction loss backpropagates through the whole trunk; the
//! error head's loss stops at the trunk boundary — the error head is a
//! separate network whose input is the trunk's output, so its updates cannot
//! reach trunk or prediction-head tensors.

mod arch;
mod dataset;
mod metrics;
mod train;

pub use arch::ArchKind;
pub use dataset::{dataset_from_slots, Sample};
pub use metrics::{anpe, coverage_rate, eer, AnpeLoss, ANPE_FLOOR};
pub use train::{
    compare_architectures, evaluate, train, ArchComparison, EpochLoss, TrainParams, TrainReport,
    ValMetrics,
};

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{self, Checkpoint, Network, NnError, NodeId, Tensor};

/// Default window length: slots of history fed to the estimator.
pub const DEFAULT_HISTORY_LEN: usize = 8;

/// Lower clamp on the predicted half-width, keeping every range non-empty
/// and the encoder mapping valid.
pub const MIN_HALF_WIDTH_KBPS: f64 = 1.0;

/// Default learning rate for the prediction path.
pub const DEFAULT_LR_PN: f64 = 0.000625;

/// Default learning rate for the error head.
pub const DEFAULT_LR_EEN: f64 = 0.001;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("history window: {0}")]
    Window(String),
    #[error("model produced a non-finite activation")]
    ModelCorrupt,
    #[error("training target must be positive, got {0}")]
    InvalidTarget(f64),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("training diverged at epoch {epoch}; parameters restored to the last good state")]
    Diverged { epoch: usize },
    #[error("checkpoint descriptor: {0}")]
    Descriptor(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Estimator input: the last `k` per-slot observations plus the gradient
/// demanded for the next slot.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryWindow {
    pub throughputs_kbps: Vec<f64>,
    pub delay_gradients_ms: Vec<f64>,
    pub demanded_gradient_ms: f64,
}

impl HistoryWindow {
    fn check(&self, k: usize) -> Result<(), EstimatorError> {
        if self.throughputs_kbps.len() != k || self.delay_gradients_ms.len() != k {
            return Err(EstimatorError::Window(format!(
                "expected {k} entries per sequence, got {} throughputs and {} gradients",
                self.throughputs_kbps.len(),
                self.delay_gradients_ms.len()
            )));
        }
        let finite = self
            .throughputs_kbps
            .iter()
            .chain(self.delay_gradients_ms.iter())
            .all(|v| v.is_finite())
            && self.demanded_gradient_ms.is_finite();
        if !finite {
            return Err(EstimatorError::Window("non-finite value".into()));
        }
        Ok(())
    }
}

/// Predicted throughput range `[baseline - half_width, baseline + half_width]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePrediction {
    pub baseline_kbps: f64,
    /// Always >= [`MIN_HALF_WIDTH_KBPS`].
    pub half_width_kbps: f64,
}

impl RatePrediction {
    pub fn new(baseline_kbps: f64, half_width_kbps: f64) -> Self {
        RatePrediction {
            baseline_kbps,
            half_width_kbps: half_width_kbps.abs().max(MIN_HALF_WIDTH_KBPS),
        }
    }

    pub fn min_kbps(&self) -> f64 {
        self.baseline_kbps - self.half_width_kbps
    }

    pub fn max_kbps(&self) -> f64 {
        self.baseline_kbps + self.half_width_kbps
    }
}

/// Layer sizes of the candidate trunks. Defaults follow the reference setup:
/// 64 filters of width 3 and stride 1 per signal, a 64-unit aggregation
/// layer, and two 64-unit recurrent layers over an 8-slot window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDims {
    pub history_len: usize,
    pub conv_filters: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub dense_units: usize,
    pub gru_units: usize,
}

impl Default for ArchDims {
    fn default() -> Self {
        ArchDims {
            history_len: DEFAULT_HISTORY_LEN,
            conv_filters: 64,
            conv_kernel: 3,
            conv_stride: 1,
            dense_units: 64,
            gru_units: 64,
        }
    }
}

impl ArchDims {
    pub fn with_history_len(k: usize) -> Self {
        ArchDims {
            history_len: k,
            ..ArchDims::default()
        }
    }
}

/// Fixed input scaling stored with the model. Raw kbit/s values destabilize
/// training, so throughputs and targets are divided by `throughput_scale`
/// and gradients by `gradient_scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub throughput_scale: f64,
    pub gradient_scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            throughput_scale: 1000.0,
            gradient_scale: 100.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Descriptor {
    model: String,
    kind: String,
    dims: ArchDims,
    normalization: Normalization,
    epochs_trained: usize,
}

/// The bounded estimator: trunk + prediction head in one network, the error
/// head in a second network fed by the trunk's output.
#[derive(Debug, Clone)]
pub struct EstimatorModel {
    pub kind: ArchKind,
    pub dims: ArchDims,
    pub norm: Normalization,
    pub epochs_trained: usize,
    pn: Network,
    een: Network,
    feature_node: NodeId,
    feature_dim: usize,
}

/// Build a candidate with default layer sizes, deterministically per seed.
pub fn build_architecture(kind: ArchKind, seed: u64) -> Result<EstimatorModel, EstimatorError> {
    build_with_dims(kind, ArchDims::default(), seed)
}

pub fn build_with_dims(
    kind: ArchKind,
    dims: ArchDims,
    seed: u64,
) -> Result<EstimatorModel, EstimatorError> {
    let built = arch::build(kind, &dims, seed)?;
    Ok(EstimatorModel {
        kind,
        dims,
        norm: Normalization::default(),
        epochs_trained: 0,
        pn: built.pn,
        een: built.een,
        feature_node: built.feature_node,
        feature_dim: built.feature_dim,
    })
}

struct ForwardPair {
    acts: nn::Activations,
    een_acts: nn::Activations,
    /// Normalized baseline prediction.
    y_hat: f64,
    /// Normalized error estimate.
    e_hat: f64,
}

impl EstimatorModel {
    pub fn history_len(&self) -> usize {
        self.dims.history_len
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Total parameter count across trunk and both heads.
    pub fn parameter_count(&self) -> usize {
        self.pn.params.total_elements() + self.een.params.total_elements()
    }

    pub(crate) fn pn_network(&self) -> &Network {
        &self.pn
    }

    pub(crate) fn pn_network_mut(&mut self) -> &mut Network {
        &mut self.pn
    }

    pub(crate) fn een_network(&self) -> &Network {
        &self.een
    }

    pub(crate) fn een_network_mut(&mut self) -> &mut Network {
        &mut self.een
    }

    fn window_inputs(&self, window: &HistoryWindow) -> Result<Vec<Tensor>, EstimatorError> {
        let k = self.dims.history_len;
        window.check(k)?;
        let b: Vec<f64> = window
            .throughputs_kbps
            .iter()
            .map(|v| v / self.norm.throughput_scale)
            .collect();
        let q: Vec<f64> = window
            .delay_gradients_ms
            .iter()
            .map(|v| v / self.norm.gradient_scale)
            .collect();
        let e = window.demanded_gradient_ms / self.norm.gradient_scale;
        let mut pairs = Vec::with_capacity(2 * k);
        for i in 0..k {
            pairs.push(b[i]);
            pairs.push(q[i]);
        }
        Ok(vec![
            Tensor::from_vec(&[1, k], b)?,
            Tensor::from_vec(&[1, k], q)?,
            Tensor::vector(vec![e]),
            Tensor::from_vec(&[k, 2], pairs)?,
        ])
    }

    fn forward_pair(&self, window: &HistoryWindow) -> Result<ForwardPair, EstimatorError> {
        let inputs = self.window_inputs(window)?;
        let acts = self.pn.forward(&inputs)?;
        let y_hat = self.pn.output(&acts).data()[0];
        let feature = acts.value(self.feature_node).clone();
        let een_acts = self.een.forward(&[feature])?;
        let e_hat = self.een.output(&een_acts).data()[0];
        if !y_hat.is_finite() || !e_hat.is_finite() {
            return Err(EstimatorError::ModelCorrupt);
        }
        Ok(ForwardPair {
            acts,
            een_acts,
            y_hat,
            e_hat,
        })
    }

    /// Predict the next-slot throughput range for a window.
    pub fn predict(&self, window: &HistoryWindow) -> Result<RatePrediction, EstimatorError> {
        let fp = self.forward_pair(window)?;
        Ok(RatePrediction::new(
            fp.y_hat * self.norm.throughput_scale,
            fp.e_hat * self.norm.throughput_scale,
        ))
    }

    /// One online update. Both losses come from the same forward pass; the
    /// prediction update (through trunk and prediction head) is applied
    /// first, then the error-head update. Returns `(loss_pred, loss_err)`.
    pub fn train_step(
        &mut self,
        window: &HistoryWindow,
        actual_next_kbps: f64,
        lr_pn: f64,
        lr_een: f64,
    ) -> Result<(f64, f64), EstimatorError> {
        if !(actual_next_kbps > 0.0) {
            return Err(EstimatorError::InvalidTarget(actual_next_kbps));
        }
        let fp = self.forward_pair(window)?;
        let y = actual_next_kbps / self.norm.throughput_scale;

        let loss_pred = metrics::anpe(y, fp.y_hat);
        let e_true = (fp.y_hat - y).abs();
        let loss_err = (e_true - fp.e_hat) * (e_true - fp.e_hat);

        let g_pred = Tensor::scalar(metrics::anpe_grad(y, fp.y_hat));
        let pn_grads = self.pn.backward(&fp.acts, &g_pred)?;
        let g_err = Tensor::scalar(2.0 * (fp.e_hat - e_true));
        let een_grads = self.een.backward(&fp.een_acts, &g_err)?;

        nn::sgd_step(&mut self.pn.params, &pn_grads, lr_pn);
        nn::sgd_step(&mut self.een.params, &een_grads, lr_een);
        Ok((loss_pred, loss_err))
    }

    /// Error-head-only update: the trunk and prediction head are untouched
    /// bit for bit. Returns `loss_err`.
    pub fn een_step(
        &mut self,
        window: &HistoryWindow,
        actual_next_kbps: f64,
        lr_een: f64,
    ) -> Result<f64, EstimatorError> {
        if !(actual_next_kbps > 0.0) {
            return Err(EstimatorError::InvalidTarget(actual_next_kbps));
        }
        let fp = self.forward_pair(window)?;
        let y = actual_next_kbps / self.norm.throughput_scale;
        let e_true = (fp.y_hat - y).abs();
        let loss_err = (e_true - fp.e_hat) * (e_true - fp.e_hat);
        let g_err = Tensor::scalar(2.0 * (fp.e_hat - e_true));
        let een_grads = self.een.backward(&fp.een_acts, &g_err)?;
        nn::sgd_step(&mut self.een.params, &een_grads, lr_een);
        Ok(loss_err)
    }

    pub fn save_checkpoint<W: Write>(&self, w: W) -> Result<(), EstimatorError> {
        let descriptor = Descriptor {
            model: "throughput-range-estimator".into(),
            kind: self.kind.to_string(),
            dims: self.dims,
            normalization: self.norm,
            epochs_trained: self.epochs_trained,
        };
        let value = serde_json::to_value(&descriptor)
            .map_err(|e| EstimatorError::Descriptor(e.to_string()))?;
        let mut ckpt = Checkpoint::new(value);
        ckpt.add_params("pn", &self.pn.params);
        ckpt.add_params("een", &self.een.params);
        ckpt.write(w)?;
        Ok(())
    }

    pub fn load_checkpoint<R: Read>(r: R) -> Result<EstimatorModel, EstimatorError> {
        let ckpt = Checkpoint::read(r)?;
        let descriptor: Descriptor = serde_json::from_value(ckpt.architecture.clone())
            .map_err(|e| EstimatorError::Descriptor(e.to_string()))?;
        let kind: ArchKind = descriptor
            .kind
            .parse()
            .map_err(EstimatorError::Descriptor)?;
        let mut model = build_with_dims(kind, descriptor.dims, 0)?;
        ckpt.load_params("pn", &mut model.pn.params)?;
        ckpt.load_params("een", &mut model.een.params)?;
        model.norm = descriptor.normalization;
        model.epochs_trained = descriptor.epochs_trained;
        Ok(model)
    }

    pub(crate) fn snapshot(&self) -> (nn::ParamSet, nn::ParamSet) {
        (self.pn.params.clone(), self.een.params.clone())
    }

    pub(crate) fn restore(&mut self, snapshot: (nn::ParamSet, nn::ParamSet)) {
        self.pn.params = snapshot.0;
        self.een.params = snapshot.1;
    }
}
