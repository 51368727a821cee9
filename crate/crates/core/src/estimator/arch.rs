//! The four candidate feature-extraction trunks.
//!
//! Every candidate exposes the same four input slots — throughput sequence
//! `[1, k]`, gradient sequence `[1, k]`, demanded gradient `[1]`, and the
//! step-major pair sequence `[k, 2]` — whether or not it uses all of them, so
//! one window-to-tensor mapping serves all kinds. The trunk's output node
//! feeds both the prediction head (inside the same network) and the separate
//! error-estimation head.

use crate::nn::{Activation, Network, NetworkBuilder, NnError, NodeId};

use super::ArchDims;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArchKind {
    /// Fully-connected trunk over the flattened inputs.
    A,
    /// Per-signal 1-D convolutions aggregated by a dense layer.
    B,
    /// Two stacked recurrent layers over the paired time series.
    C,
    /// Convolutional and recurrent paths merged into one feature layer.
    D,
}

impl ArchKind {
    pub const ALL: [ArchKind; 4] = [ArchKind::A, ArchKind::B, ArchKind::C, ArchKind::D];
}

impl std::fmt::Display for ArchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ArchKind::A => "A",
            ArchKind::B => "B",
            ArchKind::C => "C",
            ArchKind::D => "D",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for ArchKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(ArchKind::A),
            "B" => Ok(ArchKind::B),
            "C" => Ok(ArchKind::C),
            "D" => Ok(ArchKind::D),
            other => Err(format!("unknown architecture `{other}` (expected A, B, C or D)")),
        }
    }
}

pub(super) struct BuiltModel {
    pub pn: Network,
    pub een: Network,
    pub feature_node: NodeId,
    pub feature_dim: usize,
}

pub(super) fn build(kind: ArchKind, dims: &ArchDims, seed: u64) -> Result<BuiltModel, NnError> {
    let k = dims.history_len;
    let mut b = NetworkBuilder::new(seed);
    let b_seq = b.input(&[1, k]);
    let q_seq = b.input(&[1, k]);
    let e_in = b.input(&[1]);
    let pair_seq = b.input(&[k, 2]);

    let conv_paths = |b: &mut NetworkBuilder| -> Result<(NodeId, NodeId), NnError> {
        let cb = b.conv1d(
            "conv_b",
            b_seq,
            dims.conv_filters,
            dims.conv_kernel,
            dims.conv_stride,
            Activation::Relu,
        )?;
        let cq = b.conv1d(
            "conv_q",
            q_seq,
            dims.conv_filters,
            dims.conv_kernel,
            dims.conv_stride,
            Activation::Relu,
        )?;
        Ok((b.flatten("conv_b_flat", cb), b.flatten("conv_q_flat", cq)))
    };
    let gru_stack = |b: &mut NetworkBuilder| -> Result<NodeId, NnError> {
        // The first layer's full state sequence feeds the second layer.
        let g1 = b.gru("gru1", pair_seq, dims.gru_units)?;
        let g2 = b.gru("gru2", g1, dims.gru_units)?;
        b.last_row("gru_final", g2)
    };

    let feature = match kind {
        ArchKind::A => {
            let bf = b.flatten("throughput_flat", b_seq);
            let qf = b.flatten("gradient_flat", q_seq);
            let cat = b.concat("inputs", &[bf, qf, e_in])?;
            b.dense("fe", cat, dims.dense_units, Activation::Relu)?
        }
        ArchKind::B => {
            let (bf, qf) = conv_paths(&mut b)?;
            let cat = b.concat("agg_in", &[bf, qf, e_in])?;
            b.dense("agg", cat, dims.dense_units, Activation::Relu)?
        }
        ArchKind::C => {
            let h = gru_stack(&mut b)?;
            b.concat("feature", &[h, e_in])?
        }
        ArchKind::D => {
            let (bf, qf) = conv_paths(&mut b)?;
            let cat = b.concat("agg_in", &[bf, qf, e_in])?;
            let agg = b.dense("agg", cat, dims.dense_units, Activation::Relu)?;
            let h = gru_stack(&mut b)?;
            b.concat("merge", &[agg, h])?
        }
    };
    let feature_dim = b.shape(feature)[0];
    let out = b.dense("pn_out", feature, 1, Activation::Linear)?;
    let mut pn = b.finish(out);
    // Positive prior on the normalized throughput output. The prediction
    // loss divides by the prediction, and for negative outputs it decreases
    // toward -infinity, so descent must start in the positive basin.
    pn.params
        .by_name_mut("pn_out.bias")
        .expect("head bias exists")
        .value
        .data_mut()[0] = 0.5;

    let mut eb = NetworkBuilder::new(seed ^ 0x9e37_79b9_7f4a_7c15);
    let f_in = eb.input(&[feature_dim]);
    let e_out = eb.dense("een_out", f_in, 1, Activation::Linear)?;
    let een = eb.finish(e_out);

    Ok(BuiltModel {
        pn,
        een,
        feature_node: feature,
        feature_dim,
    })
}
