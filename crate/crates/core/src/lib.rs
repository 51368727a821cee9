//! Delay-constrained rate control for real-time streaming.
//!
//! The receiver measures per-slot throughput and delay gradients, filters the
//! gradients into a demanded value for the next slot, and feeds both into a
//! two-headed neural estimator that predicts the next-slot throughput as a
//! bounded range `[V_f - V_e, V_f + V_e]`. The sender maps that range onto
//! constrained-VBR encoder parameters. A deterministic event-driven simulator
//! closes the loop for evaluation.
//!
//! Module map:
//! - [`trace`]: packet traces (CSV parse/serialize, slot aggregation, synthesis)
//! - [`delay`]: delay gradients, complementary smoothing, the demanded-gradient filter
//! - [`nn`]: minimal dense/conv1d/GRU substrate with exact analytic gradients
//! - [`estimator`]: prediction + error-estimation heads, training, metrics
//! - [`control`]: encoder parameter mapping, switch hysteresis, feedback wire format
//! - [`profile`]: scenario profiles (bandwidth process, delay, loss, queue)
//! - [`sim`]: deterministic sender/link/receiver event loop
//! - [`corpus`]: bundled synthetic training corpus
//! - [`eval`]: session metrics (USI, utilization, stability) and comparison reports

pub mod control;
pub mod corpus;
pub mod delay;
pub mod estimator;
pub mod eval;
pub mod nn;
pub mod profile;
pub mod sim;
pub mod trace;

pub(crate) mod mix;
