//! Turning slot sequences into supervised windows.

use crate::delay::{smooth_gradient, FilterConfig};
use crate::trace::SlotObservation;

use super::HistoryWindow;

/// One supervised example: a window and the throughput actually observed in
/// the following slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub window: HistoryWindow,
    pub actual_next_kbps: f64,
}

/// Build training windows from one session's slot sequence.
///
/// Raw per-slot gradients are run through the complementary filter first; the
/// window carries the smoothed series, matching what the live receiver feeds
/// the estimator. The demanded-gradient input of each training window is the
/// *realized* next-slot smoothed gradient: the estimator learns the
/// throughput conditional on the delay budget actually spent, which is what
/// lets the filter's demand steer it at inference time. Windows whose next
/// slot was starved (zero throughput) are skipped; the prediction loss needs
/// a positive target.
pub fn dataset_from_slots(
    slots: &[SlotObservation],
    filter: &FilterConfig,
    k: usize,
) -> Vec<Sample> {
    assert!(k >= 1);
    if slots.len() < k + 1 {
        return Vec::new();
    }
    let mut smoothed = Vec::with_capacity(slots.len());
    let mut prev = 0.0;
    for s in slots {
        prev = smooth_gradient(s.delay_gradient_ms, prev, filter.smoothing_coefficient);
        smoothed.push(prev);
    }
    let mut samples = Vec::new();
    for t in (k - 1)..(slots.len() - 1) {
        let target = slots[t + 1].throughput_kbps;
        if target <= 0.0 {
            continue;
        }
        samples.push(Sample {
            window: HistoryWindow {
                throughputs_kbps: slots[t + 1 - k..=t]
                    .iter()
                    .map(|s| s.throughput_kbps)
                    .collect(),
                delay_gradients_ms: smoothed[t + 1 - k..=t].to_vec(),
                demanded_gradient_ms: smoothed[t + 1],
            },
            actual_next_kbps: target,
        });
    }
    samples
}
