//! Delay-gradient measurement and the demanded-gradient filter.
//!
//! The gradient of one batch of packets is the mean of inter-arrival minus
//! inter-departure spacing over consecutive packets. It is positive while the
//! bottleneck queue grows, negative while it drains, and cancels any constant
//! clock offset on either side. Raw gradients are denoised by a complementary
//! filter; the filter then turns a history of smoothed gradients into the
//! gradient demanded for the next slot.
//!
//! The closed-form filter rule `(alpha - 1) / (alpha + k) * sum(q)` is applied
//! verbatim. It is not the exact minimizer of the stated objective
//! `mean^2 + alpha * variance` (that is `(alpha - 1) * sum(q) / (alpha*k + 1)`);
//! [`filter_diagnostic`] reports both side by side rather than silently
//! substituting one for the other.

use thiserror::Error;

use crate::trace::PacketRecord;

#[derive(Debug, Error, PartialEq)]
pub enum DelayError {
    #[error("gradient history is empty")]
    EmptyHistory,
}

/// Bounded FIFO of recent smoothed delay gradients, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientHistory {
    values: Vec<f64>,
    capacity: usize,
}

impl GradientHistory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "history capacity must be positive");
        GradientHistory {
            values: Vec::with_capacity(capacity),
            capacity,
        }
    }

    pub fn from_values(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "history values must be non-empty");
        GradientHistory {
            values: values.to_vec(),
            capacity: values.len(),
        }
    }

    pub fn push(&mut self, value: f64) {
        debug_assert!(value.is_finite());
        if self.values.len() == self.capacity {
            self.values.remove(0);
        }
        self.values.push(value);
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

/// Filter weight and complementary-filter coefficient.
///
/// `alpha` trades pulling the mean gradient to zero against damping gradient
/// variance; larger is more tolerant of short-term queue growth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub alpha: f64,
    pub smoothing_coefficient: f64,
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.smoothing_coefficient) {
            return Err(format!(
                "smoothing coefficient must be in [0, 1], got {}",
                self.smoothing_coefficient
            ));
        }
        Ok(())
    }
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            alpha: 1.2,
            smoothing_coefficient: 0.9,
        }
    }
}

/// Mean of `(t_i - t_{i-1}) - (T_i - T_{i-1})` over consecutive packets in
/// send order, where `T` is the send clock and `t` the receive clock.
///
/// Returns `None` for fewer than two packets; callers carry the previous
/// value forward.
pub fn delay_gradient(packets: &[PacketRecord]) -> Option<f64> {
    let refs: Vec<&PacketRecord> = packets.iter().collect();
    delay_gradient_refs(&refs)
}

pub(crate) fn delay_gradient_refs(packets: &[&PacketRecord]) -> Option<f64> {
    if packets.len() < 2 {
        return None;
    }
    let pairs = (packets.len() - 1) as f64;
    let mut sum = 0.0;
    for w in packets.windows(2) {
        let d_recv = w[1].recv_time_ms - w[0].recv_time_ms;
        let d_send = w[1].send_time_ms - w[0].send_time_ms;
        sum += d_recv - d_send;
    }
    Some(sum / pairs)
}

/// Complementary filter: `coefficient * previous + (1 - coefficient) * raw`.
pub fn smooth_gradient(raw_ms: f64, previous_smoothed_ms: f64, coefficient: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&coefficient));
    coefficient * previous_smoothed_ms + (1.0 - coefficient) * raw_ms
}

/// Demanded gradient for the next slot: `(alpha - 1) / (alpha + k) * sum(q)`
/// over the `k` history values.
pub fn target_gradient(history: &GradientHistory, alpha: f64) -> Result<f64, DelayError> {
    if history.is_empty() {
        return Err(DelayError::EmptyHistory);
    }
    let k = history.len() as f64;
    let sum: f64 = history.values().iter().sum();
    Ok((alpha - 1.0) / (alpha + k) * sum)
}

/// The filter's objective for a candidate next gradient: `mean^2 + alpha *
/// variance`, both computed over the history values plus the candidate.
pub fn filter_objective(history: &GradientHistory, candidate_ms: f64, alpha: f64) -> f64 {
    let n = (history.len() + 1) as f64;
    let sum: f64 = history.values().iter().sum::<f64>() + candidate_ms;
    let mean = sum / n;
    let mut var = (candidate_ms - mean).powi(2);
    for &q in history.values() {
        var += (q - mean).powi(2);
    }
    var /= n;
    mean * mean + alpha * var
}

/// Side-by-side view of the closed-form rule and the objective's minimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterDiagnostic {
    /// Output of [`target_gradient`], the value the controller ships.
    pub closed_form: f64,
    /// Argmin of [`filter_objective`] found by golden-section search.
    pub objective_argmin_numeric: f64,
    /// Exact argmin `(alpha - 1) * sum(q) / (alpha * k + 1)`.
    pub objective_argmin_exact: f64,
}

pub fn filter_diagnostic(
    history: &GradientHistory,
    alpha: f64,
) -> Result<FilterDiagnostic, DelayError> {
    let closed_form = target_gradient(history, alpha)?;
    let k = history.len() as f64;
    let sum: f64 = history.values().iter().sum();
    let exact = (alpha - 1.0) * sum / (alpha * k + 1.0);
    let numeric = minimize_objective(history, alpha);
    Ok(FilterDiagnostic {
        closed_form,
        objective_argmin_numeric: numeric,
        objective_argmin_exact: exact,
    })
}

/// Golden-section search for the candidate minimizing [`filter_objective`],
/// finished with one parabolic fit. The objective is a strictly convex
/// parabola in the candidate for `alpha >= 0`, so the bracket
/// `+-(sum |q| + 1)` always contains the minimum and the final fit recovers
/// the vertex to machine precision.
pub fn minimize_objective(history: &GradientHistory, alpha: f64) -> f64 {
    let bound: f64 = history.values().iter().map(|q| q.abs()).sum::<f64>() + 1.0;
    let mut lo = -bound;
    let mut hi = bound;
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = filter_objective(history, c, alpha);
    let mut fd = filter_objective(history, d, alpha);
    // Stop while bracket widths still give well-conditioned differences.
    while hi - lo > 1e-2 * bound {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = filter_objective(history, c, alpha);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = filter_objective(history, d, alpha);
        }
    }
    let mid = 0.5 * (lo + hi);
    let (fa, fb, fc) = (
        filter_objective(history, lo, alpha),
        filter_objective(history, mid, alpha),
        filter_objective(history, hi, alpha),
    );
    let num = (mid - lo).powi(2) * (fb - fc) - (mid - hi).powi(2) * (fb - fa);
    let den = (mid - lo) * (fb - fc) - (mid - hi) * (fb - fa);
    if den.abs() < f64::MIN_POSITIVE {
        return mid;
    }
    (mid - 0.5 * num / den).clamp(lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn packet(send: f64, recv: f64) -> PacketRecord {
        PacketRecord {
            session_id: "s".into(),
            send_time_ms: send,
            recv_time_ms: recv,
            size_bytes: 1500,
        }
    }

    #[test]
    fn gradient_hand_example() {
        let pkts = vec![packet(0.0, 100.0), packet(10.0, 112.0), packet(20.0, 125.0)];
        assert_eq!(delay_gradient(&pkts), Some(2.5));
    }

    #[test]
    fn gradient_zero_for_constant_delay() {
        let pkts: Vec<PacketRecord> = (0..10)
            .map(|i| packet(i as f64 * 7.0, i as f64 * 7.0 + 42.0))
            .collect();
        assert_eq!(delay_gradient(&pkts), Some(0.0));
    }

    #[test]
    fn gradient_needs_two_packets() {
        assert_eq!(delay_gradient(&[]), None);
        assert_eq!(delay_gradient(&[packet(0.0, 5.0)]), None);
    }

    #[test]
    fn gradient_ignores_clock_offsets() {
        let pkts = vec![packet(0.0, 100.0), packet(10.0, 113.0), packet(25.0, 131.0)];
        let base = delay_gradient(&pkts).unwrap();
        let shifted: Vec<PacketRecord> = pkts
            .iter()
            .map(|p| packet(p.send_time_ms + 3.0, p.recv_time_ms + 7.0))
            .collect();
        assert_eq!(delay_gradient(&shifted), Some(base));
    }

    #[test]
    fn smoothing_endpoints() {
        assert_eq!(smooth_gradient(4.0, 2.0, 0.0), 4.0);
        assert_eq!(smooth_gradient(4.0, 2.0, 1.0), 2.0);
        assert_eq!(smooth_gradient(4.0, 2.0, 0.5), 3.0);
    }

    #[test]
    fn target_gradient_examples() {
        let h = GradientHistory::from_values(&[1.0, 2.0, 3.0, 4.0]);
        let got = target_gradient(&h, 1.2).unwrap();
        assert!((got - 0.2 / 5.2 * 10.0).abs() < 1e-15);
        let h = GradientHistory::from_values(&[3.0, 5.0]);
        assert_eq!(target_gradient(&h, 0.0).unwrap(), -4.0);
        // alpha = 1 kills the output for any history.
        let h = GradientHistory::from_values(&[9.0, -2.0, 4.4]);
        assert_eq!(target_gradient(&h, 1.0).unwrap(), 0.0);
        assert_eq!(
            target_gradient(&GradientHistory::new(4), 1.0),
            Err(DelayError::EmptyHistory)
        );
    }

    #[test]
    fn objective_examples() {
        let h = GradientHistory::from_values(&[0.0, 0.0]);
        assert_eq!(filter_objective(&h, 0.0, 3.7), 0.0);
        let h = GradientHistory::from_values(&[2.0]);
        assert_eq!(filter_objective(&h, 2.0, 0.0), 4.0);
        let h = GradientHistory::from_values(&[1.0, -1.0]);
        let got = filter_objective(&h, 0.0, 3.0);
        assert!((got - 2.0).abs() < 1e-15);
    }

    #[test]
    fn numeric_argmin_matches_exact_form() {
        let h = GradientHistory::from_values(&[1.5, -0.3, 2.2, 0.9]);
        for alpha in [0.0, 0.6, 1.0, 1.2, 2.4] {
            let d = filter_diagnostic(&h, alpha).unwrap();
            assert!(
                (d.objective_argmin_numeric - d.objective_argmin_exact).abs() < 1e-9,
                "alpha={alpha}: {d:?}"
            );
        }
    }

    #[test]
    fn history_is_bounded_fifo() {
        let mut h = GradientHistory::new(3);
        for v in [1.0, 2.0, 3.0, 4.0] {
            h.push(v);
        }
        assert_eq!(h.values(), &[2.0, 3.0, 4.0]);
        assert_eq!(h.capacity(), 3);
    }

    proptest! {
        #[test]
        fn target_gradient_is_homogeneous(
            values in proptest::collection::vec(-50.0f64..50.0, 1..12),
            alpha in 0.0f64..4.0,
            scale in -5.0f64..5.0,
        ) {
            let h = GradientHistory::from_values(&values);
            let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
            let hs = GradientHistory::from_values(&scaled);
            let a = target_gradient(&h, alpha).unwrap() * scale;
            let b = target_gradient(&hs, alpha).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs())));
        }

        #[test]
        fn objective_is_non_negative(
            values in proptest::collection::vec(-50.0f64..50.0, 1..12),
            candidate in -100.0f64..100.0,
            alpha in 0.0f64..4.0,
        ) {
            let h = GradientHistory::from_values(&values);
            prop_assert!(filter_objective(&h, candidate, alpha) >= 0.0);
        }

        #[test]
        fn gradient_offset_invariance(
            sends in proptest::collection::vec(0.0f64..1e4, 2..20),
            delays in proptest::collection::vec(0.1f64..500.0, 2..20),
            send_off in -1e4f64..1e4,
            recv_off in -1e4f64..1e4,
        ) {
            let n = sends.len().min(delays.len());
            let mut sends = sends[..n].to_vec();
            sends.sort_by(f64::total_cmp);
            let pkts: Vec<PacketRecord> = sends.iter().zip(&delays)
                .map(|(&s, &d)| packet(s, s + d))
                .collect();
            let shifted: Vec<PacketRecord> = pkts.iter()
                .map(|p| packet(p.send_time_ms + send_off, p.recv_time_ms + recv_off))
                .collect();
            let a = delay_gradient(&pkts).unwrap();
            let b = delay_gradient(&shifted).unwrap();
            prop_assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }
}
