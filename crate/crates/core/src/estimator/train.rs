//! Online training over window datasets, validation metrics, and the
//! candidate-architecture comparison.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics;
use super::{ArchKind, EstimatorError, EstimatorModel, Sample, DEFAULT_LR_EEN, DEFAULT_LR_PN};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub lr_pn: f64,
    pub lr_een: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            lr_pn: DEFAULT_LR_PN,
            lr_een: DEFAULT_LR_EEN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub pred_mean: f64,
    pub err_mean: f64,
}

/// Held-out accuracy of a model: mean prediction error, error-estimation
/// rate over normalized errors, and range coverage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValMetrics {
    pub anpe: f64,
    pub eer: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean losses per epoch, in training order.
    pub epoch_losses: Vec<EpochLoss>,
    pub validation: ValMetrics,
    pub train_samples: usize,
    pub val_samples: usize,
    /// Epoch counter value before this run (non-zero when resuming).
    pub start_epoch: usize,
}

/// Mean validation metrics for one candidate architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchComparison {
    pub kind: String,
    pub anpe: f64,
    pub eer: f64,
    pub coverage: f64,
}

/// Train in place for `epochs` passes over the first 80% of `samples`
/// (shuffled per epoch, seeded), validating on the contiguous final 20%.
/// The contiguous split keeps whole session blocks out of training rather
/// than leaking shuffled neighbors. A non-finite loss aborts the run,
/// restores the last completed epoch's parameters, and reports the epoch.
pub fn train(
    model: &mut EstimatorModel,
    samples: &[Sample],
    epochs: usize,
    params: &TrainParams,
    seed: u64,
) -> Result<TrainReport, EstimatorError> {
    if samples.is_empty() {
        return Err(EstimatorError::EmptyDataset);
    }
    let split = (samples.len() * 4 / 5).max(1);
    let (train_set, val_set) = samples.split_at(split.min(samples.len()));
    // Tiny datasets may leave nothing held out; validate on the training
    // block in that case rather than failing.
    let val_set = if val_set.is_empty() { train_set } else { val_set };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x7472_6169_6e); // "train"
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let start_epoch = model.epochs_trained;
    let mut epoch_losses = Vec::with_capacity(epochs);
    let mut last_good = model.snapshot();

    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut sum_pred = 0.0;
        let mut sum_err = 0.0;
        for &i in &order {
            let sample = &train_set[i];
            let step = model.train_step(
                &sample.window,
                sample.actual_next_kbps,
                params.lr_pn,
                params.lr_een,
            );
            let diverged = match step {
                Ok((lp, le)) if lp.is_finite() && le.is_finite() => {
                    sum_pred += lp;
                    sum_err += le;
                    false
                }
                Ok(_) => true,
                // Blown-up parameters surface as non-finite activations on
                // the next pass; treat that as divergence too.
                Err(EstimatorError::ModelCorrupt) => true,
                Err(other) => return Err(other),
            };
            if diverged {
                model.restore(last_good);
                return Err(EstimatorError::Diverged {
                    epoch: start_epoch + epoch,
                });
            }
        }
        epoch_losses.push(EpochLoss {
            pred_mean: sum_pred / train_set.len() as f64,
            err_mean: sum_err / train_set.len() as f64,
        });
        model.epochs_trained += 1;
        last_good = model.snapshot();
    }

    let validation = evaluate(model, val_set)?;
    Ok(TrainReport {
        epoch_losses,
        validation,
        train_samples: train_set.len(),
        val_samples: val_set.len(),
        start_epoch,
    })
}

/// Prediction metrics of a frozen model over a sample set. Errors for the
/// EER term are in the model's normalized throughput units; coverage uses
/// the denormalized (clamped) ranges the controller would ship.
pub fn evaluate(model: &EstimatorModel, samples: &[Sample]) -> Result<ValMetrics, EstimatorError> {
    if samples.is_empty() {
        return Err(EstimatorError::EmptyDataset);
    }
    let scale = model.norm.throughput_scale;
    let mut anpe_sum = 0.0;
    let mut estimated = Vec::with_capacity(samples.len());
    let mut actual_errors = Vec::with_capacity(samples.len());
    let mut predictions = Vec::with_capacity(samples.len());
    let mut actuals = Vec::with_capacity(samples.len());
    for s in samples {
        let p = model.predict(&s.window)?;
        anpe_sum += metrics::anpe(s.actual_next_kbps / scale, p.baseline_kbps / scale);
        estimated.push(p.half_width_kbps / scale);
        actual_errors.push((p.baseline_kbps - s.actual_next_kbps).abs() / scale);
        predictions.push(p);
        actuals.push(s.actual_next_kbps);
    }
    Ok(ValMetrics {
        anpe: anpe_sum / samples.len() as f64,
        eer: metrics::eer(&estimated, &actual_errors)?,
        coverage: metrics::coverage_rate(&predictions, &actuals)?,
    })
}

/// Train every candidate under an identical budget and report mean
/// validation metrics per kind, averaged over `seeds`.
pub fn compare_architectures(
    samples: &[Sample],
    seeds: &[u64],
    epochs: usize,
    params: &TrainParams,
) -> Result<Vec<ArchComparison>, EstimatorError> {
    if samples.is_empty() {
        return Err(EstimatorError::EmptyDataset);
    }
    assert!(!seeds.is_empty(), "at least one seed required");
    let mut rows = Vec::with_capacity(ArchKind::ALL.len());
    for kind in ArchKind::ALL {
        let mut anpe = 0.0;
        let mut eer = 0.0;
        let mut coverage = 0.0;
        for &seed in seeds {
            let mut model = super::build_architecture(kind, seed)?;
            let report = train(&mut model, samples, epochs, params, seed)?;
            anpe += report.validation.anpe;
            eer += report.validation.eer;
            coverage += report.validation.coverage;
        }
        let n = seeds.len() as f64;
        rows.push(ArchComparison {
            kind: kind.to_string(),
            anpe: anpe / n,
            eer: eer / n,
            coverage: coverage / n,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{build_architecture, HistoryWindow};

    fn constant_dataset(value_kbps: f64, n: usize) -> Vec<Sample> {
        (0..n)
            .map(|_| Sample {
                window: HistoryWindow {
                    throughputs_kbps: vec![value_kbps; 8],
                    delay_gradients_ms: vec![0.0; 8],
                    demanded_gradient_ms: 0.0,
                },
                actual_next_kbps: value_kbps,
            })
            .collect()
    }

    #[test]
    fn converges_on_constant_trace() {
        let samples = constant_dataset(500.0, 50);
        let mut model = build_architecture(ArchKind::A, 1).unwrap();
        let report = train(
            &mut model,
            &samples,
            60,
            &TrainParams {
                lr_pn: 0.01,
                lr_een: 0.01,
            },
            1,
        )
        .unwrap();
        let p = model.predict(&samples[0].window).unwrap();
        assert!(
            (p.baseline_kbps - 500.0).abs() <= 50.0,
            "baseline {} after {:?}",
            p.baseline_kbps,
            report.validation
        );
        // Losses fall over training.
        let first = report.epoch_losses.first().unwrap().pred_mean;
        let last = report.epoch_losses.last().unwrap().pred_mean;
        assert!(last < first);
    }

    #[test]
    fn zero_epochs_reports_initial_metrics() {
        let samples = constant_dataset(500.0, 20);
        let mut model = build_architecture(ArchKind::A, 2).unwrap();
        let before = evaluate(&model, &samples[16..]).unwrap();
        let report = train(&mut model, &samples, 0, &TrainParams::default(), 2).unwrap();
        assert!(report.epoch_losses.is_empty());
        assert_eq!(report.validation, before);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let samples = constant_dataset(800.0, 30);
        let run = |seed: u64| {
            let mut model = build_architecture(ArchKind::B, seed).unwrap();
            train(&mut model, &samples, 5, &TrainParams::default(), seed).unwrap()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn divergence_restores_last_good_parameters() {
        let samples = constant_dataset(500.0, 20);
        let mut model = build_architecture(ArchKind::A, 3).unwrap();
        let initial = model.snapshot();
        let err = train(
            &mut model,
            &samples,
            10,
            &TrainParams {
                lr_pn: 1e18,
                lr_een: 1e18,
            },
            3,
        )
        .unwrap_err();
        assert!(matches!(err, EstimatorError::Diverged { .. }));
        assert_eq!(model.snapshot().0, initial.0);
        assert_eq!(model.snapshot().1, initial.1);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut model = build_architecture(ArchKind::A, 4).unwrap();
        assert!(matches!(
            train(&mut model, &[], 1, &TrainParams::default(), 0),
            Err(EstimatorError::EmptyDataset)
        ));
        assert!(matches!(
            compare_architectures(&[], &[1], 1, &TrainParams::default()),
            Err(EstimatorError::EmptyDataset)
        ));
    }

    #[test]
    fn degenerate_constant_dataset_reaches_full_coverage() {
        // The half-width clamp alone covers a perfectly learned target.
        let samples = constant_dataset(500.0, 40);
        let rows = compare_architectures(
            &samples,
            &[5],
            40,
            &TrainParams {
                lr_pn: 0.01,
                lr_een: 0.01,
            },
        )
        .unwrap();
        for row in &rows {
            assert_eq!(row.coverage, 1.0, "{row:?}");
        }
    }

    #[test]
    fn resuming_continues_epoch_counter() {
        let samples = constant_dataset(500.0, 20);
        let mut model = build_architecture(ArchKind::A, 5).unwrap();
        train(&mut model, &samples, 3, &TrainParams::default(), 5).unwrap();
        assert_eq!(model.epochs_trained, 3);
        let report = train(&mut model, &samples, 2, &TrainParams::default(), 5).unwrap();
        assert_eq!(report.start_epoch, 3);
        assert_eq!(model.epochs_trained, 5);
    }
}
