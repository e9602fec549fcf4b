//! Aggregate quality metrics over attack results, and transfer rates of
//! adversarial videos across models.
//!
//! The scalar metrics summarize a batch of [`AttackResult`]s: how often the
//! attack fooled the model, how many optimizer iterations successes needed,
//! and how much the successful videos were distorted — either as raw means
//! over successes or padded with a worst-case distance for failures so that
//! runs with different success rates stay comparable.
//! [`transfer_matrix`] re-runs the attack per generator model and measures
//! how often its successful adversarial videos also fool every other model.

use crate::attack::{optimize_perturbation, AttackConfig, AttackResult};
use crate::data::VideoRecord;
use crate::error::{Error, Result};
use crate::models::ClassifierSpec;
use crate::selector::{BoConfig, FramePolicy};
use crate::tensor::Tensor;

/// Which per-result distance a distortion metric aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceKind {
    /// One minus the video structural similarity.
    SsimDistance,
    /// Mean normalized per-frame Euclidean norm ([`l21_distance`]).
    L21,
}

impl DistanceKind {
    /// Stable identifier (`ssim` or `l21`).
    pub fn name(&self) -> &'static str {
        match self {
            DistanceKind::SsimDistance => "ssim",
            DistanceKind::L21 => "l21",
        }
    }

    /// Parses [`DistanceKind::name`].
    pub fn from_name(name: &str) -> Result<DistanceKind> {
        match name {
            "ssim" => Ok(DistanceKind::SsimDistance),
            "l21" => Ok(DistanceKind::L21),
            other => Err(Error::InvalidArgument(format!("unknown distance kind {other:?}"))),
        }
    }
}

fn distance(result: &AttackResult, kind: DistanceKind) -> f64 {
    match kind {
        DistanceKind::SsimDistance => result.ssim_distance,
        DistanceKind::L21 => result.l21_distance,
    }
}

fn require_results(results: &[AttackResult]) -> Result<()> {
    if results.is_empty() {
        Err(Error::InvalidArgument("metrics need at least one attack result".into()))
    } else {
        Ok(())
    }
}

/// Fraction of results whose attack succeeded.
pub fn fooling_rate(results: &[AttackResult]) -> Result<f64> {
    require_results(results)?;
    let hits = results.iter().filter(|r| r.success).count();
    Ok(hits as f64 / results.len() as f64)
}

/// Mean iterations over successful attacks; `None` when nothing succeeded.
pub fn average_iterations(results: &[AttackResult]) -> Result<Option<f64>> {
    require_results(results)?;
    let succ: Vec<f64> = results
        .iter()
        .filter(|r| r.success)
        .map(|r| r.iterations as f64)
        .collect();
    if succ.is_empty() {
        return Ok(None);
    }
    Ok(Some(succ.iter().sum::<f64>() / succ.len() as f64))
}

/// Mean perturbation distance over successful attacks; `None` when nothing
/// succeeded.
pub fn asp(results: &[AttackResult], kind: DistanceKind) -> Result<Option<f64>> {
    require_results(results)?;
    let succ: Vec<f64> = results
        .iter()
        .filter(|r| r.success)
        .map(|r| distance(r, kind))
        .collect();
    if succ.is_empty() {
        return Ok(None);
    }
    Ok(Some(succ.iter().sum::<f64>() / succ.len() as f64))
}

/// Failure-padded mean perturbation distance: with success fraction `f` and
/// mean success distance `m`, returns `m * f + d_max * (1 - f)`, charging
/// every failure the worst-case distance `d_max`. Affine in `f`, so it is
/// always defined and degrades gracefully as attacks start failing.
pub fn aap(results: &[AttackResult], d_max: f64, kind: DistanceKind) -> Result<f64> {
    require_results(results)?;
    if !(d_max > 0.0) || !d_max.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "worst-case distance {d_max} must be positive and finite"
        )));
    }
    let f = fooling_rate(results)?;
    let mean = asp(results, kind)?.unwrap_or(0.0);
    Ok(mean * f + d_max * (1.0 - f))
}

/// Mean normalized per-frame Euclidean norm of a pixel-difference video:
/// the average over frames of `norm(frame) / sqrt(elements per frame)`.
/// Zero exactly when the difference is zero; homogeneous of degree one.
pub fn l21_distance(delta: &Tensor) -> Result<f64> {
    if delta.rank() != 4 {
        return Err(Error::InvalidArgument(format!(
            "expected a (frames, height, width, channels) difference, got shape {:?}",
            delta.shape()
        )));
    }
    let frames = delta.shape()[0];
    let frame_len = delta.len() / frames.max(1);
    if frames == 0 || frame_len == 0 {
        return Err(Error::InvalidArgument(format!(
            "difference shape {:?} has no elements",
            delta.shape()
        )));
    }
    let scale = (frame_len as f64).sqrt();
    let mut sum = 0.0;
    for t in 0..frames {
        let slice = &delta.data()[t * frame_len..(t + 1) * frame_len];
        let norm = slice.iter().map(|v| v * v).sum::<f64>().sqrt();
        sum += norm / scale;
    }
    Ok(sum / frames as f64)
}

/// Cross-model transfer rates. Row `i`, column `j` holds the fraction of
/// generator model `i`'s *successful* adversarial videos that model `j`
/// also misclassifies; a generator with no successes yields a row of
/// `None`. The diagonal of any defined row is exactly 1 by construction.
/// Every generator uses the same frame policy and attack settings.
pub fn transfer_matrix(
    models: &[ClassifierSpec],
    records: &[VideoRecord],
    policy: &FramePolicy,
    k: usize,
    bo: &BoConfig,
    atk: &AttackConfig,
) -> Result<Vec<Vec<Option<f64>>>> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("transfer needs at least one model".into()));
    }
    if records.is_empty() {
        return Err(Error::InvalidArgument("transfer needs at least one video".into()));
    }
    let mut matrix = Vec::with_capacity(models.len());
    for generator in models {
        let mut fooled: Vec<(Tensor, usize)> = Vec::new();
        for record in records {
            let mask = policy.resolve(&record.video, record.label, generator, k, bo, atk)?;
            let result = optimize_perturbation(&record.video, record.label, &mask, generator, atk)?;
            if result.success {
                fooled.push((result.adversarial, record.label));
            }
        }
        let row = if fooled.is_empty() {
            vec![None; models.len()]
        } else {
            let mut row = Vec::with_capacity(models.len());
            for target in models {
                let mut hits = 0usize;
                for (video, label) in &fooled {
                    if target.predict(video)? != *label {
                        hits += 1;
                    }
                }
                row.push(Some(hits as f64 / fooled.len() as f64));
            }
            row
        };
        matrix.push(row);
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::Perturbation;
    use crate::ssim::SsimConfig;
    use crate::testing::{half_video, probe_model, stubborn_model};
    use proptest::prelude::*;

    fn res(success: bool, iterations: usize, ssim_d: f64, l21_d: f64) -> AttackResult {
        AttackResult {
            success,
            iterations,
            perturbation: Perturbation::zeros(&[1, 1, 1, 1]).unwrap(),
            adversarial: Tensor::zeros(&[1, 1, 1, 1]),
            ssim_distance: ssim_d,
            l21_distance: l21_d,
            pred_label: 0,
            objective: 0.0,
        }
    }

    fn small_cfg() -> AttackConfig {
        AttackConfig {
            lambda: 0.5,
            ssim: SsimConfig { window: 4, ..SsimConfig::default() },
            ..AttackConfig::default()
        }
    }

    #[test]
    fn fooling_rate_counts_successes_exactly() {
        let results = vec![
            res(true, 3, 0.0, 0.0),
            res(true, 5, 0.0, 0.0),
            res(true, 1, 0.0, 0.0),
            res(false, 100, 0.0, 0.0),
        ];
        assert_eq!(fooling_rate(&results).unwrap(), 0.75);
        assert!(fooling_rate(&[]).is_err());
    }

    #[test]
    fn average_iterations_covers_successes_only() {
        let results =
            vec![res(true, 6, 0.0, 0.0), res(false, 100, 0.0, 0.0), res(true, 10, 0.0, 0.0)];
        assert_eq!(average_iterations(&results).unwrap(), Some(8.0));
        let failures = vec![res(false, 100, 0.0, 0.0)];
        assert_eq!(average_iterations(&failures).unwrap(), None);
        assert!(average_iterations(&[]).is_err());
    }

    #[test]
    fn success_distance_picks_the_requested_kind() {
        let results = vec![
            res(true, 1, 0.02, 0.3),
            res(true, 1, 0.04, 0.5),
            res(false, 100, 0.9, 0.9),
        ];
        let s = asp(&results, DistanceKind::SsimDistance).unwrap().unwrap();
        assert!((s - 0.03).abs() < 1e-15);
        let l = asp(&results, DistanceKind::L21).unwrap().unwrap();
        assert!((l - 0.4).abs() < 1e-15);
        assert_eq!(asp(&[res(false, 1, 0.1, 0.1)], DistanceKind::L21).unwrap(), None);
    }

    #[test]
    fn padded_distance_is_affine_in_the_success_fraction() {
        let succ = || res(true, 1, 0.05, 0.05);
        let fail = || res(false, 100, 0.5, 0.5);
        let kind = DistanceKind::SsimDistance;
        let all_fail = vec![fail(), fail()];
        assert!((aap(&all_fail, 0.1, kind).unwrap() - 0.1).abs() < 1e-12);
        let half = vec![succ(), fail()];
        assert!((aap(&half, 0.1, kind).unwrap() - 0.075).abs() < 1e-12);
        let all_succ = vec![succ(), succ()];
        assert!((aap(&all_succ, 0.1, kind).unwrap() - 0.05).abs() < 1e-12);
        assert!(aap(&all_succ, 0.0, kind).is_err());
        assert!(aap(&all_succ, -0.1, kind).is_err());
    }

    #[test]
    fn frame_norm_distance_matches_hand_values() {
        let mut delta = Tensor::zeros(&[2, 2, 1, 1]);
        delta.data_mut()[0] = 3.0;
        delta.data_mut()[1] = 4.0;
        // (sqrt(3^2 + 4^2) / sqrt(2) + 0) / 2 = 5 / (2 sqrt(2)).
        let got = l21_distance(&delta).unwrap();
        assert!((got - 1.7677669529663689).abs() < 1e-15, "got {got}");

        // One of two 4x4 frames perturbed by a constant 0.1.
        let mut delta = Tensor::zeros(&[2, 4, 4, 1]);
        for v in &mut delta.data_mut()[..16] {
            *v = 0.1;
        }
        assert!((l21_distance(&delta).unwrap() - 0.05).abs() < 1e-15);

        assert_eq!(l21_distance(&Tensor::zeros(&[3, 2, 2, 2])).unwrap(), 0.0);
        assert!(l21_distance(&Tensor::zeros(&[2, 2])).is_err());
    }

    proptest! {
        #[test]
        fn frame_norm_distance_is_homogeneous_and_subadditive(
            a in proptest::collection::vec(-1.0..1.0f64, 8),
            b in proptest::collection::vec(-1.0..1.0f64, 8),
            s in 0.0..4.0f64,
        ) {
            let shape = [2usize, 2, 2, 1];
            let ta = Tensor::from_vec(&shape, a).unwrap();
            let tb = Tensor::from_vec(&shape, b).unwrap();
            let la = l21_distance(&ta).unwrap();
            let lb = l21_distance(&tb).unwrap();
            let scaled = l21_distance(&ta.scale(s)).unwrap();
            prop_assert!((scaled - s * la).abs() < 1e-12);
            let lsum = l21_distance(&ta.add(&tb).unwrap()).unwrap();
            prop_assert!(lsum <= la + lb + 1e-12);
        }
    }

    #[test]
    fn single_model_transfer_is_a_unit_diagonal() {
        let models = vec![probe_model(9.9)];
        let records = vec![VideoRecord { video: half_video(), label: 0, id: "v0".into() }];
        let bo = BoConfig::default_for(2);
        let matrix =
            transfer_matrix(&models, &records, &FramePolicy::First, 1, &bo, &small_cfg())
                .unwrap();
        assert_eq!(matrix, vec![vec![Some(1.0)]]);
    }

    #[test]
    fn identical_models_transfer_perfectly() {
        let models = vec![probe_model(9.9), probe_model(9.9)];
        let records = vec![
            VideoRecord { video: half_video(), label: 0, id: "v0".into() },
            VideoRecord { video: half_video(), label: 0, id: "v1".into() },
        ];
        let bo = BoConfig::default_for(2);
        let matrix =
            transfer_matrix(&models, &records, &FramePolicy::First, 1, &bo, &small_cfg())
                .unwrap();
        for row in &matrix {
            assert_eq!(row, &vec![Some(1.0), Some(1.0)]);
        }
    }

    #[test]
    fn a_generator_without_successes_yields_an_undefined_row() {
        let models = vec![stubborn_model(), probe_model(9.9)];
        let records = vec![VideoRecord { video: half_video(), label: 0, id: "v0".into() }];
        let bo = BoConfig::default_for(2);
        let cfg = AttackConfig { max_iters: 5, ..small_cfg() };
        let matrix =
            transfer_matrix(&models, &records, &FramePolicy::First, 1, &bo, &cfg).unwrap();
        assert_eq!(matrix[0], vec![None, None]);
        assert_eq!(matrix[1][1], Some(1.0));
        // The stubborn model classifies everything as class 0, so nothing
        // transfers onto it.
        assert_eq!(matrix[1][0], Some(0.0));
    }

    #[test]
    fn transfer_rejects_empty_inputs() {
        let bo = BoConfig::default_for(2);
        let records = vec![VideoRecord { video: half_video(), label: 0, id: "v0".into() }];
        assert!(
            transfer_matrix(&[], &records, &FramePolicy::First, 1, &bo, &small_cfg()).is_err()
        );
        let models = vec![probe_model(9.9)];
        assert!(
            transfer_matrix(&models, &[], &FramePolicy::First, 1, &bo, &small_cfg()).is_err()
        );
    }
}
