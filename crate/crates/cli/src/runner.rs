//! Shared attack execution: per-video seeding, parallel dispatch, result
//! rows, and summary statistics.
//!
//! Every command that attacks a dataset funnels through [`run_repeat`], so
//! seeds, row layout, and summary math are identical everywhere. Videos are
//! attacked in parallel on a worker pool but collected in input order, and
//! each video derives its own seed from the base seed, the repeat index, and
//! its position — so results do not depend on the number of workers.

use anyhow::{Context, Result};
use rayon::prelude::*;
use savt::attack::{
    optimize_perturbation, AttackConfig, AttackResult, Budget, BudgetKind,
};
use savt::data::VideoRecord;
use savt::metrics::{aap, asp, average_iterations, fooling_rate, DistanceKind};
use savt::models::ClassifierSpec;
use savt::selector::{BoConfig, FramePolicy};
use std::time::Instant;

/// Column layout of every result row the toolkit emits.
pub const CSV_HEADER: &str = "id,model,frame_policy,mode,k,success,iterations,ssim_distance,\
                              l21_distance,pred_label,true_label,wall_ms";

/// 99% two-sided quantile of the standard normal distribution.
pub const Z99: f64 = 2.5758293035489004;

/// One dataset-versus-model attack campaign.
pub struct RunSpec {
    /// Name written to the `model` column (the model directory's stem).
    pub model_name: String,
    /// Frame-selection policy.
    pub policy: FramePolicy,
    /// Frames to select per video.
    pub k: usize,
    /// Optimizer settings; `seed` is the base seed.
    pub attack: AttackConfig,
    /// Measure wall time per video (off by default: timing breaks
    /// byte-identical output).
    pub timing: bool,
}

/// Outcome of attacking one video.
pub struct VideoOutcome {
    /// Dataset id of the video.
    pub id: String,
    /// Ground-truth label.
    pub true_label: usize,
    /// The optimizer's result.
    pub result: AttackResult,
    /// Wall time in milliseconds, or 0 when timing is off.
    pub wall_ms: u128,
}

/// Attacks every record once, in parallel, preserving input order. The seed
/// for video `index` under repeat `repeat` is
/// `base.wrapping_add(repeat * 1_000_003).wrapping_add(index)`, making every
/// (repeat, video) pair independent of worker scheduling.
pub fn run_repeat(
    spec: &ClassifierSpec,
    records: &[VideoRecord],
    run: &RunSpec,
    repeat: usize,
) -> Result<Vec<VideoOutcome>> {
    records
        .par_iter()
        .enumerate()
        .map(|(index, rec)| {
            let seed = run
                .attack
                .seed
                .wrapping_add((repeat as u64).wrapping_mul(1_000_003))
                .wrapping_add(index as u64);
            let frames = rec.video.shape()[0];
            let bo = BoConfig { seed, ..BoConfig::default_for(frames) };
            let atk = AttackConfig { seed, ..run.attack.clone() };
            let start = Instant::now();
            let mask = run
                .policy
                .resolve(&rec.video, rec.label, spec, run.k, &bo, &atk)
                .with_context(|| format!("selecting frames for video {}", rec.id))?;
            let result = optimize_perturbation(&rec.video, rec.label, &mask, spec, &atk)
                .with_context(|| format!("attacking video {}", rec.id))?;
            let wall_ms = if run.timing { start.elapsed().as_millis() } else { 0 };
            Ok(VideoOutcome { id: rec.id.clone(), true_label: rec.label, result, wall_ms })
        })
        .collect()
}

/// Runs `f` on a worker pool of `jobs` threads (0 or `None` = one per
/// logical core).
pub fn with_jobs<T, F>(jobs: Option<usize>, f: F) -> Result<T>
where
    T: Send,
    F: FnOnce() -> Result<T> + Send,
{
    match jobs {
        None | Some(0) => f(),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .context("building the worker pool")?;
            pool.install(f)
        }
    }
}

/// Formats one result row; fields match [`CSV_HEADER`].
pub fn csv_row(run: &RunSpec, o: &VideoOutcome) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        o.id,
        run.model_name,
        run.policy.name(),
        run.attack.mode.name(),
        run.k,
        u8::from(o.result.success),
        o.result.iterations,
        o.result.ssim_distance,
        o.result.l21_distance,
        o.result.pred_label,
        o.true_label,
        o.wall_ms
    )
}

/// Aggregates of one result batch; distortion metrics may be undefined.
pub struct Summary {
    /// Number of attacked videos.
    pub n: usize,
    /// Fooling rate.
    pub fr: f64,
    /// Mean iterations over successes.
    pub ani: Option<f64>,
    /// Failure-padded mean distance.
    pub aap: Option<f64>,
    /// Mean distance over successes.
    pub asp: Option<f64>,
}

/// Distance kind and worst-case distance used by the distortion summaries:
/// budgeted runs aggregate the budgeted quantity with the budget as the
/// worst case; unbudgeted runs aggregate structural distance against the
/// maximum possible value of 1.
pub fn distance_settings(budget: Option<&Budget>) -> (DistanceKind, f64) {
    match budget {
        Some(b) if b.kind == BudgetKind::L21 => (DistanceKind::L21, b.value),
        Some(b) => (DistanceKind::SsimDistance, 1.0 - b.value),
        None => (DistanceKind::SsimDistance, 1.0),
    }
}

/// Summarizes one batch of results.
pub fn summarize(results: &[AttackResult], budget: Option<&Budget>) -> Result<Summary> {
    let (kind, d_max) = distance_settings(budget);
    let fr = fooling_rate(results)?;
    let ani = average_iterations(results)?;
    let aap = if d_max > 0.0 { Some(aap(results, d_max, kind)?) } else { None };
    let asp = asp(results, kind)?;
    Ok(Summary { n: results.len(), fr, ani, aap, asp })
}

/// `-` for undefined metric values, plain shortest-round-trip otherwise.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "-".into())
}

impl Summary {
    /// One-line rendering: `n 200 fr 0.9 ani 3.2 aap 0.05 asp 0.04`.
    pub fn line(&self) -> String {
        format!(
            "n {} fr {} ani {} aap {} asp {}",
            self.n,
            self.fr,
            fmt_opt(self.ani),
            fmt_opt(self.aap),
            fmt_opt(self.asp)
        )
    }
}

/// Mean and 99% normal-approximation confidence half-width of a sample;
/// the half-width needs at least two values.
pub fn mean_ci(values: &[f64]) -> Option<(f64, Option<f64>)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Some((mean, None));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, Some(Z99 * (var / n).sqrt())))
}

/// Renders `metric mean ci99 half-width` across repeats, `-` where undefined.
pub fn fmt_mean_ci(values: &[f64]) -> String {
    match mean_ci(values) {
        None => "- ci99 -".into(),
        Some((mean, None)) => format!("{mean} ci99 -"),
        Some((mean, Some(hw))) => format!("{mean} ci99 {hw}"),
    }
}
