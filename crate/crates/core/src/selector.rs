//! Frame selection: choosing which frames a sparse attack may perturb.
//!
//! Candidate masks are ranked by [`score_mask`], which runs a short burst of
//! the inner optimizer and reports how much adversarial progress the mask
//! allows. [`select_frames_brute`] scores every frame once and takes the
//! best. [`select_frames_bo`] spends a bounded evaluation budget instead: it
//! scores a few random frames, fits a Gaussian-process surrogate over the
//! normalized frame positions, and repeatedly evaluates the frame with the
//! highest expected improvement. Multi-frame selection is greedy, one frame
//! per round. All randomness is seeded, and every tie (equal scores, equal
//! acquisition values) resolves to the lowest frame index, so selection is
//! reproducible and — whenever the budget covers all frames — identical to
//! brute force.

use crate::attack::{attack_progress_score, AttackConfig, FrameMask};
use crate::error::{Error, Result};
use crate::models::ClassifierSpec;
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Length scale of the surrogate kernel over frame positions in [0, 1].
const GP_LENGTHSCALE: f64 = 0.1;
/// Prior variance of the surrogate (scores are standardized before fitting).
const GP_SIGNAL_VAR: f64 = 1.0;
/// Observation-noise jitter added to the kernel diagonal.
const GP_NOISE: f64 = 1e-6;

/// Expected improvement of a Gaussian belief `N(mu, sigma^2)` over the best
/// value seen so far: `(mu - best) * Phi(z) + sigma * phi(z)` with
/// `z = (mu - best) / sigma`. With `sigma = 0` the belief is certain and the
/// value degenerates to `max(mu - best, 0)`. Always nonnegative.
pub fn expected_improvement(mu: f64, sigma: f64, best: f64) -> Result<f64> {
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "standard deviation {sigma} must be finite and nonnegative"
        )));
    }
    let gap = mu - best;
    if sigma == 0.0 {
        return Ok(gap.max(0.0));
    }
    let z = gap / sigma;
    let cdf = 0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    Ok((gap * cdf + sigma * pdf).max(0.0))
}

/// Observations and hyperparameters of a one-dimensional zero-mean Gaussian
/// process with a squared-exponential kernel.
#[derive(Debug, Clone)]
pub struct GpState {
    samples: Vec<(f64, f64)>,
    lengthscale: f64,
    signal_var: f64,
    noise: f64,
}

impl GpState {
    /// A process with no observations yet. The length scale and signal
    /// variance must be positive; the observation noise may be zero, at the
    /// risk of a singular kernel matrix for repeated positions.
    pub fn new(lengthscale: f64, signal_var: f64, noise: f64) -> Result<GpState> {
        if !(lengthscale > 0.0) || !lengthscale.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "length scale {lengthscale} must be positive"
            )));
        }
        if !(signal_var > 0.0) || !signal_var.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "signal variance {signal_var} must be positive"
            )));
        }
        if !(noise >= 0.0) || !noise.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "observation noise {noise} must be nonnegative"
            )));
        }
        Ok(GpState { samples: Vec::new(), lengthscale, signal_var, noise })
    }

    /// Records one observation `(position, value)`.
    pub fn push(&mut self, x: f64, value: f64) {
        self.samples.push((x, value));
    }

    /// All observations in insertion order.
    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    /// The observation with the highest value (earliest wins ties).
    pub fn best(&self) -> Option<(f64, f64)> {
        let mut best: Option<(f64, f64)> = None;
        for &(x, v) in &self.samples {
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((x, v));
            }
        }
        best
    }

    /// Number of observations.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// True when no observation has been recorded.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn kernel(&self, a: f64, b: f64) -> f64 {
        let d = a - b;
        self.signal_var * (-d * d / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }
}

/// Posterior `(mean, standard deviation)` of the latent function at `query`.
///
/// The prior has mean zero, so with no observations — or far from all of
/// them — the posterior reverts to `(0, sqrt(signal_var))`. The kernel
/// matrix (with the noise jitter on its diagonal) is factorized by a
/// Cholesky decomposition; a matrix that is singular even with the jitter is
/// rejected with a diagnostic rather than silently producing garbage.
pub fn gp_posterior(state: &GpState, query: f64) -> Result<(f64, f64)> {
    if !query.is_finite() {
        return Err(Error::InvalidArgument(format!("query position {query} must be finite")));
    }
    let n = state.samples.len();
    if n == 0 {
        return Ok((0.0, state.signal_var.sqrt()));
    }
    // Kernel matrix with noise on the diagonal, row-major.
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut v = state.kernel(state.samples[i].0, state.samples[j].0);
            if i == j {
                v += state.noise;
            }
            k[i * n + j] = v;
        }
    }
    // In-place Cholesky: K = L L^T with L lower triangular.
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut diag = k[j * n + j];
        for s in 0..j {
            diag -= l[j * n + s] * l[j * n + s];
        }
        if !(diag > 0.0) {
            return Err(Error::Numeric(format!(
                "kernel matrix is singular at pivot {j} even with noise jitter {}; \
                 observation positions are too close together",
                state.noise
            )));
        }
        let root = diag.sqrt();
        l[j * n + j] = root;
        for i in (j + 1)..n {
            let mut v = k[i * n + j];
            for s in 0..j {
                v -= l[i * n + s] * l[j * n + s];
            }
            l[i * n + j] = v / root;
        }
    }
    let solve_lower = |rhs: &[f64]| -> Vec<f64> {
        let mut z = vec![0.0; n];
        for i in 0..n {
            let mut v = rhs[i];
            for s in 0..i {
                v -= l[i * n + s] * z[s];
            }
            z[i] = v / l[i * n + i];
        }
        z
    };
    // alpha = K^{-1} y via two triangular solves.
    let y: Vec<f64> = state.samples.iter().map(|s| s.1).collect();
    let z = solve_lower(&y);
    let mut alpha = vec![0.0; n];
    for i in (0..n).rev() {
        let mut v = z[i];
        for s in (i + 1)..n {
            v -= l[s * n + i] * alpha[s];
        }
        alpha[i] = v / l[i * n + i];
    }
    let kstar: Vec<f64> = state.samples.iter().map(|s| state.kernel(query, s.0)).collect();
    let mean = kstar.iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>();
    let v = solve_lower(&kstar);
    let var = state.kernel(query, query) - v.iter().map(|x| x * x).sum::<f64>();
    Ok((mean, var.max(0.0).sqrt()))
}

/// Settings of the surrogate-guided frame search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoConfig {
    /// Frames scored at random (without replacement) before the surrogate
    /// takes over. At least 2.
    pub init_samples: usize,
    /// Cap on scored frames per selection round; never below `init_samples`.
    pub max_evals: usize,
    /// Optimizer iterations behind each score. At least 1.
    pub inner_iters: usize,
    /// Seed for the initial random frame draws.
    pub seed: u64,
}

impl Default for BoConfig {
    fn default() -> Self {
        BoConfig { init_samples: 3, max_evals: 15, inner_iters: 5, seed: 0 }
    }
}

impl BoConfig {
    /// Defaults adapted to a video length: the evaluation cap shrinks to the
    /// frame count (so short videos are searched exhaustively) and the
    /// initial draw never exceeds the cap.
    pub fn default_for(frames: usize) -> BoConfig {
        let max_evals = frames.clamp(2, 15);
        BoConfig {
            init_samples: 3.min(max_evals),
            max_evals,
            inner_iters: 5,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.init_samples < 2 {
            return Err(Error::InvalidArgument(format!(
                "init_samples {} must be at least 2",
                self.init_samples
            )));
        }
        if self.max_evals < self.init_samples {
            return Err(Error::InvalidArgument(format!(
                "max_evals {} must be at least init_samples {}",
                self.max_evals, self.init_samples
            )));
        }
        if self.inner_iters == 0 {
            return Err(Error::InvalidArgument("inner_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// A selected mask together with how many frame scorings it cost.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoTrace {
    /// The selected frames.
    pub mask: FrameMask,
    /// Total [`score_mask`] calls across all greedy rounds.
    pub evaluations: usize,
}

/// Attack-progress score of a candidate mask: the negated objective after
/// exactly `inner_iters` optimizer iterations (no early stop, no budget).
/// Higher is better for the attacker. Deterministic.
pub fn score_mask(
    x: &Tensor,
    y: usize,
    mask: &FrameMask,
    spec: &ClassifierSpec,
    atk: &AttackConfig,
    inner_iters: usize,
) -> Result<f64> {
    attack_progress_score(x, y, mask, spec, atk, inner_iters)
}

fn check_selection(x: &Tensor, k: usize) -> Result<usize> {
    if x.rank() != 4 {
        return Err(Error::InvalidArgument(format!(
            "expected a (frames, height, width, channels) video, got shape {:?}",
            x.shape()
        )));
    }
    let frames = x.shape()[0];
    if k == 0 || k > frames {
        return Err(Error::InvalidArgument(format!(
            "cannot select {k} of {frames} frames"
        )));
    }
    Ok(frames)
}

/// Surrogate-guided selection of `k` frames; see [`select_frames_bo_traced`].
pub fn select_frames_bo(
    x: &Tensor,
    y: usize,
    spec: &ClassifierSpec,
    k: usize,
    bo: &BoConfig,
    atk: &AttackConfig,
) -> Result<FrameMask> {
    Ok(select_frames_bo_traced(x, y, spec, k, bo, atk)?.mask)
}

/// Selects `k` frames greedily, one per round, spending at most
/// `bo.max_evals` scorings per round.
///
/// Each round draws `init_samples` unselected frames at random (without
/// replacement), then repeatedly fits the surrogate to the standardized
/// scores and evaluates the unevaluated frame with the highest expected
/// improvement — restricting the acquisition to unevaluated frames keeps the
/// deterministic surrogate from stalling on a frame it already knows. The
/// round ends when the budget or the candidate pool is exhausted, and the
/// best-scoring evaluated frame joins the mask (ties to the lowest index).
/// Trivial selections — a single-frame video, `k` equal to the frame count,
/// or one remaining candidate — cost no evaluations. When the budget covers
/// every candidate the round degenerates to brute force: same scores, same
/// tie rule, same pick.
pub fn select_frames_bo_traced(
    x: &Tensor,
    y: usize,
    spec: &ClassifierSpec,
    k: usize,
    bo: &BoConfig,
    atk: &AttackConfig,
) -> Result<BoTrace> {
    let frames = check_selection(x, k)?;
    bo.validate()?;
    if k == frames {
        return Ok(BoTrace { mask: FrameMask::all(frames), evaluations: 0 });
    }
    let denom = (frames - 1).max(1) as f64;
    let encode = |i: usize| i as f64 / denom;
    let mut fixed = vec![false; frames];
    let mut total_evals = 0usize;
    for round in 0..k {
        let free: Vec<usize> = (0..frames).filter(|&i| !fixed[i]).collect();
        if free.len() == 1 {
            fixed[free[0]] = true;
            continue;
        }
        let score_of = |frame: usize| -> Result<f64> {
            let mut bits = fixed.clone();
            bits[frame] = true;
            score_mask(x, y, &FrameMask::new(bits)?, spec, atk, bo.inner_iters)
        };
        let budget = bo.max_evals.min(free.len());
        let mut rng = ChaCha8Rng::seed_from_u64(bo.seed);
        rng.set_stream(round as u64);
        let init_n = bo.init_samples.min(budget);
        let mut evaluated: Vec<(usize, f64)> = Vec::with_capacity(budget);
        for pos in rand::seq::index::sample(&mut rng, free.len(), init_n) {
            let frame = free[pos];
            evaluated.push((frame, score_of(frame)?));
        }
        while evaluated.len() < budget {
            let n = evaluated.len() as f64;
            let mean = evaluated.iter().map(|e| e.1).sum::<f64>() / n;
            let var = evaluated.iter().map(|e| (e.1 - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            let standardize = |s: f64| if std > 1e-12 { (s - mean) / std } else { 0.0 };
            let mut gp = GpState::new(GP_LENGTHSCALE, GP_SIGNAL_VAR, GP_NOISE)?;
            for &(frame, score) in &evaluated {
                gp.push(encode(frame), standardize(score));
            }
            let best = evaluated
                .iter()
                .map(|e| standardize(e.1))
                .fold(f64::NEG_INFINITY, f64::max);
            let mut pick: Option<(usize, f64)> = None;
            for &frame in &free {
                if evaluated.iter().any(|e| e.0 == frame) {
                    continue;
                }
                let (mu, sd) = gp_posterior(&gp, encode(frame))?;
                let ei = expected_improvement(mu, sd, best)?;
                if pick.is_none_or(|(_, best_ei)| ei > best_ei) {
                    pick = Some((frame, ei));
                }
            }
            let (frame, _) = pick.expect("a budget under the candidate count leaves frames");
            evaluated.push((frame, score_of(frame)?));
        }
        total_evals += evaluated.len();
        let mut winner: Option<(usize, f64)> = None;
        for &frame in &free {
            if let Some(&(_, score)) = evaluated.iter().find(|e| e.0 == frame) {
                if winner.is_none_or(|(_, best)| score > best) {
                    winner = Some((frame, score));
                }
            }
        }
        let (frame, _) = winner.expect("every round evaluates at least one frame");
        fixed[frame] = true;
    }
    Ok(BoTrace { mask: FrameMask::new(fixed)?, evaluations: total_evals })
}

/// Scores every frame once (exactly `frames` evaluations) and selects the
/// best single frame, ties to the lowest index. Returns the mask and the
/// per-frame scores.
pub fn select_frames_brute(
    x: &Tensor,
    y: usize,
    spec: &ClassifierSpec,
    bo: &BoConfig,
    atk: &AttackConfig,
) -> Result<(FrameMask, Vec<f64>)> {
    let frames = check_selection(x, 1)?;
    bo.validate()?;
    let mut scores = Vec::with_capacity(frames);
    for frame in 0..frames {
        let mask = FrameMask::single(frames, frame)?;
        scores.push(score_mask(x, y, &mask, spec, atk, bo.inner_iters)?);
    }
    let mut best = 0usize;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    Ok((FrameMask::single(frames, best)?, scores))
}

/// How the command-line tools pick the frames to perturb.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FramePolicy {
    /// The first `k` frames, no scoring.
    First,
    /// One explicit frame index; requires `k` = 1.
    Fixed(usize),
    /// Surrogate-guided search ([`select_frames_bo`]).
    Bo,
    /// Exhaustive single-frame search; requires `k` = 1.
    Brute,
}

impl FramePolicy {
    /// Parses `"bo"`, `"first"`, `"brute"`, or `"fixed:<index>"`.
    pub fn parse(s: &str) -> Result<FramePolicy> {
        match s {
            "bo" => Ok(FramePolicy::Bo),
            "first" => Ok(FramePolicy::First),
            "brute" => Ok(FramePolicy::Brute),
            other => {
                if let Some(index) = other.strip_prefix("fixed:") {
                    let index: usize = index.parse().map_err(|_| {
                        Error::InvalidArgument(format!("bad frame index in {other:?}"))
                    })?;
                    Ok(FramePolicy::Fixed(index))
                } else {
                    Err(Error::InvalidArgument(format!(
                        "unknown frame policy {other:?}; expected bo, first, brute, or fixed:<i>"
                    )))
                }
            }
        }
    }

    /// Stable identifier used in result rows; parseable by
    /// [`FramePolicy::parse`].
    pub fn name(&self) -> String {
        match self {
            FramePolicy::First => "first".into(),
            FramePolicy::Fixed(i) => format!("fixed:{i}"),
            FramePolicy::Bo => "bo".into(),
            FramePolicy::Brute => "brute".into(),
        }
    }

    /// Produces the frame mask this policy assigns to one video.
    pub fn resolve(
        &self,
        x: &Tensor,
        y: usize,
        spec: &ClassifierSpec,
        k: usize,
        bo: &BoConfig,
        atk: &AttackConfig,
    ) -> Result<FrameMask> {
        let frames = check_selection(x, k)?;
        match self {
            FramePolicy::First => FrameMask::first_k(frames, k),
            FramePolicy::Fixed(index) => {
                if k != 1 {
                    return Err(Error::InvalidArgument(format!(
                        "a fixed frame policy selects exactly one frame, not {k}"
                    )));
                }
                FrameMask::single(frames, *index)
            }
            FramePolicy::Bo => select_frames_bo(x, y, spec, k, bo, atk),
            FramePolicy::Brute => {
                if k != 1 {
                    return Err(Error::InvalidArgument(format!(
                        "brute-force selection scores single frames, so k must be 1, not {k}"
                    )));
                }
                Ok(select_frames_brute(x, y, spec, bo, atk)?.0)
            }
        }
    }
}
