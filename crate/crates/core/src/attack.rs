//! Sparse adversarial video perturbation and its inner optimizer.
//!
//! A [`Perturbation`] carries an additive noise tensor and a spatial flow
//! field; [`compose_adversarial`] applies both to the frames selected by a
//! [`FrameMask`] and clips the result to the pixel range, leaving unselected
//! frames bit-identical to the original. [`optimize_perturbation`] descends
//! the combined objective — similarity-weighted structural distortion minus
//! classification loss — with adaptive-moment updates on noise and flow
//! jointly, stopping at the first misclassification. An optional similarity
//! or norm budget is enforced at every iterate by scaling the perturbation
//! toward zero, so every returned result respects its budget. The whole
//! optimizer is deterministic: zero initialization, no random draws.

use crate::adam::{adam_step, AdamParams, AdamState};
use crate::error::{Error, Result};
use crate::metrics::l21_distance;
use crate::models::{cross_entropy, ClassifierSpec};
use crate::ssim::{ssim_gradient_masked, video_ssim, video_ssim_masked, SsimConfig};
use crate::tensor::Tensor;
use crate::warp::{warp, warp_grad, FlowField};

/// Which frames of a video the perturbation may touch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMask {
    bits: Vec<bool>,
}

impl FrameMask {
    /// Mask from explicit per-frame bits; must cover at least one frame.
    pub fn new(bits: Vec<bool>) -> Result<FrameMask> {
        if bits.is_empty() {
            return Err(Error::InvalidArgument("a frame mask needs at least one frame".into()));
        }
        Ok(FrameMask { bits })
    }

    /// Mask selecting exactly one frame of a `frames`-long video.
    pub fn single(frames: usize, index: usize) -> Result<FrameMask> {
        if index >= frames {
            return Err(Error::InvalidArgument(format!(
                "frame {index} out of range for {frames} frames"
            )));
        }
        let mut bits = vec![false; frames];
        bits[index] = true;
        Ok(FrameMask { bits })
    }

    /// Mask selecting every frame.
    pub fn all(frames: usize) -> FrameMask {
        FrameMask { bits: vec![true; frames] }
    }

    /// Mask selecting no frame (useful only for composition identities).
    pub fn empty(frames: usize) -> FrameMask {
        FrameMask { bits: vec![false; frames] }
    }

    /// Mask selecting the first `k` frames.
    pub fn first_k(frames: usize, k: usize) -> Result<FrameMask> {
        if k == 0 || k > frames {
            return Err(Error::InvalidArgument(format!(
                "cannot select the first {k} of {frames} frames"
            )));
        }
        let mut bits = vec![false; frames];
        bits[..k].fill(true);
        Ok(FrameMask { bits })
    }

    /// Per-frame selection bits.
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Number of frames covered (selected or not).
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    /// True when the mask covers zero frames (never constructible).
    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Number of selected frames.
    pub fn count_selected(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Indices of the selected frames, ascending.
    pub fn selected(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&i| self.bits[i]).collect()
    }

    /// Selects or deselects one frame.
    pub fn set(&mut self, index: usize, value: bool) -> Result<()> {
        if index >= self.bits.len() {
            return Err(Error::InvalidArgument(format!(
                "frame {index} out of range for {} frames",
                self.bits.len()
            )));
        }
        self.bits[index] = value;
        Ok(())
    }

    fn check_video(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 4 || x.shape()[0] != self.bits.len() {
            return Err(Error::InvalidArgument(format!(
                "mask covers {} frames but the video has shape {:?}",
                self.bits.len(),
                x.shape()
            )));
        }
        Ok(())
    }
}

/// Which perturbation components the optimizer may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationMode {
    /// Additive noise only; the flow stays zero.
    NoiseOnly,
    /// Spatial flow only; the noise stays zero.
    SpatialOnly,
    /// Both components, optimized jointly.
    Combined,
}

impl AblationMode {
    /// Stable identifier used in result rows and on the command line.
    pub fn name(&self) -> &'static str {
        match self {
            AblationMode::NoiseOnly => "noise_only",
            AblationMode::SpatialOnly => "spatial_only",
            AblationMode::Combined => "combined",
        }
    }

    /// Parses [`AblationMode::name`] or its short alias (`noise`,
    /// `spatial`, `combined`).
    pub fn from_name(name: &str) -> Result<AblationMode> {
        match name {
            "noise" | "noise_only" => Ok(AblationMode::NoiseOnly),
            "spatial" | "spatial_only" => Ok(AblationMode::SpatialOnly),
            "combined" => Ok(AblationMode::Combined),
            other => Err(Error::InvalidArgument(format!("unknown ablation mode {other:?}"))),
        }
    }
}

/// The constrained quantity of a perturbation budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetKind {
    /// Mean normalized per-frame Euclidean norm of the pixel difference
    /// must stay at or below the budget value.
    L21,
    /// Video structural similarity must stay at or above the budget value.
    Ssim,
}

/// A hard constraint every returned adversarial video must satisfy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    /// Constrained quantity.
    pub kind: BudgetKind,
    /// Bound: an upper bound for [`BudgetKind::L21`], a lower bound for
    /// [`BudgetKind::Ssim`].
    pub value: f64,
}

impl Budget {
    /// Parses `"l21:0.08"` or `"ssim:0.96"`.
    pub fn parse(s: &str) -> Result<Budget> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("budget {s:?} is not kind:value")))?;
        let value: f64 = value
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad budget value {value:?}")))?;
        let kind = match kind {
            "l21" => BudgetKind::L21,
            "ssim" => BudgetKind::Ssim,
            other => return Err(Error::InvalidArgument(format!("unknown budget kind {other:?}"))),
        };
        let budget = Budget { kind, value };
        budget.validate()?;
        Ok(budget)
    }

    fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            BudgetKind::L21 => self.value > 0.0 && self.value.is_finite(),
            BudgetKind::Ssim => self.value > 0.0 && self.value <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "budget value {} out of range for its kind",
                self.value
            )))
        }
    }

    /// True when the pair (similarity, norm distance) satisfies the budget.
    fn holds(&self, ssim: f64, l21: f64) -> bool {
        match self.kind {
            BudgetKind::L21 => l21 <= self.value,
            BudgetKind::Ssim => ssim >= self.value,
        }
    }
}

/// Settings of the perturbation optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// Weight of the structural-similarity term in the objective.
    pub lambda: f64,
    /// Learning rate of the adaptive-moment updates.
    pub lr: f64,
    /// Iteration cap.
    pub max_iters: usize,
    /// Optional hard perturbation budget.
    pub budget: Option<Budget>,
    /// Which perturbation components to optimize.
    pub mode: AblationMode,
    /// Similarity settings used by the objective and budget checks.
    pub ssim: SsimConfig,
    /// Seed forwarded to components that draw random numbers (the optimizer
    /// itself is deterministic).
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            lambda: 1.0,
            lr: 0.01,
            max_iters: 100,
            budget: None,
            mode: AblationMode::Combined,
            ssim: SsimConfig::default(),
            seed: 0,
        }
    }
}

impl AttackConfig {
    /// Default similarity weight for an architecture: recurrent models get
    /// 1.5, the others 1.0.
    pub fn default_lambda(arch: crate::models::Arch) -> f64 {
        match arch {
            crate::models::Arch::FrameCnnRecurrent => 1.5,
            _ => 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be > 0", self.lr)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if let Some(b) = &self.budget {
            b.validate()?;
        }
        Ok(())
    }
}

/// Additive noise plus spatial flow, the two perturbation components.
#[derive(Debug, Clone)]
pub struct Perturbation {
    /// Additive component, shaped like the video; only selected frames are
    /// ever applied.
    pub noise: Tensor,
    /// Spatial component, one displacement pair per pixel per frame.
    pub flow: FlowField,
}

impl Perturbation {
    /// The zero perturbation for a `(frames, height, width, channels)` video.
    pub fn zeros(video_shape: &[usize]) -> Result<Perturbation> {
        if video_shape.len() != 4 {
            return Err(Error::InvalidArgument(format!(
                "expected a (frames, height, width, channels) shape, got {video_shape:?}"
            )));
        }
        Ok(Perturbation {
            noise: Tensor::zeros(video_shape),
            flow: FlowField::zeros(video_shape[0], video_shape[1], video_shape[2]),
        })
    }

    /// True when both components are identically zero.
    pub fn is_zero(&self) -> bool {
        self.noise.data().iter().all(|&v| v == 0.0)
            && self.flow.tensor().data().iter().all(|&v| v == 0.0)
    }

    fn scaled(&self, s: f64) -> Perturbation {
        Perturbation {
            noise: self.noise.scale(s),
            flow: FlowField::from_tensor(self.flow.tensor().scale(s))
                .expect("scaling preserves flow shape and finiteness"),
        }
    }
}

/// Outcome of one optimization run against one video.
#[derive(Debug, Clone)]
pub struct AttackResult {
    /// True when the adversarial video is misclassified.
    pub success: bool,
    /// Iterations consumed: the successful iteration index, or the cap on
    /// failure (0 when the clean video was already misclassified).
    pub iterations: usize,
    /// The perturbation producing [`AttackResult::adversarial`].
    pub perturbation: Perturbation,
    /// The composed adversarial video.
    pub adversarial: Tensor,
    /// One minus the video structural similarity to the original.
    pub ssim_distance: f64,
    /// Mean normalized per-frame Euclidean norm of the pixel difference.
    pub l21_distance: f64,
    /// Label the model assigns to the adversarial video.
    pub pred_label: usize,
    /// Objective value at the returned iterate.
    pub objective: f64,
}

/// Applies a perturbation: selected frames become
/// `clip_[0,1](noise + warped frame)`, unselected frames are copied
/// bit-identically from `x`.
pub fn compose_adversarial(x: &Tensor, p: &Perturbation, mask: &FrameMask) -> Result<Tensor> {
    Ok(compose_detail(x, p, mask)?.0)
}

/// Composition plus, for every element of a selected frame, whether the
/// pre-clip value fell inside [0, 1] (the clip's pass-through region, used
/// to gate gradients). Unselected frames report `true`.
fn compose_detail(x: &Tensor, p: &Perturbation, mask: &FrameMask) -> Result<(Tensor, Vec<bool>)> {
    mask.check_video(x)?;
    if p.noise.shape() != x.shape() {
        return Err(Error::ShapeMismatch {
            op: "compose_adversarial",
            lhs: x.shape().to_vec(),
            rhs: p.noise.shape().to_vec(),
        });
    }
    let mut out = warp(x, &p.flow, Some(mask.bits()))?;
    let mut pass = vec![true; x.len()];
    let frame_len = x.len() / x.shape()[0];
    for (t, &selected) in mask.bits().iter().enumerate() {
        if !selected {
            continue;
        }
        let range = t * frame_len..(t + 1) * frame_len;
        let noise = &p.noise.data()[range.clone()];
        let slots = out.data_mut()[range.clone()].iter_mut().zip(&mut pass[range]);
        for ((slot, pass_slot), n) in slots.zip(noise) {
            let pre = n + *slot;
            *pass_slot = (0.0..=1.0).contains(&pre);
            *slot = pre.clamp(0.0, 1.0);
        }
    }
    Ok((out, pass))
}

/// The attack objective: `lambda * (1 - similarity) - classification loss`.
/// Lower is better for the attacker — dissimilarity is penalized,
/// misclassification pressure rewarded.
pub fn objective(
    spec: &ClassifierSpec,
    x: &Tensor,
    xhat: &Tensor,
    y: usize,
    lambda: f64,
    ssim_cfg: &SsimConfig,
) -> Result<f64> {
    let sim = video_ssim(x, xhat, ssim_cfg)?;
    let probs = spec.forward(xhat)?;
    Ok(lambda * (1.0 - sim) - cross_entropy(&probs, y)?)
}

/// One evaluated candidate during optimization.
struct Candidate {
    perturbation: Perturbation,
    adversarial: Tensor,
    ssim: f64,
    l21: f64,
    pred: usize,
    objective: f64,
    ce_grad: Tensor,
    pass: Vec<bool>,
}

fn evaluate(
    spec: &ClassifierSpec,
    x: &Tensor,
    y: usize,
    mask: &FrameMask,
    p: &Perturbation,
    cfg: &AttackConfig,
) -> Result<Candidate> {
    let (xhat, pass) = compose_detail(x, p, mask)?;
    let sim = video_ssim_masked(x, &xhat, Some(mask.bits()), &cfg.ssim)?;
    let l21 = l21_distance(&xhat.sub(x)?)?;
    let (ce_loss, probs, ce_grad) = spec.loss_and_input_grad(&xhat, y)?;
    let pred = argmax(probs.data());
    Ok(Candidate {
        perturbation: p.clone(),
        adversarial: xhat,
        ssim: sim,
        l21,
        pred,
        objective: cfg.lambda * (1.0 - sim) - ce_loss,
        ce_grad,
        pass,
    })
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Scales the perturbation toward zero until the budget holds.
///
/// `s = 0` (the zero perturbation) always satisfies either budget kind, so
/// the bisection keeps a feasible lower bound throughout and returns a
/// feasible scale.
fn project_to_budget(
    x: &Tensor,
    p: &Perturbation,
    mask: &FrameMask,
    budget: &Budget,
    ssim_cfg: &SsimConfig,
) -> Result<Perturbation> {
    let check = |s: f64| -> Result<bool> {
        let scaled = p.scaled(s);
        let xhat = compose_adversarial(x, &scaled, mask)?;
        let sim = video_ssim_masked(x, &xhat, Some(mask.bits()), ssim_cfg)?;
        let l21 = l21_distance(&xhat.sub(x)?)?;
        Ok(budget.holds(sim, l21))
    };
    if check(1.0)? {
        return Ok(p.clone());
    }
    let mut lo = 0.0f64; // feasible by construction
    let mut hi = 1.0f64; // infeasible
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if check(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(p.scaled(lo))
}

fn result_from(candidate: &Candidate, success: bool, iterations: usize) -> AttackResult {
    AttackResult {
        success,
        iterations,
        perturbation: candidate.perturbation.clone(),
        adversarial: candidate.adversarial.clone(),
        ssim_distance: 1.0 - candidate.ssim,
        l21_distance: candidate.l21,
        pred_label: candidate.pred,
        objective: candidate.objective,
    }
}

/// Gradient of the objective with respect to the perturbation components at
/// the given candidate, with clip gating applied.
fn perturbation_gradient(
    x: &Tensor,
    mask: &FrameMask,
    p: &Perturbation,
    cand: &Candidate,
    cfg: &AttackConfig,
) -> Result<(Tensor, Tensor)> {
    // d(objective)/d(xhat) = -lambda * d(similarity)/d(xhat) - d(loss)/d(xhat),
    // then gated to the clip's pass-through region.
    let sim_grad = ssim_gradient_masked(x, &cand.adversarial, Some(mask.bits()), &cfg.ssim)?;
    let mut g_pre = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        if cand.pass[i] {
            g_pre.data_mut()[i] = -cfg.lambda * sim_grad.data()[i] - cand.ce_grad.data()[i];
        }
    }
    // Noise enters additively on selected frames only.
    let mut grad_noise = Tensor::zeros(x.shape());
    let frame_len = x.len() / x.shape()[0];
    for (t, &selected) in mask.bits().iter().enumerate() {
        if selected {
            let range = t * frame_len..(t + 1) * frame_len;
            grad_noise.data_mut()[range.clone()].copy_from_slice(&g_pre.data()[range]);
        }
    }
    let (_, grad_flow) = warp_grad(x, &p.flow, Some(mask.bits()), &g_pre)?;
    Ok((grad_noise, grad_flow))
}

/// Runs the inner attack optimization on one video.
///
/// Starting from the zero perturbation, each iteration takes one
/// adaptive-moment step on the selected components, rescales the
/// perturbation to any declared budget, and evaluates the candidate. The
/// loop stops at the first misclassification (success, `iterations` = that
/// iteration) or at the cap (failure, `iterations` = `max_iters`). A video
/// the model already misclassifies returns success at iteration 0 with the
/// zero perturbation. On failure the best candidate seen — by objective
/// value, including the iteration-0 zero perturbation — is returned, so the
/// returned objective never exceeds the starting objective. Unselected
/// frames of the returned video are bit-identical to `x`, and any budget
/// holds at the returned iterate. The procedure draws no random numbers, so
/// results are bit-deterministic.
pub fn optimize_perturbation(
    x: &Tensor,
    y: usize,
    mask: &FrameMask,
    spec: &ClassifierSpec,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    mask.check_video(x)?;
    if mask.count_selected() == 0 {
        return Err(Error::InvalidArgument(
            "the optimizer needs at least one selected frame".into(),
        ));
    }
    if y >= spec.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "label {y} out of range for {} classes",
            spec.num_classes()
        )));
    }
    let zero = Perturbation::zeros(x.shape())?;
    let mut current = evaluate(spec, x, y, mask, &zero, cfg)?;
    // The zero perturbation composes to the original video numerically; keep
    // it bit-identical too.
    current.adversarial = x.clone();
    if current.pred != y {
        return Ok(result_from(&current, true, 0));
    }

    let mut p = zero;
    let mut noise_state = AdamState::new(x.shape());
    let mut flow_state = AdamState::new(p.flow.tensor().shape());
    let adam = AdamParams { lr: cfg.lr, ..AdamParams::default() };
    let mut best_iterate = result_from(&current, false, 0);

    for iter in 1..=cfg.max_iters {
        let (grad_noise, grad_flow) = perturbation_gradient(x, mask, &p, &current, cfg)?;
        if cfg.mode != AblationMode::SpatialOnly {
            adam_step(&mut noise_state, &mut p.noise, &grad_noise, &adam)?;
        }
        if cfg.mode != AblationMode::NoiseOnly {
            let mut flow_tensor = p.flow.tensor().clone();
            adam_step(&mut flow_state, &mut flow_tensor, &grad_flow, &adam)?;
            p.flow = FlowField::from_tensor(flow_tensor)?;
        }
        if let Some(budget) = &cfg.budget {
            p = project_to_budget(x, &p, mask, budget, &cfg.ssim)?;
        }
        current = evaluate(spec, x, y, mask, &p, cfg)?;
        if current.pred != y {
            return Ok(result_from(&current, true, iter));
        }
        if current.objective < best_iterate.objective {
            best_iterate = result_from(&current, false, iter);
        }
    }
    best_iterate.iterations = cfg.max_iters;
    Ok(best_iterate)
}

/// Attack-progress score of a frame mask: runs exactly `iters`
/// adaptive-moment steps (no early stop, no budget) and returns the negated
/// objective at the final iterate — higher means the mask lets the
/// perturbation make more adversarial progress.
pub fn attack_progress_score(
    x: &Tensor,
    y: usize,
    mask: &FrameMask,
    spec: &ClassifierSpec,
    cfg: &AttackConfig,
    iters: usize,
) -> Result<f64> {
    cfg.validate()?;
    mask.check_video(x)?;
    if iters == 0 {
        return Err(Error::InvalidArgument("scoring needs at least one iteration".into()));
    }
    if mask.count_selected() == 0 {
        return Err(Error::InvalidArgument(
            "the optimizer needs at least one selected frame".into(),
        ));
    }
    let mut p = Perturbation::zeros(x.shape())?;
    let mut current = evaluate(spec, x, y, mask, &p, cfg)?;
    let mut noise_state = AdamState::new(x.shape());
    let mut flow_state = AdamState::new(p.flow.tensor().shape());
    let adam = AdamParams { lr: cfg.lr, ..AdamParams::default() };
    for _ in 0..iters {
        let (grad_noise, grad_flow) = perturbation_gradient(x, mask, &p, &current, cfg)?;
        if cfg.mode != AblationMode::SpatialOnly {
            adam_step(&mut noise_state, &mut p.noise, &grad_noise, &adam)?;
        }
        if cfg.mode != AblationMode::NoiseOnly {
            let mut flow_tensor = p.flow.tensor().clone();
            adam_step(&mut flow_state, &mut flow_tensor, &grad_flow, &adam)?;
            p.flow = FlowField::from_tensor(flow_tensor)?;
        }
        current = evaluate(spec, x, y, mask, &p, cfg)?;
    }
    Ok(-current.objective)
}
