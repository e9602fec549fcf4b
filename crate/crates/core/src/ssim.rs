//! Sliding-window structural similarity (SSIM) for videos and its exact
//! closed-form gradient.
//!
//! Statistics use the mixed divisors of the similarity score this crate
//! optimizes: window means divide by the pixel count `n`, while variances
//! and the covariance are unbiased (divide by `n - 1`). The per-window
//! score is the two-constant form
//!
//! ```text
//! S = (2 μx μy + C1)(2 σxy + C2) / ((μx² + μy² + C1)(σx² + σy² + C2))
//! ```
//!
//! pooled uniformly over every sliding window of every frame and channel.
//! [`ssim_gradient`] implements the exact derivative of this score; it is
//! verified against central finite differences and against a reverse-mode
//! autodiff construction of the same pooling ([`video_ssim_graph`]).
//!
//! All expressions group multiplications so that the score is bitwise
//! symmetric in its arguments and the gradient is bitwise zero at
//! `xhat == x`.

use crate::autodiff::{Graph, NodeId};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Window geometry and stabilization constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConfig {
    /// Side length of the square sliding window (at least 2).
    pub window: usize,
    /// Stabilizer added to the mean term; `(0.01)^2` for unit dynamic range.
    pub c1: f64,
    /// Stabilizer added to the variance term; `(0.03)^2`.
    pub c2: f64,
    /// Step between window origins (at least 1).
    pub stride: usize,
}

impl Default for SsimConfig {
    fn default() -> SsimConfig {
        SsimConfig { window: 8, c1: 1e-4, c2: 9e-4, stride: 1 }
    }
}

impl SsimConfig {
    fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::InvalidArgument(format!(
                "ssim window {} must be at least 2",
                self.window
            )));
        }
        if self.stride == 0 {
            return Err(Error::InvalidArgument("ssim stride must be positive".into()));
        }
        if !(self.c1 > 0.0) || !(self.c2 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ssim stabilizers c1={} c2={} must be positive",
                self.c1, self.c2
            )));
        }
        Ok(())
    }
}

/// Per-window statistics in the two-constant parameterization.
#[derive(Debug, Clone, Copy)]
struct WindowStats {
    n: f64,
    mu_x: f64,
    mu_y: f64,
    m1: f64,
    m2: f64,
    p1: f64,
    p2: f64,
}

impl WindowStats {
    /// Build from raw power sums; products of means are grouped so the
    /// result is bitwise symmetric in x and y.
    fn from_sums(n: f64, sx: f64, sy: f64, sxx: f64, syy: f64, sxy: f64, cfg: &SsimConfig) -> Self {
        let mu_x = sx / n;
        let mu_y = sy / n;
        let nm1 = n - 1.0;
        let var_x = (sxx - n * (mu_x * mu_x)) / nm1;
        let var_y = (syy - n * (mu_y * mu_y)) / nm1;
        let cov = (sxy - n * (mu_x * mu_y)) / nm1;
        WindowStats {
            n,
            mu_x,
            mu_y,
            m1: 2.0 * (mu_x * mu_y) + cfg.c1,
            m2: 2.0 * cov + cfg.c2,
            p1: (mu_x * mu_x + mu_y * mu_y) + cfg.c1,
            p2: (var_x + var_y) + cfg.c2,
        }
    }

    fn score(&self) -> f64 {
        (self.m1 * self.m2) / (self.p1 * self.p2)
    }
}

fn video_dims(x: &Tensor, y: &Tensor, cfg: &SsimConfig) -> Result<(usize, usize, usize, usize)> {
    cfg.validate()?;
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch {
            op: "ssim",
            lhs: x.shape().to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    if x.rank() != 4 {
        return Err(Error::InvalidArgument(format!(
            "ssim expects a (T, H, W, C) video, got shape {:?}",
            x.shape()
        )));
    }
    let (t, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if t == 0 || c == 0 || h < cfg.window || w < cfg.window {
        return Err(Error::InvalidArgument(format!(
            "ssim window {} does not fit {}x{} frames",
            cfg.window, h, w
        )));
    }
    Ok((t, h, w, c))
}

fn window_origins(extent: usize, cfg: &SsimConfig) -> impl Iterator<Item = usize> {
    (0..=extent - cfg.window).step_by(cfg.stride)
}

fn windows_per_frame(h: usize, w: usize, cfg: &SsimConfig) -> usize {
    let nh = (h - cfg.window) / cfg.stride + 1;
    let nw = (w - cfg.window) / cfg.stride + 1;
    nh * nw
}

fn window_sums(
    xd: &[f64],
    yd: &[f64],
    base: usize,
    row_step: usize,
    col_step: usize,
    win: usize,
) -> (f64, f64, f64, f64, f64) {
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..win {
        let ro = base + i * row_step;
        for j in 0..win {
            let o = ro + j * col_step;
            let xv = xd[o];
            let yv = yd[o];
            sx += xv;
            sy += yv;
            sxx += xv * xv;
            syy += yv * yv;
            sxy += xv * yv;
        }
    }
    (sx, sy, sxx, syy, sxy)
}

/// SSIM of one window pair: the statistics run over *all* elements of the
/// two patches, which must share a shape with at least two elements.
pub fn local_ssim(x: &Tensor, y: &Tensor, cfg: &SsimConfig) -> Result<f64> {
    cfg.validate()?;
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch {
            op: "local_ssim",
            lhs: x.shape().to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "local_ssim needs at least 2 elements, got shape {:?}",
            x.shape()
        )));
    }
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&xv, &yv) in x.data().iter().zip(y.data()) {
        sx += xv;
        sy += yv;
        sxx += xv * xv;
        syy += yv * yv;
        sxy += xv * yv;
    }
    Ok(WindowStats::from_sums(x.len() as f64, sx, sy, sxx, syy, sxy, cfg).score())
}

/// Mean SSIM over all sliding windows of all frames and channels.
pub fn video_ssim(x: &Tensor, xhat: &Tensor, cfg: &SsimConfig) -> Result<f64> {
    video_ssim_masked(x, xhat, None, cfg)
}

/// Distance form `1 - video_ssim`.
pub fn ssim_loss(x: &Tensor, xhat: &Tensor, cfg: &SsimConfig) -> Result<f64> {
    Ok(1.0 - video_ssim(x, xhat, cfg)?)
}

/// [`video_ssim`] that skips frames marked `false`, counting each of their
/// windows as similarity 1. Exact if and only if the skipped frames of the
/// two videos are identical — the caller is responsible for that
/// precondition. `frames = None` processes every frame.
pub fn video_ssim_masked(
    x: &Tensor,
    xhat: &Tensor,
    frames: Option<&[bool]>,
    cfg: &SsimConfig,
) -> Result<f64> {
    let (t, h, w, c) = video_dims(x, xhat, cfg)?;
    if let Some(f) = frames {
        if f.len() != t {
            return Err(Error::InvalidArgument(format!(
                "frame mask of length {} does not match {} frames",
                f.len(),
                t
            )));
        }
    }
    let per_frame = windows_per_frame(h, w, cfg) * c;
    let total = (per_frame * t) as f64;
    let inv_total = 1.0 / total;
    let (xd, yd) = (x.data(), xhat.data());
    let row_step = w * c;
    let mut sum = 0.0;
    let mut skipped = 0usize;
    for ti in 0..t {
        if let Some(f) = frames {
            if !f[ti] {
                skipped += per_frame;
                continue;
            }
        }
        for ch in 0..c {
            for r0 in window_origins(h, cfg) {
                for c0 in window_origins(w, cfg) {
                    let base = ((ti * h + r0) * w + c0) * c + ch;
                    let (sx, sy, sxx, syy, sxy) =
                        window_sums(xd, yd, base, row_step, c, cfg.window);
                    let n = (cfg.window * cfg.window) as f64;
                    sum += WindowStats::from_sums(n, sx, sy, sxx, syy, sxy, cfg).score();
                }
            }
        }
    }
    Ok((sum + skipped as f64) * inv_total)
}

/// Gradient of [`video_ssim`] with respect to its second argument `xhat`.
///
/// Per window, with `M1 = 2 μx μy + C1`, `M2 = 2 σxy + C2`,
/// `P1 = μx² + μy² + C1`, `P2 = σx² + σy² + C2` and `n` window pixels:
///
/// ```text
/// ∂S/∂ŷj = 2/(P1² P2²) · [ M1 P1 (P2 (xj - μx) - M2 (ŷj - μy)) / (n - 1)
///                         + M2 P2 (μx P1 - μy M1) / n ]
/// ```
///
/// The mean is differentiated with divisor `n` and the (co)variances with
/// the unbiased divisor `n - 1`, matching the forward statistics.
pub fn ssim_gradient(x: &Tensor, xhat: &Tensor, cfg: &SsimConfig) -> Result<Tensor> {
    ssim_gradient_masked(x, xhat, None, cfg)
}

/// [`ssim_gradient`] restricted to the frames marked `true`; other frames
/// get a zero gradient. Exact under the same precondition as
/// [`video_ssim_masked`] (skipped frames identical in both videos).
pub fn ssim_gradient_masked(
    x: &Tensor,
    xhat: &Tensor,
    frames: Option<&[bool]>,
    cfg: &SsimConfig,
) -> Result<Tensor> {
    let (t, h, w, c) = video_dims(x, xhat, cfg)?;
    if let Some(f) = frames {
        if f.len() != t {
            return Err(Error::InvalidArgument(format!(
                "frame mask of length {} does not match {} frames",
                f.len(),
                t
            )));
        }
    }
    let total = (windows_per_frame(h, w, cfg) * c * t) as f64;
    let inv_total = 1.0 / total;
    let (xd, yd) = (x.data(), xhat.data());
    let row_step = w * c;
    let mut grad = Tensor::zeros(x.shape());
    let gd = grad.data_mut();
    let n = (cfg.window * cfg.window) as f64;
    let nm1 = n - 1.0;
    for ti in 0..t {
        if let Some(f) = frames {
            if !f[ti] {
                continue;
            }
        }
        for ch in 0..c {
            for r0 in window_origins(h, cfg) {
                for c0 in window_origins(w, cfg) {
                    let base = ((ti * h + r0) * w + c0) * c + ch;
                    let (sx, sy, sxx, syy, sxy) =
                        window_sums(xd, yd, base, row_step, c, cfg.window);
                    let st = WindowStats::from_sums(n, sx, sy, sxx, syy, sxy, cfg);
                    let common = 2.0 / ((st.p1 * st.p1) * (st.p2 * st.p2));
                    let mean_term = (st.m2 * st.p2) * ((st.mu_x * st.p1) - (st.mu_y * st.m1)) / st.n;
                    let m1p1 = st.m1 * st.p1;
                    for i in 0..cfg.window {
                        let ro = base + i * row_step;
                        for j in 0..cfg.window {
                            let o = ro + j * c;
                            let centered =
                                st.p2 * (xd[o] - st.mu_x) - st.m2 * (yd[o] - st.mu_y);
                            gd[o] += common * (m1p1 * centered / nm1 + mean_term);
                        }
                    }
                }
            }
        }
    }
    for g in grad.data_mut() {
        *g *= inv_total;
    }
    Ok(grad)
}

/// Reference construction: the same pooled SSIM built as an autodiff graph
/// against the leaf `xhat`, one window at a time. This exists to cross-check
/// [`ssim_gradient`] through an independent differentiation route; it is far
/// slower and allocates one node per arithmetic step.
pub fn video_ssim_graph(
    g: &mut Graph,
    x: &Tensor,
    xhat: NodeId,
    cfg: &SsimConfig,
) -> Result<NodeId> {
    let (t, h, w, c) = video_dims(x, g.value(xhat), cfg)?;
    let win = cfg.window;
    let n = (win * win) as f64;
    let mut total: Option<NodeId> = None;
    let mut count = 0usize;
    for ti in 0..t {
        for ch in 0..c {
            for r0 in window_origins(h, cfg) {
                for c0 in window_origins(w, cfg) {
                    // x window as a constant leaf.
                    let mut xw = Vec::with_capacity(win * win);
                    for i in 0..win {
                        for j in 0..win {
                            xw.push(x.at4(ti, r0 + i, c0 + j, ch));
                        }
                    }
                    let xwin = g.leaf(Tensor::from_vec(&[win * win], xw)?);
                    let ywin4 = g.slice(
                        xhat,
                        &[ti, r0, c0, ch],
                        &[ti + 1, r0 + win, c0 + win, ch + 1],
                    )?;
                    let ywin = g.reshape(ywin4, &[win * win])?;

                    let mu_x = g.reduce_mean(xwin);
                    let mu_y = g.reduce_mean(ywin);
                    let dx = g.sub(xwin, mu_x)?;
                    let dy = g.sub(ywin, mu_y)?;
                    let dxdx = g.mul(dx, dx)?;
                    let dydy = g.mul(dy, dy)?;
                    let dxdy = g.mul(dx, dy)?;
                    let sum_xx = g.reduce_sum(dxdx);
                    let sum_yy = g.reduce_sum(dydy);
                    let sum_xy = g.reduce_sum(dxdy);
                    let var_x = g.scale(sum_xx, 1.0 / (n - 1.0));
                    let var_y = g.scale(sum_yy, 1.0 / (n - 1.0));
                    let cov = g.scale(sum_xy, 1.0 / (n - 1.0));

                    let mxy = g.mul(mu_x, mu_y)?;
                    let m1_raw = g.scale(mxy, 2.0);
                    let m1 = g.add_scalar(m1_raw, cfg.c1);
                    let m2_raw = g.scale(cov, 2.0);
                    let m2 = g.add_scalar(m2_raw, cfg.c2);
                    let mu_x2 = g.mul(mu_x, mu_x)?;
                    let mu_y2 = g.mul(mu_y, mu_y)?;
                    let p1_raw = g.add(mu_x2, mu_y2)?;
                    let p1 = g.add_scalar(p1_raw, cfg.c1);
                    let p2_raw = g.add(var_x, var_y)?;
                    let p2 = g.add_scalar(p2_raw, cfg.c2);

                    let num = g.mul(m1, m2)?;
                    let den = g.mul(p1, p2)?;
                    let s = g.div(num, den)?;
                    total = Some(match total {
                        None => s,
                        Some(acc) => g.add(acc, s)?,
                    });
                    count += 1;
                }
            }
        }
    }
    let acc = total.expect("at least one window");
    Ok(g.scale(acc, 1.0 / count as f64))
}
