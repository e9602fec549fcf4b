//! Differentiable spatial warping of video frames.
//!
//! A [`FlowField`] stores one per-pixel displacement pair for every frame of
//! a video. [`warp`] resamples each selected frame by backward mapping: the
//! output pixel at `(r, c)` reads the source frame at `(r + dh, c + dv)`
//! using bilinear interpolation, with sample coordinates clamped to the
//! frame rectangle. Frames excluded by the mask are copied through
//! bit-identically, which keeps the perturbation local to the selected
//! frames. [`warp_grad`] provides the exact reverse-mode gradients of a
//! scalar objective with respect to both the source video and the flow.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-frame, per-pixel displacement field for a `(T, H, W, C)` video.
///
/// Stored as a `(T, 2, H, W)` tensor: channel 0 holds the row displacement
/// `dh` and channel 1 the column displacement `dv`, both in pixel units.
/// Positive `dh` samples from lower rows, positive `dv` from columns further
/// right.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField(Tensor);

impl FlowField {
    /// All-zero flow (the identity warp) for `frames` frames of `h`×`w` pixels.
    pub fn zeros(frames: usize, h: usize, w: usize) -> Self {
        FlowField(Tensor::zeros(&[frames, 2, h, w]))
    }

    /// Wraps an existing `(T, 2, H, W)` tensor as a flow field.
    ///
    /// Rejects tensors of the wrong rank, a second extent other than 2, or
    /// non-finite entries.
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.rank() != 4 || t.shape()[1] != 2 {
            return Err(Error::InvalidArgument(format!(
                "flow field must have shape (frames, 2, height, width), got {:?}",
                t.shape()
            )));
        }
        if !t.all_finite() {
            return Err(Error::Numeric("flow field contains non-finite values".into()));
        }
        Ok(FlowField(t))
    }

    /// Number of frames covered by this flow.
    pub fn frames(&self) -> usize {
        self.0.shape()[0]
    }

    /// Frame height in pixels.
    pub fn height(&self) -> usize {
        self.0.shape()[2]
    }

    /// Frame width in pixels.
    pub fn width(&self) -> usize {
        self.0.shape()[3]
    }

    /// Read-only view of the underlying `(T, 2, H, W)` tensor.
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    /// Mutable view of the underlying tensor.
    ///
    /// Callers must preserve finiteness; [`warp`] assumes finite flows.
    pub fn tensor_mut(&mut self) -> &mut Tensor {
        &mut self.0
    }

    /// Consumes the field and returns the underlying tensor.
    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// Row displacement at `(frame, r, c)`.
    pub fn dh(&self, frame: usize, r: usize, c: usize) -> f64 {
        self.0.data()[self.offset(frame, 0, r, c)]
    }

    /// Column displacement at `(frame, r, c)`.
    pub fn dv(&self, frame: usize, r: usize, c: usize) -> f64 {
        self.0.data()[self.offset(frame, 1, r, c)]
    }

    fn offset(&self, frame: usize, ch: usize, r: usize, c: usize) -> usize {
        let (h, w) = (self.height(), self.width());
        ((frame * 2 + ch) * h + r) * w + c
    }

    fn check_matches(&self, video_shape: &[usize]) -> Result<()> {
        let matches = video_shape[0] == self.frames()
            && video_shape[1] == self.height()
            && video_shape[2] == self.width();
        if matches {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op: "warp",
                lhs: video_shape.to_vec(),
                rhs: self.0.shape().to_vec(),
            })
        }
    }
}

fn video_dims(x: &Tensor) -> Result<(usize, usize, usize, usize)> {
    if x.rank() != 4 {
        return Err(Error::InvalidArgument(format!(
            "warp expects a (frames, height, width, channels) video, got shape {:?}",
            x.shape()
        )));
    }
    let s = x.shape();
    if s.contains(&0) {
        return Err(Error::InvalidArgument(format!("video has an empty axis: {s:?}")));
    }
    Ok((s[0], s[1], s[2], s[3]))
}

fn check_mask(mask: Option<&[bool]>, frames: usize) -> Result<()> {
    if let Some(m) = mask {
        if m.len() != frames {
            return Err(Error::InvalidArgument(format!(
                "mask has {} entries for a {frames}-frame video",
                m.len()
            )));
        }
    }
    Ok(())
}

/// One bilinear sample cell: corner indices, interpolation fractions, and
/// whether the raw (unclamped) coordinates fell inside the frame, which
/// gates the pass-through derivative of the coordinate clamp.
struct SampleCell {
    r0: usize,
    r1: usize,
    c0: usize,
    c1: usize,
    fr: f64,
    fc: f64,
    dh_active: bool,
    dv_active: bool,
}

fn cell(sr_raw: f64, sc_raw: f64, h: usize, w: usize) -> SampleCell {
    let max_r = (h - 1) as f64;
    let max_c = (w - 1) as f64;
    let sr = sr_raw.clamp(0.0, max_r);
    let sc = sc_raw.clamp(0.0, max_c);
    let (r0, fr) = if h == 1 {
        (0, 0.0)
    } else {
        let r0 = (sr.floor() as usize).min(h - 2);
        (r0, sr - r0 as f64)
    };
    let (c0, fc) = if w == 1 {
        (0, 0.0)
    } else {
        let c0 = (sc.floor() as usize).min(w - 2);
        (c0, sc - c0 as f64)
    };
    SampleCell {
        r0,
        r1: (r0 + 1).min(h - 1),
        c0,
        c1: (c0 + 1).min(w - 1),
        fr,
        fc,
        dh_active: (0.0..=max_r).contains(&sr_raw),
        dv_active: (0.0..=max_c).contains(&sc_raw),
    }
}

/// Resamples the selected frames of video `x` through `flow`.
///
/// Output pixel `(t, r, c, ch)` of a selected frame reads the source frame
/// `t` at `(r + dh, c + dv)` with bilinear interpolation; sample coordinates
/// are clamped to `[0, H-1] × [0, W-1]`. `mask[t] == false` copies frame `t`
/// bit-identically; `mask == None` warps every frame. Zero flow reproduces
/// the input exactly.
///
/// Rejects rank/shape mismatches between video, flow, and mask.
pub fn warp(x: &Tensor, flow: &FlowField, mask: Option<&[bool]>) -> Result<Tensor> {
    let (frames, h, w, ch) = video_dims(x)?;
    flow.check_matches(x.shape())?;
    check_mask(mask, frames)?;
    let mut out = x.clone();
    for t in 0..frames {
        if let Some(m) = mask {
            if !m[t] {
                continue;
            }
        }
        for r in 0..h {
            for c in 0..w {
                let s = cell(r as f64 + flow.dh(t, r, c), c as f64 + flow.dv(t, r, c), h, w);
                let w00 = (1.0 - s.fr) * (1.0 - s.fc);
                let w01 = (1.0 - s.fr) * s.fc;
                let w10 = s.fr * (1.0 - s.fc);
                let w11 = s.fr * s.fc;
                for k in 0..ch {
                    let v = w00 * x.data()[x.offset4(t, s.r0, s.c0, k)]
                        + w01 * x.data()[x.offset4(t, s.r0, s.c1, k)]
                        + w10 * x.data()[x.offset4(t, s.r1, s.c0, k)]
                        + w11 * x.data()[x.offset4(t, s.r1, s.c1, k)];
                    let o = out.offset4(t, r, c, k);
                    out.data_mut()[o] = v;
                }
            }
        }
    }
    Ok(out)
}

/// Reverse-mode gradients of `sum(upstream ⊙ warp(x, flow, mask))`.
///
/// Returns `(grad_x, grad_flow)` where `grad_x` is shaped like `x` and
/// `grad_flow` like the flow tensor `(T, 2, H, W)`. For frames excluded by
/// the mask the warp is the identity, so their `grad_x` slice equals the
/// upstream slice and their flow gradient is zero. The coordinate clamp
/// contributes a pass-through derivative that is active while the raw sample
/// coordinate lies inside the frame (boundaries inclusive) and zero outside.
pub fn warp_grad(
    x: &Tensor,
    flow: &FlowField,
    mask: Option<&[bool]>,
    upstream: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (frames, h, w, ch) = video_dims(x)?;
    flow.check_matches(x.shape())?;
    check_mask(mask, frames)?;
    if upstream.shape() != x.shape() {
        return Err(Error::ShapeMismatch {
            op: "warp_grad",
            lhs: x.shape().to_vec(),
            rhs: upstream.shape().to_vec(),
        });
    }
    let mut gx = Tensor::zeros(x.shape());
    let mut gu = Tensor::zeros(flow.tensor().shape());
    let frame_len = h * w * ch;
    for t in 0..frames {
        let selected = mask.is_none_or(|m| m[t]);
        if !selected {
            let base = t * frame_len;
            gx.data_mut()[base..base + frame_len]
                .copy_from_slice(&upstream.data()[base..base + frame_len]);
            continue;
        }
        for r in 0..h {
            for c in 0..w {
                let s = cell(r as f64 + flow.dh(t, r, c), c as f64 + flow.dv(t, r, c), h, w);
                let w00 = (1.0 - s.fr) * (1.0 - s.fc);
                let w01 = (1.0 - s.fr) * s.fc;
                let w10 = s.fr * (1.0 - s.fc);
                let w11 = s.fr * s.fc;
                let mut d_dh = 0.0;
                let mut d_dv = 0.0;
                for k in 0..ch {
                    let u = upstream.data()[upstream.offset4(t, r, c, k)];
                    let x00 = x.data()[x.offset4(t, s.r0, s.c0, k)];
                    let x01 = x.data()[x.offset4(t, s.r0, s.c1, k)];
                    let x10 = x.data()[x.offset4(t, s.r1, s.c0, k)];
                    let x11 = x.data()[x.offset4(t, s.r1, s.c1, k)];
                    let o00 = gx.offset4(t, s.r0, s.c0, k);
                    let o01 = gx.offset4(t, s.r0, s.c1, k);
                    let o10 = gx.offset4(t, s.r1, s.c0, k);
                    let o11 = gx.offset4(t, s.r1, s.c1, k);
                    let gxd = gx.data_mut();
                    gxd[o00] += u * w00;
                    gxd[o01] += u * w01;
                    gxd[o10] += u * w10;
                    gxd[o11] += u * w11;
                    d_dh += u * ((1.0 - s.fc) * (x10 - x00) + s.fc * (x11 - x01));
                    d_dv += u * ((1.0 - s.fr) * (x01 - x00) + s.fr * (x11 - x10));
                }
                let oh = flow.offset(t, 0, r, c);
                let ov = flow.offset(t, 1, r, c);
                let gud = gu.data_mut();
                if s.dh_active {
                    gud[oh] += d_dh;
                }
                if s.dv_active {
                    gud[ov] += d_dv;
                }
            }
        }
    }
    Ok((gx, gu))
}
