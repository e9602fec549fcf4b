//! Hand-built fixtures shared by unit tests across modules.
//!
//! The models here have analytically known decision rules, so tests can
//! predict attack outcomes exactly instead of relying on trained weights.

use crate::models::{Arch, ClassifierSpec};
use crate::tensor::Tensor;

/// Two-class single-probe model on (2, 4, 4, 1) videos: class logits are
/// (+10, -10 + bias1) times the mean of the top-left pooled conv feature,
/// where the conv kernel passes the center pixel through. Analytically
/// flippable by lowering a handful of pixels.
pub(crate) fn probe_model(bias1: f64) -> ClassifierSpec {
    let shape = [2usize, 4, 4, 1];
    let mut spec = ClassifierSpec::init(Arch::FrameCnnMeanpool, 2, shape, 0).unwrap();
    let mut kernel = Tensor::zeros(&[3, 3, 1, 8]);
    let o = (3 + 1) * 8; // tap (1,1), channel 0, filter 0
    kernel.data_mut()[o] = 1.0;
    spec.set_param("conv.kernel", kernel).unwrap();
    // Pooled features: 2x2x8 = 32 per frame; feature 0 is the average of
    // the conv map over rows 0..2 x cols 0..2, i.e. of x[0..2][0..2].
    let mut w = Tensor::zeros(&[2, 32]);
    w.data_mut()[0] = 10.0;
    w.data_mut()[32] = -10.0;
    spec.set_param("out.weight", w).unwrap();
    let mut b = Tensor::zeros(&[2]);
    b.data_mut()[1] = bias1;
    spec.set_param("out.bias", b).unwrap();
    spec
}

/// Model that never flips: logit 0 dominates logit 1 for every input in
/// [0, 1], yet the loss gradient is nonzero, so the optimizer keeps
/// degrading similarity until a budget stops it.
pub(crate) fn stubborn_model() -> ClassifierSpec {
    let shape = [2usize, 4, 4, 1];
    let mut spec = ClassifierSpec::init(Arch::FrameCnnMeanpool, 2, shape, 0).unwrap();
    let mut kernel = Tensor::zeros(&[3, 3, 1, 8]);
    kernel.data_mut()[(3 + 1) * 8] = 1.0;
    spec.set_param("conv.kernel", kernel).unwrap();
    let mut w = Tensor::zeros(&[2, 32]);
    w.data_mut()[0] = 10.0;
    w.data_mut()[32] = 5.0;
    spec.set_param("out.weight", w).unwrap();
    let mut b = Tensor::zeros(&[2]);
    b.data_mut()[1] = -1.0; // logit1 = 5 f0 - 1 < 10 f0 for all f0 >= 0
    spec.set_param("out.bias", b).unwrap();
    spec
}

/// Constant mid-gray video matching the probe models' input shape.
pub(crate) fn half_video() -> Tensor {
    Tensor::filled(&[2, 4, 4, 1], 0.5)
}
