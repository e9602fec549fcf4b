//! Toy video classifiers with exact reverse-mode gradients.
//!
//! Three small architectures cover the common ways a video model consumes
//! time: per-frame convolution with a gated recurrent cell
//! ([`Arch::FrameCnnRecurrent`]), a single 3-D convolution
//! ([`Arch::Conv3d`]), and per-frame convolution with mean pooling over
//! frames ([`Arch::FrameCnnMeanpool`], which is deliberately blind to frame
//! order). Every forward pass is built on the autodiff graph, so loss
//! gradients with respect to the input video and all parameters are exact.
//!
//! Freshly initialized models have a zero output layer, which makes their
//! predicted distribution exactly uniform — a useful known state for tests.
//! Training uses mini-batch adaptive-moment descent and is bit-deterministic
//! for a fixed seed. Models persist as a directory holding a small manifest
//! plus one binary tensor container per parameter.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::{adam_step, AdamParams, AdamState};
use crate::autodiff::{Graph, NodeId, Padding};
use crate::data::{read_tensor, write_tensor, VideoRecord};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Convolution filter count shared by all architectures.
pub const CONV_FILTERS: usize = 8;
/// Hidden width of the recurrent cell.
pub const GRU_HIDDEN: usize = 32;

/// The available classifier architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    /// Per-frame conv + relu + 2×2 mean pool, a gated recurrent cell over
    /// frames, then a linear head. Sensitive to frame order and position.
    FrameCnnRecurrent,
    /// One 3×3×3 convolution + relu + global average pool, then a linear
    /// head. Temporal structure enters through the 3-D kernel.
    Conv3d,
    /// Per-frame conv + relu + 2×2 mean pool, features averaged over
    /// frames, then a linear head. Invariant to frame order.
    FrameCnnMeanpool,
}

impl Arch {
    /// All architectures, in a stable order.
    pub const ALL: [Arch; 3] = [Arch::FrameCnnRecurrent, Arch::Conv3d, Arch::FrameCnnMeanpool];

    /// Stable identifier used on the command line and in model manifests.
    pub fn name(&self) -> &'static str {
        match self {
            Arch::FrameCnnRecurrent => "frame_cnn_recurrent",
            Arch::Conv3d => "conv3d",
            Arch::FrameCnnMeanpool => "frame_cnn_meanpool",
        }
    }

    /// Parses [`Arch::name`] back into an architecture.
    pub fn from_name(name: &str) -> Result<Arch> {
        Arch::ALL
            .into_iter()
            .find(|a| a.name() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown architecture {name:?}")))
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Declared shape of one parameter tensor.
struct ParamSpec {
    name: &'static str,
    shape: Vec<usize>,
    /// Inputs feeding each output unit; init draws weights from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`. `None` zero-initializes
    /// (biases and the output layer).
    fan_in: Option<usize>,
}

/// A classifier: architecture, class count, expected input shape, and the
/// named parameter tensors.
#[derive(Debug, Clone)]
pub struct ClassifierSpec {
    arch: Arch,
    num_classes: usize,
    input_shape: [usize; 4],
    params: Vec<(String, Tensor)>,
}

/// Single source of truth for each architecture's parameter tensors.
fn param_layout(arch: Arch, num_classes: usize, input_shape: [usize; 4]) -> Vec<ParamSpec> {
    let [_, h, w, c] = input_shape;
    let frame_features = (h / 2) * (w / 2) * CONV_FILTERS;
    let conv2 = |v: &mut Vec<ParamSpec>| {
        v.push(ParamSpec { name: "conv.kernel", shape: vec![3, 3, c, CONV_FILTERS], fan_in: Some(9 * c) });
        v.push(ParamSpec { name: "conv.bias", shape: vec![CONV_FILTERS], fan_in: None });
    };
    let head = |v: &mut Vec<ParamSpec>, features: usize| {
        v.push(ParamSpec { name: "out.weight", shape: vec![num_classes, features], fan_in: None });
        v.push(ParamSpec { name: "out.bias", shape: vec![num_classes], fan_in: None });
    };
    let mut layout = Vec::new();
    match arch {
        Arch::FrameCnnRecurrent => {
            conv2(&mut layout);
            for gate in ["z", "r", "c"] {
                layout.push(ParamSpec {
                    name: match gate {
                        "z" => "gru.wz",
                        "r" => "gru.wr",
                        _ => "gru.wc",
                    },
                    shape: vec![GRU_HIDDEN, frame_features],
                    fan_in: Some(frame_features),
                });
                layout.push(ParamSpec {
                    name: match gate {
                        "z" => "gru.uz",
                        "r" => "gru.ur",
                        _ => "gru.uc",
                    },
                    shape: vec![GRU_HIDDEN, GRU_HIDDEN],
                    fan_in: Some(GRU_HIDDEN),
                });
                layout.push(ParamSpec {
                    name: match gate {
                        "z" => "gru.bz",
                        "r" => "gru.br",
                        _ => "gru.bc",
                    },
                    shape: vec![GRU_HIDDEN],
                    fan_in: None,
                });
            }
            head(&mut layout, GRU_HIDDEN);
        }
        Arch::Conv3d => {
            layout.push(ParamSpec {
                name: "conv.kernel",
                shape: vec![3, 3, 3, c, CONV_FILTERS],
                fan_in: Some(27 * c),
            });
            layout.push(ParamSpec { name: "conv.bias", shape: vec![CONV_FILTERS], fan_in: None });
            head(&mut layout, CONV_FILTERS);
        }
        Arch::FrameCnnMeanpool => {
            conv2(&mut layout);
            head(&mut layout, frame_features);
        }
    }
    layout
}

impl ClassifierSpec {
    /// Builds a model with weights drawn from `U(-1/sqrt(fan_in),
    /// 1/sqrt(fan_in))`, zero biases, and a zero output layer (so the
    /// untrained predictive distribution is exactly uniform).
    pub fn init(arch: Arch, num_classes: usize, input_shape: [usize; 4], seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "a classifier needs at least 2 classes, got {num_classes}"
            )));
        }
        let [t, h, w, c] = input_shape;
        if t == 0 || h == 0 || w == 0 || c == 0 {
            return Err(Error::InvalidArgument(format!(
                "input shape {input_shape:?} has an empty axis"
            )));
        }
        if arch != Arch::Conv3d && (h % 2 != 0 || w % 2 != 0) {
            return Err(Error::InvalidArgument(format!(
                "per-frame architectures pool 2x2 and need even frame sides, got {h}x{w}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = param_layout(arch, num_classes, input_shape)
            .into_iter()
            .map(|p| {
                let tensor = match p.fan_in {
                    Some(fan_in) => {
                        let bound = 1.0 / (fan_in as f64).sqrt();
                        Tensor::uniform(&p.shape, -bound, bound, &mut rng)
                    }
                    None => Tensor::zeros(&p.shape),
                };
                (p.name.to_string(), tensor)
            })
            .collect();
        Ok(ClassifierSpec { arch, num_classes, input_shape, params })
    }

    /// Architecture of this model.
    pub fn arch(&self) -> Arch {
        self.arch
    }

    /// Number of output classes.
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Expected input shape `(frames, height, width, channels)`.
    pub fn input_shape(&self) -> [usize; 4] {
        self.input_shape
    }

    /// Looks up a parameter tensor by name.
    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Parameter names in their canonical order.
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }

    /// Replaces a parameter tensor; the shape must match the layout.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .params
            .iter_mut()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named {name:?}")))?;
        if slot.1.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_param",
                lhs: slot.1.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        slot.1 = value;
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape {
            return Err(Error::ShapeMismatch {
                op: "forward",
                lhs: self.input_shape.to_vec(),
                rhs: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Wires the forward pass onto `g`, starting from the already-inserted
    /// input node `x`. Returns the probability node and one graph leaf per
    /// parameter, ordered like the layout.
    fn wire(&self, g: &mut Graph, x: NodeId) -> Result<(NodeId, Vec<NodeId>)> {
        let leaves: Vec<NodeId> =
            self.params.iter().map(|(_, t)| g.leaf(t.clone())).collect();
        let by_name = |name: &str| -> NodeId {
            let idx = self.params.iter().position(|(n, _)| n == name).expect("layout name");
            leaves[idx]
        };
        let [t, h, w, c] = self.input_shape;
        let frame_features = (h / 2) * (w / 2) * CONV_FILTERS;

        // Shared per-frame feature path: conv(3x3, same) + relu + 2x2 mean
        // pool, flattened to a vector.
        let frame_feature = |g: &mut Graph, frame: usize| -> Result<NodeId> {
            let sliced = g.slice(x, &[frame, 0, 0, 0], &[frame + 1, h, w, c])?;
            let img = g.reshape(sliced, &[h, w, c])?;
            let conv = g.conv2d(img, by_name("conv.kernel"), Padding::Same)?;
            let conv = g.bias_add(conv, by_name("conv.bias"))?;
            let act = g.relu(conv);
            let pooled = g.avg_pool2d(act, 2, 2)?;
            g.reshape(pooled, &[frame_features])
        };

        let features = match self.arch {
            Arch::FrameCnnMeanpool => {
                let mut acc = frame_feature(g, 0)?;
                for frame in 1..t {
                    let f = frame_feature(g, frame)?;
                    acc = g.add(acc, f)?;
                }
                g.scale(acc, 1.0 / t as f64)
            }
            Arch::FrameCnnRecurrent => {
                // Gated recurrent cell: z and r are sigmoid gates, the
                // candidate is a tanh update, and the state blends as
                // h <- (1 - z) * h + z * candidate.
                let mut hidden = g.leaf(Tensor::zeros(&[GRU_HIDDEN]));
                for frame in 0..t {
                    let xt = frame_feature(g, frame)?;
                    let gate = |g: &mut Graph, wx: NodeId, uh: NodeId, b: NodeId, h_in: NodeId| {
                        let a = g.matmul(wx, xt)?;
                        let u = g.matmul(uh, h_in)?;
                        let s = g.add(a, u)?;
                        g.add(s, b)
                    };
                    let z_pre = gate(g, by_name("gru.wz"), by_name("gru.uz"), by_name("gru.bz"), hidden)?;
                    let z = g.sigmoid(z_pre);
                    let r_pre = gate(g, by_name("gru.wr"), by_name("gru.ur"), by_name("gru.br"), hidden)?;
                    let r = g.sigmoid(r_pre);
                    let gated_h = g.mul(r, hidden)?;
                    let c_pre = gate(g, by_name("gru.wc"), by_name("gru.uc"), by_name("gru.bc"), gated_h)?;
                    let cand = g.tanh(c_pre);
                    let keep = {
                        let neg = g.scale(z, -1.0);
                        g.add_scalar(neg, 1.0)
                    };
                    let kept = g.mul(keep, hidden)?;
                    let taken = g.mul(z, cand)?;
                    hidden = g.add(kept, taken)?;
                }
                hidden
            }
            Arch::Conv3d => {
                let conv = g.conv3d(x, by_name("conv.kernel"), Padding::Same)?;
                let conv = g.bias_add(conv, by_name("conv.bias"))?;
                let act = g.relu(conv);
                g.global_avg_pool(act)?
            }
        };
        let projected = g.matmul(by_name("out.weight"), features)?;
        let logits = g.add(projected, by_name("out.bias"))?;
        let probs = g.softmax(logits)?;
        Ok((probs, leaves))
    }

    /// Class probabilities for one video: nonnegative, summing to 1.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let xid = g.leaf(x.clone());
        let (probs, _) = self.wire(&mut g, xid)?;
        Ok(g.value(probs).clone())
    }

    /// Predicted class: argmax of [`ClassifierSpec::forward`], ties broken
    /// toward the lowest index.
    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        let probs = self.forward(x)?;
        Ok(argmax(probs.data()))
    }

    /// Classification loss for `(x, y)` together with the probability
    /// vector and the exact gradient of the loss with respect to `x`.
    pub fn loss_and_input_grad(&self, x: &Tensor, y: usize) -> Result<(f64, Tensor, Tensor)> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let xid = g.leaf(x.clone());
        let (probs, _) = self.wire(&mut g, xid)?;
        let loss = g.cross_entropy(probs, y)?;
        let loss_value = g.value(loss).scalar_value()?;
        let probs_value = g.value(probs).clone();
        g.backward(loss)?;
        let grad = g.grad(xid).expect("input gradient after backward").clone();
        Ok((loss_value, probs_value, grad))
    }

    /// Mean loss over a batch and matching mean parameter gradients,
    /// ordered like the parameter layout.
    fn batch_loss_and_param_grads(
        &self,
        batch: &[(&Tensor, usize)],
    ) -> Result<(f64, Vec<Tensor>)> {
        let mut total = 0.0;
        let mut grads: Vec<Tensor> =
            self.params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        for &(x, y) in batch {
            self.check_input(x)?;
            let mut g = Graph::new();
            let xid = g.leaf(x.clone());
            let (probs, leaves) = self.wire(&mut g, xid)?;
            let loss = g.cross_entropy(probs, y)?;
            total += g.value(loss).scalar_value()?;
            g.backward(loss)?;
            for (acc, leaf) in grads.iter_mut().zip(&leaves) {
                let part = g.grad(*leaf).expect("param gradient after backward");
                for (a, p) in acc.data_mut().iter_mut().zip(part.data()) {
                    *a += p;
                }
            }
        }
        let inv = 1.0 / batch.len() as f64;
        for grad in &mut grads {
            for v in grad.data_mut() {
                *v *= inv;
            }
        }
        Ok((total * inv, grads))
    }

    /// Fraction of records the model currently classifies correctly.
    pub fn accuracy(&self, data: &[VideoRecord]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("accuracy needs a nonempty dataset".into()));
        }
        let mut hits = 0usize;
        for rec in data {
            if self.predict(&rec.video)? == rec.label {
                hits += 1;
            }
        }
        Ok(hits as f64 / data.len() as f64)
    }
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

/// Classification loss `-ln(probs[y])` of a probability vector.
pub fn cross_entropy(probs: &Tensor, y: usize) -> Result<f64> {
    if probs.rank() != 1 {
        return Err(Error::InvalidArgument(format!(
            "cross_entropy expects a probability vector, got shape {:?}",
            probs.shape()
        )));
    }
    if y >= probs.len() {
        return Err(Error::InvalidArgument(format!(
            "class {y} out of range for {} classes",
            probs.len()
        )));
    }
    let p = probs.data()[y];
    if !(p > 0.0) {
        return Err(Error::Numeric(format!("cross_entropy: probability {p} for class {y}")));
    }
    Ok(-p.ln())
}

/// Settings of the mini-batch trainer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Number of passes over the dataset.
    pub epochs: usize,
    /// Learning rate; 0 runs the loop (and records accuracy) without
    /// touching the parameters.
    pub lr: f64,
    /// Mini-batch size.
    pub batch: usize,
    /// Seed controlling the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 30, lr: 1e-3, batch: 8, seed: 0 }
    }
}

/// Trains `spec` in place and returns the per-epoch training accuracy.
///
/// Batches are shuffled with a seeded generator and gradients are applied
/// with bias-corrected adaptive-moment descent, so two runs from the same
/// starting point and seed produce bit-identical parameters. Zero epochs or
/// a zero learning rate leave the parameters untouched.
pub fn train(spec: &mut ClassifierSpec, data: &[VideoRecord], cfg: &TrainConfig) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("train needs a nonempty dataset".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    if !(cfg.lr >= 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate {} must be >= 0", cfg.lr)));
    }
    for rec in data {
        if rec.label >= spec.num_classes {
            return Err(Error::InvalidArgument(format!(
                "record {} has label {} but the model has {} classes",
                rec.id, rec.label, spec.num_classes
            )));
        }
    }
    let adam = AdamParams { lr: cfg.lr, ..AdamParams::default() };
    let mut states: Vec<AdamState> =
        spec.params.iter().map(|(_, t)| AdamState::new(t.shape())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<(&Tensor, usize)> =
                chunk.iter().map(|&i| (&data[i].video, data[i].label)).collect();
            let (_, grads) = spec.batch_loss_and_param_grads(&batch)?;
            if cfg.lr > 0.0 {
                for ((slot, state), grad) in
                    spec.params.iter_mut().zip(&mut states).zip(&grads)
                {
                    adam_step(state, &mut slot.1, grad, &adam)?;
                }
            }
        }
        history.push(spec.accuracy(data)?);
    }
    Ok(history)
}

/// Saves a model as a directory: `manifest.txt` (key = value lines) plus
/// `params/<name>.savt`, one tensor container per parameter.
pub fn save_model(dir: &Path, spec: &ClassifierSpec) -> Result<()> {
    let params_dir = dir.join("params");
    fs::create_dir_all(&params_dir)
        .map_err(|e| Error::io(params_dir.display().to_string(), e))?;
    let [t, h, w, c] = spec.input_shape;
    let manifest = format!(
        "arch = {}\nnum_classes = {}\ninput_shape = {t},{h},{w},{c}\n",
        spec.arch.name(),
        spec.num_classes
    );
    let manifest_path = dir.join("manifest.txt");
    fs::write(&manifest_path, manifest)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    for (name, tensor) in &spec.params {
        write_tensor(&params_dir.join(format!("{name}.savt")), tensor)?;
    }
    Ok(())
}

/// Loads a model saved by [`save_model`]; parameter shapes are validated
/// against the architecture's layout.
pub fn load_model(dir: &Path) -> Result<ClassifierSpec> {
    let manifest_path = dir.join("manifest.txt");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let mut arch = None;
    let mut num_classes = None;
    let mut input_shape = None;
    for raw in text.lines() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidArgument(format!("manifest line {raw:?} is not `key = value`"))
        })?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "arch" => arch = Some(Arch::from_name(value)?),
            "num_classes" => {
                num_classes = Some(value.parse::<usize>().map_err(|_| {
                    Error::InvalidArgument(format!("bad num_classes {value:?}"))
                })?)
            }
            "input_shape" => {
                let dims: Vec<usize> = value
                    .split(',')
                    .map(|d| {
                        d.trim().parse::<usize>().map_err(|_| {
                            Error::InvalidArgument(format!("bad input_shape {value:?}"))
                        })
                    })
                    .collect::<Result<_>>()?;
                if dims.len() != 4 {
                    return Err(Error::InvalidArgument(format!(
                        "input_shape needs 4 extents, got {value:?}"
                    )));
                }
                input_shape = Some([dims[0], dims[1], dims[2], dims[3]]);
            }
            other => {
                return Err(Error::InvalidArgument(format!("unknown manifest key {other:?}")))
            }
        }
    }
    let arch = arch.ok_or_else(|| Error::InvalidArgument("manifest missing arch".into()))?;
    let num_classes =
        num_classes.ok_or_else(|| Error::InvalidArgument("manifest missing num_classes".into()))?;
    let input_shape =
        input_shape.ok_or_else(|| Error::InvalidArgument("manifest missing input_shape".into()))?;
    let mut spec = ClassifierSpec::init(arch, num_classes, input_shape, 0)?;
    for p in param_layout(arch, num_classes, input_shape) {
        let tensor = read_tensor(&dir.join("params").join(format!("{}.savt", p.name)))?;
        spec.set_param(p.name, tensor)?;
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    const SMALL_SHAPE: [usize; 4] = [3, 8, 8, 1];

    fn random_video(seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(&SMALL_SHAPE, 0.0, 1.0, &mut rng)
    }

    /// Gives a freshly initialized model a random (nonzero) output layer so
    /// gradients reach the input.
    fn randomized(arch: Arch, seed: u64) -> ClassifierSpec {
        let mut spec = ClassifierSpec::init(arch, 4, SMALL_SHAPE, seed).unwrap();
        let shape = spec.param("out.weight").unwrap().shape().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        spec.set_param("out.weight", Tensor::uniform(&shape, -0.5, 0.5, &mut rng)).unwrap();
        spec
    }

    #[test]
    fn untrained_model_predicts_exactly_uniform_probabilities() {
        for arch in Arch::ALL {
            let spec = ClassifierSpec::init(arch, 4, SMALL_SHAPE, 1).unwrap();
            let probs = spec.forward(&random_video(2)).unwrap();
            for &p in probs.data() {
                assert!((p - 0.25).abs() < 1e-15, "{arch}: {p}");
            }
        }
    }

    #[test]
    fn probabilities_are_valid_for_random_inputs() {
        let spec = randomized(Arch::FrameCnnMeanpool, 3);
        for seed in 0..100 {
            let probs = spec.forward(&random_video(seed)).unwrap();
            let sum: f64 = probs.data().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "sum {sum}");
            assert!(probs.data().iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn cross_entropy_hand_values() {
        let certain = Tensor::from_vec(&[3], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(cross_entropy(&certain, 1).unwrap(), 0.0);
        let uniform = Tensor::filled(&[4], 0.25);
        assert!((cross_entropy(&uniform, 2).unwrap() - 1.3862943611198906).abs() < 1e-15);
        let skewed = Tensor::from_vec(&[2], vec![0.7, 0.3]).unwrap();
        assert!((cross_entropy(&skewed, 1).unwrap() - 1.2039728043259361).abs() < 1e-15);
        assert!(cross_entropy(&skewed, 2).is_err());
        assert!(cross_entropy(&certain, 0).is_err(), "zero probability must be rejected");
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let spec = ClassifierSpec::init(Arch::FrameCnnMeanpool, 4, SMALL_SHAPE, 1).unwrap();
        let err = spec.forward(&Tensor::zeros(&[3, 8, 9, 1])).unwrap_err().to_string();
        assert!(err.contains("[3, 8, 8, 1]") && err.contains("[3, 8, 9, 1]"), "{err}");
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        // Central differences of the classification loss with respect to a
        // subset of input pixels, for each architecture.
        let x = random_video(77);
        let y = 2;
        let eps = 1e-5;
        for arch in Arch::ALL {
            let spec = randomized(arch, 21);
            let (_, _, grad) = spec.loss_and_input_grad(&x, y).unwrap();
            let mut probe = x.clone();
            let mut worst = 0.0f64;
            for i in (0..x.len()).step_by(7) {
                let orig = probe.data()[i];
                probe.data_mut()[i] = orig + eps;
                let fp = {
                    let p = spec.forward(&probe).unwrap();
                    cross_entropy(&p, y).unwrap()
                };
                probe.data_mut()[i] = orig - eps;
                let fm = {
                    let p = spec.forward(&probe).unwrap();
                    cross_entropy(&p, y).unwrap()
                };
                probe.data_mut()[i] = orig;
                let fd = (fp - fm) / (2.0 * eps);
                let err = (grad.data()[i] - fd).abs() / fd.abs().max(1e-8);
                worst = worst.max(err);
            }
            assert!(worst < 1e-4, "{arch}: input-gradient mismatch {worst:.3e}");
        }
    }

    #[test]
    fn training_is_bit_deterministic_and_zero_settings_are_noops() {
        let cfg = crate::data::SynthConfig {
            num_videos: 12,
            frames: 3,
            height: 8,
            width: 8,
            channels: 1,
            num_classes: 4,
            shape_size: 3,
            noise_level: 0.05,
            informative_frames: None,
            seed: 5,
        };
        let data = crate::data::generate_synthetic_dataset(&cfg).unwrap();
        let train_cfg = TrainConfig { epochs: 2, lr: 1e-3, batch: 4, seed: 9 };
        let run = || {
            let mut spec = ClassifierSpec::init(Arch::FrameCnnMeanpool, 4, SMALL_SHAPE, 1).unwrap();
            train(&mut spec, &data, &train_cfg).unwrap();
            spec.params
                .iter()
                .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()))
                .collect::<Vec<u64>>()
        };
        assert_eq!(run(), run());

        let snapshot = |s: &ClassifierSpec| {
            s.params
                .iter()
                .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()))
                .collect::<Vec<u64>>()
        };
        let mut spec = ClassifierSpec::init(Arch::FrameCnnMeanpool, 4, SMALL_SHAPE, 1).unwrap();
        let before = snapshot(&spec);
        let history =
            train(&mut spec, &data, &TrainConfig { epochs: 0, ..train_cfg }).unwrap();
        assert!(history.is_empty());
        assert_eq!(snapshot(&spec), before, "zero epochs must not touch parameters");
        train(&mut spec, &data, &TrainConfig { lr: 0.0, epochs: 1, ..train_cfg }).unwrap();
        assert_eq!(snapshot(&spec), before, "zero learning rate must not touch parameters");
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut spec = ClassifierSpec::init(Arch::FrameCnnMeanpool, 4, SMALL_SHAPE, 1).unwrap();
        assert!(train(&mut spec, &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn save_and_load_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let spec = randomized(Arch::FrameCnnRecurrent, 8);
        save_model(dir.path(), &spec).unwrap();
        let back = load_model(dir.path()).unwrap();
        assert_eq!(back.arch(), spec.arch());
        assert_eq!(back.num_classes(), spec.num_classes());
        assert_eq!(back.input_shape(), spec.input_shape());
        for name in spec.param_names() {
            let a = spec.param(name).unwrap();
            let b = back.param(name).unwrap();
            assert_eq!(a.shape(), b.shape(), "{name}");
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
            assert_eq!(bits(a), bits(b), "{name}");
        }
    }

    #[test]
    fn unknown_arch_and_bad_manifest_are_rejected() {
        assert!(Arch::from_name("transformer").is_err());
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("manifest.txt"), "arch = conv3d\nwhat = 3\n").unwrap();
        let err = load_model(dir.path()).unwrap_err().to_string();
        assert!(err.contains("what"), "{err}");
    }

    #[test]
    fn predict_breaks_ties_toward_lowest_index() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
    }
}
