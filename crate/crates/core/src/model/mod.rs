//! Minimal deterministic feed-forward models with reverse-mode input
//! gradients.
//!
//! A [`ModelSpec`] is a declarative list of layers; [`Model::compile`]
//! checks that adjacent layers compose and returns an immutable evaluator.
//! Image tensors are channel-last (`[h, w]` or `[h, w, c]`).

mod format;
mod gradcheck;
mod train;

pub use format::{load_model, parse_model_spec, WeightPolicy, MODEL_DOCUMENT_KIND};
pub use gradcheck::{crosses_kink, finite_diff_oracle, kinks_near};
pub use train::{evaluate, train_toy, TrainConfig, TrainReport};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{TensorF, ValueRange};

/// One layer of a feed-forward model.
///
/// Dense weights are `[out][in]` row-major. Conv weights are
/// `[out_ch][in_ch][k][k]` row-major; convolution is stride 1 with zero
/// padding `k / 2`, so `k` must be odd and spatial size is preserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Dense {
        #[serde(rename = "in")]
        inputs: usize,
        #[serde(rename = "out")]
        outputs: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    Relu,
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        k: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    Flatten,
    #[serde(rename = "avgpool2d")]
    AvgPool2d { k: usize },
}

impl Layer {
    /// Dense layer with zero weights.
    pub fn dense(inputs: usize, outputs: usize) -> Self {
        Layer::Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Convolution with zero weights.
    pub fn conv2d(in_ch: usize, out_ch: usize, k: usize) -> Self {
        Layer::Conv2d {
            in_ch,
            out_ch,
            k,
            weights: vec![0.0; out_ch * in_ch * k * k],
            bias: vec![0.0; out_ch],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Relu => "relu",
            Layer::Conv2d { .. } => "conv2d",
            Layer::Flatten => "flatten",
            Layer::AvgPool2d { .. } => "avgpool2d",
        }
    }

    fn params_mut(&mut self) -> Option<(&mut Vec<f64>, &mut Vec<f64>)> {
        match self {
            Layer::Dense { weights, bias, .. } | Layer::Conv2d { weights, bias, .. } => {
                Some((weights, bias))
            }
            _ => None,
        }
    }

    fn param_len(&self) -> (usize, usize) {
        match self {
            Layer::Dense { weights, bias, .. } | Layer::Conv2d { weights, bias, .. } => {
                (weights.len(), bias.len())
            }
            _ => (0, 0),
        }
    }
}

/// Declarative model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub input_range: ValueRange,
    pub layers: Vec<Layer>,
}

impl ModelSpec {
    pub fn new(input_shape: Vec<usize>, num_classes: usize, layers: Vec<Layer>) -> Self {
        Self {
            input_shape,
            num_classes,
            input_range: ValueRange::default(),
            layers,
        }
    }

    /// Dense ReLU network with layer widths `sizes` (input first, classes
    /// last), He-uniform weights and biases drawn from `U(-0.5, 0.5)`.
    pub fn random_mlp(sizes: &[usize], seed: u64) -> Self {
        assert!(sizes.len() >= 2, "need input and output widths");
        let mut layers = Vec::new();
        for (i, w) in sizes.windows(2).enumerate() {
            if i > 0 {
                layers.push(Layer::Relu);
            }
            layers.push(Layer::dense(w[0], w[1]));
        }
        let mut spec = Self::new(vec![sizes[0]], sizes[sizes.len() - 1], layers);
        spec.initialize(seed);
        let mut rng = rng::stream(rng::mix(seed, 1));
        for layer in &mut spec.layers {
            if let Some((_, bias)) = layer.params_mut() {
                bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
            }
        }
        spec
    }

    /// Replace every weight with a He-uniform draw and zero the biases.
    pub fn initialize(&mut self, seed: u64) {
        let mut rng = rng::stream(seed);
        for layer in &mut self.layers {
            let fan_in: usize = match layer {
                Layer::Dense { inputs, .. } => *inputs,
                Layer::Conv2d { in_ch, k, .. } => *in_ch * *k * *k,
                _ => continue,
            };
            let bound = (6.0_f64 / fan_in.max(1) as f64).sqrt();
            if let Some((weights, bias)) = layer.params_mut() {
                for w in weights.iter_mut() {
                    *w = rng.gen_range(-bound..bound);
                }
                bias.iter_mut().for_each(|b| *b = 0.0);
            }
        }
    }
}

/// Spatial/flat layout of an activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dims {
    Flat(usize),
    Image { h: usize, w: usize, c: usize },
}

impl Dims {
    fn len(self) -> usize {
        match self {
            Dims::Flat(n) => n,
            Dims::Image { h, w, c } => h * w * c,
        }
    }

    fn from_shape(shape: &[usize]) -> Result<Self> {
        match *shape {
            [n] if n > 0 => Ok(Dims::Flat(n)),
            [h, w] if h > 0 && w > 0 => Ok(Dims::Image { h, w, c: 1 }),
            [h, w, c] if h > 0 && w > 0 && c > 0 => Ok(Dims::Image { h, w, c }),
            _ => Err(Error::InvalidArgument(format!(
                "unsupported input shape {shape:?}"
            ))),
        }
    }
}

/// Which scalar of the model output a gradient targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// Raw logit of the class.
    #[default]
    Logit,
    /// Softmax probability of the class.
    Probability,
}

/// A compiled, immutable model.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    /// `dims[i]` is the input layout of layer `i`; the last entry is the output.
    dims: Vec<Dims>,
}

/// Per-layer parameter gradients, parallel to `ModelSpec::layers`.
#[derive(Debug, Clone)]
pub(crate) struct ParamGrads {
    pub(crate) layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl ParamGrads {
    pub(crate) fn zeros_like(spec: &ModelSpec) -> Self {
        Self {
            layers: spec
                .layers
                .iter()
                .map(|l| {
                    let (w, b) = l.param_len();
                    (vec![0.0; w], vec![0.0; b])
                })
                .collect(),
        }
    }
}

impl Model {
    pub fn compile(spec: ModelSpec) -> Result<Self> {
        if spec.num_classes == 0 {
            return Err(Error::InvalidArgument("num_classes must be >= 1".into()));
        }
        let mut dims = vec![Dims::from_shape(&spec.input_shape)?];
        for (index, layer) in spec.layers.iter().enumerate() {
            let cur = *dims.last().unwrap();
            let mismatch = |reason: String| Error::LayerMismatch {
                index,
                layer: layer.name(),
                reason,
            };
            let next = match layer {
                Layer::Dense {
                    inputs,
                    outputs,
                    weights,
                    bias,
                } => {
                    let Dims::Flat(n) = cur else {
                        return Err(mismatch(format!(
                            "dense needs a flat input, got {cur:?} (add a flatten layer)"
                        )));
                    };
                    if n != *inputs {
                        return Err(mismatch(format!("expects {inputs} inputs, receives {n}")));
                    }
                    if *outputs == 0 {
                        return Err(mismatch("zero outputs".into()));
                    }
                    if weights.len() != inputs * outputs || bias.len() != *outputs {
                        return Err(mismatch(format!(
                            "needs {} weights and {outputs} biases, got {} and {}",
                            inputs * outputs,
                            weights.len(),
                            bias.len()
                        )));
                    }
                    Dims::Flat(*outputs)
                }
                Layer::Relu => cur,
                Layer::Conv2d {
                    in_ch,
                    out_ch,
                    k,
                    weights,
                    bias,
                } => {
                    let Dims::Image { h, w, c } = cur else {
                        return Err(mismatch("conv2d needs an image input".into()));
                    };
                    if c != *in_ch {
                        return Err(mismatch(format!("expects {in_ch} channels, receives {c}")));
                    }
                    if *k == 0 || k % 2 == 0 {
                        return Err(mismatch(format!("kernel size must be odd, got {k}")));
                    }
                    if *out_ch == 0 {
                        return Err(mismatch("zero output channels".into()));
                    }
                    if weights.len() != out_ch * in_ch * k * k || bias.len() != *out_ch {
                        return Err(mismatch(format!(
                            "needs {} weights and {out_ch} biases, got {} and {}",
                            out_ch * in_ch * k * k,
                            weights.len(),
                            bias.len()
                        )));
                    }
                    Dims::Image { h, w, c: *out_ch }
                }
                Layer::Flatten => Dims::Flat(cur.len()),
                Layer::AvgPool2d { k } => {
                    let Dims::Image { h, w, c } = cur else {
                        return Err(mismatch("avgpool2d needs an image input".into()));
                    };
                    if *k == 0 || h % k != 0 || w % k != 0 {
                        return Err(mismatch(format!("pool size {k} must divide {h}x{w}")));
                    }
                    Dims::Image {
                        h: h / k,
                        w: w / k,
                        c,
                    }
                }
            };
            if let Some((w, b)) = match layer {
                Layer::Dense { weights, bias, .. } | Layer::Conv2d { weights, bias, .. } => {
                    Some((weights, bias))
                }
                _ => None,
            } {
                if w.iter().chain(b).any(|v| !v.is_finite()) {
                    return Err(mismatch("non-finite weight".into()));
                }
            }
            dims.push(next);
        }
        match dims.last() {
            Some(Dims::Flat(n)) if *n == spec.num_classes => {}
            Some(d) => {
                return Err(Error::LayerMismatch {
                    index: spec.layers.len(),
                    layer: "output",
                    reason: format!(
                        "final layout {d:?} does not match {} classes",
                        spec.num_classes
                    ),
                })
            }
            None => unreachable!(),
        }
        Ok(Self { spec, dims })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.spec.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn input_range(&self) -> ValueRange {
        self.spec.input_range
    }

    fn check_input(&self, x: &TensorF) -> Result<()> {
        if x.shape() != self.spec.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                expected: self.spec.input_shape.clone(),
                got: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.spec.num_classes {
            return Err(Error::ClassOutOfRange {
                index: class,
                num_classes: self.spec.num_classes,
            });
        }
        Ok(())
    }

    pub fn forward_logits(&self, x: &TensorF) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut acts = self.trace(x.as_slice());
        let logits = acts.pop().unwrap();
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logits".into()));
        }
        Ok(logits)
    }

    /// Argmax of the logits; ties go to the lowest index.
    pub fn predict(&self, x: &TensorF) -> Result<usize> {
        Ok(argmax(&self.forward_logits(x)?))
    }

    /// Gradient of one logit with respect to the input.
    pub fn grad_input(&self, x: &TensorF, class_index: usize) -> Result<TensorF> {
        self.grad_output(x, class_index, OutputMode::Logit)
    }

    /// Gradient of the chosen class output (logit or softmax probability).
    pub fn grad_output(&self, x: &TensorF, class_index: usize, mode: OutputMode) -> Result<TensorF> {
        self.check_class(class_index)?;
        self.check_input(x)?;
        let acts = self.trace(x.as_slice());
        let logits = acts.last().unwrap();
        let upstream = match mode {
            OutputMode::Logit => one_hot(logits.len(), class_index),
            OutputMode::Probability => {
                let p = softmax(logits);
                let pc = p[class_index];
                p.iter()
                    .enumerate()
                    .map(|(j, &pj)| pc * (f64::from(u8::from(j == class_index)) - pj))
                    .collect()
            }
        };
        let g = self.backward(&acts, upstream, None);
        x.with_values(g)
    }

    /// Scalar output value consistent with [`Model::grad_output`].
    pub fn output(&self, x: &TensorF, class_index: usize, mode: OutputMode) -> Result<f64> {
        self.check_class(class_index)?;
        let logits = self.forward_logits(x)?;
        Ok(match mode {
            OutputMode::Logit => logits[class_index],
            OutputMode::Probability => softmax(&logits)[class_index],
        })
    }

    /// Gradient of `cross_entropy(softmax(logits(x)), target)` w.r.t. `x`.
    pub fn grad_xent_input(&self, x: &TensorF, target_class: usize) -> Result<TensorF> {
        self.check_class(target_class)?;
        self.check_input(x)?;
        let acts = self.trace(x.as_slice());
        let mut upstream = softmax(acts.last().unwrap());
        upstream[target_class] -= 1.0;
        let g = self.backward(&acts, upstream, None);
        x.with_values(g)
    }

    pub fn xent_loss(&self, x: &TensorF, target_class: usize) -> Result<f64> {
        self.check_class(target_class)?;
        let logits = self.forward_logits(x)?;
        Ok(cross_entropy(&logits, target_class))
    }

    /// All activations: `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
    pub(crate) fn trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.spec.layers.len() + 1);
        acts.push(x.to_vec());
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let input = acts.last().unwrap();
            let out = match layer {
                Layer::Dense {
                    inputs,
                    outputs,
                    weights,
                    bias,
                } => (0..*outputs)
                    .map(|o| {
                        let row = &weights[o * inputs..(o + 1) * inputs];
                        bias[o] + row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>()
                    })
                    .collect(),
                Layer::Relu => input.iter().map(|&v| v.max(0.0)).collect(),
                Layer::Flatten => input.clone(),
                Layer::Conv2d {
                    in_ch,
                    out_ch,
                    k,
                    weights,
                    bias,
                } => {
                    let Dims::Image { h, w, .. } = self.dims[i] else {
                        unreachable!()
                    };
                    conv_forward(input, h, w, *in_ch, *out_ch, *k, weights, bias)
                }
                Layer::AvgPool2d { k } => {
                    let Dims::Image { h, w, c } = self.dims[i] else {
                        unreachable!()
                    };
                    pool_forward(input, h, w, c, *k)
                }
            };
            acts.push(out);
        }
        acts
    }

    /// Back-propagates `upstream` (gradient w.r.t. logits) to the input.
    /// Accumulates parameter gradients into `grads` when given.
    pub(crate) fn backward(
        &self,
        acts: &[Vec<f64>],
        upstream: Vec<f64>,
        mut grads: Option<&mut ParamGrads>,
    ) -> Vec<f64> {
        let mut g = upstream;
        for (i, layer) in self.spec.layers.iter().enumerate().rev() {
            let input = &acts[i];
            g = match layer {
                Layer::Dense {
                    inputs,
                    outputs,
                    weights,
                    ..
                } => {
                    if let Some(pg) = grads.as_deref_mut() {
                        let (gw, gb) = &mut pg.layers[i];
                        for o in 0..*outputs {
                            gb[o] += g[o];
                            let row = &mut gw[o * inputs..(o + 1) * inputs];
                            for (r, v) in row.iter_mut().zip(input) {
                                *r += g[o] * v;
                            }
                        }
                    }
                    let mut gin = vec![0.0; *inputs];
                    for o in 0..*outputs {
                        let row = &weights[o * inputs..(o + 1) * inputs];
                        for (gi, w) in gin.iter_mut().zip(row) {
                            *gi += w * g[o];
                        }
                    }
                    gin
                }
                // Subgradient 0 at an exactly-zero pre-activation.
                Layer::Relu => g
                    .iter()
                    .zip(input)
                    .map(|(&gv, &pre)| if pre > 0.0 { gv } else { 0.0 })
                    .collect(),
                Layer::Flatten => g,
                Layer::Conv2d {
                    in_ch,
                    out_ch,
                    k,
                    weights,
                    ..
                } => {
                    let Dims::Image { h, w, .. } = self.dims[i] else {
                        unreachable!()
                    };
                    let pg = grads.as_deref_mut().map(|pg| &mut pg.layers[i]);
                    conv_backward(input, &g, h, w, *in_ch, *out_ch, *k, weights, pg)
                }
                Layer::AvgPool2d { k } => {
                    let Dims::Image { h, w, c } = self.dims[i] else {
                        unreachable!()
                    };
                    pool_backward(&g, h, w, c, *k)
                }
            };
        }
        g
    }

    /// Inputs of every ReLU layer, concatenated.
    pub(crate) fn relu_preactivations(&self, x: &[f64]) -> Vec<f64> {
        let acts = self.trace(x);
        self.spec
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Relu))
            .flat_map(|(i, _)| acts[i].iter().copied())
            .collect()
    }

    /// True when input feature `index` provably cannot affect the output:
    /// every first-layer weight reading it is exactly zero. For a leading
    /// convolution this requires the whole input channel to be unused.
    pub fn feature_unused(&self, index: usize) -> bool {
        if index >= self.dims[0].len() {
            return false;
        }
        let mut layout = self.dims[0];
        for layer in &self.spec.layers {
            match layer {
                Layer::Flatten => layout = Dims::Flat(layout.len()),
                Layer::Relu => {}
                Layer::Dense {
                    inputs,
                    outputs,
                    weights,
                    ..
                } => return (0..*outputs).all(|o| weights[o * inputs + index] == 0.0),
                Layer::Conv2d {
                    in_ch,
                    out_ch,
                    k,
                    weights,
                    ..
                } => {
                    let Dims::Image { c, .. } = layout else {
                        return false;
                    };
                    let ch = index % c;
                    let kk = k * k;
                    return (0..*out_ch).all(|o| {
                        let base = (o * in_ch + ch) * kk;
                        weights[base..base + kk].iter().all(|&w| w == 0.0)
                    });
                }
                // Pooling mixes pixels before any weight reads them.
                Layer::AvgPool2d { .. } => return false,
            }
        }
        // No parametric layer: the output is the input itself.
        false
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    input: &[f64],
    h: usize,
    w: usize,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    weights: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; h * w * out_ch];
    for y in 0..h {
        for x in 0..w {
            for o in 0..out_ch {
                let mut acc = bias[o];
                for dy in 0..k {
                    let iy = y as isize + dy as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for dx in 0..k {
                        let ix = x as isize + dx as isize - pad;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let px = (iy as usize * w + ix as usize) * in_ch;
                        for c in 0..in_ch {
                            acc += weights[((o * in_ch + c) * k + dy) * k + dx] * input[px + c];
                        }
                    }
                }
                out[(y * w + x) * out_ch + o] = acc;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    gout: &[f64],
    h: usize,
    w: usize,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    weights: &[f64],
    mut pgrads: Option<&mut (Vec<f64>, Vec<f64>)>,
) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let mut gin = vec![0.0; h * w * in_ch];
    for y in 0..h {
        for x in 0..w {
            for o in 0..out_ch {
                let go = gout[(y * w + x) * out_ch + o];
                if go == 0.0 {
                    continue;
                }
                if let Some((_, gb)) = pgrads.as_deref_mut() {
                    gb[o] += go;
                }
                for dy in 0..k {
                    let iy = y as isize + dy as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for dx in 0..k {
                        let ix = x as isize + dx as isize - pad;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let px = (iy as usize * w + ix as usize) * in_ch;
                        for c in 0..in_ch {
                            let wi = ((o * in_ch + c) * k + dy) * k + dx;
                            gin[px + c] += weights[wi] * go;
                            if let Some((gw, _)) = pgrads.as_deref_mut() {
                                gw[wi] += input[px + c] * go;
                            }
                        }
                    }
                }
            }
        }
    }
    gin
}

fn pool_forward(input: &[f64], h: usize, w: usize, c: usize, k: usize) -> Vec<f64> {
    let (oh, ow) = (h / k, w / k);
    let norm = (k * k) as f64;
    let mut out = vec![0.0; oh * ow * c];
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                let mut acc = 0.0;
                for dy in 0..k {
                    for dx in 0..k {
                        acc += input[((y * k + dy) * w + x * k + dx) * c + ch];
                    }
                }
                out[(y * ow + x) * c + ch] = acc / norm;
            }
        }
    }
    out
}

fn pool_backward(gout: &[f64], h: usize, w: usize, c: usize, k: usize) -> Vec<f64> {
    let ow = w / k;
    let norm = (k * k) as f64;
    let mut gin = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                gin[(y * w + x) * c + ch] = gout[((y / k) * ow + x / k) * c + ch] / norm;
            }
        }
    }
    gin
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-log softmax(logits)[target]`, computed stably.
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn one_hot(n: usize, index: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[index] = 1.0;
    v
}
