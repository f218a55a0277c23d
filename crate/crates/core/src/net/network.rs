use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::*;
use super::{NetError, Tensor};
use crate::classes::{ClassOutputs, NUM_CLASSES};
use crate::events::Frame;

/// Layer widths of the standard topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_width: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Architecture {
    pub fn standard(input_width: usize) -> Self {
        Self {
            input_width,
            conv1: 10,
            conv2: 20,
            hidden: 100,
            classes: NUM_CLASSES,
        }
    }

    /// Side of the feature maps after both pooling stages.
    pub fn pooled_width(&self) -> usize {
        self.input_width / 2 / 2
    }

    pub fn flat_features(&self) -> usize {
        self.conv2 * self.pooled_width().pow(2)
    }
}

impl Default for Architecture {
    fn default() -> Self {
        Self::standard(36)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    Relu,
    MaxPool,
    Dense(Dense),
    Softmax,
}

impl Layer {
    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv(c) => c.weights.len() + c.bias.len(),
            Layer::Dense(d) => d.weights.len() + d.bias.len(),
            _ => 0,
        }
    }

    fn zero_grad(&self) -> Option<ParamGrad> {
        match self {
            Layer::Conv(c) => Some(ParamGrad::zeros(c.weights.len(), c.bias.len())),
            Layer::Dense(d) => Some(ParamGrad::zeros(d.weights.len(), d.bias.len())),
            _ => None,
        }
    }

    fn output_shape(&self, shape: &[usize]) -> Result<Vec<usize>, NetError> {
        let bad = |msg: String| Err(NetError::Shape(msg));
        match self {
            Layer::Conv(c) => match shape {
                [ch, h, w] if *ch == c.in_channels => Ok(vec![c.out_channels, *h, *w]),
                _ => bad(format!("conv({}) cannot take {shape:?}", c.in_channels)),
            },
            Layer::MaxPool => match shape {
                [ch, h, w] if *h >= 2 && *w >= 2 => Ok(vec![*ch, h / 2, w / 2]),
                _ => bad(format!("pool cannot take {shape:?}")),
            },
            Layer::Relu => Ok(shape.to_vec()),
            Layer::Dense(d) => {
                let n: usize = shape.iter().product();
                if n == d.inputs {
                    Ok(vec![d.outputs])
                } else {
                    bad(format!("dense({}) cannot take {shape:?}", d.inputs))
                }
            }
            Layer::Softmax => match shape {
                [_] => Ok(shape.to_vec()),
                _ => bad(format!("softmax needs a vector, got {shape:?}")),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReluMode {
    /// Ordinary derivative: pass where the forward input was positive.
    Plain,
    /// Guided backpropagation: additionally drop negative gradients.
    Guided,
}

/// Per-layer activations of one forward pass. `activations[i]` is the input
/// of layer `i`; the last entry is the network output.
#[derive(Debug, Clone)]
pub struct Trace {
    pub activations: Vec<Tensor>,
    pool_argmax: Vec<Vec<u32>>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("trace has an output")
    }

    /// Indices of the winning inputs of pool layer `layer` (empty otherwise).
    pub fn pool_argmax(&self, layer: usize) -> &[u32] {
        &self.pool_argmax[layer]
    }
}

/// Parameter gradients aligned with the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<ParamGrad>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net.layers.iter().map(Layer::zero_grad).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some(a), Some(b)) = (a, b) {
                a.add_assign(b);
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.layers.iter_mut().flatten() {
            g.weights.iter_mut().chain(g.bias.iter_mut()).for_each(|v| *v *= k);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_width: usize,
    layers: Vec<Layer>,
}

impl Network {
    /// Any stack of layers whose shapes chain from a (1, w, w) input.
    pub fn from_layers(input_width: usize, layers: Vec<Layer>) -> Result<Self, NetError> {
        let net = Self {
            input_width,
            layers,
        };
        net.try_shape_chain()?;
        Ok(net)
    }

    pub fn zeros(arch: Architecture) -> Self {
        let layers = vec![
            Layer::Conv(Conv2d::zeros(arch.conv1, 1)),
            Layer::Relu,
            Layer::MaxPool,
            Layer::Conv(Conv2d::zeros(arch.conv2, arch.conv1)),
            Layer::Relu,
            Layer::MaxPool,
            Layer::Dense(Dense::zeros(arch.hidden, arch.flat_features())),
            Layer::Relu,
            Layer::Dense(Dense::zeros(arch.classes, arch.hidden)),
            Layer::Softmax,
        ];
        Self::from_layers(arch.input_width, layers).expect("standard topology chains")
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(arch: Architecture, seed: u64) -> Self {
        let mut net = Self::zeros(arch);
        net.randomize(seed, 1.0);
        net
    }

    /// Redraw all weights from U(-b, b), b = scale * sqrt(6 / (fan_in + fan_out)).
    pub fn randomize(&mut self, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut self.layers {
            let (weights, bias, fan_in, fan_out) = match layer {
                Layer::Conv(c) => {
                    let k = KERNEL * KERNEL;
                    (&mut c.weights, &mut c.bias, c.in_channels * k, c.out_channels * k)
                }
                Layer::Dense(d) => (&mut d.weights, &mut d.bias, d.inputs, d.outputs),
                _ => continue,
            };
            let b = scale * (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in weights.iter_mut() {
                *w = rng.random_range(-b..=b);
            }
            bias.fill(0.0);
        }
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// The standard-topology widths, if this network has that topology.
    pub fn architecture(&self) -> Option<Architecture> {
        match &self.layers[..] {
            [Layer::Conv(c1), Layer::Relu, Layer::MaxPool, Layer::Conv(c2), Layer::Relu, Layer::MaxPool, Layer::Dense(f1), Layer::Relu, Layer::Dense(f2), Layer::Softmax] => {
                Some(Architecture {
                    input_width: self.input_width,
                    conv1: c1.out_channels,
                    conv2: c2.out_channels,
                    hidden: f1.outputs,
                    classes: f2.outputs,
                })
            }
            _ => None,
        }
    }

    fn try_shape_chain(&self) -> Result<Vec<Vec<usize>>, NetError> {
        let mut shapes = vec![vec![1, self.input_width, self.input_width]];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Input shape followed by the output shape of every layer.
    pub fn shape_chain(&self) -> Vec<Vec<usize>> {
        self.try_shape_chain().expect("validated at construction")
    }

    fn check_frame(&self, frame: &Frame) -> Result<Tensor, NetError> {
        if frame.width() != self.input_width {
            return Err(NetError::Width {
                expected: self.input_width,
                actual: frame.width(),
            });
        }
        Ok(Tensor::from_frame(frame))
    }

    pub fn forward(&self, frame: &Frame) -> Result<ClassOutputs, NetError> {
        let out = self.forward_tensor(&self.check_frame(frame)?)?;
        let probs: [f64; NUM_CLASSES] = out.data().try_into().map_err(|_| {
            NetError::Shape(format!("expected {NUM_CLASSES} outputs, got {}", out.len()))
        })?;
        ClassOutputs::new(probs).map_err(|e| NetError::Shape(e.to_string()))
    }

    pub fn forward_tensor(&self, input: &Tensor) -> Result<Tensor, NetError> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = Self::apply(layer, &x)?.0;
        }
        Ok(x)
    }

    fn apply(layer: &Layer, x: &Tensor) -> Result<(Tensor, Vec<u32>), NetError> {
        Ok(match layer {
            Layer::Conv(c) => (conv2d_forward(x, c)?, Vec::new()),
            Layer::Relu => (relu_forward(x), Vec::new()),
            Layer::MaxPool => maxpool_forward(x),
            Layer::Dense(d) => (dense_forward(x, d)?, Vec::new()),
            Layer::Softmax => (
                Tensor::new(x.shape().to_vec(), softmax(x.data()))?,
                Vec::new(),
            ),
        })
    }

    pub fn trace(&self, input: &Tensor) -> Result<Trace, NetError> {
        let expected = [1, self.input_width, self.input_width];
        if input.shape() != expected {
            return Err(NetError::Shape(format!(
                "expected input {expected:?}, got {:?}",
                input.shape()
            )));
        }
        let mut activations = vec![input.clone()];
        let mut pool_argmax = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, arg) = Self::apply(layer, activations.last().unwrap())?;
            activations.push(y);
            pool_argmax.push(arg);
        }
        Ok(Trace {
            activations,
            pool_argmax,
        })
    }

    /// Propagate `grad` (the gradient at `trace.activations[end]`) down to the
    /// input through layers `end - 1 ..= 0`, accumulating parameter
    /// gradients into `grads` when given.
    pub fn backward_from(
        &self,
        trace: &Trace,
        end: usize,
        grad: Tensor,
        mode: ReluMode,
        mut grads: Option<&mut Gradients>,
    ) -> Tensor {
        let with_params = grads.is_some();
        let mut g = grad;
        for i in (0..end).rev() {
            let input = &trace.activations[i];
            let slot = grads.as_mut().and_then(|gr| gr.layers[i].as_mut());
            // The first layer's input gradient is only needed for saliency.
            let want_input = i > 0 || !with_params;
            g = match &self.layers[i] {
                Layer::Conv(c) => match conv2d_backward(input, c, &g, slot, want_input) {
                    Some(gi) => gi,
                    None => Tensor::zeros(input.shape().to_vec()),
                },
                Layer::Dense(d) => match dense_backward(input, d, &g, slot, want_input) {
                    Some(gi) => gi,
                    None => Tensor::zeros(input.shape().to_vec()),
                },
                Layer::MaxPool => maxpool_backward(&g, &trace.pool_argmax[i], input.shape()),
                Layer::Relu => match mode {
                    ReluMode::Plain => relu_backward(input, &g),
                    ReluMode::Guided => guided_relu_backward(input, &g),
                },
                Layer::Softmax => {
                    let p = trace.activations[i + 1].data();
                    let dot: f64 = p.iter().zip(g.data()).map(|(p, g)| p * g).sum();
                    let data = p.iter().zip(g.data()).map(|(p, g)| p * (g - dot)).collect();
                    Tensor::new(input.shape().to_vec(), data).expect("same shape")
                }
            };
        }
        g
    }

    /// Cross-entropy against a target distribution; parameter gradients are
    /// added to `grads`. Requires a softmax output layer.
    pub fn accumulate_gradients(
        &self,
        input: &Tensor,
        target: &[f64],
        grads: &mut Gradients,
    ) -> Result<(f64, Tensor), NetError> {
        if !matches!(self.layers.last(), Some(Layer::Softmax)) {
            return Err(NetError::Shape("loss needs a softmax output".into()));
        }
        let trace = self.trace(input)?;
        let p = trace.output().data();
        if target.len() != p.len() {
            return Err(NetError::Shape(format!(
                "target has {} classes, network {}",
                target.len(),
                p.len()
            )));
        }
        let loss = cross_entropy_logits(trace.activations[self.layers.len() - 1].data(), target);
        let mass: f64 = target.iter().sum();
        let dz: Vec<f64> = p.iter().zip(target).map(|(p, t)| p * mass - t).collect();
        let end = self.layers.len() - 1;
        self.backward_from(
            &trace,
            end,
            Tensor::new(vec![dz.len()], dz)?,
            ReluMode::Plain,
            Some(grads),
        );
        Ok((loss, trace.output().clone()))
    }

    pub fn loss_and_gradients(
        &self,
        input: &Tensor,
        target: &[f64],
    ) -> Result<(f64, Gradients), NetError> {
        let mut grads = Gradients::zeros_like(self);
        let (loss, _) = self.accumulate_gradients(input, target, &mut grads)?;
        Ok((loss, grads))
    }

    /// Guided-backpropagation saliency of unit `unit` of the first fully
    /// connected layer, with respect to the input frame.
    pub fn guided_backprop(&self, frame: &Frame, unit: usize) -> Result<Tensor, NetError> {
        let input = self.check_frame(frame)?;
        self.guided_backprop_tensor(&input, unit)
    }

    pub fn guided_backprop_tensor(&self, input: &Tensor, unit: usize) -> Result<Tensor, NetError> {
        let k = self
            .layers
            .iter()
            .position(|l| matches!(l, Layer::Dense(_)))
            .ok_or_else(|| NetError::Shape("network has no dense layer".into()))?;
        let Layer::Dense(d) = &self.layers[k] else {
            unreachable!()
        };
        if unit >= d.outputs {
            return Err(NetError::Shape(format!(
                "unit {unit} out of range for {} hidden units",
                d.outputs
            )));
        }
        let trace = self.trace(input)?;
        let mut seed = Tensor::zeros(vec![d.outputs]);
        seed.data_mut()[unit] = 1.0;
        Ok(self.backward_from(&trace, k + 1, seed, ReluMode::Guided, None))
    }

    /// (weights, biases) of each parameterized layer, in layer order.
    pub fn params_mut(&mut self) -> impl Iterator<Item = (&mut Vec<f64>, &mut Vec<f64>)> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Conv(c) => Some((&mut c.weights, &mut c.bias)),
            Layer::Dense(d) => Some((&mut d.weights, &mut d.bias)),
            _ => None,
        })
    }

    pub fn params(&self) -> impl Iterator<Item = (&Vec<f64>, &Vec<f64>)> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Conv(c) => Some((&c.weights, &c.bias)),
            Layer::Dense(d) => Some((&d.weights, &d.bias)),
            _ => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::FrameKind;

    #[test]
    fn standard_shape_chain_for_36() {
        let net = Network::zeros(Architecture::standard(36));
        let chain = net.shape_chain();
        let spatial: Vec<usize> = chain
            .iter()
            .map(|s| if s.len() == 3 { s[1] } else { s[0] })
            .collect();
        assert_eq!(spatial, vec![36, 36, 36, 18, 18, 18, 9, 100, 100, 10, 10]);
        assert_eq!(chain[6], vec![20, 9, 9]);
        assert_eq!(chain[6].iter().product::<usize>(), 1620);
    }

    #[test]
    fn odd_widths_pool_with_floor() {
        let net = Network::zeros(Architecture::standard(54));
        assert_eq!(net.shape_chain()[6], vec![20, 13, 13]);
        assert_eq!(Architecture::standard(54).flat_features(), 20 * 13 * 13);
        assert_eq!(Architecture::standard(72).flat_features(), 20 * 18 * 18);
    }

    #[test]
    fn parameter_counts() {
        let net = Network::zeros(Architecture::standard(36));
        let counts: Vec<usize> = net
            .params()
            .map(|(w, _)| w.len())
            .collect();
        assert_eq!(counts, vec![250, 5000, 162_000, 1000]);
        assert_eq!(counts[0] + counts[1], 5250);
    }

    #[test]
    fn zero_network_is_uniform() {
        let net = Network::zeros(Architecture::standard(36));
        let f = Frame::uniform(36, 0.8, FrameKind::Aps).unwrap();
        let out = net.forward(&f).unwrap();
        assert!(out.as_slice().iter().all(|&p| (p - 0.1).abs() < 1e-15));
    }

    #[test]
    fn wrong_width_is_rejected() {
        let net = Network::zeros(Architecture::standard(36));
        let f = Frame::uniform(54, 0.5, FrameKind::Aps).unwrap();
        assert!(matches!(
            net.forward(&f),
            Err(NetError::Width {
                expected: 36,
                actual: 54
            })
        ));
    }

    #[test]
    fn glorot_is_seeded_and_bounded() {
        let a = Network::glorot(Architecture::standard(36), 3);
        let b = Network::glorot(Architecture::standard(36), 3);
        let c = Network::glorot(Architecture::standard(36), 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let (w, bias) = a.params().nth(2).unwrap();
        let bound = (6.0 / (1620.0 + 100.0f64)).sqrt();
        assert!(w.iter().all(|v| v.abs() <= bound));
        assert!(bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bad_chain_is_rejected() {
        let layers = vec![Layer::Dense(Dense::zeros(10, 99)), Layer::Softmax];
        assert!(Network::from_layers(36, layers).is_err());
    }
}
