use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::{Prng, Scalar};
use crate::error::{dim_err, Error, Result};

/// Elementwise nonlinearity applied after a layer's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn tag(self) -> u32 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
            Activation::Tanh => 3,
        }
    }

    pub fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Linear),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Sigmoid),
            3 => Ok(Activation::Tanh),
            other => Err(Error::Format(format!("unknown activation tag {other}"))),
        }
    }

    fn apply<T: Scalar>(self, z: &mut Array2<T>) {
        match self {
            Activation::Linear => {}
            Activation::Relu => z.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() }),
            Activation::Sigmoid => z.mapv_inplace(|v| T::one() / (T::one() + (-v).exp())),
            Activation::Tanh => z.mapv_inplace(|v| v.tanh()),
        }
    }

    /// Multiplies `grad` in place by the derivative, expressed via the
    /// layer output `out`.
    fn backprop<T: Scalar>(self, grad: &mut Array2<T>, out: &Array2<T>) {
        match self {
            Activation::Linear => {}
            Activation::Relu => Zip::from(grad).and(out).for_each(|g, &o| {
                if o <= T::zero() {
                    *g = T::zero();
                }
            }),
            Activation::Sigmoid => {
                Zip::from(grad).and(out).for_each(|g, &o| *g *= o * (T::one() - o))
            }
            Activation::Tanh => Zip::from(grad).and(out).for_each(|g, &o| *g *= T::one() - o * o),
        }
    }
}

/// Fully connected layer computing `act(x · W + b)`; `W` is `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T = f32> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub activation: Activation,
}

impl<T: Scalar> DenseLayer<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn glorot(inputs: usize, outputs: usize, activation: Activation, prng: &mut Prng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((inputs, outputs), || {
            T::lit(prng.uniform(-limit, limit))
        });
        Self {
            weight,
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn map<U: Scalar>(&self) -> DenseLayer<U> {
        DenseLayer {
            weight: self.weight.mapv(|v| U::lit(v.as_f64())),
            bias: self.bias.mapv(|v| U::lit(v.as_f64())),
            activation: self.activation,
        }
    }
}

/// Sequential stack of dense layers.
///
/// A frozen network still evaluates and back-propagates to its input, but
/// refuses every parameter mutation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet<T = f32> {
    layers: Vec<DenseLayer<T>>,
    frozen: bool,
}

/// Activations recorded by [`DenseNet::forward`]: entry 0 is the input,
/// entry `i + 1` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct ForwardCache<T = f32> {
    activations: Vec<Array2<T>>,
}

impl<T> ForwardCache<T> {
    pub fn output(&self) -> &Array2<T> {
        self.activations.last().expect("cache holds the input at least")
    }

    pub fn layer_output(&self, layer: usize) -> &Array2<T> {
        &self.activations[layer + 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<T = f32> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

/// Parameter gradients, one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f32> {
    pub layers: Vec<LayerGrad<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &DenseNet<T>) -> Self {
        Self {
            layers: net
                .layers()
                .iter()
                .map(|l| LayerGrad {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
            .fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }
}

/// Result of a backward pass. `param_grads` is `None` for frozen networks.
#[derive(Debug, Clone)]
pub struct Backward<T = f32> {
    pub param_grads: Option<Gradients<T>>,
    pub grad_input: Array2<T>,
}

impl<T: Scalar> DenseNet<T> {
    pub fn from_layers(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(dim_err!(
                    "layer {i} emits {} features but layer {} expects {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                ));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.outputs() {
                return Err(dim_err!("layer {i} bias length {} != {}", l.bias.len(), l.outputs()));
            }
        }
        Ok(Self {
            layers,
            frozen: false,
        })
    }

    /// Multilayer perceptron over `dims` (`dims[0]` inputs, `dims.last()`
    /// outputs) with `hidden` between layers and `output` on the last one.
    pub fn mlp(dims: &[usize], hidden: Activation, output: Activation, prng: &mut Prng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(format!("mlp needs at least 2 widths, got {dims:?}")));
        }
        if dims.contains(&0) {
            return Err(Error::Config(format!("zero-width layer in {dims:?}")));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::glorot(dims[i], dims[i + 1], act, prng)
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Mutable access to the layers; refused once frozen.
    pub fn layers_mut(&mut self) -> Result<&mut [DenseLayer<T>]> {
        if self.frozen {
            return Err(Error::Usage("attempt to mutate a frozen network".into()));
        }
        Ok(&mut self.layers)
    }

    /// Replaces layer `index` (same input width; the next layer, if any,
    /// must accept the new output width).
    pub fn replace_layer(&mut self, index: usize, layer: DenseLayer<T>) -> Result<()> {
        let n = self.layers.len();
        if index >= n {
            return Err(Error::Usage(format!("layer index {index} out of range ({n} layers)")));
        }
        if self.frozen {
            return Err(Error::Usage("attempt to mutate a frozen network".into()));
        }
        let mut layers = self.layers.clone();
        layers[index] = layer;
        self.layers = Self::from_layers(layers)?.layers;
        Ok(())
    }

    pub fn map<U: Scalar>(&self) -> DenseNet<U> {
        DenseNet {
            layers: self.layers.iter().map(DenseLayer::map).collect(),
            frozen: self.frozen,
        }
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(dim_err!(
                "batch has {} columns, network expects {}",
                x.ncols(),
                self.input_dim()
            ));
        }
        Ok(())
    }

    fn affine(layer: &DenseLayer<T>, x: &ArrayView2<T>) -> Array2<T> {
        let mut z = x.dot(&layer.weight);
        z += &layer.bias;
        layer.activation.apply(&mut z);
        z
    }

    /// Evaluates the network without recording activations.
    pub fn predict(&self, x: &ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(x)?;
        let mut out = Self::affine(&self.layers[0], x);
        for layer in &self.layers[1..] {
            out = Self::affine(layer, &out.view());
        }
        Ok(out)
    }

    pub fn forward(&self, x: &ArrayView2<T>) -> Result<(Array2<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_owned());
        for layer in &self.layers {
            let next = Self::affine(layer, &activations[activations.len() - 1].view());
            activations.push(next);
        }
        let output = activations[activations.len() - 1].clone();
        Ok((output, ForwardCache { activations }))
    }

    fn check_cache(&self, cache: &ForwardCache<T>, grad_output: &Array2<T>) -> Result<()> {
        if cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::Usage(format!(
                "cache holds {} activations, network has {} layers",
                cache.activations.len(),
                self.layers.len()
            )));
        }
        if grad_output.dim() != cache.output().dim() {
            return Err(dim_err!(
                "grad_output shape {:?} != forward output shape {:?}",
                grad_output.dim(),
                cache.output().dim()
            ));
        }
        Ok(())
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache<T>,
        grad_output: &Array2<T>,
        want_params: bool,
        want_input: bool,
    ) -> Result<(Option<Gradients<T>>, Option<Array2<T>>)> {
        self.check_cache(cache, grad_output)?;
        let n = self.layers.len();
        let mut grads: Vec<LayerGrad<T>> = Vec::with_capacity(if want_params { n } else { 0 });
        let mut g = grad_output.clone();
        let mut grad_input = None;
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            layer.activation.backprop(&mut g, &cache.activations[i + 1]);
            if want_params {
                grads.push(LayerGrad {
                    weight: cache.activations[i].t().dot(&g),
                    bias: g.sum_axis(Axis(0)),
                });
            }
            if i > 0 {
                g = g.dot(&layer.weight.t());
            } else if want_input {
                grad_input = Some(g.dot(&layer.weight.t()));
            }
        }
        grads.reverse();
        Ok((want_params.then_some(Gradients { layers: grads }), grad_input))
    }

    /// Full backward pass. `grad_output` is the gradient of the (already
    /// batch-averaged) loss with respect to the network output.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_output: &Array2<T>) -> Result<Backward<T>> {
        let (param_grads, grad_input) =
            self.backward_impl(cache, grad_output, !self.frozen, true)?;
        Ok(Backward {
            param_grads,
            grad_input: grad_input.expect("requested"),
        })
    }

    /// Parameter gradients only; skips the input gradient of the first layer.
    pub fn param_grads(&self, cache: &ForwardCache<T>, grad_output: &Array2<T>) -> Result<Gradients<T>> {
        if self.frozen {
            return Err(Error::Usage("parameter gradients requested for a frozen network".into()));
        }
        let (grads, _) = self.backward_impl(cache, grad_output, true, false)?;
        Ok(grads.expect("requested"))
    }

    /// Flattened view of all parameters (weights then bias, layer by layer).
    pub fn flat_params(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub(crate) fn set_flat_param(&mut self, index: usize, value: T) {
        let mut i = index;
        for l in &mut self.layers {
            if i < l.weight.len() {
                let cols = l.weight.ncols();
                l.weight[[i / cols, i % cols]] = value;
                return;
            }
            i -= l.weight.len();
            if i < l.bias.len() {
                l.bias[i] = value;
                return;
            }
            i -= l.bias.len();
        }
        panic!("flat parameter index {index} out of range");
    }
}

impl<T: Scalar> Gradients<T> {
    pub fn flat(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }
}
