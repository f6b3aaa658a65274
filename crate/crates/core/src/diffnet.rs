//! Small fully connected networks with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat vector. Layout is layer-major; within a
//! layer the `out × in` weight matrix comes first (row-major, one row per
//! output unit) followed by the `out` biases.

use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => libm::tanh(z),
            Activation::Sigmoid => sigmoid(z),
            Activation::Softplus => softplus(z),
        }
    }

    /// Derivative given the pre-activation `z` and the activation `a`.
    /// The relu subgradient at zero is zero.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Softplus => sigmoid(z),
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(z: f64) -> f64 {
    // log(1 + e^z) without overflow
    if z > 0.0 {
        z + libm::log1p(libm::exp(-z))
    } else {
        libm::log1p(libm::exp(z))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub seed: u64,
}

impl NetSpec {
    pub fn new(layer_sizes: Vec<usize>, activations: Vec<Activation>, seed: u64) -> Result<Self> {
        let spec = NetSpec { layer_sizes, activations, seed };
        spec.validate()?;
        Ok(spec)
    }

    /// Multi-layer perceptron with a shared hidden activation.
    pub fn mlp(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_activation: Activation,
        output_activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        let mut layer_sizes = Vec::with_capacity(hidden.len() + 2);
        layer_sizes.push(input);
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(output);
        let mut activations = vec![hidden_activation; hidden.len()];
        activations.push(output_activation);
        Self::new(layer_sizes, activations, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config("a network needs at least an input and an output layer".into()));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        if self.activations.len() != self.layer_sizes.len() - 1 {
            return Err(Error::Config(alloc::format!(
                "expected {} activations, got {}",
                self.layer_sizes.len() - 1,
                self.activations.len()
            )));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Offset of layer `l`'s weights in the flat parameter vector.
    fn layer_offset(&self, l: usize) -> usize {
        self.layer_sizes[..=l].windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `activations[0]` is the input; `activations[l + 1]` is layer `l`'s output.
    activations: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().unwrap()
    }

    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre_activations
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Net {
    pub spec: NetSpec,
    pub params: Vec<f64>,
}

impl Net {
    /// Glorot-normal weights (variance `2 / (fan_in + fan_out)`), zero biases.
    pub fn init(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::stream(spec.seed, 0);
        let mut params = Vec::with_capacity(spec.param_count());
        for w in spec.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = libm::sqrt(2.0 / (fan_in + fan_out) as f64);
            for _ in 0..fan_in * fan_out {
                let z: f64 = StandardNormal.sample(&mut rng);
                params.push(std * z);
            }
            params.extend(core::iter::repeat_n(0.0, fan_out));
        }
        Ok(Net { spec, params })
    }

    pub fn from_params(spec: NetSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(dim_mismatch("parameter vector", spec.param_count(), params.len()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("parameters must be finite".into()));
        }
        Ok(Net { spec, params })
    }

    pub fn input_width(&self) -> usize {
        self.spec.input_width()
    }

    pub fn output_width(&self) -> usize {
        self.spec.output_width()
    }

    /// Weight slice and bias slice of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (i, o) = (self.spec.layer_sizes[l], self.spec.layer_sizes[l + 1]);
        let off = self.spec.layer_offset(l);
        (&self.params[off..off + i * o], &self.params[off + i * o..off + i * o + o])
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (i, o) = (self.spec.layer_sizes[l], self.spec.layer_sizes[l + 1]);
        let off = self.spec.layer_offset(l);
        let (w, b) = self.params[off..off + i * o + o].split_at_mut(i * o);
        (w, b)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut a = input.to_vec();
        for l in 0..self.spec.num_layers() {
            let (w, b) = self.layer(l);
            let act = self.spec.activations[l];
            let in_w = a.len();
            a = b
                .iter()
                .enumerate()
                .map(|(o, &bias)| act.apply(dot(&w[o * in_w..(o + 1) * in_w], &a) + bias))
                .collect();
        }
        Ok(a)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        self.check_input(input)?;
        let layers = self.spec.num_layers();
        let mut activations = Vec::with_capacity(layers + 1);
        let mut pre_activations = Vec::with_capacity(layers);
        activations.push(input.to_vec());
        for l in 0..layers {
            let (w, b) = self.layer(l);
            let act = self.spec.activations[l];
            let a = &activations[l];
            let in_w = a.len();
            let z: Vec<f64> = b
                .iter()
                .enumerate()
                .map(|(o, &bias)| dot(&w[o * in_w..(o + 1) * in_w], a) + bias)
                .collect();
            let next = z.iter().map(|&v| act.apply(v)).collect();
            pre_activations.push(z);
            activations.push(next);
        }
        Ok(Trace { activations, pre_activations })
    }

    /// Accumulates the gradients of `<output_grad, forward(input)>` into
    /// `param_grad` (scaled by `scale`) and returns the input gradient.
    pub fn backward_into(
        &self,
        trace: &Trace,
        output_grad: &[f64],
        scale: f64,
        param_grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        if output_grad.len() != self.output_width() {
            return Err(dim_mismatch("output gradient", self.output_width(), output_grad.len()));
        }
        if param_grad.len() != self.params.len() {
            return Err(dim_mismatch("parameter gradient", self.params.len(), param_grad.len()));
        }
        let mut delta: Vec<f64> = output_grad.to_vec();
        for l in (0..self.spec.num_layers()).rev() {
            let act = self.spec.activations[l];
            let z = &trace.pre_activations[l];
            let out = &trace.activations[l + 1];
            for (o, d) in delta.iter_mut().enumerate() {
                *d *= act.derivative(z[o], out[o]);
            }
            let input = &trace.activations[l];
            let (in_w, out_w) = (input.len(), delta.len());
            let off = self.spec.layer_offset(l);
            let (w, _) = self.layer(l);
            let (gw, gb) = param_grad[off..off + in_w * out_w + out_w].split_at_mut(in_w * out_w);
            let mut next = vec![0.0; in_w];
            for o in 0..out_w {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * in_w..(o + 1) * in_w];
                let grow = &mut gw[o * in_w..(o + 1) * in_w];
                for i in 0..in_w {
                    grow[i] += scale * d * input[i];
                    next[i] += d * row[i];
                }
                gb[o] += scale * d;
            }
            delta = next;
        }
        Ok(delta)
    }

    /// Reverse-mode gradients of `<output_grad, forward(input)>` with respect
    /// to the parameters and the input.
    pub fn gradients(&self, input: &[f64], output_grad: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let trace = self.forward_trace(input)?;
        let mut param_grad = vec![0.0; self.params.len()];
        let input_grad = self.backward_into(&trace, output_grad, 1.0, &mut param_grad)?;
        Ok((param_grad, input_grad))
    }

    /// Smallest |pre-activation| over all relu units for this input, or
    /// `None` when the net has no relu layer.
    pub fn relu_kink_distance(&self, input: &[f64]) -> Result<Option<f64>> {
        let trace = self.forward_trace(input)?;
        let mut best: Option<f64> = None;
        for (l, z) in trace.pre_activations.iter().enumerate() {
            if self.spec.activations[l] == Activation::Relu {
                for v in z {
                    let d = libm::fabs(*v);
                    best = Some(best.map_or(d, |b: f64| b.min(d)));
                }
            }
        }
        Ok(best)
    }

    /// Fixes the leading part of the input so that many inputs sharing it can
    /// be evaluated cheaply. Results match [`Net::forward`] bit for bit.
    pub fn with_prefix(&self, prefix: &[f64]) -> Result<PrefixForward<'_>> {
        if prefix.len() > self.input_width() {
            return Err(dim_mismatch("input prefix", self.input_width(), prefix.len()));
        }
        let (w, _) = self.layer(0);
        let in_w = self.input_width();
        let partial = (0..self.spec.layer_sizes[1])
            .map(|o| dot(&w[o * in_w..o * in_w + prefix.len()], prefix))
            .collect();
        Ok(PrefixForward { net: self, prefix_len: prefix.len(), partial, a: Vec::new(), b: Vec::new() })
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_width() {
            return Err(dim_mismatch("network input", self.input_width(), input.len()));
        }
        Ok(())
    }
}

pub struct PrefixForward<'a> {
    net: &'a Net,
    prefix_len: usize,
    partial: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl PrefixForward<'_> {
    /// Network output for `[prefix, suffix]`.
    pub fn forward(&mut self, suffix: &[f64]) -> Result<&[f64]> {
        let net = self.net;
        let in_w = net.input_width();
        if self.prefix_len + suffix.len() != in_w {
            return Err(dim_mismatch("input suffix", in_w - self.prefix_len, suffix.len()));
        }
        let (w, bias) = net.layer(0);
        let act = net.spec.activations[0];
        self.a.clear();
        for (o, (&p, &b)) in self.partial.iter().zip(bias).enumerate() {
            let row = &w[o * in_w + self.prefix_len..(o + 1) * in_w];
            // continue the same left-to-right sum as `dot`
            let z = row.iter().zip(suffix).fold(p, |acc, (x, y)| acc + x * y);
            self.a.push(act.apply(z + b));
        }
        for l in 1..net.spec.num_layers() {
            let (w, bias) = net.layer(l);
            let act = net.spec.activations[l];
            let in_w = self.a.len();
            self.b.clear();
            for (o, &b) in bias.iter().enumerate() {
                self.b.push(act.apply(dot(&w[o * in_w..(o + 1) * in_w], &self.a) + b));
            }
            core::mem::swap(&mut self.a, &mut self.b);
        }
        Ok(&self.a)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relative error used by [`grad_check`]: `|a - b| / max(1, |a|, |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    libm::fabs(a - b) / 1.0f64.max(libm::fabs(a)).max(libm::fabs(b))
}

/// Fixed probe weights that turn a vector output into a scalar.
fn probe(width: usize) -> Vec<f64> {
    (0..width)
        .map(|i| {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            s * (1.0 + 0.37 * i as f64) / (1.0 + i as f64)
        })
        .collect()
}

/// Maximum relative error between analytic gradients and central finite
/// differences, over every parameter and every input coordinate, for the
/// scalar `<probe, forward(net, input)>`.
pub fn grad_check(net: &Net, input: &[f64], epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::InvalidInput("epsilon must lie in (0, 1e-2]".into()));
    }
    let weights = probe(net.output_width());
    let (pg, ig) = net.gradients(input, &weights)?;
    let scalar = |n: &Net, x: &[f64]| -> Result<f64> { Ok(dot(&n.forward(x)?, &weights)) };

    let mut worst = 0.0f64;
    let mut probe_net = net.clone();
    for i in 0..net.params.len() {
        let orig = probe_net.params[i];
        probe_net.params[i] = orig + epsilon;
        let up = scalar(&probe_net, input)?;
        probe_net.params[i] = orig - epsilon;
        let down = scalar(&probe_net, input)?;
        probe_net.params[i] = orig;
        worst = worst.max(relative_error(pg[i], (up - down) / (2.0 * epsilon)));
    }
    let mut x = input.to_vec();
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + epsilon;
        let up = scalar(net, &x)?;
        x[i] = orig - epsilon;
        let down = scalar(net, &x)?;
        x[i] = orig;
        worst = worst.max(relative_error(ig[i], (up - down) / (2.0 * epsilon)));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "lowercase")]
pub enum Algorithm {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Algorithm {
    pub fn adam() -> Self {
        Algorithm::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(algorithm: Algorithm, learning_rate: f64, param_count: usize) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        let moments = match algorithm {
            Algorithm::Sgd => 0,
            Algorithm::Adam { .. } => param_count,
        };
        Ok(OptimizerState {
            algorithm,
            learning_rate,
            first_moment: vec![0.0; moments],
            second_moment: vec![0.0; moments],
            step: 0,
        })
    }

    pub fn sgd(learning_rate: f64) -> Result<Self> {
        Self::new(Algorithm::Sgd, learning_rate, 0)
    }

    pub fn adam(learning_rate: f64, param_count: usize) -> Result<Self> {
        Self::new(Algorithm::adam(), learning_rate, param_count)
    }

    /// Applies one update to `net.params` in place.
    pub fn step(&mut self, net: &mut Net, grad: &[f64]) -> Result<()> {
        if grad.len() != net.params.len() {
            return Err(dim_mismatch("parameter gradient", net.params.len(), grad.len()));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                iteration: self.step as usize,
                reason: "non-finite gradient".into(),
            });
        }
        self.step += 1;
        let lr = self.learning_rate;
        match self.algorithm {
            Algorithm::Sgd => {
                for (p, g) in net.params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Algorithm::Adam { beta1, beta2, epsilon } => {
                if self.first_moment.len() != grad.len() {
                    return Err(dim_mismatch("adam moments", grad.len(), self.first_moment.len()));
                }
                let t = self.step as f64;
                let c1 = 1.0 - libm::pow(beta1, t);
                let c2 = 1.0 - libm::pow(beta2, t);
                for i in 0..grad.len() {
                    let g = grad[i];
                    let m = beta1 * self.first_moment[i] + (1.0 - beta1) * g;
                    let v = beta2 * self.second_moment[i] + (1.0 - beta2) * g * g;
                    self.first_moment[i] = m;
                    self.second_moment[i] = v;
                    net.params[i] -= lr * (m / c1) / (libm::sqrt(v / c2) + epsilon);
                }
            }
        }
        if net.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence {
                iteration: self.step as usize,
                reason: "non-finite parameters".into(),
            });
        }
        Ok(())
    }
}

/// Functional form of [`OptimizerState::step`].
pub fn optimize_step(
    mut state: OptimizerState,
    mut net: Net,
    param_grad: &[f64],
) -> Result<(Net, OptimizerState)> {
    state.step(&mut net, param_grad)?;
    Ok((net, state))
}
