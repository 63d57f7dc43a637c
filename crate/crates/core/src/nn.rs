//! Small fully connected networks with exact reverse-mode gradients.
//!
//! Parameters live in one flat `Vec<f64>`: for each layer in order, the
//! `outputs x inputs` weight matrix row-major, then the bias vector. The
//! checkpoint format, `Gradients` and Adam moments all share this layout.
//!
//! Checkpoint layout (all words little-endian):
//!
//! ```text
//! u64                      layer count L
//! L x (u64, u64, u64)      inputs, outputs, activation code (0 identity, 1 relu, 2 softmax)
//! f64 * P                  parameters in the flat layout above
//! ```

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Softmax,
}

impl Activation {
    fn code(self) -> u64 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Softmax => 2,
        }
    }

    fn from_code(code: u64) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Softmax),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    offset: usize,
}

impl LayerShape {
    fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.inputs * self.outputs
    }

    fn bias_range(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.inputs * self.outputs;
        start..start + self.outputs
    }

    fn param_count(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }
}

/// How to initialise the final layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FinalInit {
    /// Same scheme as hidden layers.
    Default,
    /// Weights and bias uniform in `[-r, r]`.
    Uniform(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

/// Activations cached by `forward`; `values[0]` is the input and
/// `values[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct Tape {
    values: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("tape holds the input")
    }
}

/// Partial derivatives in the flat parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    values: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            values: vec![0.0; net.params.len()],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|g| *g *= factor);
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }
}

impl DenseNet {
    /// Builds a network with `sizes[0]` inputs and one layer per following
    /// entry. Hidden weights are He-uniform over fan-in; biases are uniform in
    /// `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        activations: &[Activation],
        final_init: FinalInit,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 {
            return Err(Error::input(
                "network needs at least one layer and one activation per layer",
            ));
        }
        if sizes.contains(&0) {
            return Err(Error::input("layer sizes must be positive"));
        }
        let mut net = Self::zeros(sizes, activations)?;
        let last = net.layers.len() - 1;
        for (i, layer) in net.layers.clone().iter().enumerate() {
            let fan_in = layer.inputs as f64;
            let (w_lim, b_lim) = match final_init {
                FinalInit::Uniform(r) if i == last => (r, r),
                _ => ((6.0 / fan_in).sqrt(), 1.0 / fan_in.sqrt()),
            };
            for w in &mut net.params[layer.weight_range()] {
                *w = rng.random_range(-w_lim..=w_lim);
            }
            for b in &mut net.params[layer.bias_range()] {
                *b = rng.random_range(-b_lim..=b_lim);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 {
            return Err(Error::input(
                "network needs at least one layer and one activation per layer",
            ));
        }
        let last = activations.len() - 1;
        if activations[..last].contains(&Activation::Softmax) {
            return Err(Error::input("softmax is only allowed on the final layer"));
        }
        let mut offset = 0;
        let layers: Vec<LayerShape> = sizes
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let shape = LayerShape {
                    inputs: w[0],
                    outputs: w[1],
                    activation,
                    offset,
                };
                offset += shape.param_count();
                shape
            })
            .collect();
        Ok(Self {
            layers,
            params: vec![0.0; offset],
        })
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Mutable view of layer `i`'s weights (row-major) and bias.
    pub fn layer_params_mut(&mut self, i: usize) -> (&mut [f64], &mut [f64]) {
        let layer = self.layers[i];
        let (head, tail) = self.params[layer.offset..].split_at_mut(layer.inputs * layer.outputs);
        (head, &mut tail[..layer.outputs])
    }

    fn same_shape(&self, other: &DenseNet) -> bool {
        self.layers == other.layers
    }

    pub fn forward(&self, input: &[f64]) -> Result<Tape> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                found: input.len(),
            });
        }
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_vec());
        for layer in &self.layers {
            let x = values.last().expect("nonempty");
            let w = &self.params[layer.weight_range()];
            let b = &self.params[layer.bias_range()];
            let mut y: Vec<f64> = w
                .chunks_exact(layer.inputs)
                .zip(b)
                .map(|(row, bias)| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias)
                .collect();
            match layer.activation {
                Activation::Identity => {}
                Activation::Relu => y.iter_mut().for_each(|v| *v = v.max(0.0)),
                Activation::Softmax => softmax_in_place(&mut y),
            }
            values.push(y);
        }
        Ok(Tape { values })
    }

    /// Convenience wrapper returning only the output.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.values.pop().expect("nonempty"))
    }

    /// Gradients of `<output, output_grad>` with respect to the parameters and
    /// the input.
    pub fn backward(&self, tape: &Tape, output_grad: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let mut grads = Gradients::zeros_like(self);
        let input_grad = self.backward_into(tape, output_grad, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// Like `backward`, but adds into an existing accumulator.
    pub fn backward_into(
        &self,
        tape: &Tape,
        output_grad: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>> {
        if tape.values.len() != self.layers.len() + 1
            || tape.values[0].len() != self.input_dim()
        {
            return Err(Error::input("tape does not come from this network"));
        }
        if output_grad.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "output gradient",
                expected: self.output_dim(),
                found: output_grad.len(),
            });
        }
        if grads.values.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                context: "gradient accumulator",
                expected: self.params.len(),
                found: grads.values.len(),
            });
        }

        let mut upstream = output_grad.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &tape.values[i];
            let y = &tape.values[i + 1];
            let delta: Vec<f64> = match layer.activation {
                Activation::Identity => upstream,
                Activation::Relu => upstream
                    .iter()
                    .zip(y)
                    .map(|(g, &out)| if out > 0.0 { *g } else { 0.0 })
                    .collect(),
                Activation::Softmax => {
                    let dot: f64 = upstream.iter().zip(y).map(|(g, p)| g * p).sum();
                    upstream.iter().zip(y).map(|(g, p)| p * (g - dot)).collect()
                }
            };

            let w = &self.params[layer.weight_range()];
            let gw = &mut grads.values[layer.weight_range()];
            for (row, d) in gw.chunks_exact_mut(layer.inputs).zip(&delta) {
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            for (g, d) in grads.values[layer.bias_range()].iter_mut().zip(&delta) {
                *g += d;
            }
            let mut down = vec![0.0; layer.inputs];
            for (row, d) in w.chunks_exact(layer.inputs).zip(&delta) {
                for (acc, wij) in down.iter_mut().zip(row) {
                    *acc += wij * d;
                }
            }
            upstream = down;
        }
        Ok(upstream)
    }

    /// `self <- tau * online + (1 - tau) * self`, parameter-wise.
    pub fn soft_update(&mut self, online: &DenseNet, tau: f64) -> Result<()> {
        if !self.same_shape(online) {
            return Err(Error::input("soft update between networks of different shapes"));
        }
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::input(format!("tau = {tau} outside [0, 1]")));
        }
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            *t = tau * o + (1.0 - tau) * *t;
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(&(self.layers.len() as u64).to_le_bytes())?;
        for l in &self.layers {
            out.write_all(&(l.inputs as u64).to_le_bytes())?;
            out.write_all(&(l.outputs as u64).to_le_bytes())?;
            out.write_all(&l.activation.code().to_le_bytes())?;
        }
        for p in &self.params {
            out.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(8 + self.layers.len() * 24 + self.params.len() * 8);
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Reads the checkpoint layout; the error string describes what is wrong.
    pub fn read_from<R: Read>(mut input: R) -> std::result::Result<Self, String> {
        let mut word = [0u8; 8];
        let mut next = |input: &mut R| -> std::result::Result<u64, String> {
            input
                .read_exact(&mut word)
                .map_err(|e| format!("truncated: {e}"))?;
            Ok(u64::from_le_bytes(word))
        };
        let count = next(&mut input)? as usize;
        if count == 0 || count > 1024 {
            return Err(format!("implausible layer count {count}"));
        }
        let mut sizes = Vec::with_capacity(count + 1);
        let mut activations = Vec::with_capacity(count);
        for i in 0..count {
            let inputs = next(&mut input)? as usize;
            let outputs = next(&mut input)? as usize;
            let code = next(&mut input)?;
            if i == 0 {
                sizes.push(inputs);
            } else if sizes[i] != inputs {
                return Err(format!("layer {i} input {inputs} does not match previous output {}", sizes[i]));
            }
            sizes.push(outputs);
            activations.push(
                Activation::from_code(code).ok_or_else(|| format!("unknown activation code {code}"))?,
            );
        }
        let mut net = Self::zeros(&sizes, &activations).map_err(|e| e.to_string())?;
        for p in net.params.iter_mut() {
            *p = f64::from_bits(next(&mut input)?);
        }
        let mut rest = Vec::new();
        input
            .read_to_end(&mut rest)
            .map_err(|e| format!("read failed: {e}"))?;
        if !rest.is_empty() {
            return Err(format!("{} trailing bytes", rest.len()));
        }
        if net.params.iter().any(|p| !p.is_finite()) {
            return Err("non-finite parameter".into());
        }
        Ok(net)
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    v.iter_mut().for_each(|x| *x /= total);
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut v = logits.to_vec();
    softmax_in_place(&mut v);
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(net: &DenseNet, lr: f64) -> Self {
        Self::with_betas(net, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(net: &DenseNet, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: vec![0.0; net.params.len()],
            v: vec![0.0; net.params.len()],
        }
    }

    /// One bias-corrected Adam descent step.
    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<()> {
        if grads.values.len() != net.params.len() || self.m.len() != net.params.len() {
            return Err(Error::DimensionMismatch {
                context: "adam step",
                expected: net.params.len(),
                found: grads.values.len(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in net
            .params
            .iter_mut()
            .zip(&grads.values)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    /// `lr, beta1, beta2, eps` as f64, `step` and moment length as u64, then
    /// the first and second moments; little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(48 + 16 * self.m.len());
        for x in [self.lr, self.beta1, self.beta2, self.eps] {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        buf.extend_from_slice(&self.step.to_le_bytes());
        buf.extend_from_slice(&(self.m.len() as u64).to_le_bytes());
        for x in self.m.iter().chain(&self.v) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let words: Vec<[u8; 8]> = bytes
            .chunks(8)
            .map(|c| c.try_into().map_err(|_| "length is not a multiple of 8".to_string()))
            .collect::<std::result::Result<_, _>>()?;
        if words.len() < 6 {
            return Err("truncated header".into());
        }
        let f = |i: usize| f64::from_le_bytes(words[i]);
        let len = u64::from_le_bytes(words[5]) as usize;
        if words.len() != 6 + 2 * len {
            return Err(format!("expected {} moment words, found {}", 2 * len, words.len() - 6));
        }
        Ok(Self {
            lr: f(0),
            beta1: f(1),
            beta2: f(2),
            eps: f(3),
            step: u64::from_le_bytes(words[4]),
            m: (6..6 + len).map(f).collect(),
            v: (6 + len..6 + 2 * len).map(f).collect(),
        })
    }
}
