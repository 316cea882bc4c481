use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::matrix::Matrix;
use super::params::ParamSet;
use crate::error::{Error, Result};

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 1,
            Activation::Identity => 0,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::invalid(format!(
                "bias length {} does not match weight rows {}",
                bias.len(),
                weight.rows()
            )));
        }
        if !bias.iter().all(|b| b.is_finite()) || !weight.is_finite() {
            return Err(Error::invalid("layer parameters must be finite"));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Fully connected feed-forward network.
///
/// Every parameter mutation goes through [`ParamSet::visit_blocks_mut`] (or a
/// constructor), which assigns a fresh stamp; tapes remember the stamp they
/// were recorded under; replaying a stale tape is rejected.
#[derive(Debug, Clone)]
pub struct DenseNet {
    layers: Vec<Layer>,
    stamp: u64,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Activation record of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    stamp: u64,
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Tape {
    /// Hash of the on/off pattern of every ReLU unit. Two evaluations with the
    /// same signature lie in the same linear region of the network.
    pub fn relu_signature(&self) -> u64 {
        let mut h = FNV_OFFSET;
        for pre in &self.pre {
            for chunk in pre.chunks(64) {
                let mut bits = 0u64;
                for (i, v) in chunk.iter().enumerate() {
                    if *v > 0.0 {
                        bits |= 1 << i;
                    }
                }
                h = fnv_mix(h, bits);
            }
        }
        h
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

pub(crate) fn fnv_mix(h: u64, v: u64) -> u64 {
    let mut h = h;
    for b in v.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Gradients with the same layout as a [`DenseNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl NetGrads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.visit_blocks_mut(&mut |_, block| block.iter_mut().for_each(|v| *v *= s));
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, other: &NetGrads, s: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.as_mut_slice().iter_mut().zip(b.weight.as_slice()) {
                *x += s * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += s * y;
            }
        }
    }
}

impl ParamSet for NetGrads {
    fn visit_blocks(&self, f: &mut dyn FnMut(&str, &[f64])) {
        for (i, l) in self.layers.iter().enumerate() {
            f(&format!("layer{i}.weight"), l.weight.as_slice());
            f(&format!("layer{i}.bias"), &l.bias);
        }
    }

    fn visit_blocks_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            f(&format!("layer{i}.weight"), l.weight.as_mut_slice());
            f(&format!("layer{i}.bias"), &mut l.bias);
        }
    }
}

impl DenseNet {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::invalid(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        Ok(Self {
            layers,
            stamp: fresh_stamp(),
        })
    }

    /// Scaled-uniform initialization: weights drawn from
    /// `U(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out)))`, zero biases.
    /// Hidden layers use ReLU, the output layer is linear.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid(format!("bad layer dimensions {dims:?}")));
        }
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..=limit))
                    .collect();
                let activation = if i + 1 < n {
                    Activation::Relu
                } else {
                    Activation::Identity
                };
                Layer {
                    weight: Matrix::from_vec(fan_out, fan_in, data).expect("shape is consistent"),
                    bias: vec![0.0; fan_out],
                    activation,
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// `[input_dim, out_0, out_1, ...]`
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::output_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.rows() * l.weight.cols() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    /// Output only, without recording a tape.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for layer in &self.layers {
            let mut out = vec![0.0; layer.output_dim()];
            layer.weight.affine_into(&x, &layer.bias, &mut out);
            if layer.activation == Activation::Relu {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            x = out;
        }
        Ok(x)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for layer in &self.layers {
            let mut z = vec![0.0; layer.output_dim()];
            layer.weight.affine_into(&x, &layer.bias, &mut z);
            let out = match layer.activation {
                Activation::Relu => z.iter().map(|v| v.max(0.0)).collect(),
                Activation::Identity => z.clone(),
            };
            inputs.push(x);
            pre.push(z);
            x = out;
        }
        Ok((
            x,
            Tape {
                stamp: self.stamp,
                inputs,
                pre,
            },
        ))
    }

    /// Reverse pass returning fresh parameter gradients and the gradient with
    /// respect to the input.
    pub fn backward(&self, tape: &Tape, output_grad: &[f64]) -> Result<(NetGrads, Vec<f64>)> {
        let mut grads = NetGrads::zeros_like(self);
        let input_grad = self.backward_into(tape, output_grad, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// Reverse pass that accumulates parameter gradients into `grads`.
    pub fn backward_into(
        &self,
        tape: &Tape,
        output_grad: &[f64],
        grads: &mut NetGrads,
    ) -> Result<Vec<f64>> {
        if tape.stamp != self.stamp || tape.pre.len() != self.layers.len() {
            return Err(Error::invalid(
                "tape was not recorded by this network's current parameters",
            ));
        }
        if output_grad.len() != self.output_dim() {
            return Err(Error::invalid(format!(
                "output gradient has length {}, expected {}",
                output_grad.len(),
                self.output_dim()
            )));
        }
        let mut g = output_grad.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                for (gv, z) in g.iter_mut().zip(&tape.pre[i]) {
                    if *z <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            let lg = &mut grads.layers[i];
            lg.weight.add_outer(&g, &tape.inputs[i]);
            lg.bias.iter_mut().zip(&g).for_each(|(b, gv)| *b += gv);
            let mut prev = vec![0.0; layer.input_dim()];
            layer.weight.transpose_mul_acc(&g, &mut prev);
            g = prev;
        }
        Ok(g)
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        Ok(())
    }
}

impl ParamSet for DenseNet {
    fn visit_blocks(&self, f: &mut dyn FnMut(&str, &[f64])) {
        for (i, l) in self.layers.iter().enumerate() {
            f(&format!("layer{i}.weight"), l.weight.as_slice());
            f(&format!("layer{i}.bias"), &l.bias);
        }
    }

    fn visit_blocks_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.stamp = fresh_stamp();
        for (i, l) in self.layers.iter_mut().enumerate() {
            f(&format!("layer{i}.weight"), l.weight.as_mut_slice());
            f(&format!("layer{i}.bias"), &mut l.bias);
        }
    }
}
