//! Independent scalar re-implementations used as oracles by the integration
//! tests. Nothing here calls the library's loss or fusion code.

#![allow(dead_code)]

use iibalance::align::PrototypeBank;
use iibalance::data::Batch;
use iibalance::model::MultimodalModel;
use iibalance::nn::{Activation, DenseNet};

pub fn net(net: &DenseNet, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for layer in net.layers() {
        let mut out = Vec::with_capacity(layer.output_dim());
        for r in 0..layer.output_dim() {
            let mut acc = layer.bias[r];
            for (c, v) in h.iter().enumerate() {
                acc += layer.weight.get(r, c) * v;
            }
            out.push(match layer.activation {
                Activation::Relu => acc.max(0.0),
                Activation::Identity => acc,
            });
        }
        h = out;
    }
    h
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn ce(logits: &[f64], y: usize) -> f64 {
    -softmax(logits)[y].ln()
}

pub fn entropy(p: &[f64]) -> f64 {
    let h: f64 = p.iter().filter(|v| **v > 0.0).map(|v| -v * v.ln()).sum();
    (h / (p.len() as f64).ln()).clamp(0.0, 1.0)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn pool(z: &[f64], d_p: usize) -> Vec<f64> {
    let w = z.len() / d_p;
    assert_eq!(
        w * d_p,
        z.len(),
        "oracle pools evenly divisible features only"
    );
    z.chunks(w)
        .map(|c| c.iter().sum::<f64>() / w as f64)
        .collect()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn pra(
    z: &[Vec<f64>],
    labels: &[usize],
    bank: &PrototypeBank,
    tau_p: f64,
    normalize: bool,
) -> f64 {
    let protos: Vec<Vec<f64>> = (0..bank.classes())
        .map(|c| {
            let p = bank.prototype(c);
            if normalize {
                unit(p)
            } else {
                p.to_vec()
            }
        })
        .collect();
    let mut total = 0.0;
    for (zi, &y) in z.iter().zip(labels) {
        let h = if normalize { unit(zi) } else { zi.clone() };
        let logits: Vec<f64> = protos
            .iter()
            .map(|p| h.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() / tau_p)
            .collect();
        total += ce(&logits, y);
    }
    total / z.len() as f64
}

pub struct SampleTrace {
    pub z: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
    pub u: Vec<f64>,
}

pub fn trace(model: &MultimodalModel, inputs: &[&[f64]]) -> SampleTrace {
    let z: Vec<Vec<f64>> = model
        .encoders
        .iter()
        .zip(inputs)
        .map(|(e, x)| net(e, x))
        .collect();
    let logits: Vec<Vec<f64>> = model
        .classifiers
        .iter()
        .zip(&z)
        .map(|(c, v)| net(c, v))
        .collect();
    let probs: Vec<Vec<f64>> = logits.iter().map(|l| softmax(l)).collect();
    let u = probs.iter().map(|p| entropy(p)).collect();
    SampleTrace {
        z,
        logits,
        probs,
        u,
    }
}

pub fn sample_inputs(batch: &Batch, i: usize) -> Vec<&[f64]> {
    batch.inputs.iter().map(|x| x.row(i)).collect()
}

pub fn features(model: &MultimodalModel, batch: &Batch, m: usize) -> Vec<Vec<f64>> {
    (0..batch.len())
        .map(|i| net(&model.encoders[m], batch.inputs[m].row(i)))
        .collect()
}

/// Mean summed unimodal CE plus `Σ λ_m PRA_m` against a constant bank.
pub fn stage1(
    model: &MultimodalModel,
    batch: &Batch,
    bank: &PrototypeBank,
    lambdas: &[f64],
    tau_p: f64,
    normalize: bool,
) -> f64 {
    let n = batch.len();
    let mut loss = 0.0;
    for i in 0..n {
        let t = trace(model, &sample_inputs(batch, i));
        loss += t.logits.iter().map(|l| ce(l, batch.labels[i])).sum::<f64>() / n as f64;
    }
    for (m, &l) in lambdas.iter().enumerate() {
        if l != 0.0 {
            loss += l * pra(
                &features(model, batch, m),
                &batch.labels,
                bank,
                tau_p,
                normalize,
            );
        }
    }
    loss
}

pub fn gated_weights(
    model: &MultimodalModel,
    t: &SampleTrace,
    beta: &[f64],
    u: &[f64],
    d_p: usize,
) -> Vec<f64> {
    let mut phi = u.to_vec();
    for z in &t.z {
        phi.extend(pool(z, d_p));
    }
    let g = net(&model.gate, &phi);
    let alpha: Vec<f64> = (0..beta.len())
        .map(|m| beta[m] * (-u[m]).exp() * sigmoid(g[m]))
        .collect();
    let s: f64 = alpha.iter().sum();
    if s > 0.0 {
        alpha.iter().map(|a| a / s).collect()
    } else {
        beta.to_vec()
    }
}

/// Fused CE plus `γ Σ w̃_m CE_m`, averaged over the batch. `frozen_u` replaces
/// the computed uncertainties; `fixed` replaces the gate entirely.
pub fn stage2(
    model: &MultimodalModel,
    batch: &Batch,
    beta: &[f64],
    gamma: f64,
    d_p: usize,
    frozen_u: Option<&[Vec<f64>]>,
    fixed: Option<&[f64]>,
) -> f64 {
    let n = batch.len();
    let mut loss = 0.0;
    for i in 0..n {
        let y = batch.labels[i];
        let t = trace(model, &sample_inputs(batch, i));
        let u = frozen_u
            .map(|f| f[i].clone())
            .unwrap_or_else(|| t.u.clone());
        let w = match fixed {
            Some(w) => w.to_vec(),
            None => gated_weights(model, &t, beta, &u, d_p),
        };
        let mut fused = vec![0.0; t.z[0].len()];
        for (wm, z) in w.iter().zip(&t.z) {
            fused.iter_mut().zip(z).for_each(|(a, b)| *a += wm * b);
        }
        let aux: f64 = w.iter().zip(&t.logits).map(|(wm, l)| wm * ce(l, y)).sum();
        loss += (ce(&net(&model.fuse_head, &fused), y) + gamma * aux) / n as f64;
    }
    loss
}

pub fn uncertainties(model: &MultimodalModel, batch: &Batch) -> Vec<Vec<f64>> {
    (0..batch.len())
        .map(|i| trace(model, &sample_inputs(batch, i)).u)
        .collect()
}
