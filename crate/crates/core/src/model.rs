//! Parameter container for the full pipeline and the shared per-batch
//! forward pass that both stage objectives consume.

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::nn::{
    cross_entropy_with_logits, fnv_mix, named_rng, Checkpoint, DenseNet, NetGrads, ParamSet, Tape,
};

/// Layer sizes of a [`MultimodalModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub input_dims: Vec<usize>,
    pub classes: usize,
    /// Width of the encoder hidden layer.
    pub hidden: usize,
    /// Encoder output dimension `d`, shared by all modalities.
    pub feature_dim: usize,
    pub gate_hidden: usize,
    /// Pooled statistics per modality fed to the gate (`d_p`).
    pub pool_dim: usize,
}

impl Architecture {
    pub fn modalities(&self) -> usize {
        self.input_dims.len()
    }

    pub fn gate_input_dim(&self) -> usize {
        let m = self.modalities();
        m + m * self.pool_dim
    }

    pub fn encoder_dims(&self, modality: usize) -> Vec<usize> {
        vec![self.input_dims[modality], self.hidden, self.feature_dim]
    }

    pub fn classifier_dims(&self) -> Vec<usize> {
        vec![self.feature_dim, self.classes]
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dims.is_empty() || self.input_dims.contains(&0) {
            return Err(Error::invalid(
                "every modality needs a positive input dimension",
            ));
        }
        if self.classes < 2 || self.hidden == 0 || self.feature_dim == 0 || self.gate_hidden == 0 {
            return Err(Error::invalid(
                "architecture sizes must be positive (and classes >= 2)",
            ));
        }
        if self.pool_dim == 0 || self.pool_dim > self.feature_dim {
            return Err(Error::invalid(format!(
                "pool dimension {} must lie in 1..={}",
                self.pool_dim, self.feature_dim
            )));
        }
        Ok(())
    }
}

/// Encoders `g_m`, unimodal classifiers `f_m`, fused head and gate network.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalModel {
    pub encoders: Vec<DenseNet>,
    pub classifiers: Vec<DenseNet>,
    pub fuse_head: DenseNet,
    pub gate: DenseNet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub encoders: Vec<NetGrads>,
    pub classifiers: Vec<NetGrads>,
    pub fuse_head: NetGrads,
    pub gate: NetGrads,
}

impl MultimodalModel {
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let m = arch.modalities();
        let encoders = (0..m)
            .map(|i| {
                DenseNet::init(
                    &arch.encoder_dims(i),
                    &mut named_rng(seed, &format!("init/encoder{i}")),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let classifiers = (0..m)
            .map(|i| {
                DenseNet::init(
                    &arch.classifier_dims(),
                    &mut named_rng(seed, &format!("init/classifier{i}")),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let fuse_head = DenseNet::init(
            &arch.classifier_dims(),
            &mut named_rng(seed, "init/fuse_head"),
        )?;
        let gate = DenseNet::init(
            &[arch.gate_input_dim(), arch.gate_hidden, m],
            &mut named_rng(seed, "init/gate"),
        )?;
        Ok(Self {
            encoders,
            classifiers,
            fuse_head,
            gate,
        })
    }

    pub fn modalities(&self) -> usize {
        self.encoders.len()
    }

    pub fn classes(&self) -> usize {
        self.fuse_head.output_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.fuse_head.input_dim()
    }

    pub fn pool_dim(&self) -> usize {
        let m = self.modalities();
        (self.gate.input_dim() - m) / m
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.encoders.iter().map(DenseNet::input_dim).collect()
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            encoders: self.encoders.iter().map(NetGrads::zeros_like).collect(),
            classifiers: self.classifiers.iter().map(NetGrads::zeros_like).collect(),
            fuse_head: NetGrads::zeros_like(&self.fuse_head),
            gate: NetGrads::zeros_like(&self.gate),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.all_finite()
    }

    /// Checks that every network chains with the others.
    pub fn validate(&self) -> Result<()> {
        let m = self.modalities();
        if m == 0 || self.classifiers.len() != m {
            return Err(Error::invalid(
                "model needs one encoder and one classifier per modality",
            ));
        }
        let d = self.feature_dim();
        let c = self.classes();
        for i in 0..m {
            if self.encoders[i].output_dim() != d || self.classifiers[i].input_dim() != d {
                return Err(Error::invalid(format!(
                    "modality {i} feature size differs from fused head input {d}"
                )));
            }
            if self.classifiers[i].output_dim() != c {
                return Err(Error::invalid(format!(
                    "classifier {i} has wrong class count"
                )));
            }
        }
        let gin = self.gate.input_dim();
        if self.gate.output_dim() != m
            || gin <= m
            || !(gin - m).is_multiple_of(m)
            || self.pool_dim() > d
        {
            return Err(Error::invalid(
                "gate network dimensions do not match the modality count",
            ));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut networks = Vec::new();
        for (i, e) in self.encoders.iter().enumerate() {
            networks.push((format!("encoder{i}"), e.clone()));
        }
        for (i, c) in self.classifiers.iter().enumerate() {
            networks.push((format!("classifier{i}"), c.clone()));
        }
        networks.push(("fuse_head".into(), self.fuse_head.clone()));
        networks.push(("gate".into(), self.gate.clone()));
        Checkpoint {
            networks,
            arrays: Vec::new(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let get = |name: &str| {
            ckpt.network(name)
                .cloned()
                .ok_or_else(|| Error::format("checkpoint", format!("missing network `{name}`")))
        };
        let m = ckpt
            .networks
            .iter()
            .filter(|(n, _)| n.starts_with("encoder"))
            .count();
        let model = Self {
            encoders: (0..m)
                .map(|i| get(&format!("encoder{i}")))
                .collect::<Result<_>>()?,
            classifiers: (0..m)
                .map(|i| get(&format!("classifier{i}")))
                .collect::<Result<_>>()?,
            fuse_head: get("fuse_head")?,
            gate: get("gate")?,
        };
        model.validate()?;
        Ok(model)
    }
}

impl ModelGrads {
    pub fn scale(&mut self, s: f64) {
        self.visit_blocks_mut(&mut |_, b| b.iter_mut().for_each(|v| *v *= s));
    }
}

fn visit_all(
    encoders: &[impl ParamSet],
    classifiers: &[impl ParamSet],
    fuse: &impl ParamSet,
    gate: &impl ParamSet,
    f: &mut dyn FnMut(&str, &[f64]),
) {
    for (i, e) in encoders.iter().enumerate() {
        e.visit_blocks(&mut |n, b| f(&format!("encoder{i}.{n}"), b));
    }
    for (i, c) in classifiers.iter().enumerate() {
        c.visit_blocks(&mut |n, b| f(&format!("classifier{i}.{n}"), b));
    }
    fuse.visit_blocks(&mut |n, b| f(&format!("fuse_head.{n}"), b));
    gate.visit_blocks(&mut |n, b| f(&format!("gate.{n}"), b));
}

fn visit_all_mut(
    encoders: &mut [impl ParamSet],
    classifiers: &mut [impl ParamSet],
    fuse: &mut impl ParamSet,
    gate: &mut impl ParamSet,
    f: &mut dyn FnMut(&str, &mut [f64]),
) {
    for (i, e) in encoders.iter_mut().enumerate() {
        e.visit_blocks_mut(&mut |n, b| f(&format!("encoder{i}.{n}"), b));
    }
    for (i, c) in classifiers.iter_mut().enumerate() {
        c.visit_blocks_mut(&mut |n, b| f(&format!("classifier{i}.{n}"), b));
    }
    fuse.visit_blocks_mut(&mut |n, b| f(&format!("fuse_head.{n}"), b));
    gate.visit_blocks_mut(&mut |n, b| f(&format!("gate.{n}"), b));
}

impl ParamSet for MultimodalModel {
    fn visit_blocks(&self, f: &mut dyn FnMut(&str, &[f64])) {
        visit_all(
            &self.encoders,
            &self.classifiers,
            &self.fuse_head,
            &self.gate,
            f,
        );
    }

    fn visit_blocks_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        visit_all_mut(
            &mut self.encoders,
            &mut self.classifiers,
            &mut self.fuse_head,
            &mut self.gate,
            f,
        );
    }
}

impl ParamSet for ModelGrads {
    fn visit_blocks(&self, f: &mut dyn FnMut(&str, &[f64])) {
        visit_all(
            &self.encoders,
            &self.classifiers,
            &self.fuse_head,
            &self.gate,
            f,
        );
    }

    fn visit_blocks_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        visit_all_mut(
            &mut self.encoders,
            &mut self.classifiers,
            &mut self.fuse_head,
            &mut self.gate,
            f,
        );
    }
}

/// Encoder and classifier activations of one modality over a batch.
#[derive(Debug, Clone)]
pub(crate) struct ModalityPass {
    pub enc_tapes: Vec<Tape>,
    pub cls_tapes: Vec<Tape>,
    /// Features `z_m`, one per sample.
    pub z: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
    /// Unimodal cross-entropy per sample.
    pub ce: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct BatchPass {
    pub labels: Vec<usize>,
    pub modalities: Vec<ModalityPass>,
}

impl BatchPass {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn signature(&self) -> u64 {
        let mut h = 0u64;
        for m in &self.modalities {
            for t in m.enc_tapes.iter().chain(&m.cls_tapes) {
                h = fnv_mix(h, t.relu_signature());
            }
        }
        h
    }
}

/// Upstream gradients at the modality level: `dL/dz_m` (direct paths) and
/// `dL/dlogits_m`, per sample.
#[derive(Debug, Clone)]
pub(crate) struct Upstream {
    pub dz: Vec<Vec<Vec<f64>>>,
    pub dlogits: Vec<Vec<Vec<f64>>>,
}

impl Upstream {
    pub fn zeros(model: &MultimodalModel, batch_len: usize) -> Self {
        let m = model.modalities();
        Self {
            dz: vec![vec![vec![0.0; model.feature_dim()]; batch_len]; m],
            dlogits: vec![vec![vec![0.0; model.classes()]; batch_len]; m],
        }
    }
}

pub(crate) fn check_batch(model: &MultimodalModel, batch: &Batch) -> Result<()> {
    if batch.modalities() != model.modalities() {
        return Err(Error::invalid(format!(
            "batch has {} modalities, model has {}",
            batch.modalities(),
            model.modalities()
        )));
    }
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    for (m, (x, enc)) in batch.inputs.iter().zip(&model.encoders).enumerate() {
        if x.cols() != enc.input_dim() {
            return Err(Error::invalid(format!(
                "modality {m} inputs have {} features, encoder expects {}",
                x.cols(),
                enc.input_dim()
            )));
        }
    }
    if let Some(y) = batch.labels.iter().find(|y| **y >= model.classes()) {
        return Err(Error::invalid(format!(
            "label {y} outside 0..{}",
            model.classes()
        )));
    }
    Ok(())
}

pub(crate) fn forward_batch(model: &MultimodalModel, batch: &Batch) -> Result<BatchPass> {
    check_batch(model, batch)?;
    let n = batch.len();
    let modalities = batch
        .inputs
        .iter()
        .zip(model.encoders.iter().zip(&model.classifiers))
        .map(|(x, (enc, cls))| {
            let mut pass = ModalityPass {
                enc_tapes: Vec::with_capacity(n),
                cls_tapes: Vec::with_capacity(n),
                z: Vec::with_capacity(n),
                probs: Vec::with_capacity(n),
                ce: Vec::with_capacity(n),
            };
            for (i, y) in batch.labels.iter().enumerate() {
                let (z, et) = enc.forward(x.row(i))?;
                let (logits, ct) = cls.forward(&z)?;
                let (ce, probs) = cross_entropy_with_logits(&logits, *y);
                pass.enc_tapes.push(et);
                pass.cls_tapes.push(ct);
                pass.z.push(z);
                pass.probs.push(probs);
                pass.ce.push(ce);
            }
            Ok(pass)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BatchPass {
        labels: batch.labels.clone(),
        modalities,
    })
}

/// Pushes modality-level upstream gradients through classifiers and encoders.
pub(crate) fn backprop_modalities(
    model: &MultimodalModel,
    pass: &BatchPass,
    upstream: &Upstream,
    grads: &mut ModelGrads,
) -> Result<()> {
    for (m, mp) in pass.modalities.iter().enumerate() {
        for i in 0..pass.len() {
            let mut dz = upstream.dz[m][i].clone();
            let dl = &upstream.dlogits[m][i];
            if dl.iter().any(|v| *v != 0.0) {
                let back = model.classifiers[m].backward_into(
                    &mp.cls_tapes[i],
                    dl,
                    &mut grads.classifiers[m],
                )?;
                dz.iter_mut().zip(&back).for_each(|(a, b)| *a += b);
            }
            if dz.iter().any(|v| *v != 0.0) {
                model.encoders[m].backward_into(&mp.enc_tapes[i], &dz, &mut grads.encoders[m])?;
            }
        }
    }
    Ok(())
}

/// Objective value with gradients for every parameter of the model.
#[derive(Debug, Clone)]
pub struct Objective {
    pub loss: f64,
    pub grads: ModelGrads,
    /// ReLU activation-pattern signature of the evaluation.
    pub signature: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_arch() -> Architecture {
        Architecture {
            input_dims: vec![3, 2],
            classes: 3,
            hidden: 5,
            feature_dim: 4,
            gate_hidden: 6,
            pool_dim: 2,
        }
    }

    #[test]
    fn init_shapes_and_checkpoint_round_trip() {
        let model = MultimodalModel::init(&tiny_arch(), 4).unwrap();
        assert_eq!(model.modalities(), 2);
        assert_eq!(model.classes(), 3);
        assert_eq!(model.pool_dim(), 2);
        assert_eq!(model.gate.input_dim(), 2 + 2 * 2);
        let back = MultimodalModel::from_checkpoint(
            &Checkpoint::from_bytes(&model.to_checkpoint().to_bytes()).unwrap(),
        )
        .unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn grads_and_params_share_layout() {
        let model = MultimodalModel::init(&tiny_arch(), 4).unwrap();
        assert_eq!(model.block_layout(), model.zero_grads().block_layout());
    }

    #[test]
    fn pool_dim_larger_than_features_is_rejected() {
        let arch = Architecture {
            pool_dim: 5,
            ..tiny_arch()
        };
        assert!(MultimodalModel::init(&arch, 0).is_err());
    }
}
