//! Intrinsic information budgets: how much confident, task-relevant signal a
//! modality delivers on its own.
//!
//! Each modality gets an encoder–classifier pair trained in isolation. Its raw
//! budget `B_m` is the training-set mean of `1 - H(p_m)` (normalized entropy),
//! and the prior `β = softmax(B / τ)` ranks modalities; the top one is the
//! anchor.

use std::path::Path;

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::nn::{
    adam_step, argmax, cross_entropy_with_logits, entropy_normalized_slice, named_rng,
    softmax_in_place, softmax_temp, AdamConfig, AdamState, DenseNet, NetGrads,
};
use crate::report::{read_result_csv, CsvTable};

/// Frozen dataset-level prior over modality contributions.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetPrior {
    raw: Vec<f64>,
    beta: Vec<f64>,
    tau: f64,
    anchor: usize,
}

impl BudgetPrior {
    /// Builds a prior from an explicit weight vector. Used by ablations that
    /// replace the estimated budget (e.g. a uniform prior).
    pub fn with_beta(raw: Vec<f64>, beta: Vec<f64>, tau: f64) -> Result<Self> {
        validate_raw(&raw)?;
        if beta.len() != raw.len() {
            return Err(Error::invalid("β and B must have the same length"));
        }
        if beta.iter().any(|b| !b.is_finite() || *b < 0.0)
            || (beta.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::invalid("β must be a probability vector"));
        }
        if !(tau > 0.0) {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {tau}"
            )));
        }
        let anchor = argmax(&beta);
        Ok(Self {
            raw,
            beta,
            tau,
            anchor,
        })
    }

    /// Equal weight for every modality; keeps `raw` for reporting.
    pub fn uniform(raw: Vec<f64>, tau: f64) -> Result<Self> {
        let m = raw.len();
        Self::with_beta(raw, vec![1.0 / m as f64; m], tau)
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Modality with the largest β (lowest index on ties).
    pub fn anchor(&self) -> usize {
        self.anchor
    }

    pub fn modalities(&self) -> usize {
        self.beta.len()
    }

    /// Exact byte image of the prior, for immutability checks.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for v in self
            .raw
            .iter()
            .chain(&self.beta)
            .chain(std::iter::once(&self.tau))
        {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.anchor as u64).to_le_bytes());
        out
    }

    /// Budget report: one row per modality with `B`, `β`, and the anchor flag.
    pub fn to_table(&self) -> CsvTable {
        let mut t = CsvTable::new(&["modality", "budget", "beta", "anchor"]);
        for m in 0..self.modalities() {
            t.push(vec![
                m.to_string(),
                format!("{:?}", self.raw[m]),
                format!("{:?}", self.beta[m]),
                ((m == self.anchor) as u8).to_string(),
            ]);
        }
        t
    }

    pub fn save_csv(&self, path: &Path, meta: &KvMap) -> Result<()> {
        let mut meta = meta.clone();
        meta.set_f64("tau", self.tau);
        meta.set("anchor", self.anchor);
        self.to_table().write(path, &meta)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let (meta, table) = read_result_csv(path)?;
        let tau: f64 = meta.require("tau")?;
        let raw = table.column_f64("budget")?;
        let beta = table.column_f64("beta")?;
        let prior = Self::with_beta(raw, beta, tau)?;
        if meta.parse_value::<usize>("anchor")? != Some(prior.anchor) {
            return Err(Error::format("budget csv", "anchor does not match β"));
        }
        Ok(prior)
    }
}

fn validate_raw(raw: &[f64]) -> Result<()> {
    if raw.is_empty() {
        return Err(Error::invalid("budget needs at least one modality"));
    }
    if raw.iter().any(|b| !(0.0..=1.0).contains(b)) {
        return Err(Error::invalid(format!(
            "raw budgets must lie in [0, 1]: {raw:?}"
        )));
    }
    Ok(())
}

/// `β = softmax(B / τ)` with the anchor at `argmax β`.
pub fn normalize_budget(raw: &[f64], tau: f64) -> Result<BudgetPrior> {
    validate_raw(raw)?;
    let beta = softmax_temp(raw, tau)?.into_vec();
    let anchor = argmax(&beta);
    Ok(BudgetPrior {
        raw: raw.to_vec(),
        beta,
        tau,
        anchor,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub hidden: usize,
    pub feature_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            feature_dim: 16,
            epochs: 30,
            batch_size: 32,
            adam: AdamConfig::with_learning_rate(3e-4),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

/// Encoder `g_m` and classifier `f_m` trained on one modality alone.
#[derive(Debug, Clone, PartialEq)]
pub struct UnimodalPair {
    pub modality: usize,
    pub encoder: DenseNet,
    pub classifier: DenseNet,
    pub log: Vec<PretrainEpoch>,
}

impl UnimodalPair {
    pub fn predict_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.encoder.predict(x)?;
        let mut p = self.classifier.predict(&z)?;
        softmax_in_place(&mut p);
        Ok(p)
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        pair_accuracy(&self.encoder, &self.classifier, data, self.modality)
    }

    pub fn final_test_accuracy(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |e| e.test_acc)
    }

    pub fn log_table(&self) -> CsvTable {
        let mut t = CsvTable::new(&["modality", "epoch", "loss", "train_acc", "test_acc"]);
        for e in &self.log {
            t.push(vec![
                self.modality.to_string(),
                e.epoch.to_string(),
                format!("{:?}", e.loss),
                format!("{:?}", e.train_acc),
                format!("{:?}", e.test_acc),
            ]);
        }
        t
    }
}

fn pair_accuracy(
    encoder: &DenseNet,
    classifier: &DenseNet,
    data: &Dataset,
    modality: usize,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let mut hits = 0;
    for i in 0..data.len() {
        let logits = classifier.predict(&encoder.predict(data.input(modality, i))?)?;
        if argmax(&logits) == data.labels()[i] {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Trains `(g_m, f_m)` with cross-entropy for `config.epochs` epochs of
/// shuffled mini-batches.
pub fn pretrain_unimodal(
    train: &Dataset,
    test: &Dataset,
    modality: usize,
    config: &PretrainConfig,
) -> Result<UnimodalPair> {
    if modality >= train.modalities() || modality >= test.modalities() {
        return Err(Error::invalid(format!(
            "dataset has no modality {modality}"
        )));
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let dim = train.specs[modality].dim;
    let mut encoder = DenseNet::init(
        &[dim, config.hidden, config.feature_dim],
        &mut named_rng(config.seed, &format!("pretrain/encoder{modality}")),
    )?;
    let mut classifier = DenseNet::init(
        &[config.feature_dim, train.classes],
        &mut named_rng(config.seed, &format!("pretrain/classifier{modality}")),
    )?;
    let mut enc_opt = AdamState::new(config.adam, &encoder);
    let mut cls_opt = AdamState::new(config.adam, &classifier);
    let mut shuffle_rng = named_rng(config.seed, &format!("pretrain/shuffle{modality}"));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let x = train.inputs(modality);
    let labels = train.labels();

    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut g_enc = NetGrads::zeros_like(&encoder);
            let mut g_cls = NetGrads::zeros_like(&classifier);
            let scale = 1.0 / chunk.len() as f64;
            let mut batch_loss = 0.0;
            for &i in chunk {
                let (z, et) = encoder.forward(x.row(i))?;
                let (logits, ct) = classifier.forward(&z)?;
                let (ce, mut probs) = cross_entropy_with_logits(&logits, labels[i]);
                if argmax(&logits) == labels[i] {
                    hits += 1;
                }
                batch_loss += ce;
                probs[labels[i]] -= 1.0;
                probs.iter_mut().for_each(|g| *g *= scale);
                let dz = classifier.backward_into(&ct, &probs, &mut g_cls)?;
                encoder.backward_into(&et, &dz, &mut g_enc)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::PretrainDiverged {
                    modality,
                    epoch,
                    batch: b,
                    loss: batch_loss,
                });
            }
            loss_sum += batch_loss;
            adam_step(
                &mut encoder,
                &g_enc,
                &mut enc_opt,
                &format!("encoder{modality}"),
            )?;
            adam_step(
                &mut classifier,
                &g_cls,
                &mut cls_opt,
                &format!("classifier{modality}"),
            )?;
        }
        let test_acc = pair_accuracy(&encoder, &classifier, test, modality)?;
        log.push(PretrainEpoch {
            epoch,
            loss: loss_sum / train.len() as f64,
            train_acc: hits as f64 / train.len() as f64,
            test_acc,
        });
    }
    Ok(UnimodalPair {
        modality,
        encoder,
        classifier,
        log,
    })
}

/// `B_m = mean_i (1 - H(p_m(x_i)))` over `data`, one entry per pair.
pub fn estimate_budget(pairs: &[UnimodalPair], data: &Dataset) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::invalid(
            "cannot estimate budgets on an empty dataset",
        ));
    }
    if data.classes < 2 {
        return Err(Error::invalid(
            "normalized entropy needs at least two classes",
        ));
    }
    pairs
        .iter()
        .map(|pair| {
            if pair.modality >= data.modalities() {
                return Err(Error::invalid(format!(
                    "dataset has no modality {}",
                    pair.modality
                )));
            }
            let mut total = 0.0;
            for i in 0..data.len() {
                let p = pair.predict_probs(data.input(pair.modality, i))?;
                total += 1.0 - entropy_normalized_slice(&p);
            }
            Ok((total / data.len() as f64).clamp(0.0, 1.0))
        })
        .collect()
}
