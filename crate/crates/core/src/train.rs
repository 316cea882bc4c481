//! Training orchestration: the annealed blend of both stages, the epoch loop
//! and inference.

use std::path::Path;

use rand::seq::SliceRandom;

use crate::align::{stage1_terms, AlignmentConfig, PrototypeBank, Stage1Value};
use crate::budget::{BudgetPrior, UnimodalPair};
use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::fusion::{
    check_fusion, stage2_terms, FusionConfig, FusionMode, FusionWeights, Stage2Value,
};
use crate::kv::KvMap;
use crate::model::{
    backprop_modalities, forward_batch, Architecture, BatchPass, MultimodalModel, Objective,
    Upstream,
};
use crate::nn::{
    adam_step, fnv_mix, named_rng, AdamConfig, AdamState, Checkpoint, Matrix,
    PredictiveDistribution,
};
use crate::report::CsvTable;

/// How the two stage objectives are weighted over epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// `λ(t) = λ_start (1 − t/T)` every epoch.
    Blended,
    /// Pure Stage I for the first `stage1_epochs` epochs, then pure Stage II.
    Sequential { stage1_epochs: usize },
}

impl std::fmt::Display for Schedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Schedule::Blended => write!(f, "blended"),
            Schedule::Sequential { stage1_epochs } => write!(f, "sequential:{stage1_epochs}"),
        }
    }
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "blended" {
            return Ok(Schedule::Blended);
        }
        s.strip_prefix("sequential:")
            .and_then(|k| k.parse().ok())
            .map(|stage1_epochs| Schedule::Sequential { stage1_epochs })
            .ok_or_else(|| {
                Error::invalid(format!("unknown schedule `{s}` (blended | sequential:<k>)"))
            })
    }
}

/// Source of the fusion weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionKind {
    /// Prior × uncertainty × gate.
    Gated,
    /// `w̃ = β` for every sample.
    Prior,
    /// `w̃ = 1/M` for every sample.
    Uniform,
}

impl std::fmt::Display for FusionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionKind::Gated => "gated",
            FusionKind::Prior => "prior",
            FusionKind::Uniform => "uniform",
        })
    }
}

impl std::str::FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gated" => Ok(FusionKind::Gated),
            "prior" => Ok(FusionKind::Prior),
            "uniform" => Ok(FusionKind::Uniform),
            _ => Err(Error::invalid(format!(
                "unknown fusion kind `{s}` (gated | prior | uniform)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Total epochs `T`.
    pub epochs: usize,
    pub lambda_start: f64,
    pub gamma: f64,
    pub batch_size: usize,
    /// Budget temperature `τ`.
    pub tau: f64,
    /// Prototype temperature `τ_p`.
    pub tau_p: f64,
    /// Prototype EMA momentum `ρ`.
    pub momentum: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub warm_start: bool,
    pub normalize_features: bool,
    pub detach_entropy: bool,
    pub schedule: Schedule,
    pub fusion: FusionKind,
    /// When false every `λ_m` is zero.
    pub alignment: bool,
    pub hidden: usize,
    pub feature_dim: usize,
    pub gate_hidden: usize,
    pub pool_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lambda_start: 0.8,
            gamma: 0.5,
            batch_size: 32,
            tau: 0.07,
            tau_p: 0.5,
            momentum: 0.9,
            adam: AdamConfig::default(),
            seed: 0,
            warm_start: true,
            normalize_features: true,
            detach_entropy: true,
            schedule: Schedule::Blended,
            fusion: FusionKind::Gated,
            alignment: true,
            hidden: 32,
            feature_dim: 16,
            gate_hidden: 16,
            pool_dim: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("at least one epoch required"));
        }
        if !(0.0..=1.0).contains(&self.lambda_start) {
            return Err(Error::invalid("lambda_start must lie in [0, 1]"));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::invalid("gamma must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        for (name, v) in [
            ("tau", self.tau),
            ("tau_p", self.tau_p),
            ("learning_rate", self.adam.learning_rate),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if let Schedule::Sequential { stage1_epochs } = self.schedule {
            if stage1_epochs > self.epochs {
                return Err(Error::invalid("sequential Stage I epochs exceed the total"));
            }
        }
        Ok(())
    }

    pub fn architecture(&self, input_dims: Vec<usize>, classes: usize) -> Architecture {
        Architecture {
            input_dims,
            classes,
            hidden: self.hidden,
            feature_dim: self.feature_dim,
            gate_hidden: self.gate_hidden,
            pool_dim: self.pool_dim,
        }
    }

    /// Stage-blend weight for epoch `t` (0-based).
    pub fn lambda_at(&self, t: usize) -> Result<f64> {
        match self.schedule {
            Schedule::Blended => schedule_lambda(t, self.epochs, self.lambda_start),
            Schedule::Sequential { stage1_epochs } => {
                if t > self.epochs {
                    return Err(Error::invalid(format!(
                        "epoch {t} beyond T = {}",
                        self.epochs
                    )));
                }
                Ok(if t < stage1_epochs { 1.0 } else { 0.0 })
            }
        }
    }

    pub fn fusion_config(&self, prior: &BudgetPrior) -> FusionConfig {
        let mode = match self.fusion {
            FusionKind::Gated => FusionMode::Gated,
            FusionKind::Prior => FusionMode::Fixed(prior.beta().to_vec()),
            FusionKind::Uniform => {
                let m = prior.modalities();
                FusionMode::Fixed(vec![1.0 / m as f64; m])
            }
        };
        FusionConfig {
            mode,
            gamma: self.gamma,
            detach_entropy: self.detach_entropy,
        }
    }

    pub fn alignment_config(&self, prior: &BudgetPrior) -> Result<AlignmentConfig> {
        let cfg = AlignmentConfig::from_prior(prior, self.tau_p, self.normalize_features)?;
        Ok(if self.alignment { cfg } else { cfg.disabled() })
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("epochs", self.epochs);
        kv.set_f64("lambda_start", self.lambda_start);
        kv.set_f64("gamma", self.gamma);
        kv.set("batch_size", self.batch_size);
        kv.set_f64("tau", self.tau);
        kv.set_f64("tau_p", self.tau_p);
        kv.set_f64("momentum", self.momentum);
        kv.set_f64("learning_rate", self.adam.learning_rate);
        kv.set_f64("adam_beta1", self.adam.beta1);
        kv.set_f64("adam_beta2", self.adam.beta2);
        kv.set_f64("adam_epsilon", self.adam.epsilon);
        kv.set("seed", self.seed);
        kv.set("warm_start", self.warm_start);
        kv.set("normalize_features", self.normalize_features);
        kv.set("detach_entropy", self.detach_entropy);
        kv.set("schedule", self.schedule);
        kv.set("fusion", self.fusion);
        kv.set("alignment", self.alignment);
        kv.set("hidden", self.hidden);
        kv.set("feature_dim", self.feature_dim);
        kv.set("gate_hidden", self.gate_hidden);
        kv.set("pool_dim", self.pool_dim);
        kv
    }

    /// Overrides every field named in `kv`; other keys are ignored.
    pub fn apply_kv(&mut self, kv: &KvMap) -> Result<()> {
        fn set<T: std::str::FromStr>(kv: &KvMap, key: &str, slot: &mut T) -> Result<()> {
            if let Some(v) = kv.parse_value(key)? {
                *slot = v;
            }
            Ok(())
        }
        set(kv, "epochs", &mut self.epochs)?;
        set(kv, "lambda_start", &mut self.lambda_start)?;
        set(kv, "gamma", &mut self.gamma)?;
        set(kv, "batch_size", &mut self.batch_size)?;
        set(kv, "tau", &mut self.tau)?;
        set(kv, "tau_p", &mut self.tau_p)?;
        set(kv, "momentum", &mut self.momentum)?;
        set(kv, "learning_rate", &mut self.adam.learning_rate)?;
        set(kv, "adam_beta1", &mut self.adam.beta1)?;
        set(kv, "adam_beta2", &mut self.adam.beta2)?;
        set(kv, "adam_epsilon", &mut self.adam.epsilon)?;
        set(kv, "seed", &mut self.seed)?;
        set(kv, "warm_start", &mut self.warm_start)?;
        set(kv, "normalize_features", &mut self.normalize_features)?;
        set(kv, "detach_entropy", &mut self.detach_entropy)?;
        if let Some(s) = kv.get("schedule") {
            self.schedule = s.parse()?;
        }
        if let Some(s) = kv.get("fusion") {
            self.fusion = s.parse()?;
        }
        set(kv, "alignment", &mut self.alignment)?;
        set(kv, "hidden", &mut self.hidden)?;
        set(kv, "feature_dim", &mut self.feature_dim)?;
        set(kv, "gate_hidden", &mut self.gate_hidden)?;
        set(kv, "pool_dim", &mut self.pool_dim)?;
        Ok(())
    }

    pub const KEYS: &'static [&'static str] = &[
        "epochs",
        "lambda_start",
        "gamma",
        "batch_size",
        "tau",
        "tau_p",
        "momentum",
        "learning_rate",
        "adam_beta1",
        "adam_beta2",
        "adam_epsilon",
        "seed",
        "warm_start",
        "normalize_features",
        "detach_entropy",
        "schedule",
        "fusion",
        "alignment",
        "hidden",
        "feature_dim",
        "gate_hidden",
        "pool_dim",
    ];
}

/// `λ(t) = λ_start (1 − t/T)` for `0 ≤ t ≤ T`.
pub fn schedule_lambda(t: usize, total: usize, lambda_start: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::invalid("T must be at least 1"));
    }
    if t > total {
        return Err(Error::invalid(format!("epoch {t} beyond T = {total}")));
    }
    Ok(lambda_start * (1.0 - t as f64 / total as f64))
}

/// Both stage values and their blend on one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalValue {
    pub lambda: f64,
    pub total: f64,
    pub stage1: Stage1Value,
    pub stage2: Stage2Value,
}

/// `L = λ L_I + (1 − λ) L_II` on one batch, with the bank held constant.
pub fn total_loss(
    model: &MultimodalModel,
    batch: &Batch,
    bank: &PrototypeBank,
    prior: &BudgetPrior,
    lambda: f64,
    align: &AlignmentConfig,
    fusion: &FusionConfig,
) -> Result<(Objective, TotalValue)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!(
            "blend weight {lambda} outside [0, 1]"
        )));
    }
    check_fusion(model, prior.beta(), fusion)?;
    let pass = forward_batch(model, batch)?;
    total_from_pass(model, &pass, bank, prior.beta(), lambda, align, fusion)
}

fn total_from_pass(
    model: &MultimodalModel,
    pass: &BatchPass,
    bank: &PrototypeBank,
    beta: &[f64],
    lambda: f64,
    align: &AlignmentConfig,
    fusion: &FusionConfig,
) -> Result<(Objective, TotalValue)> {
    let mut upstream = Upstream::zeros(model, pass.len());
    let mut grads = model.zero_grads();
    let stage1 = stage1_terms(pass, bank, align, lambda, &mut upstream)?;
    let stage2 = stage2_terms(
        model,
        pass,
        beta,
        fusion,
        1.0 - lambda,
        &mut upstream,
        &mut grads,
    )?;
    backprop_modalities(model, pass, &upstream, &mut grads)?;
    let total = lambda * stage1.loss + (1.0 - lambda) * stage2.loss;
    Ok((
        Objective {
            loss: total,
            grads,
            signature: fnv_mix(pass.signature(), stage2.gate_signature),
        },
        TotalValue {
            lambda,
            total,
            stage1,
            stage2,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lambda: f64,
    /// Batch means of each objective.
    pub stage1: f64,
    pub stage2: f64,
    pub total: f64,
    /// Fused accuracy over the epoch's training batches.
    pub train_acc: f64,
    /// Fused test accuracy after the epoch (NaN without a test split).
    pub test_acc: f64,
    pub modality_acc: Vec<f64>,
    pub mean_weights: Vec<f64>,
}

pub fn log_table(log: &[EpochLog]) -> CsvTable {
    let m = log.first().map_or(0, |e| e.modality_acc.len());
    let mut header = vec![
        "epoch",
        "lambda",
        "loss_stage1",
        "loss_stage2",
        "loss_total",
        "train_acc",
        "test_acc",
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    header.extend((0..m).map(|k| format!("acc_modality{k}")));
    header.extend((0..m).map(|k| format!("weight{k}")));
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = CsvTable::new(&refs);
    for e in log {
        let mut row = vec![
            e.epoch.to_string(),
            format!("{:?}", e.lambda),
            format!("{:?}", e.stage1),
            format!("{:?}", e.stage2),
            format!("{:?}", e.total),
            format!("{:?}", e.train_acc),
            format!("{:?}", e.test_acc),
        ];
        row.extend(e.modality_acc.iter().map(|v| format!("{v:?}")));
        row.extend(e.mean_weights.iter().map(|v| format!("{v:?}")));
        t.push(row);
    }
    t
}

/// Full pipeline state after training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: MultimodalModel,
    pub bank: PrototypeBank,
    pub prior: BudgetPrior,
    pub log: Vec<EpochLog>,
    pub config: TrainConfig,
}

/// Prediction for one multimodal sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub prediction: usize,
    pub weights: FusionWeights,
    pub probs: Vec<PredictiveDistribution>,
    pub fused: PredictiveDistribution,
}

impl TrainedModel {
    pub fn fusion_config(&self) -> FusionConfig {
        self.config.fusion_config(&self.prior)
    }

    /// Fusion details for every sample of `data`, in order.
    pub fn fuse_dataset(&self, data: &Dataset) -> Result<Stage2Value> {
        crate::fusion::fuse_batch(
            &self.model,
            &data.full_batch(),
            self.prior.beta(),
            &self.fusion_config(),
        )
    }

    pub fn infer(&self, inputs: &[Vec<f64>]) -> Result<Inference> {
        infer(&self.model, &self.prior, &self.fusion_config(), inputs)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = self.model.to_checkpoint();
        let (protos, mask) = self.bank.to_arrays();
        let row = |v: &[f64]| Matrix::from_vec(1, v.len(), v.to_vec()).expect("row vector");
        ckpt.arrays.push(("bank.prototypes".into(), protos));
        ckpt.arrays.push(("bank.initialized".into(), mask));
        ckpt.arrays
            .push(("bank.momentum".into(), row(&[self.bank.momentum()])));
        ckpt.arrays
            .push(("prior.raw".into(), row(self.prior.raw())));
        ckpt.arrays
            .push(("prior.beta".into(), row(self.prior.beta())));
        ckpt.arrays
            .push(("prior.tau".into(), row(&[self.prior.tau()])));
        ckpt
    }

    pub fn save(&self, checkpoint: &Path) -> Result<()> {
        self.checkpoint().save(checkpoint)
    }

    /// Restores a model saved with [`TrainedModel::save`]. The training log is
    /// not part of the checkpoint and comes back empty.
    pub fn load(checkpoint: &Path, config: TrainConfig) -> Result<Self> {
        let ckpt = Checkpoint::load(checkpoint)?;
        let model = MultimodalModel::from_checkpoint(&ckpt)?;
        let array = |name: &str| {
            ckpt.array(name)
                .ok_or_else(|| Error::format("checkpoint", format!("missing array `{name}`")))
        };
        let mask = array("bank.initialized")?
            .as_slice()
            .iter()
            .map(|v| *v != 0.0)
            .collect();
        let bank = PrototypeBank::from_parts(
            array("bank.prototypes")?.clone(),
            array("bank.momentum")?.get(0, 0),
            mask,
        )?;
        let prior = BudgetPrior::with_beta(
            array("prior.raw")?.as_slice().to_vec(),
            array("prior.beta")?.as_slice().to_vec(),
            array("prior.tau")?.get(0, 0),
        )?;
        Ok(Self {
            model,
            bank,
            prior,
            log: Vec::new(),
            config,
        })
    }
}

/// Runs the fused pipeline on one sample (one input vector per modality).
pub fn infer(
    model: &MultimodalModel,
    prior: &BudgetPrior,
    fusion: &FusionConfig,
    inputs: &[Vec<f64>],
) -> Result<Inference> {
    if inputs.len() != model.modalities() {
        return Err(Error::invalid("one input vector per modality required"));
    }
    let batch = Batch {
        labels: vec![0],
        inputs: inputs
            .iter()
            .map(|x| Matrix::from_vec(1, x.len(), x.clone()))
            .collect::<Result<_>>()?,
    };
    check_fusion(model, prior.beta(), fusion)?;
    let pass = forward_batch(model, &batch)?;
    let mut upstream = Upstream::zeros(model, 1);
    let mut grads = model.zero_grads();
    let value = stage2_terms(
        model,
        &pass,
        prior.beta(),
        fusion,
        0.0,
        &mut upstream,
        &mut grads,
    )?;
    let s = value.samples.into_iter().next().expect("one sample");
    Ok(Inference {
        prediction: s.prediction,
        weights: s.weights,
        probs: pass
            .modalities
            .iter()
            .map(|mp| PredictiveDistribution::new(mp.probs[0].clone()))
            .collect::<Result<_>>()?,
        fused: PredictiveDistribution::new(s.fused_probs)?,
    })
}

/// Accuracy of each modality's own classifier and of the fused prediction,
/// plus mean fusion weights.
pub(crate) struct QuickEval {
    pub fused_acc: f64,
    pub modality_acc: Vec<f64>,
    pub mean_weights: Vec<f64>,
}

pub(crate) fn quick_eval(
    model: &MultimodalModel,
    data: &Dataset,
    beta: &[f64],
    fusion: &FusionConfig,
) -> Result<QuickEval> {
    let batch = data.full_batch();
    let pass = forward_batch(model, &batch)?;
    let mut upstream = Upstream::zeros(model, pass.len());
    let mut grads = model.zero_grads();
    let value = stage2_terms(model, &pass, beta, fusion, 0.0, &mut upstream, &mut grads)?;
    let n = data.len() as f64;
    let labels = data.labels();
    let fused_acc = value
        .samples
        .iter()
        .zip(labels)
        .filter(|(s, y)| s.prediction == **y)
        .count() as f64
        / n;
    let modality_acc = pass
        .modalities
        .iter()
        .map(|mp| {
            mp.probs
                .iter()
                .zip(labels)
                .filter(|(p, y)| crate::nn::argmax(p) == **y)
                .count() as f64
                / n
        })
        .collect();
    let mut mean_weights = vec![0.0; model.modalities()];
    for s in &value.samples {
        mean_weights
            .iter_mut()
            .zip(&s.weights.weights)
            .for_each(|(a, w)| *a += w / n);
    }
    Ok(QuickEval {
        fused_acc,
        modality_acc,
        mean_weights,
    })
}

/// Builds the initial model, copying pretrained encoders and classifiers when
/// the config asks for a warm start.
pub fn initial_model(
    arch: &Architecture,
    config: &TrainConfig,
    pretrained: Option<&[UnimodalPair]>,
) -> Result<MultimodalModel> {
    let mut model = MultimodalModel::init(arch, config.seed)?;
    if config.warm_start {
        let pairs = pretrained
            .ok_or_else(|| Error::invalid("warm start requires pretrained unimodal pairs"))?;
        if pairs.len() != model.modalities() {
            return Err(Error::invalid("one pretrained pair per modality required"));
        }
        for pair in pairs {
            let m = pair.modality;
            if m >= model.modalities()
                || pair.encoder.dims() != model.encoders[m].dims()
                || pair.classifier.dims() != model.classifiers[m].dims()
            {
                return Err(Error::invalid(format!(
                    "pretrained pair for modality {m} does not match the architecture"
                )));
            }
            model.encoders[m] = pair.encoder.clone();
            model.classifiers[m] = pair.classifier.clone();
        }
    }
    Ok(model)
}

/// Trains the full pipeline for `config.epochs` epochs. The prior is only
/// read; the returned model carries an identical copy.
pub fn train(
    train_data: &Dataset,
    test_data: Option<&Dataset>,
    prior: &BudgetPrior,
    config: &TrainConfig,
    pretrained: Option<&[UnimodalPair]>,
) -> Result<TrainedModel> {
    config.validate()?;
    if train_data.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if prior.modalities() != train_data.modalities() {
        return Err(Error::invalid(
            "prior does not match the dataset's modalities",
        ));
    }
    let arch = config.architecture(
        train_data.specs.iter().map(|s| s.dim).collect(),
        train_data.classes,
    );
    arch.validate()?;
    let mut model = initial_model(&arch, config, pretrained)?;
    let mut bank = PrototypeBank::new(train_data.classes, config.feature_dim, config.momentum)?;
    let align = config.alignment_config(prior)?;
    let fusion = config.fusion_config(prior);
    check_fusion(&model, prior.beta(), &fusion)?;
    let mut opt = AdamState::new(config.adam, &model);
    let mut shuffle_rng = named_rng(config.seed, "train/shuffle");
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lambda = config.lambda_at(epoch)?;
        order.shuffle(&mut shuffle_rng);
        let (mut s1, mut s2, mut tot) = (0.0, 0.0, 0.0);
        let mut hits = 0usize;
        let n_batches = order.len().div_ceil(config.batch_size);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = train_data.batch(chunk);
            let pass = forward_batch(&model, &batch)?;
            if lambda > 0.0 {
                bank.ema_update(&pass.modalities[align.anchor].z, &pass.labels)?;
            }
            let (obj, value) =
                total_from_pass(&model, &pass, &bank, prior.beta(), lambda, &align, &fusion)?;
            if !obj.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss: obj.loss,
                    last_good: Box::new(model),
                });
            }
            let before = model.clone();
            if let Err(e) = adam_step(&mut model, &obj.grads, &mut opt, "model") {
                return Err(match e {
                    Error::NonFiniteGradient { .. } => Error::Diverged {
                        epoch,
                        batch: b,
                        loss: obj.loss,
                        last_good: Box::new(before),
                    },
                    other => other,
                });
            }
            s1 += value.stage1.loss;
            s2 += value.stage2.loss;
            tot += value.total;
            hits += value
                .stage2
                .samples
                .iter()
                .zip(&batch.labels)
                .filter(|(s, y)| s.prediction == **y)
                .count();
        }
        let nb = n_batches as f64;
        let (test_acc, modality_acc, mean_weights) = match test_data {
            Some(test) => {
                let q = quick_eval(&model, test, prior.beta(), &fusion)?;
                (q.fused_acc, q.modality_acc, q.mean_weights)
            }
            None => (
                f64::NAN,
                vec![f64::NAN; model.modalities()],
                vec![f64::NAN; model.modalities()],
            ),
        };
        log.push(EpochLog {
            epoch,
            lambda,
            stage1: s1 / nb,
            stage2: s2 / nb,
            total: tot / nb,
            train_acc: hits as f64 / train_data.len() as f64,
            test_acc,
            modality_acc,
            mean_weights,
        });
    }
    if !model.is_finite() {
        return Err(Error::invalid("training produced non-finite parameters"));
    }
    Ok(TrainedModel {
        model,
        bank,
        prior: prior.clone(),
        log,
        config: config.clone(),
    })
}
