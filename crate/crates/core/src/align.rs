//! Stage I: anchor-modality class prototypes and prototype-guided relative
//! alignment (PRA) of the weaker modalities.

use crate::budget::BudgetPrior;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::{
    backprop_modalities, forward_batch, BatchPass, MultimodalModel, Objective, Upstream,
};
use crate::nn::{cross_entropy_with_logits, Matrix};

/// Below this norm a vector is treated as having norm `NORM_FLOOR` when
/// L2-normalizing.
pub const NORM_FLOOR: f64 = 1e-12;

/// EMA-tracked class means of the anchor modality's features.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    prototypes: Matrix,
    momentum: f64,
    initialized: Vec<bool>,
}

impl PrototypeBank {
    pub fn new(classes: usize, dim: usize, momentum: f64) -> Result<Self> {
        if classes == 0 || dim == 0 {
            return Err(Error::invalid(
                "prototype bank needs at least one class and dimension",
            ));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            prototypes: Matrix::zeros(classes, dim),
            momentum,
            initialized: vec![false; classes],
        })
    }

    /// Rebuilds a bank from stored prototypes and initialization flags.
    pub fn from_parts(prototypes: Matrix, momentum: f64, initialized: Vec<bool>) -> Result<Self> {
        let mut bank = Self::new(prototypes.rows(), prototypes.cols(), momentum)?;
        if initialized.len() != prototypes.rows() {
            return Err(Error::invalid("one initialization flag per class required"));
        }
        if !prototypes.is_finite() {
            return Err(Error::invalid("prototypes must be finite"));
        }
        bank.prototypes = prototypes;
        bank.initialized = initialized;
        Ok(bank)
    }

    pub fn classes(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.cols()
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn prototypes(&self) -> &Matrix {
        &self.prototypes
    }

    pub fn prototype(&self, class: usize) -> &[f64] {
        self.prototypes.row(class)
    }

    pub fn is_initialized(&self, class: usize) -> bool {
        self.initialized[class]
    }

    pub fn initialized_mask(&self) -> &[bool] {
        &self.initialized
    }

    pub fn all_initialized(&self) -> bool {
        self.initialized.iter().all(|b| *b)
    }

    /// `P_c ← ρ P_c + (1 − ρ) mean_c` for every class present in the batch.
    /// A class seen for the first time takes the batch mean directly.
    pub fn ema_update(&mut self, features: &[Vec<f64>], labels: &[usize]) -> Result<()> {
        if features.len() != labels.len() {
            return Err(Error::invalid("one label per feature vector required"));
        }
        let (c, d) = (self.classes(), self.dim());
        let mut sums = vec![vec![0.0; d]; c];
        let mut counts = vec![0usize; c];
        for (z, &y) in features.iter().zip(labels) {
            if z.len() != d {
                return Err(Error::invalid(format!(
                    "feature has dimension {}, bank expects {d}",
                    z.len()
                )));
            }
            if y >= c {
                return Err(Error::invalid(format!("label {y} outside 0..{c}")));
            }
            sums[y].iter_mut().zip(z).for_each(|(s, v)| *s += v);
            counts[y] += 1;
        }
        for class in 0..c {
            if counts[class] == 0 {
                continue;
            }
            let inv = 1.0 / counts[class] as f64;
            let rho = self.momentum;
            let fresh = !self.initialized[class];
            for (p, s) in self.prototypes.row_mut(class).iter_mut().zip(&sums[class]) {
                let mean = s * inv;
                *p = if fresh {
                    mean
                } else {
                    rho * *p + (1.0 - rho) * mean
                };
            }
            self.initialized[class] = true;
        }
        Ok(())
    }

    /// Prototypes as stored arrays: the `C×d` matrix and a `1×C` 0/1 mask.
    pub fn to_arrays(&self) -> (Matrix, Matrix) {
        let mask = self.initialized.iter().map(|b| *b as u8 as f64).collect();
        (
            self.prototypes.clone(),
            Matrix::from_vec(1, self.classes(), mask).expect("mask has one entry per class"),
        )
    }
}

fn l2_normalized(v: &[f64]) -> (Vec<f64>, f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_FLOOR);
    (v.iter().map(|x| x / norm).collect(), norm)
}

/// Mean PRA cross-entropy over a batch of one modality's features and its
/// gradient with respect to each feature vector. Prototypes are constants.
///
/// With `normalize`, features and prototypes are L2-normalized before the dot
/// products, so logits lie in `[-1/τ_p, 1/τ_p]`.
pub fn pra_loss(
    z: &[Vec<f64>],
    labels: &[usize],
    bank: &PrototypeBank,
    tau_p: f64,
    normalize: bool,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if let Some(class) = bank.initialized.iter().position(|b| !b) {
        return Err(Error::AlignmentDeferred { class });
    }
    if !(tau_p > 0.0) || !tau_p.is_finite() {
        return Err(Error::invalid(format!(
            "prototype temperature must be positive, got {tau_p}"
        )));
    }
    if z.len() != labels.len() || z.is_empty() {
        return Err(Error::invalid(
            "PRA needs a non-empty batch with one label per feature",
        ));
    }
    let (c, d) = (bank.classes(), bank.dim());
    let protos: Vec<Vec<f64>> = (0..c)
        .map(|k| {
            if normalize {
                l2_normalized(bank.prototype(k)).0
            } else {
                bank.prototype(k).to_vec()
            }
        })
        .collect();
    let scale = 1.0 / z.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(z.len());
    for (zi, &y) in z.iter().zip(labels) {
        if zi.len() != d {
            return Err(Error::invalid(format!(
                "feature has dimension {}, bank expects {d}",
                zi.len()
            )));
        }
        if y >= c {
            return Err(Error::invalid(format!("label {y} outside 0..{c}")));
        }
        let (h, norm) = if normalize {
            l2_normalized(zi)
        } else {
            (zi.clone(), 1.0)
        };
        let logits: Vec<f64> = protos
            .iter()
            .map(|p| h.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() / tau_p)
            .collect();
        let (ce, mut dlogits) = cross_entropy_with_logits(&logits, y);
        total += ce;
        dlogits[y] -= 1.0;
        let mut dh = vec![0.0; d];
        for (g, p) in dlogits.iter().zip(&protos) {
            let s = g * scale / tau_p;
            dh.iter_mut().zip(p).for_each(|(a, b)| *a += s * b);
        }
        if normalize {
            let proj: f64 = h.iter().zip(&dh).map(|(a, b)| a * b).sum();
            dh.iter_mut()
                .zip(&h)
                .for_each(|(g, hv)| *g = (*g - hv * proj) / norm);
        }
        grads.push(dh);
    }
    Ok((total * scale, grads))
}

/// `λ_m = max(0, β_{m*} − β_m)` for a non-anchor modality.
pub fn alignment_strength(prior: &BudgetPrior, modality: usize) -> Result<f64> {
    let anchor = prior.anchor();
    if modality == anchor {
        return Err(Error::invalid(
            "the anchor modality has no alignment strength",
        ));
    }
    let beta = prior.beta();
    if modality >= beta.len() {
        return Err(Error::invalid(format!("prior has no modality {modality}")));
    }
    let gap = beta[anchor] - beta[modality];
    debug_assert!(gap >= 0.0, "anchor must hold the largest β");
    Ok(gap.max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentConfig {
    pub tau_p: f64,
    /// Per modality; the anchor entry is always zero.
    pub lambdas: Vec<f64>,
    pub anchor: usize,
    pub normalize_features: bool,
}

impl AlignmentConfig {
    pub fn from_prior(prior: &BudgetPrior, tau_p: f64, normalize_features: bool) -> Result<Self> {
        let lambdas = (0..prior.modalities())
            .map(|m| {
                if m == prior.anchor() {
                    Ok(0.0)
                } else {
                    alignment_strength(prior, m)
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            tau_p,
            lambdas,
            anchor: prior.anchor(),
            normalize_features,
        })
    }

    /// Same anchor and temperature, all alignment strengths zero.
    pub fn disabled(&self) -> Self {
        Self {
            lambdas: vec![0.0; self.lambdas.len()],
            ..self.clone()
        }
    }

    fn is_active(&self) -> bool {
        self.lambdas.iter().any(|l| *l > 0.0)
    }
}

/// Stage I value on one batch. `pra[m]` is `None` for the anchor, for
/// modalities with `λ_m = 0`, and when alignment is deferred.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Value {
    pub loss: f64,
    pub unimodal_ce: Vec<f64>,
    pub pra: Vec<Option<f64>>,
}

/// Adds `scale · L_I` to the upstream gradients and returns the L_I value.
pub(crate) fn stage1_terms(
    pass: &BatchPass,
    bank: &PrototypeBank,
    config: &AlignmentConfig,
    scale: f64,
    upstream: &mut Upstream,
) -> Result<Stage1Value> {
    let n = pass.len();
    let inv = 1.0 / n as f64;
    let mut unimodal_ce = Vec::with_capacity(pass.modalities.len());
    for (m, mp) in pass.modalities.iter().enumerate() {
        unimodal_ce.push(mp.ce.iter().sum::<f64>() * inv);
        if scale == 0.0 {
            continue;
        }
        for (i, &y) in pass.labels.iter().enumerate() {
            let g = &mut upstream.dlogits[m][i];
            for (k, (gk, pk)) in g.iter_mut().zip(&mp.probs[i]).enumerate() {
                *gk += scale * inv * (pk - if k == y { 1.0 } else { 0.0 });
            }
        }
    }
    let mut loss: f64 = unimodal_ce.iter().sum();
    let mut pra = vec![None; pass.modalities.len()];
    if config.is_active() && bank.all_initialized() {
        for (m, mp) in pass.modalities.iter().enumerate() {
            let lambda = config.lambdas[m];
            if m == config.anchor || lambda == 0.0 {
                continue;
            }
            let (value, dz) = pra_loss(
                &mp.z,
                &pass.labels,
                bank,
                config.tau_p,
                config.normalize_features,
            )?;
            loss += lambda * value;
            pra[m] = Some(value);
            if scale != 0.0 {
                for (acc, g) in upstream.dz[m].iter_mut().zip(&dz) {
                    acc.iter_mut()
                        .zip(g)
                        .for_each(|(a, b)| *a += scale * lambda * b);
                }
            }
        }
    }
    Ok(Stage1Value {
        loss,
        unimodal_ce,
        pra,
    })
}

fn check_config(
    model: &MultimodalModel,
    bank: &PrototypeBank,
    config: &AlignmentConfig,
) -> Result<()> {
    if config.lambdas.len() != model.modalities() || config.anchor >= model.modalities() {
        return Err(Error::invalid(
            "alignment config does not match the model's modalities",
        ));
    }
    if config.lambdas[config.anchor] != 0.0 || config.lambdas.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::invalid(
            "alignment strengths must be non-negative and zero at the anchor",
        ));
    }
    if bank.classes() != model.classes() || bank.dim() != model.feature_dim() {
        return Err(Error::invalid("prototype bank does not match the model"));
    }
    Ok(())
}

/// Updates the bank with the anchor's features of this batch, then evaluates
/// L_I and its gradients against the updated (constant) prototypes.
pub fn stage1_loss(
    model: &MultimodalModel,
    batch: &Batch,
    bank: &mut PrototypeBank,
    config: &AlignmentConfig,
) -> Result<(Objective, Stage1Value)> {
    check_config(model, bank, config)?;
    let pass = forward_batch(model, batch)?;
    bank.ema_update(&pass.modalities[config.anchor].z, &pass.labels)?;
    stage1_from_pass(model, &pass, bank, config)
}

/// L_I against a fixed bank, without any prototype update.
pub fn stage1_loss_frozen(
    model: &MultimodalModel,
    batch: &Batch,
    bank: &PrototypeBank,
    config: &AlignmentConfig,
) -> Result<(Objective, Stage1Value)> {
    check_config(model, bank, config)?;
    let pass = forward_batch(model, batch)?;
    stage1_from_pass(model, &pass, bank, config)
}

fn stage1_from_pass(
    model: &MultimodalModel,
    pass: &BatchPass,
    bank: &PrototypeBank,
    config: &AlignmentConfig,
) -> Result<(Objective, Stage1Value)> {
    let mut upstream = Upstream::zeros(model, pass.len());
    let value = stage1_terms(pass, bank, config, 1.0, &mut upstream)?;
    let mut grads = model.zero_grads();
    backprop_modalities(model, pass, &upstream, &mut grads)?;
    Ok((
        Objective {
            loss: value.loss,
            grads,
            signature: pass.signature(),
        },
        value,
    ))
}

/// The PRA term of one modality alone, as a function of the model parameters.
pub fn pra_objective(
    model: &MultimodalModel,
    batch: &Batch,
    modality: usize,
    bank: &PrototypeBank,
    tau_p: f64,
    normalize: bool,
) -> Result<Objective> {
    if modality >= model.modalities() {
        return Err(Error::invalid(format!("model has no modality {modality}")));
    }
    let pass = forward_batch(model, batch)?;
    let (loss, dz) = pra_loss(
        &pass.modalities[modality].z,
        &pass.labels,
        bank,
        tau_p,
        normalize,
    )?;
    let mut upstream = Upstream::zeros(model, pass.len());
    upstream.dz[modality] = dz;
    let mut grads = model.zero_grads();
    backprop_modalities(model, &pass, &upstream, &mut grads)?;
    Ok(Objective {
        loss,
        grads,
        signature: pass.signature(),
    })
}
