//! Stage II: uncertainty-aware, prior-weighted gated fusion.
//!
//! Per sample, each modality contributes `α_m = β_m · exp(−u_m) · σ(G(φ)_m)`
//! where `u_m` is its normalized predictive entropy and `G` a small gate
//! network on `φ = [u; Pool(z_1); …; Pool(z_M)]`. Features are fused as
//! `Z = Σ w̃_m z_m` with `w̃ = α / Σα`.

use crate::budget::BudgetPrior;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::{
    backprop_modalities, forward_batch, BatchPass, ModelGrads, MultimodalModel, Objective, Upstream,
};
use crate::nn::{
    argmax, cross_entropy_with_logits, entropy_logit_grad, entropy_normalized,
    entropy_normalized_slice, fnv_mix, sigmoid, PredictiveDistribution,
};

/// `u = H(p) / ln C`.
pub fn sample_uncertainty(p: &PredictiveDistribution) -> Result<f64> {
    entropy_normalized(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatingInput {
    pub uncertainties: Vec<f64>,
    pub pooled: Vec<Vec<f64>>,
}

impl GatingInput {
    /// Length `M + M·d_p`.
    pub fn dim(&self) -> usize {
        self.uncertainties.len() + self.pooled.iter().map(Vec::len).sum::<usize>()
    }

    /// `φ = [u_1..u_M, Pool(z_1), …, Pool(z_M)]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.uncertainties.clone();
        for p in &self.pooled {
            v.extend_from_slice(p);
        }
        v
    }
}

/// Bounds of pooling segment `k` when `d` features pool to `d_p` values.
fn segment(k: usize, d: usize, d_p: usize) -> (usize, usize) {
    (k * d / d_p, (k + 1) * d / d_p)
}

/// Non-overlapping segment means of `z`, `d_p` values.
pub fn segment_mean_pool(z: &[f64], d_p: usize) -> Result<Vec<f64>> {
    if d_p == 0 || d_p > z.len() {
        return Err(Error::invalid(format!(
            "pooled dimension {d_p} must lie in 1..={}",
            z.len()
        )));
    }
    Ok((0..d_p)
        .map(|k| {
            let (a, b) = segment(k, z.len(), d_p);
            z[a..b].iter().sum::<f64>() / (b - a) as f64
        })
        .collect())
}

fn build_gate_input_raw(probs: &[&[f64]], z: &[&[f64]], d_p: usize) -> Result<GatingInput> {
    if probs.len() != z.len() || probs.is_empty() {
        return Err(Error::invalid(
            "one distribution and one feature vector per modality required",
        ));
    }
    Ok(GatingInput {
        uncertainties: probs.iter().map(|p| entropy_normalized_slice(p)).collect(),
        pooled: z
            .iter()
            .map(|v| segment_mean_pool(v, d_p))
            .collect::<Result<_>>()?,
    })
}

pub fn build_gate_input(
    p_all: &[PredictiveDistribution],
    z_all: &[Vec<f64>],
    d_p: usize,
) -> Result<GatingInput> {
    if p_all.iter().any(|p| p.classes() < 2) {
        return Err(Error::invalid(
            "normalized entropy needs at least two classes",
        ));
    }
    let probs: Vec<&[f64]> = p_all.iter().map(|p| p.probs()).collect();
    let z: Vec<&[f64]> = z_all.iter().map(Vec::as_slice).collect();
    build_gate_input_raw(&probs, &z, d_p)
}

fn scores_raw(beta: &[f64], u: &[f64], gate_logits: &[f64]) -> Vec<f64> {
    beta.iter()
        .zip(u)
        .zip(gate_logits)
        .map(|((b, u), g)| b * (-u).exp() * sigmoid(*g))
        .collect()
}

/// `α_m = β_m · exp(−u_m) · σ(g_m)`.
pub fn fusion_scores(prior: &BudgetPrior, u: &[f64], gate_logits: &[f64]) -> Result<Vec<f64>> {
    let m = prior.modalities();
    if u.len() != m || gate_logits.len() != m {
        return Err(Error::invalid(
            "one uncertainty and one gate logit per modality required",
        ));
    }
    if u.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("uncertainties must lie in [0, 1]"));
    }
    if gate_logits.iter().any(|g| !g.is_finite()) {
        return Err(Error::invalid("gate logits must be finite"));
    }
    Ok(scores_raw(prior.beta(), u, gate_logits))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    pub alpha: Vec<f64>,
    pub weights: Vec<f64>,
}

fn fuse(weights: &[f64], z_all: &[&[f64]]) -> Vec<f64> {
    let mut out = vec![0.0; z_all[0].len()];
    for (w, z) in weights.iter().zip(z_all) {
        out.iter_mut().zip(*z).for_each(|(o, v)| *o += w * v);
    }
    out
}

/// `w̃ = α / Σα` and `Z = Σ w̃_m z_m`. Fails with
/// [`Error::DegenerateEvidence`] when `Σα` is not positive.
pub fn normalize_and_fuse(alpha: &[f64], z_all: &[Vec<f64>]) -> Result<(FusionWeights, Vec<f64>)> {
    if alpha.len() != z_all.len() || alpha.is_empty() {
        return Err(Error::invalid("one score per modality required"));
    }
    let d = z_all[0].len();
    if z_all.iter().any(|z| z.len() != d) {
        return Err(Error::invalid(
            "all modality features must share one dimension",
        ));
    }
    if alpha.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
        return Err(Error::invalid(
            "fusion scores must be finite and non-negative",
        ));
    }
    let total: f64 = alpha.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateEvidence);
    }
    let weights: Vec<f64> = alpha.iter().map(|a| a / total).collect();
    let z: Vec<&[f64]> = z_all.iter().map(Vec::as_slice).collect();
    let fused = fuse(&weights, &z);
    Ok((
        FusionWeights {
            alpha: alpha.to_vec(),
            weights,
        },
        fused,
    ))
}

/// How fusion weights are produced.
#[derive(Debug, Clone, PartialEq)]
pub enum FusionMode {
    /// Prior, uncertainty and gate evidence.
    Gated,
    /// The same weights for every sample; the gate is unused.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub mode: FusionMode,
    /// Weight of the fusion-weighted unimodal auxiliary term.
    pub gamma: f64,
    /// When false, gradients also flow through `u_m` into the classifiers.
    pub detach_entropy: bool,
}

impl FusionConfig {
    pub fn gated(gamma: f64) -> Self {
        Self {
            mode: FusionMode::Gated,
            gamma,
            detach_entropy: true,
        }
    }
}

/// Everything computed for one sample on the fusion path.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFusion {
    pub uncertainties: Vec<f64>,
    pub weights: FusionWeights,
    /// True when `Σα = 0` and the weights fell back to β.
    pub fallback: bool,
    pub fused_probs: Vec<f64>,
    pub prediction: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Value {
    pub loss: f64,
    pub fused_ce: f64,
    pub auxiliary: f64,
    pub samples: Vec<SampleFusion>,
    /// ReLU activation-pattern hash of the gate network over the batch.
    pub gate_signature: u64,
}

pub(crate) fn check_fusion(
    model: &MultimodalModel,
    beta: &[f64],
    config: &FusionConfig,
) -> Result<()> {
    let m = model.modalities();
    if beta.len() != m {
        return Err(Error::invalid(
            "prior does not match the model's modalities",
        ));
    }
    if !(config.gamma >= 0.0) || !config.gamma.is_finite() {
        return Err(Error::invalid("γ must be finite and non-negative"));
    }
    if let FusionMode::Fixed(w) = &config.mode {
        if w.len() != m
            || w.iter().any(|v| !(*v >= 0.0))
            || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::invalid(
                "fixed fusion weights must be a distribution over modalities",
            ));
        }
    }
    Ok(())
}

/// Adds `scale · L_II` to `upstream` (modality paths) and `grads` (fuse head
/// and gate) and returns the L_II value with per-sample fusion details.
pub(crate) fn stage2_terms(
    model: &MultimodalModel,
    pass: &BatchPass,
    beta: &[f64],
    config: &FusionConfig,
    scale: f64,
    upstream: &mut Upstream,
    grads: &mut ModelGrads,
) -> Result<Stage2Value> {
    let n = pass.len();
    let m_count = model.modalities();
    let d_p = model.pool_dim();
    let d = model.feature_dim();
    let s = scale / n as f64;
    let mut fused_total = 0.0;
    let mut aux_total = 0.0;
    let mut samples = Vec::with_capacity(n);
    let mut gate_signature = 0u64;

    for (i, &y) in pass.labels.iter().enumerate() {
        let z: Vec<&[f64]> = pass
            .modalities
            .iter()
            .map(|mp| mp.z[i].as_slice())
            .collect();
        let probs: Vec<&[f64]> = pass
            .modalities
            .iter()
            .map(|mp| mp.probs[i].as_slice())
            .collect();
        let ce: Vec<f64> = pass.modalities.iter().map(|mp| mp.ce[i]).collect();
        let gi = build_gate_input_raw(&probs, &z, d_p)?;

        let (weights, gate_state, fallback) = match &config.mode {
            FusionMode::Fixed(w) => (
                FusionWeights {
                    alpha: w.clone(),
                    weights: w.clone(),
                },
                None,
                false,
            ),
            FusionMode::Gated => {
                let (g, tape) = model.gate.forward(&gi.to_vec())?;
                gate_signature = fnv_mix(gate_signature, tape.relu_signature());
                let alpha = scores_raw(beta, &gi.uncertainties, &g);
                let total: f64 = alpha.iter().sum();
                if total > 0.0 {
                    let weights = alpha.iter().map(|a| a / total).collect();
                    (
                        FusionWeights { alpha, weights },
                        Some((g, tape, total)),
                        false,
                    )
                } else {
                    (
                        FusionWeights {
                            alpha,
                            weights: beta.to_vec(),
                        },
                        None,
                        true,
                    )
                }
            }
        };
        let w = &weights.weights;
        let fused = fuse(w, &z);
        let (logits, head_tape) = model.fuse_head.forward(&fused)?;
        let (ce_fuse, fused_probs) = cross_entropy_with_logits(&logits, y);
        let aux: f64 = w.iter().zip(&ce).map(|(a, b)| a * b).sum();
        fused_total += ce_fuse;
        aux_total += aux;

        if scale != 0.0 {
            let mut dlogits = fused_probs.clone();
            dlogits[y] -= 1.0;
            dlogits.iter_mut().for_each(|g| *g *= s);
            let g_fused =
                model
                    .fuse_head
                    .backward_into(&head_tape, &dlogits, &mut grads.fuse_head)?;

            // dL/dw_m
            let mut dw = vec![0.0; m_count];
            for m in 0..m_count {
                dw[m] = g_fused.iter().zip(z[m]).map(|(a, b)| a * b).sum::<f64>()
                    + s * config.gamma * ce[m];
                upstream.dz[m][i]
                    .iter_mut()
                    .zip(&g_fused)
                    .for_each(|(a, b)| *a += w[m] * b);
                if config.gamma != 0.0 {
                    let coef = s * config.gamma * w[m];
                    for (k, (a, p)) in upstream.dlogits[m][i].iter_mut().zip(probs[m]).enumerate() {
                        *a += coef * (p - if k == y { 1.0 } else { 0.0 });
                    }
                }
            }

            if let Some((g, tape, total)) = gate_state {
                let mean_dw: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
                let dalpha: Vec<f64> = dw.iter().map(|v| (v - mean_dw) / total).collect();
                let dg: Vec<f64> = (0..m_count)
                    .map(|k| dalpha[k] * weights.alpha[k] * (1.0 - sigmoid(g[k])))
                    .collect();
                let dphi = model.gate.backward_into(&tape, &dg, &mut grads.gate)?;
                for m in 0..m_count {
                    let base = m_count + m * d_p;
                    for k in 0..d_p {
                        let (a, b) = segment(k, d, d_p);
                        let share = dphi[base + k] / (b - a) as f64;
                        upstream.dz[m][i][a..b].iter_mut().for_each(|v| *v += share);
                    }
                    if !config.detach_entropy {
                        let du = dphi[m] - dalpha[m] * weights.alpha[m];
                        let dh = entropy_logit_grad(probs[m]);
                        upstream.dlogits[m][i]
                            .iter_mut()
                            .zip(&dh)
                            .for_each(|(a, b)| *a += du * b);
                    }
                }
            }
        }

        samples.push(SampleFusion {
            uncertainties: gi.uncertainties,
            weights,
            fallback,
            prediction: argmax(&fused_probs),
            fused_probs,
        });
    }
    let fused_ce = fused_total / n as f64;
    let auxiliary = aux_total / n as f64;
    Ok(Stage2Value {
        loss: fused_ce + config.gamma * auxiliary,
        fused_ce,
        auxiliary,
        samples,
        gate_signature,
    })
}

/// L_II on one batch with gradients for every parameter.
pub fn stage2_loss(
    model: &MultimodalModel,
    batch: &Batch,
    prior: &BudgetPrior,
    config: &FusionConfig,
) -> Result<(Objective, Stage2Value)> {
    check_fusion(model, prior.beta(), config)?;
    let pass = forward_batch(model, batch)?;
    let mut upstream = Upstream::zeros(model, pass.len());
    let mut grads = model.zero_grads();
    let value = stage2_terms(
        model,
        &pass,
        prior.beta(),
        config,
        1.0,
        &mut upstream,
        &mut grads,
    )?;
    backprop_modalities(model, &pass, &upstream, &mut grads)?;
    let signature = fnv_mix(pass.signature(), value.gate_signature);
    Ok((
        Objective {
            loss: value.loss,
            grads,
            signature,
        },
        value,
    ))
}

/// Forward-only fusion over a batch.
pub fn fuse_batch(
    model: &MultimodalModel,
    batch: &Batch,
    beta: &[f64],
    config: &FusionConfig,
) -> Result<Stage2Value> {
    check_fusion(model, beta, config)?;
    let pass = forward_batch(model, batch)?;
    let mut upstream = Upstream::zeros(model, pass.len());
    let mut grads = model.zero_grads();
    stage2_terms(model, &pass, beta, config, 0.0, &mut upstream, &mut grads)
}
