use super::params::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Moment accumulators for one [`ParamSet`], block by block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step_count: u64,
}

impl AdamState {
    pub fn new<P: ParamSet + ?Sized>(config: AdamConfig, params: &P) -> Self {
        let layout = params.block_layout();
        Self {
            config,
            first_moment: layout.iter().map(|(_, n)| vec![0.0; *n]).collect(),
            second_moment: layout.iter().map(|(_, n)| vec![0.0; *n]).collect(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// One bias-corrected Adam update of `params` using `grads`.
///
/// Gradients are screened before anything is modified; a non-finite entry
/// aborts with the offending parameter path (`prefix.block[index]`) and leaves
/// both parameters and state untouched.
pub fn adam_step<P, G>(params: &mut P, grads: &G, state: &mut AdamState, prefix: &str) -> Result<()>
where
    P: ParamSet + ?Sized,
    G: ParamSet + ?Sized,
{
    let mut bad: Option<String> = None;
    grads.visit_blocks(&mut |name, block| {
        if bad.is_none() {
            if let Some(i) = block.iter().position(|g| !g.is_finite()) {
                bad = Some(format!("{prefix}.{name}[{i}]"));
            }
        }
    });
    if let Some(path) = bad {
        return Err(Error::NonFiniteGradient { path });
    }
    let grad_blocks = grads.to_blocks();
    if grad_blocks.len() != state.first_moment.len()
        || grad_blocks
            .iter()
            .zip(&state.first_moment)
            .any(|(g, m)| g.len() != m.len())
    {
        return Err(Error::invalid(
            "gradient layout does not match optimizer state",
        ));
    }

    state.step_count += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step_count as i32;
    let correction1 = 1.0 - beta1.powi(t);
    let correction2 = 1.0 - beta2.powi(t);

    let mut block = 0;
    let mut mismatch = false;
    params.visit_blocks_mut(&mut |_, values| {
        let (Some(g), Some(m), Some(v)) = (
            grad_blocks.get(block),
            state.first_moment.get_mut(block),
            state.second_moment.get_mut(block),
        ) else {
            mismatch = true;
            return;
        };
        if values.len() != g.len() {
            mismatch = true;
            return;
        }
        for (((p, gi), mi), vi) in values
            .iter_mut()
            .zip(g.iter())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let m_hat = *mi / correction1;
            let v_hat = *vi / correction2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        block += 1;
    });
    if mismatch || block != grad_blocks.len() {
        return Err(Error::invalid(
            "parameter layout does not match optimizer state",
        ));
    }
    Ok(())
}
