use serde::{Deserialize, Serialize};

use super::{NnError, Parameters};
use crate::scalar::Scalar;

/// Optimizer constants. The defaults are the usual DQN values; they are
/// configuration, nothing here depends on them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub stabilizer: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self { learning_rate: 0.00025, decay: 0.95, stabilizer: 0.01 }
    }
}

impl RmsPropConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate > 0.0) || !(self.decay > 0.0 && self.decay < 1.0) || !(self.stabilizer > 0.0) {
            return Err(NnError::InvalidSpec(format!("invalid RMSProp constants {self:?}")));
        }
        Ok(())
    }
}

/// Running mean of squared gradients, one tensor per parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsPropState<T> {
    pub config: RmsPropConfig,
    mean_square: Parameters<T>,
}

impl<T: Scalar> RmsPropState<T> {
    pub fn new(params: &Parameters<T>, config: RmsPropConfig) -> Result<Self, NnError> {
        config.validate()?;
        Ok(Self { config, mean_square: params.zeros_like() })
    }

    pub fn mean_square(&self) -> &Parameters<T> {
        &self.mean_square
    }

    pub fn mean_square_mut(&mut self) -> &mut Parameters<T> {
        &mut self.mean_square
    }
}

fn check_keys<T: Scalar>(what: &str, a: &Parameters<T>, b: &Parameters<T>) -> Result<(), NnError> {
    if !a.same_layout(b) {
        let left: Vec<_> = a.names().collect();
        let right: Vec<_> = b.names().collect();
        return Err(NnError::KeyMismatch(format!("{what}: {left:?} vs {right:?}")));
    }
    Ok(())
}

/// One RMSProp update, in place:
/// `ms ← decay·ms + (1−decay)·g²`, `θ ← θ − lr·g / √(ms + stabilizer)`.
pub fn rmsprop_step<T: Scalar>(
    params: &mut Parameters<T>,
    grads: &Parameters<T>,
    state: &mut RmsPropState<T>,
) -> Result<(), NnError> {
    check_keys("gradients", params, grads)?;
    check_keys("optimizer state", params, &state.mean_square)?;
    let decay = T::lit(state.config.decay);
    let keep = T::one() - decay;
    let lr = T::lit(state.config.learning_rate);
    let eps = T::lit(state.config.stabilizer);
    for ((_, p), ((_, g), (_, ms))) in params.iter_mut().zip(grads.iter().zip(state.mean_square.iter_mut())) {
        for ((pv, &gv), mv) in p.data_mut().iter_mut().zip(g.data()).zip(ms.data_mut().iter_mut()) {
            *mv = decay * *mv + keep * gv * gv;
            *pv = *pv - lr * gv / (*mv + eps).sqrt();
        }
    }
    if !params.all_finite() {
        return Err(NnError::NonFinite("parameters after RMSProp step".into()));
    }
    Ok(())
}
