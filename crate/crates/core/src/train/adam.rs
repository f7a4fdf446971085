use crate::error::{BokehError, Result};
use crate::weights::WeightHead;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate: 1e-3,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.learning_rate.is_finite()
            && self.learning_rate >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(BokehError::InvalidParameter(format!(
                "bad Adam hyperparameters {self:?}"
            )))
        }
    }
}

/// First and second moment estimates, shaped like the head.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: WeightHead,
    pub v: WeightHead,
}

impl AdamState {
    pub fn new(head: &WeightHead) -> Self {
        AdamState {
            step: 0,
            m: WeightHead::zeros(head.levels()),
            v: WeightHead::zeros(head.levels()),
        }
    }

    pub fn matches(&self, head: &WeightHead) -> bool {
        self.m.shapes() == head.shapes() && self.v.shapes() == head.shapes()
    }
}

/// One bias-corrected Adam update of `head` in place.
pub fn adam_step(head: &mut WeightHead, grads: &WeightHead, state: &mut AdamState, hyper: &AdamHyper) -> Result<()> {
    hyper.validate()?;
    if grads.shapes() != head.shapes() || !state.matches(head) {
        return Err(BokehError::dims(
            format!("{:?}", head.shapes()),
            format!("{:?}", grads.shapes()),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (hyper.beta1, hyper.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let params = head.tensors_mut();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, g), m), v) in params.into_iter().zip(grads.tensors()).zip(ms).zip(vs) {
        for i in 0..p.len() {
            let gi = g[i] as f64;
            let mi = b1 * m[i] as f64 + (1.0 - b1) * gi;
            let vi = b2 * v[i] as f64 + (1.0 - b2) * gi * gi;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let m_hat = mi / c1;
            let v_hat = vi / c2;
            p[i] = (p[i] as f64 - hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon)) as f32;
        }
    }
    Ok(())
}
