use deepwarp_core::{Error, Result};

use crate::real::Real;
use crate::tensor::Tensor;

/// Adam moments and hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    /// Zero moments shaped like `params`; betas 0.9 / 0.999, epsilon 1e-8.
    pub fn new(params: &[Tensor<T>], lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if !ok {
            return Err(Error::Config(format!(
                "adam needs lr > 0, betas in [0, 1), epsilon > 0 (lr {}, beta1 {}, beta2 {}, eps {})",
                self.lr, self.beta1, self.beta2, self.epsilon
            )));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update. Parameters without a gradient (or not
/// trainable) keep their values and moments.
pub fn adam_step<T: Real>(params: &mut [Tensor<T>], grads: &[Option<Vec<T>>], st: &mut AdamState<T>) -> Result<()> {
    st.validate()?;
    if grads.len() != params.len() || st.m.len() != params.len() {
        return Err(Error::Dimension(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            st.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&st.m) {
        if let Some(g) = g {
            if g.len() != p.len() || m.len() != p.len() {
                return Err(Error::Dimension(format!(
                    "adam: param of {} values, grad {}, moment {}",
                    p.len(),
                    g.len(),
                    m.len()
                )));
            }
        }
    }
    st.t += 1;
    let t = st.t as i32;
    let c1 = 1.0 - st.beta1.powi(t);
    let c2 = 1.0 - st.beta2.powi(t);
    let (b1, b2) = (T::of_f64(st.beta1), T::of_f64(st.beta2));
    let (ob1, ob2) = (T::of_f64(1.0 - st.beta1), T::of_f64(1.0 - st.beta2));
    let step = T::of_f64(st.lr / c1);
    let inv_c2 = T::of_f64(1.0 / c2);
    let eps = T::of_f64(st.epsilon);
    for (i, p) in params.iter_mut().enumerate() {
        let Some(g) = &grads[i] else { continue };
        if !p.requires_grad {
            continue;
        }
        let (m, v) = (&mut st.m[i], &mut st.v[i]);
        for k in 0..g.len() {
            m[k] = b1 * m[k] + ob1 * g[k];
            v[k] = b2 * v[k] + ob2 * g[k] * g[k];
            p.data[k] -= step * m[k] / ((v[k] * inv_c2).sqrt() + eps);
        }
    }
    Ok(())
}
