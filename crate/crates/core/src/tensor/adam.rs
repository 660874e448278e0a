use super::{ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, zero-initialized on first use.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub step: u64,
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        AdamState { step: 0, m: ParamStore::new(), v: ParamStore::new() }
    }
}

/// One bias-corrected Adam update. Gradients are checked for finiteness before
/// any parameter is touched.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &[(String, Tensor<T>)],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if cfg.lr <= 0.0 {
        return Err(Error::invalid("adam learning rate must be > 0"));
    }
    for (name, g) in grads {
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
        let p = params.get(name)?;
        if p.shape() != g.shape() {
            return Err(Error::shape("adam grad", p.shape(), g.shape()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    for (name, g) in grads {
        if state.m.get(name).is_err() {
            state.m.insert(name.clone(), Tensor::zeros(g.shape()));
            state.v.insert(name.clone(), Tensor::zeros(g.shape()));
        }
        let m = state.m.get_mut(name).expect("inserted");
        for (mi, &gi) in m.data_mut().iter_mut().zip(g.data()) {
            *mi = b1 * *mi + (T::one() - b1) * gi;
        }
        let v = state.v.get_mut(name).expect("inserted");
        for (vi, &gi) in v.data_mut().iter_mut().zip(g.data()) {
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
        }
        let m = state.m.get(name)?.data().to_vec();
        let v = state.v.get(name)?.data().to_vec();
        let p = params.get_mut(name).expect("checked");
        for ((pi, mi), vi) in p.data_mut().iter_mut().zip(m).zip(v) {
            let mhat = mi.as_f64() / bc1;
            let vhat = vi.as_f64() / bc2;
            *pi = T::lit(pi.as_f64() - cfg.lr * mhat / (vhat.sqrt() + cfg.eps));
        }
    }
    Ok(())
}
