use crate::error::{Error, Result};
use crate::model::ParamTree;
use crate::tensor::{Float, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.99;
pub const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam with per-parameter first/second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T: Float> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: ParamTree<T>,
    v: ParamTree<T>,
}

impl<T: Float> Adam<T> {
    pub fn new(params: &ParamTree<T>) -> Self {
        let zeros = params.map_values(|_, p| Tensor::zeros(p.shape().to_vec()));
        Self {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Restores saved state; moment trees must mirror each other.
    pub fn from_state(t: u64, m: ParamTree<T>, v: ParamTree<T>) -> Result<Self> {
        if !m.same_names(&v) {
            return Err(Error::Format("optimizer moment trees disagree".into()));
        }
        Ok(Self { t, m, v, ..Self::new(&ParamTree::new()) })
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&ParamTree<T>, &ParamTree<T>) {
        (&self.m, &self.v)
    }

    /// One update from the gradients stored on `params`.
    pub fn step(&mut self, params: &mut ParamTree<T>, lr: f64) -> Result<()> {
        if !self.m.same_names(params) {
            return Err(Error::Contract("optimizer state does not match the parameter tree".into()));
        }
        if let Some((name, _)) = params.iter().find(|(_, p)| p.grad().is_none()) {
            return Err(Error::Contract(format!("parameter '{name}' has no gradient")));
        }
        self.t += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let bc1 = T::lit(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = T::lit(1.0 - self.beta2.powi(self.t as i32));
        let (lr, eps) = (T::lit(lr), T::lit(self.eps));
        let moments = self.m.iter_mut().zip(self.v.iter_mut());
        for ((_, p), ((_, m), (_, v))) in params.iter_mut().zip(moments) {
            let g = p.grad().unwrap().to_vec();
            let (m, v) = (m.data_mut(), v.data_mut());
            for (i, x) in p.data_mut().iter_mut().enumerate() {
                m[i] = b1 * m[i] + c1 * g[i];
                v[i] = b2 * v[i] + c2 * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
