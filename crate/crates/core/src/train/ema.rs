use crate::error::{Error, Result};
use crate::model::ParamTree;
use crate::tensor::Float;

/// Exponential moving average of the live parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Ema<T: Float> {
    pub decay: f64,
    shadow: ParamTree<T>,
}

impl<T: Float> Ema<T> {
    pub fn new(live: &ParamTree<T>, decay: f64) -> Self {
        let mut shadow = live.clone();
        shadow.zero_grads();
        for (_, t) in shadow.iter_mut() {
            t.set_requires_grad(false);
        }
        Self { decay, shadow }
    }

    pub fn from_shadow(shadow: ParamTree<T>, decay: f64) -> Self {
        Self { decay, shadow }
    }

    pub fn shadow(&self) -> &ParamTree<T> {
        &self.shadow
    }

    /// shadow ← d·shadow + (1 − d)·live, kept inside [min, max] of the two.
    pub fn update(&mut self, live: &ParamTree<T>) -> Result<()> {
        if !self.shadow.same_names(live) {
            return Err(Error::Contract("EMA shadow names do not match the live parameters".into()));
        }
        let d = T::lit(self.decay);
        let e = T::one() - d;
        for ((_, s), (_, l)) in self.shadow.iter_mut().zip(live.iter()) {
            if s.shape() != l.shape() {
                return Err(Error::Contract("EMA shadow shape differs from live parameter".into()));
            }
            for (a, &b) in s.data_mut().iter_mut().zip(l.data()) {
                let mixed = d * *a + e * b;
                let (lo, hi) = if *a < b { (*a, b) } else { (b, *a) };
                *a = mixed.max(lo).min(hi);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(v: f64) -> ParamTree<f64> {
        let mut t = ParamTree::new();
        t.insert("w", Tensor::new(vec![1], vec![v]).unwrap()).unwrap();
        t
    }

    fn val(e: &Ema<f64>) -> f64 {
        e.shadow().get("w").unwrap().data()[0]
    }

    #[test]
    fn decay_extremes_and_midpoint() {
        let mut e = Ema::new(&single(0.0), 0.0);
        e.update(&single(0.7)).unwrap();
        assert_eq!(val(&e), 0.7);
        let mut e = Ema::new(&single(0.3), 1.0);
        e.update(&single(5.0)).unwrap();
        assert_eq!(val(&e), 0.3);
        let mut e = Ema::new(&single(0.0), 0.5);
        e.update(&single(2.0)).unwrap();
        assert_eq!(val(&e), 1.0);
    }

    #[test]
    fn mismatched_names_rejected() {
        let mut e = Ema::new(&single(0.0), 0.9);
        let mut other = ParamTree::new();
        other.insert("v", Tensor::new(vec![1], vec![1.0]).unwrap()).unwrap();
        assert!(e.update(&other).is_err());
    }
}
