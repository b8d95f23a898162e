//! RMSProp.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tensor::Tensor;

/// Per-element update:
///
/// ```text
/// a <- decay * a + (1 - decay) * g^2
/// p <- p - lr * g / (sqrt(a) + eps)
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub decay: f64,
    pub eps: f64,
    accumulators: BTreeMap<String, Tensor>,
}

impl Default for RmsProp {
    fn default() -> Self {
        RmsProp::new(0.99, 1e-8)
    }
}

impl RmsProp {
    pub fn new(decay: f64, eps: f64) -> Self {
        RmsProp {
            decay,
            eps,
            accumulators: BTreeMap::new(),
        }
    }

    pub fn accumulators(&self) -> &BTreeMap<String, Tensor> {
        &self.accumulators
    }

    pub fn set_accumulator(&mut self, name: impl Into<String>, value: Tensor) {
        self.accumulators.insert(name.into(), value);
    }

    /// Applies one step to every trainable tensor of `params`. `grads` must
    /// hold a same-shaped gradient for each of them.
    pub fn step(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        for (name, p) in params.trainable() {
            match grads.get(name) {
                Some(g) if g.shape() == p.shape() => {}
                Some(g) => {
                    return Err(Error::Shape(format!(
                        "gradient for {name} has shape {:?}, parameter has {:?}",
                        g.shape(),
                        p.shape()
                    )))
                }
                None => return Err(Error::Shape(format!("no gradient for {name}"))),
            }
        }
        let (decay, eps) = (self.decay, self.eps);
        for (name, p) in params.trainable_mut() {
            let g = &grads[name];
            let acc = self
                .accumulators
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            for ((pv, av), &gv) in p.data_mut().iter_mut().zip(acc.data_mut()).zip(g.data()) {
                *av = decay * *av + (1.0 - decay) * gv * gv;
                *pv -= lr * gv / (av.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamRole;

    fn single(name: &str, v: Vec<f64>) -> ParamSet {
        let mut p = ParamSet::default();
        p.insert(name, Tensor::vector(v), ParamRole::Trainable);
        p
    }

    fn grads(name: &str, v: Vec<f64>) -> BTreeMap<String, Tensor> {
        BTreeMap::from([(name.to_string(), Tensor::vector(v))])
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = single("w", vec![0.0]);
        let mut opt = RmsProp::default();
        opt.step(&mut p, &grads("w", vec![1.0]), 1e-4).unwrap();
        let a = opt.accumulators()["w"].data()[0];
        assert!((a - 0.01).abs() < 1e-15);
        let step = -p.get("w").unwrap().data()[0];
        assert!((step - 1e-4 / (0.1 + 1e-8)).abs() < 1e-15);
        assert!((step - 9.999999e-4).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_decays_accumulator_only() {
        let mut p = single("w", vec![1.5, -2.0]);
        let mut opt = RmsProp::default();
        opt.set_accumulator("w", Tensor::vector(vec![4.0, 1.0]));
        opt.step(&mut p, &grads("w", vec![0.0, 0.0]), 0.1).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[1.5, -2.0]);
        assert_eq!(opt.accumulators()["w"].data(), &[0.99 * 4.0, 0.99]);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut p = single("w", vec![0.7, 0.1]);
        let mut opt = RmsProp::default();
        opt.step(&mut p, &grads("w", vec![3.0, -1.0]), 0.0).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[0.7, 0.1]);
    }

    #[test]
    fn identical_histories_identical_updates() {
        let mut p = single("w", vec![0.3, 0.3]);
        let mut opt = RmsProp::default();
        for g in [0.5, -1.0, 2.0] {
            opt.step(&mut p, &grads("w", vec![g, g]), 0.01).unwrap();
        }
        let w = p.get("w").unwrap().data();
        assert_eq!(w[0], w[1]);
    }

    #[test]
    fn shape_mismatch_and_missing_gradient() {
        let mut p = single("w", vec![0.0, 0.0]);
        let mut opt = RmsProp::default();
        assert!(opt.step(&mut p, &grads("w", vec![1.0]), 0.1).is_err());
        assert!(opt.step(&mut p, &grads("v", vec![1.0, 1.0]), 0.1).is_err());
    }
}
