use std::collections::BTreeMap;

use ursct_tensor::{Element, Tensor};

use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Adam with bias correction and no weight decay. Moments are keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: BTreeMap<String, Tensor<F>>,
    pub v: BTreeMap<String, Tensor<F>>,
}

impl<F: Element> Adam<F> {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One update of every parameter. A missing or non-finite gradient is an error naming the parameter.
    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &BTreeMap<String, Tensor<F>>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for parameter `{name}`")));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (name, p) in params.iter_mut() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Numeric(format!("parameter `{name}` received no gradient")))?;
            if g.shape() != p.shape() {
                return Err(Error::config(format!(
                    "gradient shape {:?} for `{name}` {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let m = self
                .m
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
            let v = self
                .v
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                let gf = gi.as_f64();
                let mn = b1 * mi.as_f64() + (1.0 - b1) * gf;
                let vn = b2 * vi.as_f64() + (1.0 - b2) * gf * gf;
                *mi = F::from_f64(mn);
                *vi = F::from_f64(vn);
                let update = lr * (mn / c1) / ((vn / c2).sqrt() + self.eps);
                *pi = F::from_f64(pi.as_f64() - update);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::new([1], vec![v]).unwrap()).unwrap();
        p
    }

    fn grad(v: f64) -> BTreeMap<String, Tensor<f64>> {
        BTreeMap::from([("x".to_string(), Tensor::new([1], vec![v]).unwrap())])
    }

    #[test]
    fn zero_gradient_from_rest_is_fixed_point() {
        let mut p = scalar_store(0.7);
        let mut opt = Adam::new(0.9, 0.999, 1e-8);
        for _ in 0..3 {
            opt.step(&mut p, &grad(0.0), 1e-3).unwrap();
        }
        assert_eq!(p.get("x").unwrap().data(), &[0.7]);
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let mut p = scalar_store(0.0);
        let mut opt = Adam::new(0.9, 0.999, 1e-8);
        opt.step(&mut p, &grad(1.0), 1e-3).unwrap();
        let (m0, v0) = (opt.m["x"].data()[0], opt.v["x"].data()[0]);
        opt.step(&mut p, &grad(0.0), 1e-3).unwrap();
        assert!((opt.m["x"].data()[0] - 0.9 * m0).abs() < 1e-15);
        assert!((opt.v["x"].data()[0] - 0.999 * v0).abs() < 1e-15);
    }

    #[test]
    fn first_step_is_lr_sized() {
        let mut p = scalar_store(1.0);
        let mut opt = Adam::new(0.9, 0.999, 1e-8);
        opt.step(&mut p, &grad(0.37), 5e-4).unwrap();
        assert!((1.0 - p.get("x").unwrap().data()[0] - 5e-4).abs() < 1e-10);
    }

    #[test]
    fn two_step_trace() {
        let (lr, b1, b2, eps, g) = (0.01, 0.9, 0.999, 1e-8, 2.0);
        let mut p = scalar_store(0.5);
        let mut opt = Adam::new(b1, b2, eps);
        let (mut x, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
            opt.step(&mut p, &grad(g), lr).unwrap();
        }
        assert!((p.get("x").unwrap().data()[0] - x).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = scalar_store(0.0);
        let mut opt = Adam::new(0.9, 0.999, 1e-8);
        let err = opt.step(&mut p, &grad(f64::NAN), 1e-3).unwrap_err();
        assert!(err.to_string().contains("`x`"));
    }
}
