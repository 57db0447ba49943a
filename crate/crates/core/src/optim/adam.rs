use std::collections::BTreeMap;

use crate::error::{contract, ensure, Result};
use crate::nn::Parameter;
use crate::tensor::Tensor;

/// First/second moment estimates for every parameter plus the step count.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(0.001, 0.9, 0.999, 1e-8)
    }
}

impl AdamState {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn moments(&self, name: &str) -> Option<(&Tensor, &Tensor)> {
        self.moments.get(name).map(|(m, v)| (m, v))
    }

    /// One bias-corrected update of every parameter in `params`.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Parameter>,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<()> {
        let params: Vec<&mut Parameter> = params.into_iter().collect();
        for p in &params {
            let g = grads
                .get(&p.name)
                .ok_or_else(|| contract!("adam: no gradient for {}", p.name))?;
            ensure!(
                g.shape() == p.value.shape(),
                "adam: gradient for {} has shape {:?}, parameter {:?}",
                p.name,
                g.shape(),
                p.value.shape()
            );
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for p in params {
            let g = &grads[&p.name];
            let (m, v) = self
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            let (b1, b2) = (self.beta1, self.beta2);
            for (((theta, &gi), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *theta -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
