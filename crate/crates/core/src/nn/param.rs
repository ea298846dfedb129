use super::{NnError, Result};

/// A parameter array with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(value: Vec<f64>) -> Self {
        let grad = vec![0.0; value.len()];
        Self { value, grad }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Anything that owns parameters in a fixed visiting order.
pub trait Parameterized {
    fn visit_params(&self, f: &mut dyn FnMut(&Param));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.len());
        n
    }

    fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit_params(&mut |p| out.extend_from_slice(&p.value));
        out
    }

    fn flat_grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit_params(&mut |p| out.extend_from_slice(&p.grad));
        out
    }

    fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(NnError::Shape {
                op: "set_flat_params",
                expected: vec![n],
                got: vec![flat.len()],
            });
        }
        let mut offset = 0;
        self.visit_params_mut(&mut |p| {
            let len = p.len();
            p.value.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        });
        Ok(())
    }

    fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |p| p.grad.iter_mut().for_each(|g| *g = 0.0));
    }

    /// Sum of squares of every parameter.
    fn sq_norm(&self) -> f64 {
        let mut s = 0.0;
        self.visit_params(&mut |p| s += p.value.iter().map(|v| v * v).sum::<f64>());
        s
    }

    /// Adds `scale * value` to each gradient (an L2 penalty `scale/2 * ||θ||²`).
    fn add_weight_decay_grad(&mut self, scale: f64) {
        self.visit_params_mut(&mut |p| {
            for (g, v) in p.grad.iter_mut().zip(&p.value) {
                *g += scale * v;
            }
        });
    }

    fn params_finite(&self) -> bool {
        let mut ok = true;
        self.visit_params(&mut |p| ok &= p.value.iter().all(|v| v.is_finite()));
        ok
    }
}
