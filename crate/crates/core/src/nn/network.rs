use super::{Layer, LayerSpec, NnError, Param, Parameterized, Result, Tensor};

/// A validated chain of layers with a declared per-sample input shape.
#[derive(Debug, Clone)]
pub struct Sequential {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl Sequential {
    /// Fails if any adjacent pair of layers disagrees on shape.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let mut shape = input_shape.clone();
        for layer in &layers {
            shape = layer.output_shape(&shape)?;
        }
        Ok(Self {
            input_shape,
            output_shape: shape,
            layers,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn output_len(&self) -> usize {
        self.output_shape.iter().product()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            let mut expected = vec![x.shape().first().copied().unwrap_or(0)];
            expected.extend_from_slice(&self.input_shape);
            return Err(NnError::Shape {
                op: "sequential input",
                expected,
                got: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.infer(&cur)?;
        }
        Ok(cur)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let mut cur = x.clone();
        for layer in &mut self.layers {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let mut cur = dy.clone();
        for layer in self.layers.iter_mut().rev() {
            cur = layer.backward(&cur)?;
        }
        Ok(cur)
    }

    /// Backward pass that does not materialize the network's input gradient.
    pub fn backward_params_only(&mut self, dy: &Tensor) -> Result<()> {
        let Some((first, rest)) = self.layers.split_first_mut() else {
            return Ok(());
        };
        let mut cur = dy.clone();
        for layer in rest.iter_mut().rev() {
            cur = layer.backward(&cur)?;
        }
        first.backward_params_only(&cur)
    }
}

impl Parameterized for Sequential {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.layers.iter().for_each(|l| l.visit_params(f));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.layers.iter_mut().for_each(|l| l.visit_params_mut(f));
    }
}

/// Concat junction: joins `[N, a]`, `[N, b]`, ... into `[N, a + b + ...]`.
pub fn concat_columns(parts: &[&Tensor]) -> Result<Tensor> {
    let n = parts.first().map(|t| t.dim(0)).unwrap_or(0);
    let widths: Vec<usize> = parts.iter().map(|t| t.row_len()).collect();
    for p in parts {
        if p.dim(0) != n {
            return Err(NnError::Shape {
                op: "concat",
                expected: vec![n],
                got: vec![p.dim(0)],
            });
        }
    }
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(n * total);
    for r in 0..n {
        for (p, &w) in parts.iter().zip(&widths) {
            out.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
        }
    }
    Tensor::new(vec![n, total], out)
}

/// Inverse of [`concat_columns`] for gradients.
pub fn split_columns(x: &Tensor, widths: &[usize]) -> Result<Vec<Tensor>> {
    let n = x.dim(0);
    let total: usize = widths.iter().sum();
    x.expect_shape("split", &[n, total])?;
    let mut parts: Vec<Vec<f64>> = widths.iter().map(|&w| Vec::with_capacity(n * w)).collect();
    for row in x.data().chunks_exact(total.max(1)).take(n) {
        let mut off = 0;
        for (p, &w) in parts.iter_mut().zip(widths) {
            p.extend_from_slice(&row[off..off + w]);
            off += w;
        }
    }
    parts
        .into_iter()
        .zip(widths)
        .map(|(p, &w)| Tensor::new(vec![n, w], p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Conv2d, Dense};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn incompatible_chain_is_rejected_at_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = Sequential::new(
            vec![4],
            vec![Layer::Dense(Dense::new(4, 3, &mut rng)), Layer::Dense(Dense::new(2, 1, &mut rng))],
        );
        assert!(err.is_err());
    }

    #[test]
    fn conv_flatten_dense_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Sequential::new(
            vec![2, 8, 8],
            vec![
                Layer::Conv2d(Conv2d::new(2, 4, 3, 2, 1, 8, 8, &mut rng)),
                Layer::relu(),
                Layer::flatten(),
                Layer::Dense(Dense::new(64, 5, &mut rng)),
            ],
        )
        .unwrap();
        assert_eq!(net.output_shape(), &[5]);
        let y = net.infer(&Tensor::zeros(&[3, 2, 8, 8])).unwrap();
        assert_eq!(y.shape(), &[3, 5]);
        assert!(net.infer(&Tensor::zeros(&[3, 2, 8, 7])).is_err());
    }

    #[test]
    fn identity_chain_passes_gradient_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut d = Dense::new(3, 3, &mut rng);
        d.weight.value = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let mut net = Sequential::new(vec![3], vec![Layer::Dense(d), Layer::flatten()]).unwrap();
        net.forward(&Tensor::row(vec![0.1, 0.2, 0.3])).unwrap();
        let dy = Tensor::row(vec![1.0, -2.0, 0.5]);
        assert_eq!(net.backward(&dy).unwrap(), dy);
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Sequential::new(
            vec![4],
            vec![Layer::Dense(Dense::new(4, 6, &mut rng)), Layer::tanh(), Layer::Dense(Dense::new(6, 2, &mut rng))],
        )
        .unwrap();
        net.forward(&Tensor::new(vec![2, 4], vec![0.5; 8]).unwrap()).unwrap();
        let dx = net.backward(&Tensor::zeros(&[2, 2])).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(net.flat_grads().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn concat_then_split_round_trips() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![9.0, 8.0]).unwrap();
        let c = concat_columns(&[&a, &b]).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
        let parts = split_columns(&c, &[2, 1]).unwrap();
        assert_eq!(parts, vec![a, b]);
    }
}
