use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{gemm, Mat};
use super::lstm::Lstm;
use super::{glorot_bound, NnError, Param, Parameterized, Result, Tensor};

/// Serializable description of one layer; used for file headers and
/// construction-time shape validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        height: usize,
        width: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Lstm {
        inputs: usize,
        hidden: usize,
    },
    /// Lookup table, used for word vectors.
    Embedding {
        vocab: usize,
        dim: usize,
    },
    Relu,
    Tanh,
    Softmax,
    Flatten,
}

fn uniform_init(rng: &mut impl Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
}

/// Fully connected layer, `y = x W^T + b` over `[N, inputs]` rows.
#[derive(Debug, Clone)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = glorot_bound(inputs, outputs);
        Self {
            inputs,
            outputs,
            weight: Param::new(uniform_init(rng, inputs * outputs, bound)),
            bias: Param::new(vec![0.0; outputs]),
            input: None,
        }
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.dim(1) != self.inputs {
            return Err(NnError::Shape {
                op: "dense",
                expected: vec![x.shape().first().copied().unwrap_or(0), self.inputs],
                got: x.shape().to_vec(),
            });
        }
        let n = x.dim(0);
        let mut out = Vec::with_capacity(n * self.outputs);
        for _ in 0..n {
            out.extend_from_slice(&self.bias.value);
        }
        gemm(
            Mat::new(x.data(), n, self.inputs),
            Mat::new(&self.weight.value, self.outputs, self.inputs).t(),
            1.0,
            &mut out,
        );
        Tensor::new(vec![n, self.outputs], out)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    fn accumulate(&mut self, dy: &Tensor) -> Result<(usize, &Tensor)> {
        let x = self.input.as_ref().ok_or(NnError::NoForwardCache("dense"))?;
        let n = x.dim(0);
        dy.expect_shape("dense backward", &[n, self.outputs])?;
        gemm(
            Mat::new(dy.data(), n, self.outputs).t(),
            Mat::new(x.data(), n, self.inputs),
            1.0,
            &mut self.weight.grad,
        );
        for row in dy.data().chunks_exact(self.outputs) {
            for (g, d) in self.bias.grad.iter_mut().zip(row) {
                *g += d;
            }
        }
        Ok((n, x))
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let (n, _) = self.accumulate(dy)?;
        let mut dx = vec![0.0; n * self.inputs];
        gemm(
            Mat::new(dy.data(), n, self.outputs),
            Mat::new(&self.weight.value, self.outputs, self.inputs),
            0.0,
            &mut dx,
        );
        Tensor::new(vec![n, self.inputs], dx)
    }

    pub fn backward_params_only(&mut self, dy: &Tensor) -> Result<()> {
        self.accumulate(dy).map(|_| ())
    }
}

/// 2-D convolution over `[N, C, H, W]` with square kernel, zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub height: usize,
    pub width: usize,
    pub weight: Param,
    pub bias: Param,
    cols: Option<(usize, Vec<f64>)>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        height: usize,
        width: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let k2 = kernel * kernel;
        let bound = glorot_bound(in_channels * k2, out_channels * k2);
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            height,
            width,
            weight: Param::new(uniform_init(rng, out_channels * in_channels * k2, bound)),
            bias: Param::new(vec![0.0; out_channels]),
            cols: None,
        }
    }

    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1..] != [self.in_channels, self.height, self.width] {
            return Err(NnError::Shape {
                op: "conv2d",
                expected: vec![
                    shape.first().copied().unwrap_or(0),
                    self.in_channels,
                    self.height,
                    self.width,
                ],
                got: shape.to_vec(),
            });
        }
        Ok(shape[0])
    }

    /// Lays input patches out as a `[patch_len, N * P]` matrix.
    fn im2col(&self, x: &Tensor, n: usize) -> Vec<f64> {
        let (oh, ow) = (self.out_height(), self.out_width());
        let p = oh * ow;
        let cols_n = n * p;
        let mut cols = vec![0.0; self.patch_len() * cols_n];
        let (h, w, k, s) = (self.height as isize, self.width as isize, self.kernel, self.stride);
        let pad = self.padding as isize;
        let xd = x.data();
        for c in 0..self.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * cols_n..(row + 1) * cols_n];
                    for b in 0..n {
                        let plane = &xd[(b * self.in_channels + c) * (h * w) as usize..][..(h * w) as usize];
                        for oy in 0..oh {
                            let iy = (oy * s + ky) as isize - pad;
                            if iy < 0 || iy >= h {
                                continue;
                            }
                            for ox in 0..ow {
                                let ix = (ox * s + kx) as isize - pad;
                                if ix < 0 || ix >= w {
                                    continue;
                                }
                                dst[b * p + oy * ow + ox] = plane[(iy * w + ix) as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &[f64], n: usize) -> Vec<f64> {
        let (oh, ow) = (self.out_height(), self.out_width());
        let p = oh * ow;
        let cols_n = n * p;
        let (h, w, k, s) = (self.height as isize, self.width as isize, self.kernel, self.stride);
        let pad = self.padding as isize;
        let mut dx = vec![0.0; n * self.in_channels * (h * w) as usize];
        for c in 0..self.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &dcols[row * cols_n..(row + 1) * cols_n];
                    for b in 0..n {
                        let plane = &mut dx[(b * self.in_channels + c) * (h * w) as usize..][..(h * w) as usize];
                        for oy in 0..oh {
                            let iy = (oy * s + ky) as isize - pad;
                            if iy < 0 || iy >= h {
                                continue;
                            }
                            for ox in 0..ow {
                                let ix = (ox * s + kx) as isize - pad;
                                if ix < 0 || ix >= w {
                                    continue;
                                }
                                plane[(iy * w + ix) as usize] += src[b * p + oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn apply(&self, cols: &[f64], n: usize) -> Result<Tensor> {
        let p = self.out_height() * self.out_width();
        let mut ymat = vec![0.0; self.out_channels * n * p];
        gemm(
            Mat::new(&self.weight.value, self.out_channels, self.patch_len()),
            Mat::new(cols, self.patch_len(), n * p),
            0.0,
            &mut ymat,
        );
        let mut y = vec![0.0; n * self.out_channels * p];
        for co in 0..self.out_channels {
            let b = self.bias.value[co];
            for s in 0..n {
                let src = &ymat[co * n * p + s * p..][..p];
                let dst = &mut y[(s * self.out_channels + co) * p..][..p];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d = v + b;
                }
            }
        }
        Tensor::new(vec![n, self.out_channels, self.out_height(), self.out_width()], y)
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let n = self.check_input(x)?;
        let cols = self.im2col(x, n);
        self.apply(&cols, n)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let n = self.check_input(x)?;
        let cols = self.im2col(x, n);
        let y = self.apply(&cols, n)?;
        self.cols = Some((n, cols));
        Ok(y)
    }

    /// Accumulates parameter gradients; returns `dy` rearranged as `[Cout, N*P]`.
    fn accumulate(&mut self, dy: &Tensor) -> Result<(usize, Vec<f64>)> {
        let (n, cols) = self.cols.as_ref().ok_or(NnError::NoForwardCache("conv2d"))?;
        let n = *n;
        let p = self.out_height() * self.out_width();
        dy.expect_shape(
            "conv2d backward",
            &[n, self.out_channels, self.out_height(), self.out_width()],
        )?;
        let mut dymat = vec![0.0; self.out_channels * n * p];
        for s in 0..n {
            for co in 0..self.out_channels {
                let src = &dy.data()[(s * self.out_channels + co) * p..][..p];
                dymat[co * n * p + s * p..][..p].copy_from_slice(src);
                self.bias.grad[co] += src.iter().sum::<f64>();
            }
        }
        gemm(
            Mat::new(&dymat, self.out_channels, n * p),
            Mat::new(cols, self.patch_len(), n * p).t(),
            1.0,
            &mut self.weight.grad,
        );
        Ok((n, dymat))
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let (n, dymat) = self.accumulate(dy)?;
        let p = self.out_height() * self.out_width();
        let mut dcols = vec![0.0; self.patch_len() * n * p];
        gemm(
            Mat::new(&self.weight.value, self.out_channels, self.patch_len()).t(),
            Mat::new(&dymat, self.out_channels, n * p),
            0.0,
            &mut dcols,
        );
        let dx = self.col2im(&dcols, n);
        Tensor::new(vec![n, self.in_channels, self.height, self.width], dx)
    }

    pub fn backward_params_only(&mut self, dy: &Tensor) -> Result<()> {
        self.accumulate(dy).map(|_| ())
    }
}

/// Pointwise or row-wise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    /// Normalizes over the last axis.
    Softmax,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Tensor {
        let mut y = x.clone();
        match self {
            Activation::Relu => y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Tanh => y.data_mut().iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Softmax => {
                let width = *x.shape().last().unwrap_or(&1);
                if width > 0 {
                    y.data_mut().chunks_exact_mut(width).for_each(softmax_in_place);
                }
            }
        }
        y
    }

    /// Input gradient from the cached output `y`.
    pub fn grad(self, y: &Tensor, dy: &Tensor) -> Tensor {
        let mut dx = dy.clone();
        match self {
            Activation::Relu => {
                for (d, &o) in dx.data_mut().iter_mut().zip(y.data()) {
                    if o <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            Activation::Tanh => {
                for (d, &o) in dx.data_mut().iter_mut().zip(y.data()) {
                    *d *= 1.0 - o * o;
                }
            }
            Activation::Softmax => {
                let width = *y.shape().last().unwrap_or(&1);
                if width > 0 {
                    for (drow, yrow) in dx.data_mut().chunks_exact_mut(width).zip(y.data().chunks_exact(width)) {
                        let dot: f64 = drow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for (d, &o) in drow.iter_mut().zip(yrow) {
                            *d = o * (*d - dot);
                        }
                    }
                }
            }
        }
        dx
    }

    fn spec(self) -> LayerSpec {
        match self {
            Activation::Relu => LayerSpec::Relu,
            Activation::Tanh => LayerSpec::Tanh,
            Activation::Softmax => LayerSpec::Softmax,
        }
    }
}

/// Numerically stable softmax over one row.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return;
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// One element of a [`super::Sequential`] chain.
#[derive(Debug, Clone)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    /// Runs over a `[T, inputs]` sequence from a zero state and returns every hidden state.
    Lstm(Lstm),
    Activation { kind: Activation, output: Option<Tensor> },
    Flatten { input_shape: Option<Vec<usize>> },
}

impl Layer {
    pub fn relu() -> Self {
        Layer::Activation { kind: Activation::Relu, output: None }
    }

    pub fn tanh() -> Self {
        Layer::Activation { kind: Activation::Tanh, output: None }
    }

    pub fn softmax() -> Self {
        Layer::Activation { kind: Activation::Softmax, output: None }
    }

    pub fn flatten() -> Self {
        Layer::Flatten { input_shape: None }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(d) => LayerSpec::Dense { inputs: d.inputs, outputs: d.outputs },
            Layer::Conv2d(c) => LayerSpec::Conv2d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
                stride: c.stride,
                padding: c.padding,
                height: c.height,
                width: c.width,
            },
            Layer::Lstm(l) => LayerSpec::Lstm { inputs: l.inputs, hidden: l.hidden },
            Layer::Activation { kind, .. } => kind.spec(),
            Layer::Flatten { .. } => LayerSpec::Flatten,
        }
    }

    /// Per-sample output shape for a per-sample input shape (batch axis excluded).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |expected: Vec<usize>| NnError::Shape {
            op: "layer chain",
            expected,
            got: input.to_vec(),
        };
        match self {
            Layer::Dense(d) => {
                if input != [d.inputs] {
                    return Err(mismatch(vec![d.inputs]));
                }
                Ok(vec![d.outputs])
            }
            Layer::Conv2d(c) => {
                if input != [c.in_channels, c.height, c.width] {
                    return Err(mismatch(vec![c.in_channels, c.height, c.width]));
                }
                Ok(vec![c.out_channels, c.out_height(), c.out_width()])
            }
            Layer::Lstm(l) => {
                if input != [l.inputs] {
                    return Err(mismatch(vec![l.inputs]));
                }
                Ok(vec![l.hidden])
            }
            Layer::Activation { .. } => Ok(input.to_vec()),
            Layer::Flatten { .. } => Ok(vec![input.iter().product()]),
        }
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => d.infer(x),
            Layer::Conv2d(c) => c.infer(x),
            Layer::Lstm(l) => l.infer_sequence(x),
            Layer::Activation { kind, .. } => Ok(kind.apply(x)),
            Layer::Flatten { .. } => flatten(x),
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => d.forward(x),
            Layer::Conv2d(c) => c.forward(x),
            Layer::Lstm(l) => l.forward_sequence(x),
            Layer::Activation { kind, output } => {
                let y = kind.apply(x);
                *output = Some(y.clone());
                Ok(y)
            }
            Layer::Flatten { input_shape } => {
                *input_shape = Some(x.shape().to_vec());
                flatten(x)
            }
        }
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => d.backward(dy),
            Layer::Conv2d(c) => c.backward(dy),
            Layer::Lstm(l) => l.backward_sequence(dy),
            Layer::Activation { kind, output } => {
                let y = output.as_ref().ok_or(NnError::NoForwardCache("activation"))?;
                dy.expect_shape("activation backward", y.shape())?;
                Ok(kind.grad(y, dy))
            }
            Layer::Flatten { input_shape } => {
                let shape = input_shape.clone().ok_or(NnError::NoForwardCache("flatten"))?;
                dy.clone().reshape(shape)
            }
        }
    }

    /// Like [`Layer::backward`] but skips the input gradient where that saves work.
    pub fn backward_params_only(&mut self, dy: &Tensor) -> Result<()> {
        match self {
            Layer::Dense(d) => d.backward_params_only(dy),
            Layer::Conv2d(c) => c.backward_params_only(dy),
            other => other.backward(dy).map(|_| ()),
        }
    }
}

fn flatten(x: &Tensor) -> Result<Tensor> {
    let n = x.shape().first().copied().unwrap_or(0);
    let rest = x.row_len();
    x.clone().reshape(vec![n, rest])
}

impl Parameterized for Layer {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        match self {
            Layer::Dense(d) => {
                f(&d.weight);
                f(&d.bias);
            }
            Layer::Conv2d(c) => {
                f(&c.weight);
                f(&c.bias);
            }
            Layer::Lstm(l) => l.visit_params(f),
            _ => {}
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        match self {
            Layer::Dense(d) => {
                f(&mut d.weight);
                f(&mut d.bias);
            }
            Layer::Conv2d(c) => {
                f(&mut c.weight);
                f(&mut c.bias);
            }
            Layer::Lstm(l) => l.visit_params_mut(f),
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_identity_passes_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut d = Dense::new(2, 2, &mut rng);
        d.weight.value = vec![1.0, 0.0, 0.0, 1.0];
        let y = d.infer(&Tensor::row(vec![3.0, 4.0])).unwrap();
        assert_eq!(y.data(), &[3.0, 4.0]);
    }

    #[test]
    fn dense_rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Dense::new(3, 2, &mut rng);
        assert!(matches!(d.infer(&Tensor::row(vec![1.0, 2.0])), Err(NnError::Shape { .. })));
    }

    #[test]
    fn same_padding_conv_preserves_spatial_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = Conv2d::new(2, 3, 3, 1, 1, 7, 5, &mut rng);
        let y = c.infer(&Tensor::zeros(&[4, 2, 7, 5])).unwrap();
        assert_eq!(y.shape(), &[4, 3, 7, 5]);
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = Conv2d::new(2, 3, 3, 2, 1, 6, 5, &mut rng);
        let x: Vec<f64> = (0..2 * 2 * 6 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xt = Tensor::new(vec![2, 2, 6, 5], x.clone()).unwrap();
        let y = c.infer(&xt).unwrap();
        let (oh, ow) = (c.out_height(), c.out_width());
        for n in 0..2 {
            for co in 0..3 {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = c.bias.value[co];
                        for ci in 0..2 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (oy * 2 + ky) as isize - 1;
                                    let ix = (ox * 2 + kx) as isize - 1;
                                    if iy < 0 || ix < 0 || iy >= 6 || ix >= 5 {
                                        continue;
                                    }
                                    let w = c.weight.value[((co * 2 + ci) * 3 + ky) * 3 + kx];
                                    acc += w * x[((n * 2 + ci) * 6 + iy as usize) * 5 + ix as usize];
                                }
                            }
                        }
                        let got = y.data()[((n * 3 + co) * oh + oy) * ow + ox];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::new(vec![5, 7], (0..35).map(|_| rng.gen_range(-20.0..20.0)).collect()).unwrap();
        let y = Activation::Softmax.apply(&x);
        for row in y.data().chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn backward_before_forward_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut d = Layer::Dense(Dense::new(2, 2, &mut rng));
        assert!(matches!(d.backward(&Tensor::row(vec![1.0, 1.0])), Err(NnError::NoForwardCache(_))));
    }
}
