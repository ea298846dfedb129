use rand::Rng;

use super::linalg::{gemm, Mat};
use super::{glorot_bound, NnError, Param, Parameterized, Result, Tensor};

/// Recurrent state for a batch of `N` sequences, each `[N, hidden]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        Self {
            h: vec![0.0; batch * hidden],
            c: vec![0.0; batch * hidden],
        }
    }
}

#[derive(Debug, Clone)]
struct SequenceCache {
    steps: usize,
    batch: usize,
    xs: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates `[i, f, g, o]` per step and sample.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Standard LSTM cell: input, forget, output gates and a tanh candidate.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub inputs: usize,
    pub hidden: usize,
    /// `[4H, inputs]`, gate blocks ordered i, f, g, o.
    pub w_input: Param,
    /// `[4H, hidden]`.
    pub w_hidden: Param,
    pub bias: Param,
    cache: Option<SequenceCache>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Lstm {
    pub fn new(inputs: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound_x = glorot_bound(inputs, 4 * hidden);
        let bound_h = glorot_bound(hidden, 4 * hidden);
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        Self {
            inputs,
            hidden,
            w_input: Param::new((0..4 * hidden * inputs).map(|_| rng.gen_range(-bound_x..=bound_x)).collect()),
            w_hidden: Param::new((0..4 * hidden * hidden).map(|_| rng.gen_range(-bound_h..=bound_h)).collect()),
            bias: Param::new(bias),
            cache: None,
        }
    }

    /// One cell update for a batch: `x` is `[N, inputs]`.
    pub fn step(&self, x: &[f64], state: &LstmState) -> Result<LstmState> {
        let batch = state.h.len() / self.hidden.max(1);
        if x.len() != batch * self.inputs || state.c.len() != state.h.len() {
            return Err(NnError::Shape {
                op: "lstm step",
                expected: vec![batch, self.inputs],
                got: vec![x.len()],
            });
        }
        let xs = Tensor::new(vec![1, batch, self.inputs], x.to_vec())?;
        let (_, last) = self.run(&xs, state, None)?;
        Ok(last)
    }

    /// Runs a `[T, N, inputs]` sequence; returns `[T, N, hidden]` and the final state.
    pub fn infer(&self, xs: &Tensor, init: &LstmState) -> Result<(Tensor, LstmState)> {
        self.run(xs, init, None)
    }

    pub fn forward(&mut self, xs: &Tensor, init: &LstmState) -> Result<(Tensor, LstmState)> {
        let mut cache = None;
        let out = self.run(xs, init, Some(&mut cache))?;
        self.cache = cache;
        Ok(out)
    }

    fn run(
        &self,
        xs: &Tensor,
        init: &LstmState,
        cache: Option<&mut Option<SequenceCache>>,
    ) -> Result<(Tensor, LstmState)> {
        let shape = xs.shape();
        if shape.len() != 3 || shape[2] != self.inputs {
            return Err(NnError::Shape {
                op: "lstm",
                expected: vec![shape.first().copied().unwrap_or(0), init.h.len() / self.hidden.max(1), self.inputs],
                got: shape.to_vec(),
            });
        }
        let (steps, batch, hid) = (shape[0], shape[1], self.hidden);
        if init.h.len() != batch * hid || init.c.len() != batch * hid {
            return Err(NnError::Shape {
                op: "lstm state",
                expected: vec![batch, hid],
                got: vec![init.h.len() / hid.max(1), hid],
            });
        }
        let g4 = 4 * hid;
        let mut z = Vec::with_capacity(steps * batch * g4);
        for _ in 0..steps * batch {
            z.extend_from_slice(&self.bias.value);
        }
        gemm(
            Mat::new(xs.data(), steps * batch, self.inputs),
            Mat::new(&self.w_input.value, g4, self.inputs).t(),
            1.0,
            &mut z,
        );

        let keep = cache.is_some();
        let mut hs = vec![0.0; steps * batch * hid];
        let (mut h_prev_all, mut c_prev_all, mut tanh_all) = if keep {
            (
                Vec::with_capacity(steps * batch * hid),
                Vec::with_capacity(steps * batch * hid),
                Vec::with_capacity(steps * batch * hid),
            )
        } else {
            (Vec::new(), Vec::new(), Vec::new())
        };
        let mut h = init.h.clone();
        let mut c = init.c.clone();
        for t in 0..steps {
            let zt = &mut z[t * batch * g4..(t + 1) * batch * g4];
            gemm(
                Mat::new(&h, batch, hid),
                Mat::new(&self.w_hidden.value, g4, hid).t(),
                1.0,
                zt,
            );
            if keep {
                h_prev_all.extend_from_slice(&h);
                c_prev_all.extend_from_slice(&c);
            }
            for b in 0..batch {
                let gates = &mut zt[b * g4..(b + 1) * g4];
                for j in 0..hid {
                    let i = sigmoid(gates[j]);
                    let f = sigmoid(gates[hid + j]);
                    let g = gates[2 * hid + j].tanh();
                    let o = sigmoid(gates[3 * hid + j]);
                    gates[j] = i;
                    gates[hid + j] = f;
                    gates[2 * hid + j] = g;
                    gates[3 * hid + j] = o;
                    let cn = f * c[b * hid + j] + i * g;
                    let tc = cn.tanh();
                    c[b * hid + j] = cn;
                    h[b * hid + j] = o * tc;
                    if keep {
                        tanh_all.push(tc);
                    }
                }
            }
            hs[t * batch * hid..(t + 1) * batch * hid].copy_from_slice(&h);
        }
        if let Some(slot) = cache {
            *slot = Some(SequenceCache {
                steps,
                batch,
                xs: xs.data().to_vec(),
                h_prev: h_prev_all,
                c_prev: c_prev_all,
                gates: z,
                tanh_c: tanh_all,
            });
        }
        Ok((Tensor::new(vec![steps, batch, hid], hs)?, LstmState { h, c }))
    }

    /// Backpropagation through time. `dhs` is `[T, N, hidden]`; `d_final` is the
    /// gradient arriving at the final state (if the caller continues past it).
    /// Returns the input gradient `[T, N, inputs]` and the initial-state gradient.
    pub fn backward(&mut self, dhs: &Tensor, d_final: Option<&LstmState>) -> Result<(Tensor, LstmState)> {
        let cache = self.cache.as_ref().ok_or(NnError::NoForwardCache("lstm"))?;
        let (steps, batch, hid) = (cache.steps, cache.batch, self.hidden);
        dhs.expect_shape("lstm backward", &[steps, batch, hid])?;
        let g4 = 4 * hid;
        let mut dz = vec![0.0; steps * batch * g4];
        let (mut dh_next, mut dc_next) = match d_final {
            Some(d) => (d.h.clone(), d.c.clone()),
            None => (vec![0.0; batch * hid], vec![0.0; batch * hid]),
        };
        for t in (0..steps).rev() {
            let base = t * batch;
            for b in 0..batch {
                let row = base + b;
                let gates = &cache.gates[row * g4..(row + 1) * g4];
                let dzr = &mut dz[row * g4..(row + 1) * g4];
                for j in 0..hid {
                    let (i, f, g, o) = (gates[j], gates[hid + j], gates[2 * hid + j], gates[3 * hid + j]);
                    let tc = cache.tanh_c[row * hid + j];
                    let dh = dhs.data()[row * hid + j] + dh_next[b * hid + j];
                    let dc = dc_next[b * hid + j] + dh * o * (1.0 - tc * tc);
                    let c_prev = cache.c_prev[row * hid + j];
                    dzr[j] = dc * g * i * (1.0 - i);
                    dzr[hid + j] = dc * c_prev * f * (1.0 - f);
                    dzr[2 * hid + j] = dc * i * (1.0 - g * g);
                    dzr[3 * hid + j] = dh * tc * o * (1.0 - o);
                    dc_next[b * hid + j] = dc * f;
                }
            }
            gemm(
                Mat::new(&dz[base * g4..(base + batch) * g4], batch, g4),
                Mat::new(&self.w_hidden.value, g4, hid),
                0.0,
                &mut dh_next,
            );
        }
        let rows = steps * batch;
        gemm(
            Mat::new(&dz, rows, g4).t(),
            Mat::new(&cache.xs, rows, self.inputs),
            1.0,
            &mut self.w_input.grad,
        );
        gemm(
            Mat::new(&dz, rows, g4).t(),
            Mat::new(&cache.h_prev, rows, hid),
            1.0,
            &mut self.w_hidden.grad,
        );
        for r in dz.chunks_exact(g4) {
            for (g, d) in self.bias.grad.iter_mut().zip(r) {
                *g += d;
            }
        }
        let mut dxs = vec![0.0; rows * self.inputs];
        gemm(
            Mat::new(&dz, rows, g4),
            Mat::new(&self.w_input.value, g4, self.inputs),
            0.0,
            &mut dxs,
        );
        Ok((
            Tensor::new(vec![steps, batch, self.inputs], dxs)?,
            LstmState { h: dh_next, c: dc_next },
        ))
    }

    fn as_sequence(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 {
            return Err(NnError::Shape {
                op: "lstm layer",
                expected: vec![0, self.inputs],
                got: x.shape().to_vec(),
            });
        }
        x.clone().reshape(vec![x.dim(0), 1, x.dim(1)])
    }

    /// Layer-mode inference: `[T, inputs]` from a zero state to `[T, hidden]`.
    pub fn infer_sequence(&self, x: &Tensor) -> Result<Tensor> {
        let xs = self.as_sequence(x)?;
        let (hs, _) = self.infer(&xs, &LstmState::zeros(1, self.hidden))?;
        let t = hs.dim(0);
        hs.reshape(vec![t, self.hidden])
    }

    pub fn forward_sequence(&mut self, x: &Tensor) -> Result<Tensor> {
        let xs = self.as_sequence(x)?;
        let (hs, _) = self.forward(&xs, &LstmState::zeros(1, self.hidden))?;
        let t = hs.dim(0);
        hs.reshape(vec![t, self.hidden])
    }

    pub fn backward_sequence(&mut self, dy: &Tensor) -> Result<Tensor> {
        let t = dy.shape().first().copied().unwrap_or(0);
        let dhs = dy.clone().reshape(vec![t, 1, self.hidden])?;
        let (dxs, _) = self.backward(&dhs, None)?;
        dxs.reshape(vec![t, self.inputs])
    }
}

impl Parameterized for Lstm {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.w_input);
        f(&self.w_hidden);
        f(&self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.w_input);
        f(&mut self.w_hidden);
        f(&mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_hidden() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut cell = Lstm::new(3, 4, &mut rng);
        cell.w_input.value.iter_mut().for_each(|w| *w = 0.0);
        cell.w_hidden.value.iter_mut().for_each(|w| *w = 0.0);
        cell.bias.value.iter_mut().for_each(|w| *w = 0.0);
        let next = cell.step(&[0.3, -2.0, 5.0], &LstmState::zeros(1, 4)).unwrap();
        assert!(next.h.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn hidden_is_bounded_by_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut cell = Lstm::new(5, 6, &mut rng);
        cell.w_input.value.iter_mut().for_each(|w| *w *= 50.0);
        let mut state = LstmState::zeros(2, 6);
        for _ in 0..20 {
            let x: Vec<f64> = (0..10).map(|_| rng.gen_range(-100.0..100.0)).collect();
            state = cell.step(&x, &state).unwrap();
            assert!(state.h.iter().all(|h| h.abs() <= 1.0));
        }
    }

    #[test]
    fn sequence_equals_repeated_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cell = Lstm::new(3, 4, &mut rng);
        let xs: Vec<f64> = (0..3 * 2 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let init = LstmState {
            h: (0..8).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            c: (0..8).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        };
        let (hs, last) = cell.infer(&Tensor::new(vec![3, 2, 3], xs.clone()).unwrap(), &init).unwrap();
        let mut state = init;
        for t in 0..3 {
            state = cell.step(&xs[t * 6..(t + 1) * 6], &state).unwrap();
            assert_eq!(&hs.data()[t * 8..(t + 1) * 8], state.h.as_slice());
        }
        assert_eq!(state, last);
    }

    #[test]
    fn forget_gate_bias_starts_at_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cell = Lstm::new(2, 3, &mut rng);
        assert_eq!(&cell.bias.value[3..6], &[1.0, 1.0, 1.0]);
        assert!(cell.bias.value[..3].iter().chain(&cell.bias.value[6..]).all(|&b| b == 0.0));
    }
}
