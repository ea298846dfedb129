use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Parameterized, Result, Sequential, Tensor};

/// Magnitudes below this are compared absolutely rather than relatively.
pub const GRAD_CHECK_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient(x: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let plus = f(&probe);
            probe[i] = orig - eps;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Compares backward against central differences for the scalar
/// `L = sum(w * net(input))` with fixed pseudo-random `w`, over every
/// parameter and every input entry. Returns the worst relative error.
pub fn grad_check(net: &mut Sequential, input: &Tensor, eps: f64) -> Result<f64> {
    let out_len = net.infer(input)?.len();
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9);
    let weights: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss = |net: &Sequential, x: &Tensor| -> f64 {
        let y = net.infer(x).expect("shape validated above");
        y.data().iter().zip(&weights).map(|(a, b)| a * b).sum()
    };

    net.zero_grads();
    let y = net.forward(input)?;
    let dy = Tensor::new(y.shape().to_vec(), weights.clone())?;
    let dx = net.backward(&dy)?;
    let analytic_params = net.flat_grads();

    let base = net.flat_params();
    let mut probe = net.clone();
    let numeric_params = numeric_gradient(&base, eps, |p| {
        probe.set_flat_params(p).expect("same length");
        loss(&probe, input)
    });
    let numeric_input = numeric_gradient(input.data(), eps, |x| {
        let t = Tensor::new(input.shape().to_vec(), x.to_vec()).expect("same shape");
        loss(net, &t)
    });

    Ok(max_relative_error(&analytic_params, &numeric_params).max(max_relative_error(dx.data(), &numeric_input)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Conv2d, Dense, Layer, Lstm};

    fn random_input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn dense_tanh() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut net = Sequential::new(
            vec![5],
            vec![
                Layer::Dense(Dense::new(5, 7, &mut rng)),
                Layer::tanh(),
                Layer::Dense(Dense::new(7, 3, &mut rng)),
            ],
        )
        .unwrap();
        let x = random_input(&mut rng, &[4, 5]);
        assert!(grad_check(&mut net, &x, 1e-4).unwrap() <= 1e-4);
    }

    #[test]
    fn dense_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = Sequential::new(
            vec![4],
            vec![Layer::Dense(Dense::new(4, 6, &mut rng)), Layer::softmax()],
        )
        .unwrap();
        let x = random_input(&mut rng, &[3, 4]);
        assert!(grad_check(&mut net, &x, 1e-4).unwrap() <= 1e-4);
    }

    #[test]
    fn lstm_three_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut net = Sequential::new(
            vec![4],
            vec![Layer::Lstm(Lstm::new(4, 5, &mut rng)), Layer::Dense(Dense::new(5, 2, &mut rng))],
        )
        .unwrap();
        let x = random_input(&mut rng, &[3, 4]);
        assert!(grad_check(&mut net, &x, 1e-4).unwrap() <= 1e-4);
    }

    #[test]
    fn conv_relu_away_from_kinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut conv = Conv2d::new(2, 3, 3, 2, 1, 6, 6, &mut rng);
        // Push every pre-activation clear of zero so the eps probe never crosses the kink.
        conv.bias.value = vec![2.5, -2.5, 2.5];
        let mut net = Sequential::new(
            vec![2, 6, 6],
            vec![
                Layer::Conv2d(conv),
                Layer::relu(),
                Layer::flatten(),
                Layer::Dense(Dense::new(27, 4, &mut rng)),
            ],
        )
        .unwrap();
        let x = random_input(&mut rng, &[2, 2, 6, 6]).clone();
        let x = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * 0.2).collect()).unwrap();
        assert!(grad_check(&mut net, &x, 1e-4).unwrap() <= 1e-4);
    }

    #[test]
    fn detects_a_broken_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut net = Sequential::new(vec![3], vec![Layer::Dense(Dense::new(3, 2, &mut rng))]).unwrap();
        let x = random_input(&mut rng, &[2, 3]);
        net.zero_grads();
        let y = net.forward(&x).unwrap();
        net.backward(&Tensor::new(y.shape().to_vec(), vec![1.0; y.len()]).unwrap()).unwrap();
        let analytic = net.flat_grads();
        let mut wrong = analytic.clone();
        wrong[0] += 0.5;
        assert!(max_relative_error(&wrong, &analytic) > 1e-2);
    }
}
