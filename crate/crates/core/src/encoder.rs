//! The shared state-input pipeline: a two-layer conv stack over the stacked
//! spatial layers joined with a dense+tanh branch over the non-spatial vector.

use rand::Rng;

use crate::env::{Observation, CHANNELS, GRID, NONSPATIAL_LEN};
use crate::nn::{concat_columns, split_columns, Conv2d, Dense, Layer, Param, Parameterized, Result, Sequential, Tensor};

pub const CONV1_CHANNELS: usize = 8;
pub const CONV2_CHANNELS: usize = 16;
pub const NONSPATIAL_HIDDEN: usize = 32;
const SPATIAL_OUT: usize = CONV2_CHANNELS * 4 * 4;
/// Width of the trunk output.
pub const TRUNK_OUT: usize = SPATIAL_OUT + NONSPATIAL_HIDDEN;

#[derive(Debug, Clone)]
pub struct StateTrunk {
    pub spatial: Sequential,
    pub nonspatial: Sequential,
}

/// Packs observations into `[N, C, H, W]` and `[N, NONSPATIAL_LEN]` tensors.
pub fn observation_batch(obs: &[&Observation]) -> (Tensor, Tensor) {
    let plane = CHANNELS * GRID * GRID;
    let mut spatial = vec![0.0; obs.len() * plane];
    let mut ns = Vec::with_capacity(obs.len() * NONSPATIAL_LEN);
    for (o, chunk) in obs.iter().zip(spatial.chunks_exact_mut(plane)) {
        o.write_spatial(chunk);
        ns.extend_from_slice(o.nonspatial());
    }
    (
        Tensor::new(vec![obs.len(), CHANNELS, GRID, GRID], spatial).expect("sized above"),
        Tensor::new(vec![obs.len(), NONSPATIAL_LEN], ns).expect("sized above"),
    )
}

impl StateTrunk {
    pub fn new(rng: &mut impl Rng) -> Self {
        let c1 = Conv2d::new(CHANNELS, CONV1_CHANNELS, 5, 2, 2, GRID, GRID, rng);
        let (h1, w1) = (c1.out_height(), c1.out_width());
        let c2 = Conv2d::new(CONV1_CHANNELS, CONV2_CHANNELS, 3, 2, 1, h1, w1, rng);
        let spatial = Sequential::new(
            vec![CHANNELS, GRID, GRID],
            vec![Layer::Conv2d(c1), Layer::relu(), Layer::Conv2d(c2), Layer::relu(), Layer::flatten()],
        )
        .expect("fixed architecture");
        let nonspatial = Sequential::new(
            vec![NONSPATIAL_LEN],
            vec![Layer::Dense(Dense::new(NONSPATIAL_LEN, NONSPATIAL_HIDDEN, rng)), Layer::tanh()],
        )
        .expect("fixed architecture");
        debug_assert_eq!(spatial.output_len(), SPATIAL_OUT);
        Self { spatial, nonspatial }
    }

    pub fn infer(&self, obs: &[&Observation]) -> Result<Tensor> {
        let (s, n) = observation_batch(obs);
        concat_columns(&[&self.spatial.infer(&s)?, &self.nonspatial.infer(&n)?])
    }

    pub fn forward(&mut self, obs: &[&Observation]) -> Result<Tensor> {
        let (s, n) = observation_batch(obs);
        concat_columns(&[&self.spatial.forward(&s)?, &self.nonspatial.forward(&n)?])
    }

    /// Accumulates parameter gradients for a `[N, TRUNK_OUT]` output gradient.
    pub fn backward(&mut self, dy: &Tensor) -> Result<()> {
        let parts = split_columns(dy, &[SPATIAL_OUT, NONSPATIAL_HIDDEN])?;
        self.spatial.backward_params_only(&parts[0])?;
        self.nonspatial.backward_params_only(&parts[1])
    }
}

impl Parameterized for StateTrunk {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.spatial.visit_params(f);
        self.nonspatial.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.spatial.visit_params_mut(f);
        self.nonspatial.visit_params_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::GameState;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trunk_output_width() {
        let trunk = StateTrunk::new(&mut ChaCha8Rng::seed_from_u64(0));
        let obs = Observation::initial(&GameState::reset(3));
        let y = trunk.infer(&[&obs, &obs]).unwrap();
        assert_eq!(y.shape(), &[2, TRUNK_OUT]);
        assert_eq!(TRUNK_OUT, 288);
    }
}
