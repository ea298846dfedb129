use std::sync::Mutex;

use super::AgentError;
use crate::nn::{Adam, AdamConfig};

struct Inner {
    params: Vec<f64>,
    adam: Adam,
    version: u64,
}

/// Global parameters behind one lock. Every applied update increments the
/// version by exactly one; snapshots copy a consistent version.
pub struct SharedParams {
    inner: Mutex<Inner>,
}

impl SharedParams {
    pub fn new(params: Vec<f64>, lr: f64) -> Self {
        let adam = Adam::new(AdamConfig::with_lr(lr), params.len());
        Self {
            inner: Mutex::new(Inner {
                params,
                adam,
                version: 0,
            }),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Copies the current parameters into `out` and returns their version.
    pub fn snapshot_into(&self, out: &mut Vec<f64>) -> u64 {
        let g = self.lock();
        out.clear();
        out.extend_from_slice(&g.params);
        g.version
    }

    pub fn snapshot(&self) -> (Vec<f64>, u64) {
        let mut v = Vec::new();
        let ver = self.snapshot_into(&mut v);
        (v, ver)
    }

    pub fn version(&self) -> u64 {
        self.lock().version
    }

    /// Applies one Adam step with `grads` and returns the new version.
    pub fn apply(&self, grads: &[f64]) -> Result<u64, AgentError> {
        let mut g = self.lock();
        let Inner { params, adam, version } = &mut *g;
        adam.step(params, grads)?;
        *version += 1;
        Ok(*version)
    }
}

/// Rescales `grads` in place so their L2 norm is at most `max_norm`; returns the original norm.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn version_counts_updates_across_threads() {
        let shared = Arc::new(SharedParams::new(vec![0.0; 4], 1e-3));
        std::thread::scope(|s| {
            for _ in 0..4 {
                let sh = Arc::clone(&shared);
                s.spawn(move || {
                    for _ in 0..25 {
                        sh.apply(&[0.1, -0.1, 0.0, 1.0]).unwrap();
                    }
                });
            }
        });
        assert_eq!(shared.version(), 100);
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = vec![30.0, 40.0];
        assert_eq!(clip_grad_norm(&mut g, 10.0), 50.0);
        assert!((g[0] - 6.0).abs() < 1e-12 && (g[1] - 8.0).abs() < 1e-12);
        let mut small = vec![1.0, 1.0];
        clip_grad_norm(&mut small, 10.0);
        assert_eq!(small, vec![1.0, 1.0]);
    }
}
