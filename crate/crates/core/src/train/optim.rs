//! Adam updates and global-norm clipping.

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// First and second moment estimates for one flat parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamMoments {
    pub fn new(len: usize) -> Self {
        AdamMoments {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// One bias-corrected step; `t` is the 1-based step count of this block.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, t: u64) {
        assert_eq!(params.len(), self.m.len(), "parameter block length changed");
        assert_eq!(grad.len(), self.m.len(), "gradient length mismatch");
        let c1 = 1.0 - BETA1.powf(t as f64);
        let c2 = 1.0 - BETA2.powf(t as f64);
        for k in 0..params.len() {
            let g = grad[k];
            self.m[k] = BETA1 * self.m[k] + (1.0 - BETA1) * g;
            self.v[k] = BETA2 * self.v[k] + (1.0 - BETA2) * g * g;
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            params[k] -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
    }
}

/// Scales every block so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<'a>(blocks: impl IntoIterator<Item = &'a mut [f64]>, max_norm: f64) -> f64 {
    let mut blocks: Vec<&mut [f64]> = blocks.into_iter().collect();
    let norm = blocks.iter().flat_map(|b| b.iter()).map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for b in &mut blocks {
            b.iter_mut().for_each(|g| *g *= k);
        }
    }
    norm
}
