//! Adam over flat parameter tensors.

/// Anything exposing its trainable tensors in a fixed declared order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam state for one ordered list of tensors.
///
/// Updated parameters are rounded to single precision after every step so
/// that they survive the 32-bit checkpoint format unchanged.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        Adam {
            config,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_tensors(config: AdamConfig, tensors: &[&[f64]]) -> Self {
        Self::new(config, &tensors.iter().map(|t| t.len()).collect::<Vec<_>>())
    }

    pub fn update(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        assert_eq!(params.len(), self.m.len(), "parameter list does not match optimizer state");
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] = round_f32(p[i] - lr * mhat / (vhat.sqrt() + eps));
            }
        }
    }
}

#[inline]
pub fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![1.0f64, -1.0];
        let g = vec![0.5, -2.0];
        let mut adam = Adam::new(AdamConfig::with_lr(0.01), &[2]);
        adam.update(vec![&mut p[..]], vec![&g[..]]);
        assert!((p[0] - 0.99).abs() < 1e-6);
        assert!((p[1] + 0.99).abs() < 1e-6);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut x = vec![3.0f64];
        let mut adam = Adam::new(AdamConfig::with_lr(0.1), &[1]);
        for _ in 0..500 {
            let g = vec![2.0 * (x[0] - 1.0)];
            adam.update(vec![&mut x[..]], vec![&g[..]]);
        }
        assert!((x[0] - 1.0).abs() < 1e-2);
    }
}
