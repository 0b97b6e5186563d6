use super::params::Parameters;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.001, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &impl Parameters) -> Self {
        let zeros: Vec<Vec<f64>> = params.slices().iter().map(|s| vec![0.0; s.len()]).collect();
        AdamState { step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of `params` along `grads`.
pub fn adam_step<P: Parameters>(params: &mut P, grads: &P, state: &mut AdamState, config: &AdamConfig) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    let grads = grads.slices();
    for (((p, g), m), v) in params
        .slices_mut()
        .into_iter()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        assert_eq!(p.len(), g.len(), "gradient shape mismatch");
        for i in 0..p.len() {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![1.0, -2.0, 3.5];
        let g = vec![0.0; 3];
        let mut s = AdamState::new(&p);
        for _ in 0..5 {
            adam_step(&mut p, &g, &mut s, &AdamConfig::default());
        }
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
        assert_eq!(s.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_lr_against_the_sign() {
        let mut p = vec![0.0, 0.0, 0.0];
        let g = vec![3.0, -0.01, 250.0];
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &g, &mut s, &cfg);
        for (pi, gi) in p.iter().zip(&g) {
            assert_eq!(pi.signum(), -gi.signum());
            assert!((pi.abs() - cfg.lr).abs() < 1e-6 * cfg.lr.max(1.0));
        }
    }

    #[test]
    fn two_steps_descend_a_quadratic() {
        let f = |x: f64| (x - 3.0).powi(2);
        let mut p = vec![0.0];
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let before = f(p[0]);
        for _ in 0..2 {
            let g = vec![2.0 * (p[0] - 3.0)];
            adam_step(&mut p, &g, &mut s, &cfg);
        }
        assert!(f(p[0]) < before);
    }
}
