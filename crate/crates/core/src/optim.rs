//! Plain SGD and bias-corrected Adam over flat parameter vectors.

use crate::error::{Error, Result};

/// `p <- p - lr * g`, elementwise.
pub fn sgd_step(params: &mut [f32], grads: &[f32], lr: f32) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::dimension(format!(
            "sgd: {} params vs {} grads",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

/// Adam optimizer state aligned to one flat parameter vector.
#[derive(Clone, Debug)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon_stab: f64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        AdamState {
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon_stab: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn dim(&self) -> usize {
        self.first_moment.len()
    }

    /// One bias-corrected update. `layout`, when provided, names parameter
    /// ranges so non-finite gradients can be reported by name.
    pub fn step(
        &mut self,
        params: &mut [f32],
        grads: &[f32],
        lr: f32,
        layout: Option<&[(String, usize, usize)]>,
    ) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::dimension(format!(
                "adam: state dim {}, {} params, {} grads",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
            let name = layout
                .and_then(|l| {
                    l.iter()
                        .find(|(_, off, len)| bad >= *off && bad < off + len)
                        .map(|(n, _, _)| n.clone())
                })
                .unwrap_or_else(|| format!("index {bad}"));
            return Err(Error::Numeric(format!(
                "non-finite gradient in parameter {name}"
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i] as f64;
            self.first_moment[i] = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            self.second_moment[i] =
                self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first_moment[i] / bc1;
            let v_hat = self.second_moment[i] / bc2;
            params[i] =
                (params[i] as f64 - lr as f64 * m_hat / (v_hat.sqrt() + self.epsilon_stab)) as f32;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sgd_examples() {
        let mut p = vec![1.0f32];
        sgd_step(&mut p, &[0.0], 10.0).unwrap();
        assert_eq!(p, vec![1.0]);
        sgd_step(&mut p, &[0.1], 10.0).unwrap();
        assert!((p[0] - 0.0).abs() < 1e-6);
    }

    #[test]
    fn sgd_misaligned_lengths_rejected() {
        let mut p = vec![1.0f32; 3];
        assert!(sgd_step(&mut p, &[0.0; 2], 1.0).is_err());
    }

    #[test]
    fn sgd_matches_scalar_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p0: Vec<f32> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f32> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut p = p0.clone();
        sgd_step(&mut p, &g, 0.3).unwrap();
        for i in 0..32 {
            assert_eq!(p[i], p0[i] - 0.3 * g[i]);
        }
    }

    #[test]
    fn adam_zero_gradients_leave_params_unchanged() {
        let mut adam = AdamState::new(4);
        let mut p = vec![1.0f32, -2.0, 3.0, 0.5];
        let orig = p.clone();
        for _ in 0..10 {
            adam.step(&mut p, &[0.0; 4], 0.01, None).unwrap();
        }
        assert_eq!(p, orig);
        assert_eq!(adam.step_count(), 10);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        let mut adam = AdamState::new(1);
        let mut p = vec![0.0f32];
        adam.step(&mut p, &[1.0], 0.01, None).unwrap();
        // Bias correction makes the first step ~ lr * sign(g).
        assert!((p[0] + 0.01).abs() < 1e-6);
    }

    #[test]
    fn adam_reports_nonfinite_gradient_with_name() {
        let mut adam = AdamState::new(4);
        let mut p = vec![0.0f32; 4];
        let layout = vec![("lin.weight".to_string(), 0usize, 2usize), ("lin.bias".to_string(), 2, 2)];
        let err = adam
            .step(&mut p, &[0.0, 0.0, f32::NAN, 0.0], 0.01, Some(&layout))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("lin.bias"), "error should name the parameter: {msg}");
    }

    #[test]
    fn adam_matches_independent_reference_loop() {
        // Reference Adam written from the update equations, kept separate
        // from the implementation under test.
        struct Ref {
            m: Vec<f64>,
            v: Vec<f64>,
            t: i32,
        }
        impl Ref {
            fn step(&mut self, p: &mut [f64], g: &[f64], lr: f64) {
                self.t += 1;
                for i in 0..p.len() {
                    self.m[i] = 0.9 * self.m[i] + 0.1 * g[i];
                    self.v[i] = 0.999 * self.v[i] + 0.001 * g[i] * g[i];
                    let mh = self.m[i] / (1.0 - 0.9f64.powi(self.t));
                    let vh = self.v[i] / (1.0 - 0.999f64.powi(self.t));
                    p[i] -= lr * mh / (vh.sqrt() + 1e-8);
                }
            }
        }

        let dim = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut adam = AdamState::new(dim);
        let mut p: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut rp: Vec<f64> = p.iter().map(|&v| v as f64).collect();
        let mut reference = Ref { m: vec![0.0; dim], v: vec![0.0; dim], t: 0 };

        for _ in 0..100 {
            let g: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let gd: Vec<f64> = g.iter().map(|&v| v as f64).collect();
            adam.step(&mut p, &g, 0.01, None).unwrap();
            reference.step(&mut rp, &gd, 0.01);
        }
        for i in 0..dim {
            assert!(
                (p[i] as f64 - rp[i]).abs() < 1e-6,
                "param {i}: {} vs {}",
                p[i],
                rp[i]
            );
        }
    }
}
