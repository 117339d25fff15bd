//! Inverted dropout; identity in eval mode.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::Mode;

#[derive(Clone, Debug)]
pub struct Dropout {
    pub rate: f32,
    mask: Option<Vec<f32>>,
}

impl Dropout {
    pub fn new(rate: f32) -> Self {
        Dropout { rate, mask: None }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut ChaCha8Rng) -> Tensor {
        if mode == Mode::Eval || self.rate <= 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mask: Vec<f32> = (0..x.len())
            .map(|_| if rng.gen::<f32>() < keep { scale } else { 0.0 })
            .collect();
        let data: Vec<f32> = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.mask = Some(mask);
        Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
    }

    pub fn backward(&mut self, dy: &Tensor, name: &str) -> Result<Tensor> {
        match &self.mask {
            None => Ok(dy.clone()),
            Some(mask) => {
                if mask.len() != dy.len() {
                    return Err(Error::dimension(format!(
                        "dropout layer '{name}': upstream grad length {}, expected {}",
                        dy.len(),
                        mask.len()
                    )));
                }
                let data: Vec<f32> =
                    dy.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                Tensor::new(dy.shape().to_vec(), data)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn eval_mode_is_identity() {
        let mut d = Dropout::new(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = d.forward(&x, Mode::Eval, &mut rng);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn backward_reuses_forward_mask() {
        let mut d = Dropout::new(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::filled(&[64], 1.0);
        let y = d.forward(&x, Mode::Train, &mut rng);
        let dy = Tensor::filled(&[64], 1.0);
        let dx = d.backward(&dy, "drop").unwrap();
        // Gradient equals the forward scaling exactly: 0 where dropped,
        // 1/keep where kept.
        assert_eq!(dx.data(), y.data());
        assert!(dx.data().iter().any(|&v| v == 0.0));
        assert!(dx.data().iter().any(|&v| v == 2.0));
    }
}
