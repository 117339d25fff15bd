//! Elementwise activations: ReLU and ELU(alpha = 1.0).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ELU_ALPHA: f32 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActKind {
    Relu,
    Elu,
}

#[derive(Clone, Debug)]
pub struct Activation {
    pub kind: ActKind,
    cache_y: Option<Tensor>,
}

impl Activation {
    pub fn new(kind: ActKind) -> Self {
        Activation { kind, cache_y: None }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let data: Vec<f32> = match self.kind {
            ActKind::Relu => x.data().iter().map(|&v| v.max(0.0)).collect(),
            ActKind::Elu => x
                .data()
                .iter()
                .map(|&v| if v > 0.0 { v } else { ELU_ALPHA * (v.exp() - 1.0) })
                .collect(),
        };
        let y = Tensor::new(x.shape().to_vec(), data).expect("shape preserved");
        self.cache_y = Some(y.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor, name: &str) -> Result<Tensor> {
        let y = self.cache_y.as_ref().ok_or_else(|| {
            Error::State(format!("activation layer '{name}': backward before forward"))
        })?;
        if y.len() != dy.len() {
            return Err(Error::dimension(format!(
                "activation layer '{name}': upstream grad length mismatch"
            )));
        }
        let data: Vec<f32> = match self.kind {
            ActKind::Relu => y
                .data()
                .iter()
                .zip(dy.data())
                .map(|(&yv, &g)| if yv > 0.0 { g } else { 0.0 })
                .collect(),
            // For x <= 0, dy/dx = alpha * e^x = y + alpha.
            ActKind::Elu => y
                .data()
                .iter()
                .zip(dy.data())
                .map(|(&yv, &g)| if yv > 0.0 { g } else { g * (yv + ELU_ALPHA) })
                .collect(),
        };
        Tensor::new(dy.shape().to_vec(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_zeroes_negative_gradient() {
        let mut a = Activation::new(ActKind::Relu);
        let x = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        a.forward(&x);
        let dy = Tensor::filled(&[3], 1.0);
        let dx = a.backward(&dy, "act").unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn elu_matches_closed_form() {
        let mut a = Activation::new(ActKind::Elu);
        let x = Tensor::new(vec![2], vec![-0.5, 0.5]).unwrap();
        let y = a.forward(&x);
        assert!((y.data()[0] - ((-0.5f32).exp() - 1.0)).abs() < 1e-6);
        assert_eq!(y.data()[1], 0.5);
        let dy = Tensor::filled(&[2], 1.0);
        let dx = a.backward(&dy, "act").unwrap();
        assert!((dx.data()[0] - (-0.5f32).exp()).abs() < 1e-6);
        assert_eq!(dx.data()[1], 1.0);
    }
}
