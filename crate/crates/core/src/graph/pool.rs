//! 2x2 max pooling with stride 2.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default)]
pub struct MaxPool2x2 {
    cache: Option<(Vec<usize>, Vec<usize>)>, // (input shape, argmax flat indices)
}

impl MaxPool2x2 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Tensor, name: &str) -> Result<Tensor> {
        let sh = x.shape();
        if sh.len() != 4 {
            return Err(Error::dimension(format!(
                "max-pool layer '{name}': expected [N, C, H, W], got {:?}",
                sh
            )));
        }
        let (n, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dimension(format!(
                "max-pool layer '{name}': spatial dims must be even, got {h}x{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xd = x.data();
        let mut y = vec![0.0f32; n * c * oh * ow];
        let mut arg = vec![0usize; y.len()];
        for s in 0..n {
            for ci in 0..c {
                let base = (s * c + ci) * h * w;
                let obase = (s * c + ci) * oh * ow;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f32::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let idx = base + (oy * 2 + dy) * w + ox * 2 + dx;
                                if xd[idx] > best {
                                    best = xd[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        y[obase + oy * ow + ox] = best;
                        arg[obase + oy * ow + ox] = best_idx;
                    }
                }
            }
        }
        self.cache = Some((sh.to_vec(), arg));
        Tensor::new(vec![n, c, oh, ow], y)
    }

    pub fn backward(&mut self, dy: &Tensor, name: &str) -> Result<Tensor> {
        let (in_shape, arg) = self.cache.as_ref().ok_or_else(|| {
            Error::State(format!("max-pool layer '{name}': backward before forward"))
        })?;
        if dy.len() != arg.len() {
            return Err(Error::dimension(format!(
                "max-pool layer '{name}': upstream grad has {} elements, expected {}",
                dy.len(),
                arg.len()
            )));
        }
        let mut dx = vec![0.0f32; in_shape.iter().product()];
        for (g, &idx) in dy.data().iter().zip(arg) {
            dx[idx] += g;
        }
        Tensor::new(in_shape.clone(), dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_block_max_and_routes_gradient() {
        let mut p = MaxPool2x2::new();
        let x = Tensor::new(
            vec![1, 1, 2, 2],
            vec![1.0, 5.0, 3.0, 2.0],
        )
        .unwrap();
        let y = p.forward(&x, "p").unwrap();
        assert_eq!(y.data(), &[5.0]);
        let dy = Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        let dx = p.backward(&dy, "p").unwrap();
        assert_eq!(dx.data(), &[0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn odd_spatial_dims_rejected() {
        let mut p = MaxPool2x2::new();
        let x = Tensor::zeros(&[1, 1, 3, 4]);
        assert!(p.forward(&x, "p").is_err());
    }
}
