//! 2-D batch normalization over `[N, C, H, W]`.
//!
//! Training mode normalizes with batch statistics and updates the running
//! estimates; eval mode normalizes with the (frozen) running estimates.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{LayerScale, Mode};

pub const BN_EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub channels: usize,
    /// Per-channel scale (gamma).
    pub scale: Tensor,
    /// Per-channel shift (beta).
    pub shift: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    cache: Option<Cache>,
    eff_scale: Option<Vec<f32>>,
    eff_shift: Option<Vec<f32>>,
}

#[derive(Clone, Debug)]
struct Cache {
    xhat: Vec<f32>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
    train_stats: bool,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            channels,
            scale: Tensor::filled(&[channels], 1.0),
            shift: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
            cache: None,
            eff_scale: None,
            eff_shift: None,
        }
    }

    fn apply_scale(&mut self, scale: Option<&LayerScale>, name: &str) -> Result<()> {
        self.eff_scale = None;
        self.eff_shift = None;
        let Some(s) = scale else { return Ok(()) };
        if s.elementwise.is_some() {
            return Err(Error::Contract(format!(
                "batch-norm layer '{name}' takes neuron scales only"
            )));
        }
        if let Some(nw) = &s.neuron_w {
            if nw.len() != self.channels {
                return Err(Error::dimension(format!(
                    "scale for '{name}': expected {}, got {}",
                    self.channels,
                    nw.len()
                )));
            }
            self.eff_scale =
                Some(self.scale.data().iter().zip(nw).map(|(g, s)| g * s).collect());
        }
        if let Some(nb) = &s.neuron_b {
            if nb.len() != self.channels {
                return Err(Error::dimension(format!(
                    "shift scale for '{name}': expected {}, got {}",
                    self.channels,
                    nb.len()
                )));
            }
            self.eff_shift =
                Some(self.shift.data().iter().zip(nb).map(|(b, s)| b * s).collect());
        }
        Ok(())
    }

    pub fn forward(
        &mut self,
        x: &Tensor,
        mode: Mode,
        scale: Option<&LayerScale>,
        name: &str,
    ) -> Result<Tensor> {
        let sh = x.shape();
        if sh.len() != 4 || sh[1] != self.channels {
            return Err(Error::dimension(format!(
                "batch-norm layer '{name}': expected [N, {}, H, W], got {:?}",
                self.channels, sh
            )));
        }
        self.apply_scale(scale, name)?;
        let (n, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
        let plane = h * w;
        let m = (n * plane) as f64;
        let xd = x.data();
        let gamma = self.eff_scale.as_deref().unwrap_or(self.scale.data());
        let beta = self.eff_shift.as_deref().unwrap_or(self.shift.data());

        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        let train_stats = mode == Mode::Train;
        if train_stats {
            for ci in 0..c {
                let mut acc = 0.0f64;
                for s in 0..n {
                    let xc = &xd[(s * c + ci) * plane..(s * c + ci + 1) * plane];
                    for v in xc {
                        acc += *v as f64;
                    }
                }
                mean[ci] = acc / m;
            }
            for ci in 0..c {
                let mut acc = 0.0f64;
                for s in 0..n {
                    let xc = &xd[(s * c + ci) * plane..(s * c + ci + 1) * plane];
                    for v in xc {
                        let d = *v as f64 - mean[ci];
                        acc += d * d;
                    }
                }
                var[ci] = acc / m;
            }
            // Running estimates use the unbiased variance.
            let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            let rm = self.running_mean.data_mut();
            let rv = self.running_var.data_mut();
            for ci in 0..c {
                rm[ci] = ((1.0 - MOMENTUM) * rm[ci] as f64 + MOMENTUM * mean[ci]) as f32;
                rv[ci] =
                    ((1.0 - MOMENTUM) * rv[ci] as f64 + MOMENTUM * var[ci] * unbias) as f32;
            }
        } else {
            for ci in 0..c {
                mean[ci] = self.running_mean.data()[ci] as f64;
                var[ci] = self.running_var.data()[ci] as f64;
            }
        }

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = vec![0.0f32; xd.len()];
        let mut y = vec![0.0f32; xd.len()];
        for s in 0..n {
            for ci in 0..c {
                let base = (s * c + ci) * plane;
                for p in 0..plane {
                    let xh = (xd[base + p] as f64 - mean[ci]) * inv_std[ci];
                    xhat[base + p] = xh as f32;
                    y[base + p] = (gamma[ci] as f64 * xh + beta[ci] as f64) as f32;
                }
            }
        }
        self.cache = Some(Cache { xhat, inv_std, shape: sh.to_vec(), train_stats });
        Tensor::new(sh.to_vec(), y)
    }

    pub fn backward(&mut self, dy: &Tensor, name: &str) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or_else(|| {
            Error::State(format!("batch-norm layer '{name}': backward before forward"))
        })?;
        if dy.shape() != cache.shape.as_slice() {
            return Err(Error::dimension(format!(
                "batch-norm layer '{name}': upstream grad {:?}, expected {:?}",
                dy.shape(),
                cache.shape
            )));
        }
        let (n, c, h, w) = (cache.shape[0], cache.shape[1], cache.shape[2], cache.shape[3]);
        let plane = h * w;
        let m = (n * plane) as f64;
        let dyd = dy.data();
        let xhat = &cache.xhat;
        let gamma = self.eff_scale.as_deref().unwrap_or(self.scale.data()).to_vec();

        let mut dgamma = vec![0.0f64; c];
        let mut dbeta = vec![0.0f64; c];
        for s in 0..n {
            for ci in 0..c {
                let base = (s * c + ci) * plane;
                for p in 0..plane {
                    dgamma[ci] += dyd[base + p] as f64 * xhat[base + p] as f64;
                    dbeta[ci] += dyd[base + p] as f64;
                }
            }
        }
        {
            let g = self.scale.grad_or_zeros();
            for ci in 0..c {
                g[ci] = dgamma[ci] as f32;
            }
        }
        {
            let g = self.shift.grad_or_zeros();
            for ci in 0..c {
                g[ci] = dbeta[ci] as f32;
            }
        }

        let mut dx = vec![0.0f32; dyd.len()];
        if cache.train_stats {
            // Full backward through the batch statistics.
            for ci in 0..c {
                let k = gamma[ci] as f64 * cache.inv_std[ci];
                let mean_dy = dbeta[ci] / m;
                let mean_dy_xhat = dgamma[ci] / m;
                for s in 0..n {
                    let base = (s * c + ci) * plane;
                    for p in 0..plane {
                        let v = dyd[base + p] as f64
                            - mean_dy
                            - xhat[base + p] as f64 * mean_dy_xhat;
                        dx[base + p] = (k * v) as f32;
                    }
                }
            }
        } else {
            for ci in 0..c {
                let k = gamma[ci] as f64 * cache.inv_std[ci];
                for s in 0..n {
                    let base = (s * c + ci) * plane;
                    for p in 0..plane {
                        dx[base + p] = (k * dyd[base + p] as f64) as f32;
                    }
                }
            }
        }
        Tensor::new(cache.shape.clone(), dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_mode_normalizes_batch() {
        let mut bn = BatchNorm2d::new(1);
        let x = Tensor::new(vec![2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = bn.forward(&x, Mode::Train, None, "bn").unwrap();
        let mean: f64 = y.data().iter().map(|&v| v as f64).sum::<f64>() / 4.0;
        let var: f64 = y.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-3);
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let mut bn = BatchNorm2d::new(1);
        bn.running_mean.data_mut()[0] = 2.0;
        bn.running_var.data_mut()[0] = 4.0;
        let x = Tensor::new(vec![1, 1, 1, 1], vec![4.0]).unwrap();
        let y = bn.forward(&x, Mode::Eval, None, "bn").unwrap();
        // (4 - 2) / sqrt(4 + eps) ~= 1.0
        assert!((y.data()[0] - 1.0).abs() < 1e-4);
    }
}
