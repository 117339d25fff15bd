//! Fully connected layer.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::LayerScale;

#[derive(Clone, Debug)]
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
    pub maskable: bool,
    /// `[out, in]` weight matrix.
    pub w: Tensor,
    /// `[out]` bias.
    pub b: Tensor,
    cache_x: Option<Tensor>,
    eff_w: Option<Vec<f32>>,
    eff_b: Option<Vec<f32>>,
}

impl Dense {
    pub fn new(in_features: usize, out_features: usize, maskable: bool) -> Self {
        Dense {
            in_features,
            out_features,
            maskable,
            w: Tensor::zeros(&[out_features, in_features]),
            b: Tensor::zeros(&[out_features]),
            cache_x: None,
            eff_w: None,
            eff_b: None,
        }
    }

    fn apply_scale(&mut self, scale: Option<&LayerScale>, name: &str) -> Result<()> {
        self.eff_w = None;
        self.eff_b = None;
        let Some(s) = scale else { return Ok(()) };
        let (o, i) = (self.out_features, self.in_features);
        let mut w = self.w.data().to_vec();
        if let Some(ew) = &s.elementwise {
            if ew.len() != w.len() {
                return Err(Error::dimension(format!(
                    "elementwise scale for '{name}': expected {}, got {}",
                    w.len(),
                    ew.len()
                )));
            }
            for (wi, si) in w.iter_mut().zip(ew) {
                *wi *= si;
            }
        }
        if let Some(nw) = &s.neuron_w {
            if nw.len() != o {
                return Err(Error::dimension(format!(
                    "neuron scale for '{name}': expected {o}, got {}",
                    nw.len()
                )));
            }
            for k in 0..o {
                for v in &mut w[k * i..(k + 1) * i] {
                    *v *= nw[k];
                }
            }
        }
        self.eff_w = Some(w);
        if let Some(nb) = &s.neuron_b {
            if nb.len() != o {
                return Err(Error::dimension(format!(
                    "neuron bias scale for '{name}': expected {o}, got {}",
                    nb.len()
                )));
            }
            let b: Vec<f32> = self.b.data().iter().zip(nb).map(|(b, s)| b * s).collect();
            self.eff_b = Some(b);
        }
        Ok(())
    }

    pub fn forward(
        &mut self,
        x: &Tensor,
        scale: Option<&LayerScale>,
        name: &str,
    ) -> Result<Tensor> {
        if x.shape().len() != 2 || x.shape()[1] != self.in_features {
            return Err(Error::dimension(format!(
                "dense layer '{name}': expected [N, {}], got {:?}",
                self.in_features,
                x.shape()
            )));
        }
        self.apply_scale(scale, name)?;
        let w = self.eff_w.as_deref().unwrap_or(self.w.data());
        let b = self.eff_b.as_deref().unwrap_or(self.b.data());
        let n = x.shape()[0];
        let (o, i) = (self.out_features, self.in_features);
        let xd = x.data();
        let mut y = vec![0.0f32; n * o];
        for s in 0..n {
            let xr = &xd[s * i..(s + 1) * i];
            for k in 0..o {
                let wr = &w[k * i..(k + 1) * i];
                let mut acc = b[k] as f64;
                for j in 0..i {
                    acc += xr[j] as f64 * wr[j] as f64;
                }
                y[s * o + k] = acc as f32;
            }
        }
        self.cache_x = Some(x.clone());
        Tensor::new(vec![n, o], y)
    }

    pub fn backward(&mut self, dy: &Tensor, name: &str) -> Result<Tensor> {
        let x = self
            .cache_x
            .as_ref()
            .ok_or_else(|| Error::State(format!("dense layer '{name}': backward before forward")))?;
        let n = x.shape()[0];
        let (o, i) = (self.out_features, self.in_features);
        if dy.shape() != [n, o] {
            return Err(Error::dimension(format!(
                "dense layer '{name}': upstream grad {:?}, expected [{n}, {o}]",
                dy.shape()
            )));
        }
        let xd = x.data();
        let dyd = dy.data();
        let w = self.eff_w.as_deref().unwrap_or(self.w.data()).to_vec();

        // Weight and bias gradients (with respect to effective parameters).
        {
            let gw = self.w.grad_or_zeros();
            for k in 0..o {
                for j in 0..i {
                    let mut acc = 0.0f64;
                    for s in 0..n {
                        acc += dyd[s * o + k] as f64 * xd[s * i + j] as f64;
                    }
                    gw[k * i + j] = acc as f32;
                }
            }
        }
        {
            let gb = self.b.grad_or_zeros();
            for k in 0..o {
                let mut acc = 0.0f64;
                for s in 0..n {
                    acc += dyd[s * o + k] as f64;
                }
                gb[k] = acc as f32;
            }
        }

        // Input gradient.
        let mut dx = vec![0.0f32; n * i];
        for s in 0..n {
            for j in 0..i {
                let mut acc = 0.0f64;
                for k in 0..o {
                    acc += dyd[s * o + k] as f64 * w[k * i + j] as f64;
                }
                dx[s * i + j] = acc as f32;
            }
        }
        Tensor::new(vec![n, i], dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_pass_input_through() {
        let mut d = Dense::new(2, 2, true);
        d.w.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let y = d.forward(&x, None, "d").unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let mut d = Dense::new(2, 2, true);
        let dy = Tensor::zeros(&[1, 2]);
        assert!(matches!(d.backward(&dy, "d"), Err(Error::State(_))));
    }

    #[test]
    fn neuron_scale_multiplies_rows_and_bias() {
        let mut d = Dense::new(2, 2, true);
        d.w.data_mut().copy_from_slice(&[1.0, 1.0, 1.0, 1.0]);
        d.b.data_mut().copy_from_slice(&[1.0, 1.0]);
        let scale = LayerScale {
            elementwise: None,
            neuron_w: Some(vec![2.0, 0.0]),
            neuron_b: Some(vec![1.0, 3.0]),
        };
        let x = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let y = d.forward(&x, Some(&scale), "d").unwrap();
        // row 0: 2*(1+1) + 1*1 = 5; row 1: 0*(…) + 3*1 = 3
        assert_eq!(y.data(), &[5.0, 3.0]);
    }
}
