//! 3x3 convolution with stride 1 and same padding.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::LayerScale;

pub const KERNEL: usize = 3;
const PAD: isize = 1;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub maskable: bool,
    /// `[out, in, 3, 3]` kernel.
    pub w: Tensor,
    /// `[out]` bias.
    pub b: Tensor,
    cache_x: Option<Tensor>,
    eff_w: Option<Vec<f32>>,
    eff_b: Option<Vec<f32>>,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, maskable: bool) -> Self {
        Conv2d {
            in_channels,
            out_channels,
            maskable,
            w: Tensor::zeros(&[out_channels, in_channels, KERNEL, KERNEL]),
            b: Tensor::zeros(&[out_channels]),
            cache_x: None,
            eff_w: None,
            eff_b: None,
        }
    }

    pub fn weights_per_neuron(&self) -> usize {
        self.in_channels * KERNEL * KERNEL
    }

    fn apply_scale(&mut self, scale: Option<&LayerScale>, name: &str) -> Result<()> {
        self.eff_w = None;
        self.eff_b = None;
        let Some(s) = scale else { return Ok(()) };
        let row = self.weights_per_neuron();
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
            if nw.len() != self.out_channels {
                return Err(Error::dimension(format!(
                    "neuron scale for '{name}': expected {}, got {}",
                    self.out_channels,
                    nw.len()
                )));
            }
            for k in 0..self.out_channels {
                for v in &mut w[k * row..(k + 1) * row] {
                    *v *= nw[k];
                }
            }
        }
        self.eff_w = Some(w);
        if let Some(nb) = &s.neuron_b {
            if nb.len() != self.out_channels {
                return Err(Error::dimension(format!(
                    "neuron bias scale for '{name}': expected {}, got {}",
                    self.out_channels,
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
        let sh = x.shape();
        if sh.len() != 4 || sh[1] != self.in_channels {
            return Err(Error::dimension(format!(
                "conv layer '{name}': expected [N, {}, H, W], got {:?}",
                self.in_channels, sh
            )));
        }
        self.apply_scale(scale, name)?;
        let (n, c, h, wd) = (sh[0], sh[1], sh[2], sh[3]);
        let o = self.out_channels;
        let w = self.eff_w.as_deref().unwrap_or(self.w.data());
        let b = self.eff_b.as_deref().unwrap_or(self.b.data());
        let xd = x.data();
        let mut y = vec![0.0f32; n * o * h * wd];
        for s in 0..n {
            let xb = &xd[s * c * h * wd..(s + 1) * c * h * wd];
            for k in 0..o {
                let wk = &w[k * c * KERNEL * KERNEL..(k + 1) * c * KERNEL * KERNEL];
                let yo = &mut y[(s * o + k) * h * wd..(s * o + k + 1) * h * wd];
                for iy in 0..h {
                    for ix in 0..wd {
                        let mut acc = b[k] as f64;
                        for ci in 0..c {
                            let xc = &xb[ci * h * wd..(ci + 1) * h * wd];
                            let wc = &wk[ci * KERNEL * KERNEL..(ci + 1) * KERNEL * KERNEL];
                            for u in 0..KERNEL {
                                let sy = iy as isize + u as isize - PAD;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                for v in 0..KERNEL {
                                    let sx = ix as isize + v as isize - PAD;
                                    if sx < 0 || sx >= wd as isize {
                                        continue;
                                    }
                                    acc += xc[sy as usize * wd + sx as usize] as f64
                                        * wc[u * KERNEL + v] as f64;
                                }
                            }
                        }
                        yo[iy * wd + ix] = acc as f32;
                    }
                }
            }
        }
        self.cache_x = Some(x.clone());
        Tensor::new(vec![n, o, h, wd], y)
    }

    pub fn backward(&mut self, dy: &Tensor, name: &str) -> Result<Tensor> {
        let x = self
            .cache_x
            .as_ref()
            .ok_or_else(|| Error::State(format!("conv layer '{name}': backward before forward")))?;
        let sh = x.shape();
        let (n, c, h, wd) = (sh[0], sh[1], sh[2], sh[3]);
        let o = self.out_channels;
        if dy.shape() != [n, o, h, wd] {
            return Err(Error::dimension(format!(
                "conv layer '{name}': upstream grad {:?}, expected [{n}, {o}, {h}, {wd}]",
                dy.shape()
            )));
        }
        let xd = x.data();
        let dyd = dy.data();
        let w = self.eff_w.as_deref().unwrap_or(self.w.data()).to_vec();

        {
            let gw = self.w.grad_or_zeros();
            for k in 0..o {
                for ci in 0..c {
                    for u in 0..KERNEL {
                        for v in 0..KERNEL {
                            let mut acc = 0.0f64;
                            for s in 0..n {
                                let dyo = &dyd[(s * o + k) * h * wd..(s * o + k + 1) * h * wd];
                                let xc = &xd[(s * c + ci) * h * wd..(s * c + ci + 1) * h * wd];
                                for iy in 0..h {
                                    let sy = iy as isize + u as isize - PAD;
                                    if sy < 0 || sy >= h as isize {
                                        continue;
                                    }
                                    for ix in 0..wd {
                                        let sx = ix as isize + v as isize - PAD;
                                        if sx < 0 || sx >= wd as isize {
                                            continue;
                                        }
                                        acc += dyo[iy * wd + ix] as f64
                                            * xc[sy as usize * wd + sx as usize] as f64;
                                    }
                                }
                            }
                            gw[((k * c + ci) * KERNEL + u) * KERNEL + v] = acc as f32;
                        }
                    }
                }
            }
        }
        {
            let gb = self.b.grad_or_zeros();
            for k in 0..o {
                let mut acc = 0.0f64;
                for s in 0..n {
                    let dyo = &dyd[(s * o + k) * h * wd..(s * o + k + 1) * h * wd];
                    for v in dyo {
                        acc += *v as f64;
                    }
                }
                gb[k] = acc as f32;
            }
        }

        // Input gradient: correlate upstream grad with the kernel.
        let mut dx = vec![0.0f32; n * c * h * wd];
        for s in 0..n {
            for ci in 0..c {
                let dxc = &mut dx[(s * c + ci) * h * wd..(s * c + ci + 1) * h * wd];
                for k in 0..o {
                    let dyo = &dyd[(s * o + k) * h * wd..(s * o + k + 1) * h * wd];
                    let wc = &w[(k * c + ci) * KERNEL * KERNEL..(k * c + ci + 1) * KERNEL * KERNEL];
                    for iy in 0..h {
                        for ix in 0..wd {
                            let g = dyo[iy * wd + ix];
                            if g == 0.0 {
                                continue;
                            }
                            for u in 0..KERNEL {
                                let sy = iy as isize + u as isize - PAD;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                for v in 0..KERNEL {
                                    let sx = ix as isize + v as isize - PAD;
                                    if sx < 0 || sx >= wd as isize {
                                        continue;
                                    }
                                    dxc[sy as usize * wd + sx as usize] +=
                                        g * wc[u * KERNEL + v];
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![n, c, h, wd], dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_preserves_input() {
        let mut conv = Conv2d::new(1, 1, true);
        // Delta kernel: only the center tap is 1.
        conv.w.data_mut()[4] = 1.0;
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = conv.forward(&x, None, "c").unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn forward_matches_loop_oracle() {
        // 1 channel in, 1 out, fixed kernel; compare against an independent
        // scalar loop with explicit zero padding.
        let mut conv = Conv2d::new(1, 1, true);
        let kernel: Vec<f32> = (0..9).map(|i| (i as f32 - 4.0) * 0.1).collect();
        conv.w.data_mut().copy_from_slice(&kernel);
        conv.b.data_mut()[0] = 0.5;
        let h = 4;
        let img: Vec<f32> = (0..h * h).map(|i| (i as f32 * 0.37).sin()).collect();
        let x = Tensor::new(vec![1, 1, h, h], img.clone()).unwrap();
        let y = conv.forward(&x, None, "c").unwrap();

        let at = |i: isize, j: isize| -> f64 {
            if i < 0 || j < 0 || i >= h as isize || j >= h as isize {
                0.0
            } else {
                img[i as usize * h + j as usize] as f64
            }
        };
        for iy in 0..h {
            for ix in 0..h {
                let mut acc = 0.5f64;
                for u in 0..3 {
                    for v in 0..3 {
                        acc += at(iy as isize + u - 1, ix as isize + v - 1)
                            * kernel[(u * 3 + v) as usize] as f64;
                    }
                }
                let got = y.data()[iy * h + ix] as f64;
                assert!((got - acc).abs() < 1e-6, "pixel ({iy},{ix}): {got} vs {acc}");
            }
        }
    }
}
