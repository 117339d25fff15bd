//! Flattens all non-batch dimensions.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default)]
pub struct Flatten {
    cache_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let sh = x.shape();
        if sh.is_empty() {
            return Err(Error::dimension("flatten: scalar input"));
        }
        self.cache_shape = Some(sh.to_vec());
        let n = sh[0];
        let rest: usize = sh[1..].iter().product();
        let mut y = x.clone();
        y.reshape(vec![n, rest])?;
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor, name: &str) -> Result<Tensor> {
        let shape = self.cache_shape.as_ref().ok_or_else(|| {
            Error::State(format!("flatten layer '{name}': backward before forward"))
        })?;
        let mut dx = dy.clone();
        dx.reshape(shape.clone())?;
        Ok(dx)
    }
}
