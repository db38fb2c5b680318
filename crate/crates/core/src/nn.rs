//! Seeded parameter store and the differentiable primitives the encoder and decoder
//! share. Everything here is composed from basic tensor ops so that backpropagation
//! works for both `f32` training and `f64` gradient checks.

use candle_core::{DType, Device, Module, Tensor, Var, D};
use candle_nn::{Conv2d, Conv2dConfig, Linear};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Owns every trainable variable in creation order, initialized from a seeded stream.
///
/// Creation order is part of the checkpoint contract: two stores built from the same
/// config list identical names and shapes.
#[derive(Debug)]
pub struct ParamStore {
    vars: Vec<(String, Var)>,
    rng: ChaCha8Rng,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            vars: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            dtype,
            device: device.clone(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn vars(&self) -> &[(String, Var)] {
        &self.vars
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn parameter_count(&self) -> usize {
        self.vars.iter().map(|(_, v)| v.elem_count()).sum()
    }

    fn register(&mut self, name: &str, values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let tensor = var.as_tensor().clone();
        self.vars.push((name.to_string(), var));
        Ok(tensor)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        let values = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.register(name, values, shape)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        self.register(name, vec![value; n], shape)
    }

    pub fn from_values(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        self.register(name, values, shape)
    }

    /// Fan-in uniform init for weight and bias; `gain` scales the weight bound only.
    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, bias: bool, gain: f64) -> Result<Linear> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = self.uniform(&format!("{name}.weight"), &[fan_out, fan_in], gain * bound)?;
        let b = if bias {
            Some(self.uniform(&format!("{name}.bias"), &[fan_out], bound)?)
        } else {
            None
        };
        Ok(Linear::new(w, b))
    }

    pub fn conv2d(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Conv2d> {
        let bound = 1.0 / ((c_in * kernel * kernel) as f64).sqrt();
        let w = self.uniform(&format!("{name}.weight"), &[c_out, c_in, kernel, kernel], bound)?;
        let b = self.uniform(&format!("{name}.bias"), &[c_out], bound)?;
        let cfg = Conv2dConfig {
            padding,
            stride,
            ..Default::default()
        };
        Ok(Conv2d::new(w, Some(b), cfg))
    }
}

/// Affine layer normalization over the last dimension.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(params: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: params.constant(&format!("{name}.gamma"), &[dim], 1.0)?,
            beta: params.constant(&format!("{name}.beta"), &[dim], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centred = x.broadcast_sub(&mean)?;
        let var = centred.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centred.broadcast_div(&(var + LAYER_NORM_EPS)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::softmax(x, D::Minus1)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

/// Two-layer perceptron with a ReLU hidden layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new(params: &mut ParamStore, name: &str, dims: [usize; 3], out_gain: f64) -> Result<Self> {
        Ok(Self {
            hidden: params.linear(&format!("{name}.0"), dims[0], dims[1], true, 1.0)?,
            out: params.linear(&format!("{name}.1"), dims[1], dims[2], true, out_gain)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.out.forward(&self.hidden.forward(x)?.relu()?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_parameters() {
        let dev = Device::Cpu;
        let mut a = ParamStore::new(3, DType::F64, &dev);
        let mut b = ParamStore::new(3, DType::F64, &dev);
        let ta = a.uniform("w", &[4, 5], 0.5).unwrap();
        let tb = b.uniform("w", &[4, 5], 0.5).unwrap();
        assert_eq!(ta.to_vec2::<f64>().unwrap(), tb.to_vec2::<f64>().unwrap());
        let mut c = ParamStore::new(4, DType::F64, &dev);
        let tc = c.uniform("w", &[4, 5], 0.5).unwrap();
        assert_ne!(ta.to_vec2::<f64>().unwrap(), tc.to_vec2::<f64>().unwrap());
    }

    #[test]
    fn layer_norm_standardizes() {
        let dev = Device::Cpu;
        let mut p = ParamStore::new(0, DType::F64, &dev);
        let ln = LayerNorm::new(&mut p, "ln", 4).unwrap();
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0, 10.0]], &dev).unwrap();
        let y = ln.forward(&x).unwrap().to_vec2::<f64>().unwrap();
        let mean: f64 = y[0].iter().sum::<f64>() / 4.0;
        let var: f64 = y[0].iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn sigmoid_and_softmax_values() {
        let dev = Device::Cpu;
        let x = Tensor::new(&[0.0f64, 3f64.ln(), -1e3], &dev).unwrap();
        let s = sigmoid(&x).unwrap().to_vec1::<f64>().unwrap();
        assert!((s[0] - 0.5).abs() < 1e-15);
        assert!((s[1] - 0.75).abs() < 1e-12);
        assert!(s[2] >= 0.0 && s[2] < 1e-300);
        let g = softmax_last(&Tensor::new(&[[3f64.ln(), 0.0]], &dev).unwrap()).unwrap();
        let g = g.to_vec2::<f64>().unwrap();
        assert!((g[0][0] - 0.75).abs() < 1e-12 && (g[0][1] - 0.25).abs() < 1e-12);
    }
}
