use candle_core::{Tensor, Var};

use super::ops::{scalar_f64, Init};
use crate::error::Result;

const EPS: f64 = 1e-12;

/// Power-iteration vectors for one weight, viewed as a `rows x cols` matrix.
#[derive(Debug, Clone)]
pub struct SpectralState {
    pub u: Tensor,
    pub v: Tensor,
}

fn l2_normalize(t: &Tensor) -> Result<Tensor> {
    let norm = scalar_f64(&t.sqr()?.sum_all()?)?.sqrt();
    Ok((t / (norm + EPS))?)
}

impl SpectralState {
    pub fn new(rows: usize, cols: usize, init: &mut Init) -> Result<Self> {
        Ok(Self {
            u: l2_normalize(&init.normal_tensor(&[rows, 1], 1.0)?)?,
            v: l2_normalize(&init.normal_tensor(&[cols, 1], 1.0)?)?,
        })
    }
}

/// Divides `weight` by its estimated largest singular value.
///
/// Runs `iterations` power-iteration steps on the detached matrix, updating
/// `(u, v)` in place, then returns `weight / σ̂` with `σ̂ = uᵀ W v` kept in the
/// autograd graph. With zero iterations the stored vectors are used as is.
pub fn spectral_normalize(
    weight: &Tensor,
    state: &mut SpectralState,
    iterations: usize,
) -> Result<(Tensor, f64)> {
    let rows = weight.dim(0)?;
    let mat = weight.reshape((rows, ()))?;
    let frozen = mat.detach();
    for _ in 0..iterations {
        state.v = l2_normalize(&frozen.t()?.matmul(&state.u)?)?;
        state.u = l2_normalize(&frozen.matmul(&state.v)?)?;
    }
    let sigma = state.u.t()?.matmul(&mat.matmul(&state.v)?)?.reshape(())?;
    let sigma_value = scalar_f64(&sigma)?;
    let normalized = if sigma_value.abs() < EPS {
        // an all-zero kernel stays zero
        weight.clone()
    } else {
        weight.broadcast_div(&sigma)?
    };
    Ok((normalized, sigma_value))
}

/// Convolution whose kernel is spectrally normalized on every forward.
#[derive(Debug)]
pub struct SnConv2d {
    pub weight: Var,
    pub bias: Var,
    pub state: SpectralState,
    pub stride: usize,
    pub padding: usize,
}

impl SnConv2d {
    pub fn new(
        init: &mut Init,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let weight = init.normal(&[c_out, c_in, kernel, kernel], 0.02)?;
        let state = SpectralState::new(c_out, c_in * kernel * kernel, init)?;
        Ok(Self {
            weight,
            bias: init.zeros(&[c_out])?,
            state,
            stride,
            padding,
        })
    }

    /// `power_iterations > 0` advances the estimate (training); `0` freezes it.
    pub fn forward(&mut self, x: &Tensor, power_iterations: usize) -> Result<Tensor> {
        let (w, _) = spectral_normalize(self.weight.as_tensor(), &mut self.state, power_iterations)?;
        super::ops::conv2d(x, &w, Some(self.bias.as_tensor()), self.stride, self.padding)
    }

    /// Current `σ̂` of the raw kernel without advancing the iteration.
    pub fn sigma(&self) -> Result<f64> {
        let mut s = self.state.clone();
        Ok(spectral_normalize(self.weight.as_tensor(), &mut s, 0)?.1)
    }
}
