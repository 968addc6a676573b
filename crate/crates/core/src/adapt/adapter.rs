//! Bottleneck adapter on region features and the adaptable state `(phi, delta)`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard deviation of the down-projection entries at initialization; with
/// unit-norm features this gives unit-variance pre-activations.
pub const DOWN_INIT_STD: f64 = 1.0;

/// Exact GELU, `x * Phi(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

/// `d/dx GELU(x) = Phi(x) + x * phi(x)`.
pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

/// Two-layer bottleneck MLP added residually to each feature row:
/// `v' = v + GELU(v W_down + b_down) W_up + b_up`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    pub w_down: Array2<f64>,
    pub b_down: Array1<f64>,
    pub w_up: Array2<f64>,
    pub b_up: Array1<f64>,
    reduction: usize,
}

impl AdapterParams {
    /// Down-projection drawn from `N(0, DOWN_INIT_STD^2)` with `seed`; the up
    /// projection and both biases start at zero, so the block is the identity.
    pub fn zero_init(dim: usize, reduction: usize, seed: u64) -> Result<Self> {
        let hidden = hidden_width(dim, reduction)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, DOWN_INIT_STD).expect("valid std");
        let w_down = Array2::from_shape_simple_fn((dim, hidden), || normal.sample(&mut rng));
        Ok(Self {
            w_down,
            b_down: Array1::zeros(hidden),
            w_up: Array2::zeros((hidden, dim)),
            b_up: Array1::zeros(dim),
            reduction,
        })
    }

    /// All-zero parameters of the given shape; used for gradient buffers.
    pub fn zeros_like(&self) -> Self {
        Self {
            w_down: Array2::zeros(self.w_down.raw_dim()),
            b_down: Array1::zeros(self.b_down.raw_dim()),
            w_up: Array2::zeros(self.w_up.raw_dim()),
            b_up: Array1::zeros(self.b_up.raw_dim()),
            reduction: self.reduction,
        }
    }

    pub fn dim(&self) -> usize {
        self.w_down.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w_down.ncols()
    }

    pub fn reduction(&self) -> usize {
        self.reduction
    }

    pub fn num_params(&self) -> usize {
        self.w_down.len() + self.b_down.len() + self.w_up.len() + self.b_up.len()
    }

    /// Parameters flattened in the order `w_down, b_down, w_up, b_up`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend(self.w_down.iter());
        out.extend(self.b_down.iter());
        out.extend(self.w_up.iter());
        out.extend(self.b_up.iter());
        out
    }

    pub fn from_flat(&self, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut rest = flat;
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head.to_vec()
        };
        let (d, h) = (self.dim(), self.hidden());
        Self {
            w_down: Array2::from_shape_vec((d, h), take(d * h)).expect("shape"),
            b_down: Array1::from(take(h)),
            w_up: Array2::from_shape_vec((h, d), take(h * d)).expect("shape"),
            b_up: Array1::from(take(d)),
            reduction: self.reduction,
        }
    }

    /// `self -= lr * grad`, elementwise.
    pub fn descend(&mut self, grad: &AdapterParams, lr: f64) {
        self.w_down.scaled_add(-lr, &grad.w_down);
        self.b_down.scaled_add(-lr, &grad.b_down);
        self.w_up.scaled_add(-lr, &grad.w_up);
        self.b_up.scaled_add(-lr, &grad.b_up);
    }

    pub fn l2_norm(&self) -> f64 {
        self.to_flat().iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

pub fn hidden_width(dim: usize, reduction: usize) -> Result<usize> {
    if reduction == 0 || dim == 0 || !dim.is_multiple_of(reduction) {
        return Err(Error::InvalidConfig(format!("feature dimension {dim} is not divisible by reduction {reduction}")));
    }
    Ok(dim / reduction)
}

pub fn apply_adapter(features: ArrayView2<'_, f64>, phi: &AdapterParams) -> Result<Array2<f64>> {
    if features.ncols() != phi.dim() {
        return Err(Error::ShapeMismatch(format!(
            "features have dimension {}, adapter expects {}",
            features.ncols(),
            phi.dim()
        )));
    }
    let mut hidden = features.dot(&phi.w_down);
    hidden += &phi.b_down.view().insert_axis(Axis(0));
    hidden.mapv_inplace(gelu);
    let mut out = hidden.dot(&phi.w_up);
    out += &phi.b_up.view().insert_axis(Axis(0));
    out += &features;
    Ok(out)
}

/// Adapter parameter counts for hidden size `d` and reduction `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    /// `2 d^2 / r`, the two projection matrices.
    pub weights_only: usize,
    /// Weights plus the `d / r` and `d` bias vectors.
    pub with_bias: usize,
}

pub fn adapter_param_count(dim: usize, reduction: usize) -> Result<ParamCount> {
    let hidden = hidden_width(dim, reduction)?;
    let weights_only = 2 * dim * hidden;
    Ok(ParamCount { weights_only, with_bias: weights_only + hidden + dim })
}

/// Convolutional variant: a `1x1` down-projection to `C/r` channels, a
/// depthwise `k x k` convolution, and a `1x1` up-projection, giving
/// `2 C^2 / r + (C / r) k^2` weights.
pub fn conv_adapter_param_count(channels: usize, reduction: usize, kernel: usize) -> Result<usize> {
    let hidden = hidden_width(channels, reduction)?;
    Ok(2 * channels * hidden + hidden * kernel * kernel)
}

/// Adapter parameters and prompt residual, with the snapshot they reset to.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptState {
    pub phi: AdapterParams,
    pub delta: Array1<f64>,
    phi0: AdapterParams,
    delta0: Array1<f64>,
}

impl AdaptState {
    pub fn zero_init(dim: usize, reduction: usize, seed: u64) -> Result<Self> {
        let phi = AdapterParams::zero_init(dim, reduction, seed)?;
        let delta = Array1::zeros(dim);
        Ok(Self { phi0: phi.clone(), delta0: delta.clone(), phi, delta })
    }

    pub fn reset(&mut self) {
        self.phi.clone_from(&self.phi0);
        self.delta.clone_from(&self.delta0);
    }

    /// True when the live parameters equal the snapshot exactly.
    pub fn is_at_snapshot(&self) -> bool {
        self.phi == self.phi0 && self.delta == self.delta0
    }

    pub fn snapshot(&self) -> (&AdapterParams, &Array1<f64>) {
        (&self.phi0, &self.delta0)
    }

    pub fn dim(&self) -> usize {
        self.delta.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_init_is_identity() {
        let phi = AdapterParams::zero_init(8, 4, 3).unwrap();
        let v = Array2::from_shape_fn((5, 8), |(i, j)| (i as f64 - 2.0) * 0.3 + j as f64 * 0.1);
        assert_eq!(apply_adapter(v.view(), &phi).unwrap(), v);
    }

    #[test]
    fn up_bias_only_shifts_rows() {
        let mut phi = AdapterParams::zero_init(4, 2, 0).unwrap();
        phi.b_up = array![0.5, -1.0, 0.0, 2.0];
        let v = array![[1.0, 2.0, 3.0, 4.0], [0.0, 0.0, 0.0, 1.0]];
        let out = apply_adapter(v.view(), &phi).unwrap();
        assert_eq!(out, array![[1.5, 1.0, 3.0, 6.0], [0.5, -1.0, 0.0, 3.0]]);
    }

    #[test]
    fn hand_set_weights_fixture() {
        // d = 4, r = 2; straight-line evaluation for v = e_1:
        //   pre = (0.5, -0.25), hidden = GELU(pre),
        //   out_j = v_j + hidden . W_up[:, j] + b_up_j
        let mut phi = AdapterParams::zero_init(4, 2, 0).unwrap();
        phi.w_down = array![[0.5, -0.25], [0.1, 0.2], [0.0, 0.3], [-0.4, 0.0]];
        phi.b_down = array![0.0, 0.0];
        phi.w_up = array![[1.0, 0.0, -1.0, 0.5], [0.0, 2.0, 1.0, 0.0]];
        phi.b_up = array![0.0, 0.0, 0.0, 0.1];
        let out = apply_adapter(array![[1.0, 0.0, 0.0, 0.0]].view(), &phi).unwrap();
        // 30-digit evaluation: GELU(0.5) = 0.34573123063700655,
        // GELU(-0.25) = -0.10032341857926907
        let expected =
            [1.345_731_230_637_006_6, -0.200_646_837_158_538_14, -0.446_054_649_216_275_6, 0.272_865_615_318_503_3];
        for (got, want) in out.iter().zip(expected) {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &x in &[-3.0, -1.0, -0.2, 0.0, 0.4, 1.7, 4.0] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn param_counts() {
        let c = adapter_param_count(64, 16).unwrap();
        assert_eq!(c.weights_only, 512);
        assert_eq!(c.with_bias, 580);
        assert_eq!(adapter_param_count(32, 32).unwrap().weights_only, 64);
        assert!(adapter_param_count(30, 4).is_err());
        let phi = AdapterParams::zero_init(64, 16, 0).unwrap();
        assert_eq!(phi.num_params(), 580);
        // 2 * 64^2 / 4 + 16 * 9
        assert_eq!(conv_adapter_param_count(64, 4, 3).unwrap(), 2048 + 144);
    }

    #[test]
    fn flat_round_trip_and_reset() {
        let mut state = AdaptState::zero_init(8, 2, 11).unwrap();
        let flat = state.phi.to_flat();
        assert_eq!(state.phi.from_flat(&flat), state.phi);
        let grad = state.phi.from_flat(&vec![1.0; flat.len()]);
        state.phi.descend(&grad, 0.1);
        state.delta[3] = 0.7;
        assert!(!state.is_at_snapshot());
        state.reset();
        assert!(state.is_at_snapshot());
    }
}
