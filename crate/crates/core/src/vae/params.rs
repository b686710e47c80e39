use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::codec::{STEPS, VOCAB};
use crate::scalar::Scalar;

/// Dense tensor of row-major values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), values: vec![T::zero(); shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], values: Vec<T>) -> Result<Self, ModelError> {
        if shape.iter().product::<usize>() != values.len() || shape.iter().any(|&d| d == 0) {
            return Err(ModelError::ShapeMismatch(format!(
                "shape {shape:?} does not hold {} values",
                values.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), values })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rows of a matrix (first dimension).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all dimensions after the first.
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality (distinguishes `-0.0` from `0.0`, and equal NaNs).
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits_u64() == b.to_bits_u64())
    }

    pub fn fill_zero(&mut self) {
        self.values.iter_mut().for_each(|v| *v = T::zero());
    }
}

/// Model dimensions. Vocabulary and sequence length are fixed by the codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub hidden: usize,
    pub latent: usize,
    pub vocab: usize,
    pub steps: usize,
}

impl Dims {
    pub fn new(hidden: usize, latent: usize) -> Self {
        Dims { hidden, latent, vocab: VOCAB, steps: STEPS }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden == 0 || self.latent == 0 || self.vocab != VOCAB || self.steps != STEPS {
            return Err(ModelError::ShapeMismatch(format!("invalid dims {self:?}")));
        }
        Ok(())
    }
}

impl Default for Dims {
    fn default() -> Self {
        Dims::new(64, 32)
    }
}

/// Gated recurrent cell; gate blocks are ordered reset, update, candidate.
/// Weights are stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell<T> {
    pub w_ih: Tensor<T>,
    pub w_hh: Tensor<T>,
    pub b_ih: Tensor<T>,
    pub b_hh: Tensor<T>,
}

/// Affine map, weight stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

pub const TENSOR_COUNT: usize = 20;

pub const TENSOR_NAMES: [&str; TENSOR_COUNT] = [
    "enc_fwd_rnn.w_ih",
    "enc_fwd_rnn.w_hh",
    "enc_fwd_rnn.b_ih",
    "enc_fwd_rnn.b_hh",
    "enc_bwd_rnn.w_ih",
    "enc_bwd_rnn.w_hh",
    "enc_bwd_rnn.b_ih",
    "enc_bwd_rnn.b_hh",
    "enc_mu.w",
    "enc_mu.b",
    "enc_logvar.w",
    "enc_logvar.b",
    "dec_init.w",
    "dec_init.b",
    "dec_rnn.w_ih",
    "dec_rnn.w_hh",
    "dec_rnn.b_ih",
    "dec_rnn.b_hh",
    "dec_out.w",
    "dec_out.b",
];

/// All parameters of the melody VAE.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub dims: Dims,
    pub enc_fwd_rnn: GruCell<T>,
    pub enc_bwd_rnn: GruCell<T>,
    pub enc_mu: Linear<T>,
    pub enc_logvar: Linear<T>,
    pub dec_init: Linear<T>,
    pub dec_rnn: GruCell<T>,
    pub dec_out: Linear<T>,
}

/// Expected shape of every tensor, in [`TENSOR_NAMES`] order.
pub fn expected_shapes(d: &Dims) -> [Vec<usize>; TENSOR_COUNT] {
    let (h, z, v) = (d.hidden, d.latent, d.vocab);
    let g = 3 * h;
    [
        vec![g, v],
        vec![g, h],
        vec![g],
        vec![g],
        vec![g, v],
        vec![g, h],
        vec![g],
        vec![g],
        vec![z, 2 * h],
        vec![z],
        vec![z, 2 * h],
        vec![z],
        vec![h, z],
        vec![h],
        vec![g, v + z],
        vec![g, h],
        vec![g],
        vec![g],
        vec![v, h],
        vec![v],
    ]
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(dims: Dims) -> Self {
        let s = expected_shapes(&dims);
        let t = |i: usize| Tensor::zeros(&s[i]);
        let gru = |o: usize| GruCell { w_ih: t(o), w_hh: t(o + 1), b_ih: t(o + 2), b_hh: t(o + 3) };
        let lin = |o: usize| Linear { w: t(o), b: t(o + 1) };
        ModelParams {
            dims,
            enc_fwd_rnn: gru(0),
            enc_bwd_rnn: gru(4),
            enc_mu: lin(8),
            enc_logvar: lin(10),
            dec_init: lin(12),
            dec_rnn: gru(14),
            dec_out: lin(18),
        }
    }

    /// Glorot-uniform weights in `[-s, s]`, `s = sqrt(6 / (fan_in + fan_out))`,
    /// zero biases. Deterministic per seed.
    pub fn init(seed: u64, dims: Dims) -> Self {
        let mut p = Self::zeros(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in p.tensors_mut() {
            if t.shape().len() == 2 {
                let limit = glorot_limit(t.shape());
                for v in t.values_mut() {
                    *v = T::of(rng.random_range(-limit..=limit));
                }
            }
        }
        p
    }

    pub fn tensors(&self) -> [&Tensor<T>; TENSOR_COUNT] {
        [
            &self.enc_fwd_rnn.w_ih,
            &self.enc_fwd_rnn.w_hh,
            &self.enc_fwd_rnn.b_ih,
            &self.enc_fwd_rnn.b_hh,
            &self.enc_bwd_rnn.w_ih,
            &self.enc_bwd_rnn.w_hh,
            &self.enc_bwd_rnn.b_ih,
            &self.enc_bwd_rnn.b_hh,
            &self.enc_mu.w,
            &self.enc_mu.b,
            &self.enc_logvar.w,
            &self.enc_logvar.b,
            &self.dec_init.w,
            &self.dec_init.b,
            &self.dec_rnn.w_ih,
            &self.dec_rnn.w_hh,
            &self.dec_rnn.b_ih,
            &self.dec_rnn.b_hh,
            &self.dec_out.w,
            &self.dec_out.b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; TENSOR_COUNT] {
        [
            &mut self.enc_fwd_rnn.w_ih,
            &mut self.enc_fwd_rnn.w_hh,
            &mut self.enc_fwd_rnn.b_ih,
            &mut self.enc_fwd_rnn.b_hh,
            &mut self.enc_bwd_rnn.w_ih,
            &mut self.enc_bwd_rnn.w_hh,
            &mut self.enc_bwd_rnn.b_ih,
            &mut self.enc_bwd_rnn.b_hh,
            &mut self.enc_mu.w,
            &mut self.enc_mu.b,
            &mut self.enc_logvar.w,
            &mut self.enc_logvar.b,
            &mut self.dec_init.w,
            &mut self.dec_init.b,
            &mut self.dec_rnn.w_ih,
            &mut self.dec_rnn.w_hh,
            &mut self.dec_rnn.b_ih,
            &mut self.dec_rnn.b_hh,
            &mut self.dec_out.w,
            &mut self.dec_out.b,
        ]
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, &Tensor<T>)> {
        TENSOR_NAMES.into_iter().zip(self.tensors())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.named().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let idx = TENSOR_NAMES.iter().position(|n| *n == name)?;
        self.tensors_mut().into_iter().nth(idx)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Checks dims, every tensor shape, and finiteness.
    pub fn validate(&self) -> Result<(), ModelError> {
        self.dims.validate()?;
        for ((name, t), shape) in self.named().zip(expected_shapes(&self.dims)) {
            if t.shape() != shape.as_slice() {
                return Err(ModelError::ShapeMismatch(format!(
                    "{name}: expected {shape:?}, found {:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(ModelError::NonFiniteParameter(name.to_string()));
            }
        }
        Ok(())
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.tensors().iter().zip(other.tensors()).all(|(a, b)| a.bit_eq(b))
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill_zero();
        }
    }

    /// Converts to another precision.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros(self.dims);
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            for (d, s) in dst.values_mut().iter_mut().zip(src.values()) {
                *d = U::of(s.as_f64());
            }
        }
        out
    }
}

pub(crate) fn glorot_limit(shape: &[usize]) -> f64 {
    let (fan_out, fan_in) = (shape[0], shape[1]);
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Selects which tensors an optimizer may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainMask {
    trainable: [bool; TENSOR_COUNT],
}

impl TrainMask {
    pub fn all() -> Self {
        TrainMask { trainable: [true; TENSOR_COUNT] }
    }

    pub fn none() -> Self {
        TrainMask { trainable: [false; TENSOR_COUNT] }
    }

    /// Only the named tensors; unknown names are rejected.
    pub fn only(names: &[&str]) -> Result<Self, ModelError> {
        let mut m = Self::none();
        for name in names {
            let i = TENSOR_NAMES
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| ModelError::UnknownTensor(name.to_string()))?;
            m.trainable[i] = true;
        }
        Ok(m)
    }

    /// The decoder output projection, `dec_out.{w,b}`.
    pub fn output_head() -> Self {
        Self::only(&["dec_out.w", "dec_out.b"]).expect("known names")
    }

    pub fn is_trainable(&self, index: usize) -> bool {
        self.trainable[index]
    }

    pub fn any(&self) -> bool {
        self.trainable.iter().any(|&t| t)
    }

    /// True when nothing upstream of the output head needs gradients.
    pub fn is_output_head_only(&self) -> bool {
        self.trainable[..18].iter().all(|&t| !t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let d = Dims::new(8, 4);
        let a = ModelParams::<f64>::init(7, d);
        let b = ModelParams::<f64>::init(7, d);
        let c = ModelParams::<f64>::init(8, d);
        assert!(a.bit_eq(&b));
        assert!(!a.bit_eq(&c));
        a.validate().unwrap();
    }

    #[test]
    fn init_respects_glorot_bounds_and_zero_biases() {
        let p = ModelParams::<f64>::init(3, Dims::new(16, 8));
        for (name, t) in p.named() {
            if t.shape().len() == 2 {
                let s = glorot_limit(t.shape());
                assert!(t.values().iter().all(|v| v.is_finite() && v.abs() <= s), "{name}");
            } else {
                assert!(t.values().iter().all(|&v| v == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn shapes_follow_dims() {
        let p = ModelParams::<f32>::zeros(Dims::new(5, 3));
        assert_eq!(p.dec_rnn.w_ih.shape(), &[15, 93]);
        assert_eq!(p.dec_out.w.shape(), &[90, 5]);
        assert_eq!(p.enc_mu.w.shape(), &[3, 10]);
        assert_eq!(p.tensor("dec_init.b").unwrap().shape(), &[5]);
        let mut bad = p.clone();
        bad.dec_out.b = Tensor::zeros(&[89]);
        assert!(matches!(bad.validate(), Err(ModelError::ShapeMismatch(_))));
    }

    #[test]
    fn masks() {
        let m = TrainMask::output_head();
        assert!(m.is_output_head_only());
        assert!(m.is_trainable(18) && m.is_trainable(19) && !m.is_trainable(0));
        assert!(!TrainMask::all().is_output_head_only());
        assert!(TrainMask::only(&["nope"]).is_err());
    }
}
