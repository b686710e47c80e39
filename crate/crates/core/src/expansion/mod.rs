//! Conceptual expansions of a pretrained model: square combination matrices
//! that recombine the feature rows of selected decoder tensors, plus the
//! tree search that explores them.

mod fitness;
mod search;

pub use fitness::{fitness, FitnessEvaluator};
pub use search::{
    evaluate_selected, mcts_search, ScoredExpansion, SearchConfig, SearchResult, SearchStats, SelectionReport,
    TraceRecord,
};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::scalar::Scalar;
use crate::vae::{Dims, ModelError, ModelParams, Tensor};

/// A tensor whose rows may be recombined. Rows are output features, so the
/// matching bias vector is transformed with the same matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExpandedLayer {
    /// `dec_out.w` (vocab rows).
    DecoderOutput,
    /// `dec_rnn.w_ih` (3H gate rows).
    DecoderInput,
}

impl ExpandedLayer {
    pub const DEFAULT: [ExpandedLayer; 2] = [ExpandedLayer::DecoderOutput, ExpandedLayer::DecoderInput];

    pub fn weight_name(self) -> &'static str {
        match self {
            ExpandedLayer::DecoderOutput => "dec_out.w",
            ExpandedLayer::DecoderInput => "dec_rnn.w_ih",
        }
    }

    pub fn bias_name(self) -> &'static str {
        match self {
            ExpandedLayer::DecoderOutput => "dec_out.b",
            ExpandedLayer::DecoderInput => "dec_rnn.b_ih",
        }
    }

    pub fn feature_rows(self, dims: &Dims) -> usize {
        match self {
            ExpandedLayer::DecoderOutput => dims.vocab,
            ExpandedLayer::DecoderInput => 3 * dims.hidden,
        }
    }
}

impl fmt::Display for ExpandedLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.weight_name())
    }
}

impl FromStr for ExpandedLayer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "dec_out.w" | "dec_out" => Ok(ExpandedLayer::DecoderOutput),
            "dec_rnn.w_ih" => Ok(ExpandedLayer::DecoderInput),
            other => Err(format!("layer {other:?} cannot be expanded")),
        }
    }
}

/// One edit of a combination matrix. `layer` indexes
/// [`ConceptualExpansion::layers`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ExpansionAction {
    /// `A[target] += coefficient * A[source]`.
    Blend { layer: usize, target: usize, source: usize, coefficient: f64 },
    /// `A[row] *= factor`.
    Scale { layer: usize, row: usize, factor: f64 },
    /// `A[row] = e_row`.
    ResetRow { layer: usize, row: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptualExpansion<T> {
    layers: Vec<ExpandedLayer>,
    matrices: Vec<Tensor<T>>,
    history: Vec<ExpansionAction>,
}

impl<T: Scalar> ConceptualExpansion<T> {
    /// All-identity expansion over `layers` (duplicates are rejected).
    pub fn identity(dims: &Dims, layers: &[ExpandedLayer]) -> Result<Self, ModelError> {
        for (i, l) in layers.iter().enumerate() {
            if layers[..i].contains(l) {
                return Err(ModelError::InvalidConfig(format!("layer {l} listed twice")));
            }
        }
        let matrices = layers
            .iter()
            .map(|l| {
                let n = l.feature_rows(dims);
                let mut t = Tensor::zeros(&[n, n]);
                for i in 0..n {
                    t.values_mut()[i * n + i] = T::one();
                }
                t
            })
            .collect();
        Ok(ConceptualExpansion { layers: layers.to_vec(), matrices, history: Vec::new() })
    }

    /// Expansion with explicit matrices, one per layer.
    pub fn from_matrices(dims: &Dims, layers: &[ExpandedLayer], matrices: Vec<Tensor<T>>) -> Result<Self, ModelError> {
        let mut ce = Self::identity(dims, layers)?;
        if matrices.len() != layers.len() {
            return Err(ModelError::ShapeMismatch(format!("{} matrices for {} layers", matrices.len(), layers.len())));
        }
        for (m, expect) in matrices.iter().zip(&ce.matrices) {
            if m.shape() != expect.shape() {
                return Err(ModelError::ShapeMismatch(format!("combination matrix {:?}", m.shape())));
            }
            if !m.is_finite() {
                return Err(ModelError::NonFiniteParameter("combination matrix".into()));
            }
        }
        ce.matrices = matrices;
        Ok(ce)
    }

    pub fn layers(&self) -> &[ExpandedLayer] {
        &self.layers
    }

    pub fn matrix(&self, layer: usize) -> &Tensor<T> {
        &self.matrices[layer]
    }

    pub fn history(&self) -> &[ExpansionAction] {
        &self.history
    }

    pub fn is_identity(&self) -> bool {
        self.matrices.iter().all(is_identity)
    }

    pub fn validate_action(&self, action: &ExpansionAction) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        let rows = |l: usize| self.matrices.get(l).map(|m| m.rows());
        match *action {
            ExpansionAction::Blend { layer, target, source, coefficient } => match rows(layer) {
                Some(n) if target < n && source < n && target != source && coefficient.is_finite() => Ok(()),
                _ => bad(format!("invalid action {action:?}")),
            },
            ExpansionAction::Scale { layer, row, factor } => match rows(layer) {
                Some(n) if row < n && factor > 0.0 && factor.is_finite() => Ok(()),
                _ => bad(format!("invalid action {action:?}")),
            },
            ExpansionAction::ResetRow { layer, row } => match rows(layer) {
                Some(n) if row < n => Ok(()),
                _ => bad(format!("invalid action {action:?}")),
            },
        }
    }

    pub fn apply_action(&mut self, action: ExpansionAction) -> Result<(), ModelError> {
        self.validate_action(&action)?;
        match action {
            ExpansionAction::Blend { layer, target, source, coefficient } => {
                let m = &mut self.matrices[layer];
                let n = m.cols();
                let c = T::of(coefficient);
                let src: Vec<T> = m.row(source).to_vec();
                for (d, s) in m.values_mut()[target * n..(target + 1) * n].iter_mut().zip(src) {
                    *d += c * s;
                }
            }
            ExpansionAction::Scale { layer, row, factor } => {
                let m = &mut self.matrices[layer];
                let n = m.cols();
                let f = T::of(factor);
                m.values_mut()[row * n..(row + 1) * n].iter_mut().for_each(|v| *v *= f);
            }
            ExpansionAction::ResetRow { layer, row } => {
                let m = &mut self.matrices[layer];
                let n = m.cols();
                let r = &mut m.values_mut()[row * n..(row + 1) * n];
                r.fill(T::zero());
                r[row] = T::one();
            }
        }
        if !self.matrices.iter().all(|m| m.is_finite()) {
            return Err(ModelError::NonFiniteParameter("combination matrix".into()));
        }
        self.history.push(action);
        Ok(())
    }

    /// Hash of the matrices (not the history), so edit sequences that land
    /// on the same combination share one identity.
    pub fn state_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (l, m) in self.layers.iter().zip(&self.matrices) {
            self.hash_layer(&mut h, l, m);
        }
        h.finalize().into()
    }

    /// Hash restricted to layers that feed the decoder recurrence.
    pub(crate) fn recurrent_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (l, m) in self.layers.iter().zip(&self.matrices) {
            if *l != ExpandedLayer::DecoderOutput {
                self.hash_layer(&mut h, l, m);
            }
        }
        h.finalize().into()
    }

    fn hash_layer(&self, h: &mut Sha256, l: &ExpandedLayer, m: &Tensor<T>) {
        h.update(l.weight_name().as_bytes());
        for v in m.values() {
            h.update(v.to_bits_u64().to_le_bytes());
        }
    }
}

fn is_identity<T: Scalar>(m: &Tensor<T>) -> bool {
    let n = m.cols();
    m.values().iter().enumerate().all(|(k, &v)| v == if k / n == k % n { T::one() } else { T::zero() })
}

/// `W' = A W` and `b' = A b` for every expanded layer; other tensors are
/// copied. Rows of `A` that are unit vectors copy the source row exactly,
/// so the identity expansion reproduces `pretrained` bit for bit.
pub fn apply_expansion<T: Scalar>(
    pretrained: &ModelParams<T>,
    ce: &ConceptualExpansion<T>,
) -> Result<ModelParams<T>, ModelError> {
    let mut out = pretrained.clone();
    for (layer, a) in ce.layers.iter().zip(&ce.matrices) {
        let n = layer.feature_rows(&pretrained.dims);
        if a.shape() != [n, n] {
            return Err(ModelError::ShapeMismatch(format!("{layer}: matrix {:?} for {n} rows", a.shape())));
        }
        if is_identity(a) {
            continue;
        }
        for name in [layer.weight_name(), layer.bias_name()] {
            let src = pretrained.tensor(name).ok_or_else(|| ModelError::UnknownTensor(name.into()))?;
            if src.shape()[0] != n {
                return Err(ModelError::ShapeMismatch(format!("{name}: {:?}", src.shape())));
            }
            let width = src.len() / n;
            let dst = out.tensor_mut(name).expect("same layout");
            combine_rows(a.values(), n, src.values(), width, dst.values_mut());
        }
    }
    Ok(out)
}

fn combine_rows<T: Scalar>(a: &[T], n: usize, src: &[T], width: usize, dst: &mut [T]) {
    for j in 0..n {
        let arow = &a[j * n..(j + 1) * n];
        let out = &mut dst[j * width..(j + 1) * width];
        if arow.iter().enumerate().all(|(i, &v)| v == if i == j { T::one() } else { T::zero() }) {
            out.copy_from_slice(&src[j * width..(j + 1) * width]);
            continue;
        }
        out.fill(T::zero());
        for (i, &c) in arow.iter().enumerate() {
            if c != T::zero() {
                for (o, &s) in out.iter_mut().zip(&src[i * width..(i + 1) * width]) {
                    *o += c * s;
                }
            }
        }
    }
}

/// Sampling distribution over actions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionDistribution {
    pub blend_sigma: f64,
    pub scale_range: (f64, f64),
    /// Probabilities of Blend, Scale and ResetRow.
    pub weights: [f64; 3],
}

impl Default for ActionDistribution {
    fn default() -> Self {
        ActionDistribution { blend_sigma: 0.1, scale_range: (0.5, 2.0), weights: [0.7, 0.2, 0.1] }
    }
}

impl ActionDistribution {
    pub fn validate(&self) -> Result<(), ModelError> {
        let (lo, hi) = self.scale_range;
        let wsum: f64 = self.weights.iter().sum();
        if !(self.blend_sigma > 0.0 && self.blend_sigma.is_finite())
            || !(lo > 0.0 && lo <= hi && hi.is_finite())
            || self.weights.iter().any(|w| !(*w >= 0.0))
            || (wsum - 1.0).abs() > 1e-9
        {
            return Err(ModelError::InvalidConfig(format!("action distribution {self:?}")));
        }
        Ok(())
    }

    pub fn sample<T: Scalar, R: Rng + ?Sized>(&self, ce: &ConceptualExpansion<T>, rng: &mut R) -> ExpansionAction {
        let layer = rng.random_range(0..ce.layers.len());
        let n = ce.matrices[layer].rows();
        let u: f64 = rng.random();
        if u < self.weights[0] && n > 1 {
            let target = rng.random_range(0..n);
            let mut source = rng.random_range(0..n - 1);
            if source >= target {
                source += 1;
            }
            let coefficient = Normal::new(0.0, self.blend_sigma).expect("validated sigma").sample(rng);
            ExpansionAction::Blend { layer, target, source, coefficient }
        } else if u < self.weights[0] + self.weights[1] {
            let (lo, hi) = self.scale_range;
            let factor = if lo == hi { lo } else { rng.random_range(lo..hi) };
            ExpansionAction::Scale { layer, row: rng.random_range(0..n), factor }
        } else {
            ExpansionAction::ResetRow { layer, row: rng.random_range(0..n) }
        }
    }
}

/// `count` independent draws from `dist`.
pub fn propose_actions<T: Scalar, R: Rng + ?Sized>(
    ce: &ConceptualExpansion<T>,
    dist: &ActionDistribution,
    rng: &mut R,
    count: usize,
) -> Vec<ExpansionAction> {
    (0..count).map(|_| dist.sample(ce, rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> Dims {
        Dims::new(4, 3)
    }

    #[test]
    fn identity_is_bit_exact() {
        let p = ModelParams::<f64>::init(9, dims());
        let ce = ConceptualExpansion::identity(&p.dims, &ExpandedLayer::DEFAULT).unwrap();
        assert!(ce.is_identity());
        assert!(apply_expansion(&p, &ce).unwrap().bit_eq(&p));
    }

    #[test]
    fn permutation_row_copies_source_row() {
        let p = ModelParams::<f64>::init(9, dims());
        let n = 90;
        let mut m = Tensor::<f64>::zeros(&[n, n]);
        for i in 0..n {
            let src = if i == 2 { 7 } else { i };
            m.values_mut()[i * n + src] = 1.0;
        }
        let ce = ConceptualExpansion::from_matrices(&p.dims, &[ExpandedLayer::DecoderOutput], vec![m]).unwrap();
        let q = apply_expansion(&p, &ce).unwrap();
        assert_eq!(q.dec_out.w.row(2), p.dec_out.w.row(7));
        assert_eq!(q.dec_out.b.values()[2], p.dec_out.b.values()[7]);
        assert_eq!(q.dec_out.w.row(3), p.dec_out.w.row(3));
        assert!(q.dec_rnn.w_ih.bit_eq(&p.dec_rnn.w_ih));
    }

    #[test]
    fn actions_validate_and_reset() {
        let mut ce = ConceptualExpansion::<f64>::identity(&dims(), &ExpandedLayer::DEFAULT).unwrap();
        assert!(ce.apply_action(ExpansionAction::Blend { layer: 0, target: 1, source: 1, coefficient: 0.1 }).is_err());
        assert!(ce.apply_action(ExpansionAction::Scale { layer: 1, row: 0, factor: 0.0 }).is_err());
        assert!(ce.apply_action(ExpansionAction::ResetRow { layer: 2, row: 0 }).is_err());
        assert!(ce.apply_action(ExpansionAction::ResetRow { layer: 1, row: 12 }).is_err());
        let h0 = ce.state_hash();
        ce.apply_action(ExpansionAction::Scale { layer: 1, row: 3, factor: 1.5 }).unwrap();
        assert_ne!(ce.state_hash(), h0);
        ce.apply_action(ExpansionAction::ResetRow { layer: 1, row: 3 }).unwrap();
        assert_eq!(ce.state_hash(), h0);
        assert_eq!(ce.history().len(), 2);
    }

    #[test]
    fn proposals_are_valid_and_seeded() {
        let ce = ConceptualExpansion::<f64>::identity(&dims(), &ExpandedLayer::DEFAULT).unwrap();
        let dist = ActionDistribution::default();
        let a = propose_actions(&ce, &dist, &mut ChaCha8Rng::seed_from_u64(4), 8);
        let b = propose_actions(&ce, &dist, &mut ChaCha8Rng::seed_from_u64(4), 8);
        assert_eq!(a.len(), 8);
        assert_eq!(a, b);
        assert!(a.iter().all(|x| ce.validate_action(x).is_ok()));
    }

    #[test]
    fn layer_names_parse() {
        assert_eq!("dec_out.w".parse::<ExpandedLayer>().unwrap(), ExpandedLayer::DecoderOutput);
        assert_eq!("dec_rnn.w_ih".parse::<ExpandedLayer>().unwrap(), ExpandedLayer::DecoderInput);
        assert!("enc_mu.w".parse::<ExpandedLayer>().is_err());
    }
}
