use std::collections::HashMap;
use std::rc::Rc;

use super::{apply_expansion, ConceptualExpansion};
use crate::codec::{MelodySequence, STEPS};
use crate::scalar::Scalar;
use crate::vae::{
    count_correct, decoder_pass, posterior_means, project_outputs, reconstruction_accuracy, ModelError, ModelParams,
    Tensor, Tokens, EVAL_CHUNK,
};

/// Training-split reconstruction accuracy of the expanded model.
pub fn fitness<T: Scalar>(
    ce: &ConceptualExpansion<T>,
    pretrained: &ModelParams<T>,
    train_split: &[MelodySequence],
) -> Result<f64, ModelError> {
    reconstruction_accuracy(&apply_expansion(pretrained, ce)?, train_split)
}

/// Bound on cached decoder state sets; each holds `n x 32 x H` values.
const STATE_CACHE_LIMIT: usize = 16;

/// Memoized [`fitness`]. Expansions only touch the decoder, so encoder means
/// are computed once; decoder states are shared between expansions that
/// differ only in the output head. Results equal [`fitness`] bit for bit.
pub struct FitnessEvaluator<'a, T> {
    pretrained: &'a ModelParams<T>,
    data: &'a [MelodySequence],
    latents: Tensor<T>,
    memo: HashMap<[u8; 32], f64>,
    states: HashMap<[u8; 32], Rc<Vec<Vec<T>>>>,
    calls: usize,
    model_evaluations: usize,
}

impl<'a, T: Scalar> FitnessEvaluator<'a, T> {
    pub fn new(pretrained: &'a ModelParams<T>, data: &'a [MelodySequence]) -> Result<Self, ModelError> {
        let latents = posterior_means(pretrained, data)?;
        Ok(FitnessEvaluator {
            pretrained,
            data,
            latents,
            memo: HashMap::new(),
            states: HashMap::new(),
            calls: 0,
            model_evaluations: 0,
        })
    }

    /// Number of `evaluate` calls.
    pub fn calls(&self) -> usize {
        self.calls
    }

    /// Number of models actually built and scored (memo misses).
    pub fn model_evaluations(&self) -> usize {
        self.model_evaluations
    }

    pub fn cached(&self, ce: &ConceptualExpansion<T>) -> Option<f64> {
        self.memo.get(&ce.state_hash()).copied()
    }

    pub fn evaluate(&mut self, ce: &ConceptualExpansion<T>) -> Result<f64, ModelError> {
        self.calls += 1;
        let key = ce.state_hash();
        if let Some(&f) = self.memo.get(&key) {
            return Ok(f);
        }
        let model = apply_expansion(self.pretrained, ce)?;
        let states = self.decoder_states(&model, ce.recurrent_hash());
        let mut correct = 0;
        for (chunk, st) in self.data.chunks(EVAL_CHUNK).zip(states.iter()) {
            let seqs: Vec<&Tokens> = chunk.iter().map(|s| &s.tokens).collect();
            correct += count_correct(&project_outputs(&model, st), &seqs);
        }
        let f = correct as f64 / (STEPS * self.data.len()) as f64;
        self.model_evaluations += 1;
        self.memo.insert(key, f);
        Ok(f)
    }

    fn decoder_states(&mut self, model: &ModelParams<T>, key: [u8; 32]) -> Rc<Vec<Vec<T>>> {
        if let Some(s) = self.states.get(&key) {
            return Rc::clone(s);
        }
        let zd = model.dims.latent;
        let states: Vec<Vec<T>> = self
            .data
            .chunks(EVAL_CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let seqs: Vec<&Tokens> = chunk.iter().map(|s| &s.tokens).collect();
                let start = c * EVAL_CHUNK * zd;
                let z = &self.latents.values()[start..start + chunk.len() * zd];
                decoder_pass(model, z, &seqs).trace.outputs().to_vec()
            })
            .collect();
        if self.states.len() >= STATE_CACHE_LIMIT {
            self.states.clear();
        }
        let states = Rc::new(states);
        self.states.insert(key, Rc::clone(&states));
        states
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expansion::{ExpandedLayer, ExpansionAction};
    use crate::vae::Dims;

    fn data() -> Vec<MelodySequence> {
        (0..7)
            .map(|i| {
                let mut t = [1u8; STEPS];
                t[0] = 40 + i;
                t[3] = 0;
                t[8] = 45;
                MelodySequence::new(t, "")
            })
            .collect()
    }

    #[test]
    fn evaluator_agrees_with_direct_fitness() {
        let p = ModelParams::<f64>::init(3, Dims::new(6, 3));
        let d = data();
        let mut ev = FitnessEvaluator::new(&p, &d).unwrap();
        let mut ce = ConceptualExpansion::identity(&p.dims, &ExpandedLayer::DEFAULT).unwrap();
        assert_eq!(ev.evaluate(&ce).unwrap(), reconstruction_accuracy(&p, &d).unwrap());
        ce.apply_action(ExpansionAction::Blend { layer: 0, target: 1, source: 42, coefficient: 0.7 }).unwrap();
        assert_eq!(ev.evaluate(&ce).unwrap(), fitness(&ce, &p, &d).unwrap());
        ce.apply_action(ExpansionAction::Scale { layer: 1, row: 5, factor: 1.9 }).unwrap();
        let first = ev.evaluate(&ce).unwrap();
        assert_eq!(first, fitness(&ce, &p, &d).unwrap());
        assert_eq!(ev.evaluate(&ce).unwrap().to_bits(), first.to_bits());
        assert_eq!((ev.calls(), ev.model_evaluations()), (4, 3));
    }
}
