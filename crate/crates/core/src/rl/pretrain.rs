//! Maximum-likelihood training of the prior by teacher forcing.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Sequence, SequenceModel, DEFAULT_EMBEDDING_DIM, DEFAULT_HIDDEN, MAX_SEQUENCE_LENGTH};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, ParamSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            hidden: DEFAULT_HIDDEN,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.hidden == 0 || self.embedding_dim == 0 {
            return Err(Error::InvalidInput("batch, hidden and embedding sizes must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidInput("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Encodes a corpus into complete sequences.
pub fn encode_corpus(vocab: &Vocabulary, corpus: &[String]) -> Result<Vec<Sequence>> {
    corpus
        .iter()
        .map(|s| {
            let tokens = vocab.encode(s)?;
            if tokens.len() > MAX_SEQUENCE_LENGTH {
                return Err(Error::InvalidInput(format!(
                    "{s:?} has {} tokens, limit is {MAX_SEQUENCE_LENGTH}",
                    tokens.len()
                )));
            }
            Ok(Sequence::complete(tokens))
        })
        .collect()
}

/// `exp(−Σ log π / Σ predicted tokens)` over all sequences.
pub fn perplexity(model: &SequenceModel, seqs: &[Sequence]) -> Result<f64> {
    let mut nll = 0.0;
    let mut count = 0usize;
    for chunk in seqs.chunks(256) {
        nll -= model.log_likelihoods(chunk)?.iter().sum::<f64>();
        count += chunk.iter().map(|s| s.tokens.len() + s.complete as usize).sum::<usize>();
    }
    if count == 0 {
        return Err(Error::InvalidInput("empty corpus".into()));
    }
    Ok((nll / count as f64).exp())
}

/// Trained prior and the corpus perplexity after every epoch; entry 0 is
/// the untrained model.
#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub model: SequenceModel,
    pub perplexity: Vec<f64>,
}

pub fn pretrain_prior(corpus: &[String], config: &PretrainConfig) -> Result<PretrainOutcome> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidInput("empty corpus".into()));
    }
    let vocab = Vocabulary::from_corpus(corpus)?;
    let seqs = encode_corpus(&vocab, corpus)?;
    let mut model = SequenceModel::new(vocab, config.embedding_dim, config.hidden, config.seed)?;
    let mut adam = Adam::new(AdamConfig::with_lr(config.learning_rate), &model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut history = vec![perplexity(&model, &seqs)?];
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let chunk: Vec<Sequence> = batch.iter().map(|&i| seqs[i].clone()).collect();
            let tokens: usize = chunk.iter().map(|s| s.tokens.len() + 1).sum();
            let weights = vec![-1.0 / tokens as f64; chunk.len()];
            let (_, grad) = model.log_likelihood_grad(&chunk, &weights)?;
            adam.step(&mut model, &grad);
        }
        if !model.all_finite() {
            return Err(Error::TrainingFailed { epoch });
        }
        let ppl = perplexity(&model, &seqs)?;
        if !ppl.is_finite() {
            return Err(Error::TrainingFailed { epoch });
        }
        history.push(ppl);
    }
    Ok(PretrainOutcome {
        model,
        perplexity: history,
    })
}
