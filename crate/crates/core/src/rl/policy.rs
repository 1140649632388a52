//! Augmented-likelihood policy optimization of an agent against a frozen
//! prior.

use std::collections::{BTreeMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::SequenceModel;
use crate::aligner::Aligner;
use crate::chem::{canonical_smiles, parse_smiles};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, ParamSet};
use crate::scoring::{DiversityFilterState, LinkerScorer, ScoreRecord, DEFAULT_BUCKET_CAPACITY, PARSE_ERROR};

/// Anything that scores one SMILES. Must be pure per sample.
pub trait ScoreFn: Sync {
    fn score(&self, smiles: &str) -> ScoreRecord;
}

impl<F: Fn(&str) -> ScoreRecord + Sync> ScoreFn for F {
    fn score(&self, smiles: &str) -> ScoreRecord {
        self(smiles)
    }
}

impl<A: Aligner + Sync> ScoreFn for LinkerScorer<A> {
    fn score(&self, smiles: &str) -> ScoreRecord {
        LinkerScorer::score(self, smiles)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlConfig {
    pub sigma: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Temperature for the final sampling run; training samples at 1.
    pub temperature: f64,
    pub rng_seed: u64,
    /// Scaffold bucket size; `None` disables the diversity filter.
    pub bucket_capacity: Option<usize>,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            sigma: 120.0,
            batch_size: 32,
            learning_rate: 1e-4,
            epochs: 200,
            temperature: 1.5,
            rng_seed: 0,
            bucket_capacity: Some(DEFAULT_BUCKET_CAPACITY),
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidInput(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidInput(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidInput("learning rate must be positive".into()));
        }
        if self.bucket_capacity == Some(0) {
            return Err(Error::InvalidInput("bucket capacity must be at least 1".into()));
        }
        Ok(())
    }
}

/// `log π_prior + σ·S`.
pub fn augmented_likelihood(log_prior: f64, score: f64, sigma: f64) -> f64 {
    log_prior + sigma * score
}

/// `(log π_aug − log π_agent)²`.
pub fn policy_loss(log_aug: f64, log_agent: f64) -> f64 {
    let d = log_aug - log_agent;
    d * d
}

/// Component means over the batch; `raw` averages only samples where the
/// component produced a raw value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentMeans {
    pub value: f64,
    pub raw: Option<f64>,
}

/// Per-step learning-curve row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub epoch: usize,
    /// Mean composite before the diversity filter.
    pub mean_score: f64,
    /// Mean score after the filter, as used in the loss.
    pub mean_reward: f64,
    pub mean_loss: f64,
    pub valid_frac: f64,
    pub unique_frac: f64,
    pub components: BTreeMap<String, ComponentMeans>,
}

/// Agent, its optimizer state, the diversity filter and the sampling stream.
pub struct RlState {
    pub agent: SequenceModel,
    pub optimizer: Adam,
    pub filter: DiversityFilterState,
    pub rng: ChaCha8Rng,
    pub steps: usize,
}

impl RlState {
    /// Agent initialised as a copy of the prior.
    pub fn new(prior: &SequenceModel, config: &RlConfig) -> Self {
        let agent = prior.clone();
        RlState {
            optimizer: Adam::new(AdamConfig::with_lr(config.learning_rate), &agent),
            filter: DiversityFilterState::new(config.bucket_capacity.unwrap_or(DEFAULT_BUCKET_CAPACITY)),
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            steps: 0,
            agent,
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn summarize(epoch: usize, records: &[ScoreRecord], losses: &[f64]) -> StepDiagnostics {
    let n = records.len().max(1) as f64;
    let valid: Vec<&ScoreRecord> = records.iter().filter(|r| r.is_valid()).collect();
    let unique: HashSet<String> = valid
        .iter()
        .filter_map(|r| parse_smiles(&r.smiles).ok().map(|m| canonical_smiles(&m)))
        .collect();
    let mut names: Vec<String> = records.iter().flat_map(|r| r.components.iter().map(|c| c.name.clone())).collect();
    names.sort();
    names.dedup();
    let components = names
        .into_iter()
        .map(|name| {
            let value = records
                .iter()
                .map(|r| r.component(&name).map_or(0.0, |c| c.value))
                .sum::<f64>()
                / n;
            let raw = mean(records.iter().filter_map(|r| r.component(&name).and_then(|c| c.raw)));
            (name, ComponentMeans { value, raw })
        })
        .collect();
    StepDiagnostics {
        epoch,
        mean_score: records.iter().map(|r| r.composite).sum::<f64>() / n,
        mean_reward: records.iter().map(ScoreRecord::reward).sum::<f64>() / n,
        mean_loss: losses.iter().sum::<f64>() / losses.len().max(1) as f64,
        valid_frac: valid.len() as f64 / n,
        unique_frac: if valid.is_empty() {
            0.0
        } else {
            unique.len() as f64 / valid.len() as f64
        },
        components,
    }
}

/// Samples a batch from the agent, scores it (unparseable samples score 0),
/// applies the diversity filter in sample order, and takes one Adam step on
/// the mean squared gap between augmented and agent likelihoods. The prior
/// is only read.
pub fn rl_step<S: ScoreFn + ?Sized>(
    state: &mut RlState,
    prior: &SequenceModel,
    score_fn: &S,
    config: &RlConfig,
) -> Result<StepDiagnostics> {
    let epoch = state.steps + 1;
    let sampled = state.agent.sample(&mut state.rng, config.batch_size, 1.0)?;
    let seqs: Vec<_> = sampled.into_iter().map(|(s, _)| s).collect();
    let smiles: Vec<String> = seqs.iter().map(|s| state.agent.vocab.decode(&s.tokens)).collect();
    let mut records: Vec<ScoreRecord> = smiles
        .par_iter()
        .map(|s| match parse_smiles(s) {
            Ok(_) => score_fn.score(s),
            Err(_) => ScoreRecord::failed(s.as_str(), PARSE_ERROR),
        })
        .collect();
    if config.bucket_capacity.is_some() {
        state.filter.apply_records(&mut records);
    }

    let prior_ll = prior.log_likelihoods(&seqs)?;
    let b = seqs.len() as f64;
    let aug: Vec<f64> = prior_ll
        .iter()
        .zip(&records)
        .map(|(&lp, r)| augmented_likelihood(lp, r.reward(), config.sigma))
        .collect();
    // the weights depend on the agent likelihoods, which the gradient pass
    // itself computes; a first pass gets them
    let agent_ll = state.agent.log_likelihoods(&seqs)?;
    let weights: Vec<f64> = aug.iter().zip(&agent_ll).map(|(a, l)| -2.0 * (a - l) / b).collect();
    let (_, grad) = state.agent.log_likelihood_grad(&seqs, &weights)?;
    let losses: Vec<f64> = aug.iter().zip(&agent_ll).map(|(&a, &l)| policy_loss(a, l)).collect();
    let diag = summarize(epoch, &records, &losses);

    if !diag.mean_loss.is_finite() || !grad.all_finite() {
        return Err(Error::Diverged {
            step: epoch,
            diagnostics: format!(
                "mean loss {}, mean score {:.4}, non-finite gradient in {:?}",
                diag.mean_loss,
                diag.mean_score,
                grad.first_non_finite()
            ),
        });
    }
    state.optimizer.step(&mut state.agent, &grad);
    if let Some(name) = state.agent.first_non_finite() {
        return Err(Error::Diverged {
            step: epoch,
            diagnostics: format!("agent tensor {name} became non-finite"),
        });
    }
    state.steps = epoch;
    Ok(diag)
}

/// Runs `config.epochs` steps from a copy of the prior. `on_epoch` sees
/// every row and the current agent (for checkpointing).
pub fn rl_run_with<S, F>(
    config: &RlConfig,
    prior: &SequenceModel,
    score_fn: &S,
    mut on_epoch: F,
) -> Result<(SequenceModel, Vec<StepDiagnostics>)>
where
    S: ScoreFn + ?Sized,
    F: FnMut(&StepDiagnostics, &SequenceModel) -> Result<()>,
{
    config.validate()?;
    let mut state = RlState::new(prior, config);
    let mut curve = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let diag = rl_step(&mut state, prior, score_fn, config)?;
        on_epoch(&diag, &state.agent)?;
        curve.push(diag);
    }
    Ok((state.agent, curve))
}

pub fn rl_run<S: ScoreFn + ?Sized>(
    config: &RlConfig,
    prior: &SequenceModel,
    score_fn: &S,
) -> Result<(SequenceModel, Vec<StepDiagnostics>)> {
    rl_run_with(config, prior, score_fn, |_, _| Ok(()))
}
