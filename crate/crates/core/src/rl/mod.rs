//! Policy optimization of a SMILES sequence model: a small GRU prior
//! trained by teacher forcing, temperature-scaled sampling, and the
//! augmented-likelihood loop that pulls an agent towards high scores while
//! staying close to the prior.

mod model;
mod policy;
mod pretrain;
pub mod vocab;

pub use model::{
    Sequence, SequenceModel, CHECKPOINT_KIND, DEFAULT_EMBEDDING_DIM, DEFAULT_HIDDEN, MAX_SEQUENCE_LENGTH,
};
pub use policy::{
    augmented_likelihood, policy_loss, rl_run, rl_run_with, rl_step, ComponentMeans, RlConfig, RlState, ScoreFn,
    StepDiagnostics,
};
pub use pretrain::{encode_corpus, perplexity, pretrain_prior, PretrainConfig, PretrainOutcome};
pub use vocab::{tokenize, Vocabulary};

use rand::Rng;

use crate::error::Result;

/// Samples `n` SMILES strings with their temperature-1 log-likelihoods.
pub fn sample_batch<R: Rng>(model: &SequenceModel, rng: &mut R, n: usize, temperature: f64) -> Result<Vec<(String, f64)>> {
    Ok(model
        .sample(rng, n, temperature)?
        .into_iter()
        .map(|(s, lp)| (model.vocab.decode(&s.tokens), lp))
        .collect())
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::{check_gradients, ParamSet};
    use crate::scoring::ScoreRecord;

    fn toy_vocab() -> Vocabulary {
        Vocabulary::new(["C".to_string(), "O".to_string()]).unwrap()
    }

    fn toy_sequences() -> Vec<Sequence> {
        vec![
            Sequence::complete(vec![3, 3, 4]),
            Sequence::complete(vec![4]),
            Sequence::complete(vec![]),
            Sequence {
                tokens: vec![3, 4, 4, 3, 3],
                complete: false,
            },
        ]
    }

    #[test]
    fn equation_arithmetic() {
        assert_eq!(augmented_likelihood(-40.0, 0.5, 120.0), 20.0);
        assert_eq!(augmented_likelihood(-40.0, 0.0, 120.0), -40.0);
        assert_eq!(augmented_likelihood(-40.0, 1.0, 120.0), 80.0);
        assert_eq!(policy_loss(20.0, 10.0), 100.0);
        assert_eq!(policy_loss(10.0, 20.0), 100.0);
        assert_eq!(policy_loss(3.5, 3.5), 0.0);
    }

    #[test]
    fn likelihood_gradient_matches_finite_differences() {
        let model = SequenceModel::new(toy_vocab(), 3, 4, 1).unwrap();
        let seqs = toy_sequences();
        let weights = [0.7, -1.3, 0.4, 2.0];
        let (_, grad) = model.log_likelihood_grad(&seqs, &weights).unwrap();
        let report = check_gradients(&model, &grad, 1e-5, 1e-6, |m: &SequenceModel| {
            m.log_likelihoods(&seqs).unwrap().iter().zip(&weights).map(|(l, w)| l * w).sum()
        });
        assert!(report.max_rel_error < 1e-3, "{report:?}");
    }

    #[test]
    fn policy_loss_gradient_matches_finite_differences() {
        let prior = SequenceModel::new(toy_vocab(), 3, 4, 2).unwrap();
        let agent = SequenceModel::new(toy_vocab(), 3, 4, 3).unwrap();
        let seqs = toy_sequences();
        let scores = [0.9, 0.0, 0.3, 1.0];
        let sigma = 2.0;
        let aug: Vec<f64> = prior
            .log_likelihoods(&seqs)
            .unwrap()
            .iter()
            .zip(scores)
            .map(|(&lp, s)| augmented_likelihood(lp, s, sigma))
            .collect();
        let b = seqs.len() as f64;
        let loss = |m: &SequenceModel| {
            m.log_likelihoods(&seqs)
                .unwrap()
                .iter()
                .zip(&aug)
                .map(|(&l, &a)| policy_loss(a, l))
                .sum::<f64>()
                / b
        };
        let ll = agent.log_likelihoods(&seqs).unwrap();
        let weights: Vec<f64> = aug.iter().zip(&ll).map(|(a, l)| -2.0 * (a - l) / b).collect();
        let (_, grad) = agent.log_likelihood_grad(&seqs, &weights).unwrap();
        let report = check_gradients(&agent, &grad, 1e-5, 1e-6, loss);
        assert!(report.max_rel_error < 1e-3, "{report:?}");
    }

    #[test]
    fn sampled_likelihood_matches_teacher_forcing() {
        let model = SequenceModel::new(toy_vocab(), 4, 8, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for t in [1.0, 1.5, 0.7] {
            let sampled = model.sample(&mut rng, 40, t).unwrap();
            let seqs: Vec<Sequence> = sampled.iter().map(|(s, _)| s.clone()).collect();
            let forced = model.log_likelihoods(&seqs).unwrap();
            for ((_, lp), f) in sampled.iter().zip(forced) {
                assert!(lp.is_finite());
                assert!((lp - f).abs() < 1e-9, "{lp} vs {f}");
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let model = SequenceModel::new(toy_vocab(), 4, 8, 5).unwrap();
        let a = sample_batch(&model, &mut ChaCha8Rng::seed_from_u64(1), 20, 1.5).unwrap();
        let b = sample_batch(&model, &mut ChaCha8Rng::seed_from_u64(1), 20, 1.5).unwrap();
        assert_eq!(a, b);
        assert!(model.sample(&mut ChaCha8Rng::seed_from_u64(1), 1, 0.0).is_err());
    }

    fn small_config(epochs: usize) -> PretrainConfig {
        PretrainConfig {
            epochs,
            batch_size: 4,
            learning_rate: 1e-2,
            hidden: 16,
            embedding_dim: 8,
            seed: 4,
        }
    }

    #[test]
    fn memorises_a_single_string() {
        let corpus = vec!["*CCOC(=O)N*".to_string()];
        let out = pretrain_prior(&corpus, &small_config(150)).unwrap();
        assert!(out.perplexity.last().unwrap() < &out.perplexity[0]);
        let m = &out.model;
        assert_eq!(m.vocab.decode(&m.greedy().tokens), corpus[0]);
        let samples = sample_batch(m, &mut ChaCha8Rng::seed_from_u64(0), 25, 0.01).unwrap();
        assert!(samples.iter().all(|(s, _)| *s == corpus[0]));
    }

    #[test]
    fn pretraining_is_deterministic() {
        let corpus: Vec<String> = ["*CC*", "*CCO*", "*c1ccccc1*", "*CN(C)C*"].iter().map(|s| s.to_string()).collect();
        let a = pretrain_prior(&corpus, &small_config(3)).unwrap();
        let b = pretrain_prior(&corpus, &small_config(3)).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.perplexity, b.perplexity);
        assert!(pretrain_prior(&[], &small_config(1)).is_err());
        assert!(pretrain_prior(&["C C".to_string()], &small_config(1)).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = SequenceModel::new(toy_vocab(), 3, 5, 0).unwrap();
        let json = m.to_checkpoint().to_json().unwrap();
        let back = SequenceModel::from_checkpoint(&crate::nn::Checkpoint::from_json(&json).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    fn zero_score(s: &str) -> ScoreRecord {
        ScoreRecord {
            smiles: s.to_string(),
            components: Vec::new(),
            composite: 0.0,
            scaffold: s.to_string(),
            filtered: false,
            note: None,
        }
    }

    #[test]
    fn zero_score_is_a_fixed_point() {
        let prior = SequenceModel::new(toy_vocab(), 4, 8, 5).unwrap();
        let config = RlConfig {
            batch_size: 8,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let mut state = RlState::new(&prior, &config);
        for _ in 0..3 {
            let d = rl_step(&mut state, &prior, &zero_score, &config).unwrap();
            assert_eq!(d.mean_loss, 0.0);
        }
        assert_eq!(state.agent.flatten(), prior.flatten());
    }

    #[test]
    fn zero_epochs_returns_prior() {
        let prior = SequenceModel::new(toy_vocab(), 4, 8, 5).unwrap();
        let config = RlConfig {
            epochs: 0,
            ..Default::default()
        };
        let (agent, curve) = rl_run(&config, &prior, &zero_score).unwrap();
        assert_eq!(agent, prior);
        assert!(curve.is_empty());
    }

    #[test]
    fn reward_moves_the_agent_and_not_the_prior() {
        let prior = SequenceModel::new(toy_vocab(), 4, 8, 5).unwrap();
        let frozen = prior.clone();
        let likes_o = |s: &str| ScoreRecord {
            composite: if s.contains('O') { 1.0 } else { 0.0 },
            ..zero_score(s)
        };
        let config = RlConfig {
            batch_size: 16,
            learning_rate: 5e-3,
            epochs: 40,
            bucket_capacity: None,
            sigma: 20.0,
            ..Default::default()
        };
        let (agent, curve) = rl_run(&config, &prior, &likes_o).unwrap();
        assert_eq!(prior, frozen);
        let first: f64 = curve[..10].iter().map(|d| d.mean_score).sum();
        let last: f64 = curve[30..].iter().map(|d| d.mean_score).sum();
        assert!(last > first, "{first} -> {last}");
        let (again, curve2) = rl_run(&config, &prior, &likes_o).unwrap();
        assert_eq!(again, agent);
        assert_eq!(curve2, curve);
    }

    #[test]
    fn higher_temperature_does_not_reduce_uniqueness() {
        let corpus: Vec<String> = ["*CC*", "*CCO*", "*CCOC*", "*COC*", "*CCC*", "*OCCO*"].iter().map(|s| s.to_string()).collect();
        let model = pretrain_prior(&corpus, &small_config(20)).unwrap().model;
        for seed in 0..3 {
            let count = |t: f64| {
                let s = sample_batch(&model, &mut ChaCha8Rng::seed_from_u64(seed), 1000, t).unwrap();
                s.into_iter().map(|(x, _)| x).collect::<HashSet<_>>().len()
            };
            assert!(count(1.5) >= count(1.0));
        }
    }
}
