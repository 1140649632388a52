//! Character-level GRU language model over SMILES tokens.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{Vocabulary, BOS_ID, EOS_ID, PAD_ID};
use crate::error::{Error, Result};
use crate::nn::{glorot, small_uniform, Checkpoint, ParamSet, TensorView};

pub const CHECKPOINT_KIND: &str = "sequence_model";
pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_EMBEDDING_DIM: usize = 32;
/// Longest sampled sequence, in tokens, not counting the end token.
pub const MAX_SEQUENCE_LENGTH: usize = 128;

/// A token sequence without begin/end markers. `complete` is false when
/// sampling stopped at the length limit instead of an end token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sequence {
    pub tokens: Vec<usize>,
    pub complete: bool,
}

impl Sequence {
    pub fn complete(tokens: Vec<usize>) -> Self {
        Sequence { tokens, complete: true }
    }

    /// Tokens predicted by the model: the symbols, then the end token.
    fn targets(&self) -> impl Iterator<Item = usize> + '_ {
        self.tokens
            .iter()
            .copied()
            .chain(self.complete.then_some(EOS_ID))
    }

    fn target_len(&self) -> usize {
        self.tokens.len() + self.complete as usize
    }
}

/// Embedding, one GRU layer, and an output projection. Gate columns are
/// ordered reset, update, candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceModel {
    pub vocab: Vocabulary,
    pub embedding: Array2<f64>,
    pub w_x: Array2<f64>,
    pub w_h: Array2<f64>,
    pub b_x: Array1<f64>,
    pub b_h: Array1<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

struct StepCache {
    tokens: Vec<usize>,
    h_prev: Array2<f64>,
    r: Array2<f64>,
    z: Array2<f64>,
    n: Array2<f64>,
    gh_n: Array2<f64>,
    h: Array2<f64>,
    /// Log-probabilities over the vocabulary.
    logp: Array2<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Row-wise log-softmax with the padding and begin tokens excluded.
fn masked_log_softmax(logits: &Array2<f64>, temperature: f64) -> Array2<f64> {
    let mut out = logits / temperature;
    for mut row in out.rows_mut() {
        row[PAD_ID] = f64::NEG_INFINITY;
        row[BOS_ID] = f64::NEG_INFINITY;
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

impl SequenceModel {
    pub fn new(vocab: Vocabulary, embedding_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if embedding_dim == 0 || hidden == 0 {
            return Err(Error::InvalidInput("embedding and hidden sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = vocab.len();
        let limit = (1.0 / hidden as f64).sqrt();
        Ok(SequenceModel {
            embedding: Array2::from_shape_fn((v, embedding_dim), |_| rng.gen_range(-1.0..1.0)),
            w_x: glorot(&mut rng, embedding_dim, 3 * hidden),
            w_h: Array2::from_shape_fn((hidden, 3 * hidden), |_| rng.gen_range(-limit..limit)),
            b_x: small_uniform(&mut rng, 3 * hidden, limit),
            b_h: small_uniform(&mut rng, 3 * hidden, limit),
            w_out: glorot(&mut rng, hidden, v),
            b_out: Array1::zeros(v),
            vocab,
        })
    }

    pub fn zeros(vocab: Vocabulary, embedding_dim: usize, hidden: usize) -> Self {
        let v = vocab.len();
        SequenceModel {
            embedding: Array2::zeros((v, embedding_dim)),
            w_x: Array2::zeros((embedding_dim, 3 * hidden)),
            w_h: Array2::zeros((hidden, 3 * hidden)),
            b_x: Array1::zeros(3 * hidden),
            b_h: Array1::zeros(3 * hidden),
            w_out: Array2::zeros((hidden, v)),
            b_out: Array1::zeros(v),
            vocab,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.vocab.clone(), self.embedding_dim(), self.hidden())
    }

    pub fn hidden(&self) -> usize {
        self.w_h.nrows()
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding.ncols()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(CHECKPOINT_KIND, self);
        ck.vocab = Some(self.vocab.tokens().to_vec());
        ck.embedding_dim = Some(self.embedding_dim());
        ck.hidden = Some(self.hidden());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let missing = |what: &str| Error::Parse(format!("sequence checkpoint lacks {what}"));
        let vocab = Vocabulary::from_tokens(ck.vocab.clone().ok_or_else(|| missing("vocab"))?)?;
        let e = ck.embedding_dim.ok_or_else(|| missing("embedding_dim"))?;
        let h = ck.hidden.ok_or_else(|| missing("hidden"))?;
        let mut model = Self::zeros(vocab, e, h);
        ck.load_into(&mut model)?;
        Ok(model)
    }

    /// One GRU step for a batch of input tokens.
    fn step(&self, tokens: &[usize], h_prev: Array2<f64>) -> StepCache {
        let hd = self.hidden();
        let x = self.embed(tokens);
        let gx = x.dot(&self.w_x) + &self.b_x;
        let gh = h_prev.dot(&self.w_h) + &self.b_h;
        let r = (&gx.slice(s![.., 0..hd]) + &gh.slice(s![.., 0..hd])).mapv(sigmoid);
        let z = (&gx.slice(s![.., hd..2 * hd]) + &gh.slice(s![.., hd..2 * hd])).mapv(sigmoid);
        let gh_n = gh.slice(s![.., 2 * hd..]).to_owned();
        let n = (&gx.slice(s![.., 2 * hd..]) + &(&r * &gh_n)).mapv(f64::tanh);
        let h = &n + &(&z * &(&h_prev - &n));
        let logits = h.dot(&self.w_out) + &self.b_out;
        StepCache {
            tokens: tokens.to_vec(),
            logp: masked_log_softmax(&logits, 1.0),
            h_prev,
            r,
            z,
            n,
            gh_n,
            h,
        }
    }

    fn embed(&self, tokens: &[usize]) -> Array2<f64> {
        self.embedding.select(Axis(0), tokens)
    }

    /// Teacher-forced pass; returns per-step caches and the input/target
    /// grids (rows = sequences, padded with `PAD_ID`).
    fn forward(&self, seqs: &[Sequence]) -> Result<(Vec<StepCache>, Array2<usize>)> {
        let v = self.vocab.len();
        if let Some(bad) = seqs.iter().flat_map(|s| &s.tokens).find(|&&t| t <= EOS_ID || t >= v) {
            return Err(Error::InvalidInput(format!("token id {bad} is not a symbol of this vocabulary")));
        }
        let steps = seqs.iter().map(Sequence::target_len).max().unwrap_or(0);
        let mut targets = Array2::from_elem((seqs.len(), steps), PAD_ID);
        for (b, s) in seqs.iter().enumerate() {
            for (t, tok) in s.targets().enumerate() {
                targets[[b, t]] = tok;
            }
        }
        let mut h = Array2::zeros((seqs.len(), self.hidden()));
        let mut caches = Vec::with_capacity(steps);
        for t in 0..steps {
            let inputs: Vec<usize> = (0..seqs.len())
                .map(|b| if t == 0 { BOS_ID } else { targets[[b, t - 1]] })
                .collect();
            let cache = self.step(&inputs, h);
            h = cache.h.clone();
            caches.push(cache);
        }
        Ok((caches, targets))
    }

    fn gather(caches: &[StepCache], targets: &Array2<usize>) -> Vec<f64> {
        (0..targets.nrows())
            .map(|b| {
                caches
                    .iter()
                    .enumerate()
                    .filter(|&(t, _)| targets[[b, t]] != PAD_ID)
                    .map(|(t, c)| c.logp[[b, targets[[b, t]]]])
                    .sum()
            })
            .collect()
    }

    /// `log π(sequence)` at temperature 1, summed over tokens.
    pub fn log_likelihoods(&self, seqs: &[Sequence]) -> Result<Vec<f64>> {
        if seqs.is_empty() {
            return Ok(Vec::new());
        }
        let (caches, targets) = self.forward(seqs)?;
        Ok(Self::gather(&caches, &targets))
    }

    /// Log-likelihoods and the gradient of `Σ_b weights[b]·log π_b`.
    pub fn log_likelihood_grad(&self, seqs: &[Sequence], weights: &[f64]) -> Result<(Vec<f64>, SequenceModel)> {
        if seqs.len() != weights.len() {
            return Err(Error::SizeMismatch(seqs.len(), weights.len()));
        }
        let mut grad = self.zeros_like();
        if seqs.is_empty() {
            return Ok((Vec::new(), grad));
        }
        let (caches, targets) = self.forward(seqs)?;
        let ll = Self::gather(&caches, &targets);
        let hd = self.hidden();
        let batch = seqs.len();
        let mut dh_next: Array2<f64> = Array2::zeros((batch, hd));
        for (t, c) in caches.iter().enumerate().rev() {
            // d(w·log softmax[target])/d logits = w·(onehot − softmax)
            let mut dlogits = c.logp.mapv(f64::exp);
            for b in 0..batch {
                let target = targets[[b, t]];
                if target == PAD_ID {
                    dlogits.row_mut(b).fill(0.0);
                } else {
                    dlogits.row_mut(b).mapv_inplace(|p| -p * weights[b]);
                    dlogits[[b, target]] += weights[b];
                }
            }
            grad.w_out += &c.h.t().dot(&dlogits);
            grad.b_out += &dlogits.sum_axis(Axis(0));
            let dh = dh_next + dlogits.dot(&self.w_out.t());

            let one_minus_z = c.z.mapv(|z| 1.0 - z);
            let dn = &dh * &one_minus_z;
            let dz = &dh * &(&c.h_prev - &c.n);
            let mut dh_prev = &dh * &c.z;
            let dpre_n = &dn * &c.n.mapv(|n| 1.0 - n * n);
            let dr = &dpre_n * &c.gh_n;
            let dpre_r = &dr * &c.r.mapv(|r| r * (1.0 - r));
            let dpre_z = &dz * &c.z.mapv(|z| z * (1.0 - z));

            let mut dgx = Array2::zeros((batch, 3 * hd));
            dgx.slice_mut(s![.., 0..hd]).assign(&dpre_r);
            dgx.slice_mut(s![.., hd..2 * hd]).assign(&dpre_z);
            dgx.slice_mut(s![.., 2 * hd..]).assign(&dpre_n);
            let mut dgh = dgx.clone();
            dgh.slice_mut(s![.., 2 * hd..]).assign(&(&dpre_n * &c.r));

            let x = self.embed(&c.tokens);
            grad.w_x += &x.t().dot(&dgx);
            grad.b_x += &dgx.sum_axis(Axis(0));
            grad.w_h += &c.h_prev.t().dot(&dgh);
            grad.b_h += &dgh.sum_axis(Axis(0));
            dh_prev += &dgh.dot(&self.w_h.t());
            let dx = dgx.dot(&self.w_x.t());
            for (b, &tok) in c.tokens.iter().enumerate() {
                let mut row = grad.embedding.row_mut(tok);
                row += &dx.row(b);
            }
            dh_next = dh_prev;
        }
        Ok((ll, grad))
    }

    /// Samples `n` sequences with logits divided by `temperature`; the
    /// returned log-likelihoods are the model's own, at temperature 1.
    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize, temperature: f64) -> Result<Vec<(Sequence, f64)>> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::InvalidInput(format!("temperature must be positive, got {temperature}")));
        }
        let mut seqs: Vec<Sequence> = vec![
            Sequence {
                tokens: Vec::new(),
                complete: false
            };
            n
        ];
        let mut logp = vec![0.0; n];
        let mut active: Vec<usize> = (0..n).collect();
        let mut h: Array2<f64> = Array2::zeros((n, self.hidden()));
        let mut inputs = vec![BOS_ID; n];
        for _ in 0..=MAX_SEQUENCE_LENGTH {
            if active.is_empty() {
                break;
            }
            let h_active = h.select(Axis(0), &active);
            let ins: Vec<usize> = active.iter().map(|&b| inputs[b]).collect();
            let cache = self.step(&ins, h_active);
            let scaled = if temperature == 1.0 {
                None
            } else {
                let logits = cache.h.dot(&self.w_out) + &self.b_out;
                Some(masked_log_softmax(&logits, temperature))
            };
            let mut still = Vec::with_capacity(active.len());
            for (k, &b) in active.iter().enumerate() {
                let probs = scaled.as_ref().unwrap_or(&cache.logp).row(k).mapv(f64::exp);
                let at_limit = seqs[b].tokens.len() == MAX_SEQUENCE_LENGTH;
                if at_limit {
                    // no end token was drawn within the limit
                    continue;
                }
                let tok = draw(rng, probs.as_slice().expect("row is contiguous"));
                logp[b] += cache.logp[[k, tok]];
                h.row_mut(b).assign(&cache.h.row(k));
                if tok == EOS_ID {
                    seqs[b].complete = true;
                } else {
                    seqs[b].tokens.push(tok);
                    inputs[b] = tok;
                    still.push(b);
                }
            }
            active = still;
        }
        Ok(seqs.into_iter().zip(logp).collect())
    }

    /// Sum of squared differences to another model of the same shape.
    pub fn distance_sq(&self, other: &SequenceModel) -> f64 {
        self.flatten()
            .iter()
            .zip(other.flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Greedy decode: the most likely token at every step.
    pub fn greedy(&self) -> Sequence {
        let mut h: Array2<f64> = Array2::zeros((1, self.hidden()));
        let mut input = BOS_ID;
        let mut tokens = Vec::new();
        while tokens.len() < MAX_SEQUENCE_LENGTH {
            let c = self.step(&[input], h);
            let row = c.logp.row(0);
            let tok = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).expect("non-empty vocabulary");
            if tok == EOS_ID {
                return Sequence::complete(tokens);
            }
            tokens.push(tok);
            input = tok;
            h = c.h;
        }
        Sequence { tokens, complete: false }
    }
}

/// Index drawn from a probability vector with one uniform variate.
fn draw<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last = i;
            if u < p {
                return i;
            }
            u -= p;
        }
    }
    last
}

fn view2<'a>(name: &'static str, a: &'a Array2<f64>) -> TensorView<'a> {
    TensorView {
        name,
        shape: a.shape().to_vec(),
        data: a.as_slice().expect("standard layout"),
    }
}

fn view1<'a>(name: &'static str, a: &'a Array1<f64>) -> TensorView<'a> {
    TensorView {
        name,
        shape: a.shape().to_vec(),
        data: a.as_slice().expect("standard layout"),
    }
}

impl ParamSet for SequenceModel {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        vec![
            view2("embedding", &self.embedding),
            view2("gru.w_x", &self.w_x),
            view2("gru.w_h", &self.w_h),
            view1("gru.b_x", &self.b_x),
            view1("gru.b_h", &self.b_h),
            view2("out.weight", &self.w_out),
            view1("out.bias", &self.b_out),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.embedding.as_slice_mut().expect("standard layout"),
            self.w_x.as_slice_mut().expect("standard layout"),
            self.w_h.as_slice_mut().expect("standard layout"),
            self.b_x.as_slice_mut().expect("standard layout"),
            self.b_h.as_slice_mut().expect("standard layout"),
            self.w_out.as_slice_mut().expect("standard layout"),
            self.b_out.as_slice_mut().expect("standard layout"),
        ]
    }
}
