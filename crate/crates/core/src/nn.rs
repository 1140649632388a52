//! Shared training machinery for the hand-differentiated models: parameter
//! traversal, Adam, finite-difference gradient checks and JSON checkpoints.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named, shaped view of one parameter tensor.
pub struct TensorView<'a> {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// Models and gradient stores expose their tensors in one fixed order.
pub trait ParamSet {
    fn tensors(&self) -> Vec<TensorView<'_>>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// First tensor holding a non-finite value.
    fn first_non_finite(&self) -> Option<&'static str> {
        self.tensors()
            .into_iter()
            .find(|t| t.data.iter().any(|v| !v.is_finite()))
            .map(|t| t.name)
    }

    fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    /// `self += other * scale`, tensor by tensor.
    fn add_scaled(&mut self, other: &Self, scale: f64)
    where
        Self: Sized,
    {
        let src: Vec<Vec<f64>> = other.tensors().iter().map(|t| t.data.to_vec()).collect();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s * scale;
            }
        }
    }

    fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data.iter().copied()).collect()
    }
}

/// Uniform Glorot initialisation for a `fan_in × fan_out` matrix.
pub fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-limit..limit))
}

pub fn small_uniform<R: Rng>(rng: &mut R, len: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_fn(len, |_| rng.gen_range(-scale..scale))
}

/// Adam optimiser hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Adam with bias correction and no schedule.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new<P: ParamSet>(config: AdamConfig, params: &P) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.data.len()).collect();
        Adam {
            config,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P) {
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let grads: Vec<&[f64]> = grads.tensors().into_iter().map(|t| t.data).collect();
        for (k, p) in params.tensors_mut().into_iter().enumerate() {
            let g = grads[k];
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_tensor: &'static str,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central-difference check of every scalar parameter.
///
/// `loss` is evaluated on perturbed copies of `params`; `floor` keeps the
/// relative error meaningful for gradients that are zero to rounding.
pub fn check_gradients<P, F>(params: &P, analytic: &P, eps: f64, floor: f64, mut loss: F) -> GradCheckReport
where
    P: ParamSet + Clone,
    F: FnMut(&P) -> f64,
{
    let names: Vec<&'static str> = params.tensors().iter().map(|t| t.name).collect();
    let analytic_flat: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.data.to_vec()).collect();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst_tensor: "",
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    let mut probe = params.clone();
    for (k, name) in names.iter().enumerate() {
        let len = analytic_flat[k].len();
        for i in 0..len {
            let original = probe.tensors_mut()[k][i];
            probe.tensors_mut()[k][i] = original + eps;
            let up = loss(&probe);
            probe.tensors_mut()[k][i] = original - eps;
            let down = loss(&probe);
            probe.tensors_mut()[k][i] = original;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic_flat[k][i];
            let err = relative_error(a, numeric, floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst_tensor.is_empty() {
                report.max_rel_error = err.max(report.max_rel_error);
                report.worst_tensor = name;
                report.worst_index = i;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    report
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// One serialised tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Versioned JSON checkpoint shared by the aligner and the sequence model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_a: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    pub params: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn new<P: ParamSet>(kind: &str, params: &P) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            kind: kind.to_string(),
            d_a: None,
            h: None,
            vocab: None,
            embedding_dim: None,
            hidden: None,
            params: params
                .tensors()
                .into_iter()
                .map(|t| TensorRecord {
                    name: t.name.to_string(),
                    shape: t.shape,
                    data: t.data.to_vec(),
                })
                .collect(),
        }
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported checkpoint format_version {}",
                self.format_version
            )));
        }
        if self.kind != kind {
            return Err(Error::Parse(format!("checkpoint kind {:?}, expected {kind:?}", self.kind)));
        }
        Ok(())
    }

    /// Copies stored tensors into `target`, checking names and shapes.
    pub fn load_into<P: ParamSet>(&self, target: &mut P) -> Result<()> {
        let expected: Vec<(&'static str, Vec<usize>)> =
            target.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
        if expected.len() != self.params.len() {
            return Err(Error::Parse(format!(
                "checkpoint has {} tensors, model expects {}",
                self.params.len(),
                expected.len()
            )));
        }
        for ((name, shape), rec) in expected.iter().zip(&self.params) {
            if *name != rec.name || *shape != rec.shape {
                return Err(Error::Parse(format!(
                    "tensor mismatch: checkpoint {}{:?}, model {}{:?}",
                    rec.name, rec.shape, name, shape
                )));
            }
            if rec.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Parse(format!("tensor {} has wrong element count", rec.name)));
            }
        }
        for (dst, rec) in target.tensors_mut().into_iter().zip(&self.params) {
            dst.copy_from_slice(&rec.data);
        }
        if let Some(name) = target.first_non_finite() {
            return Err(Error::NonFinite(format!("checkpoint tensor {name}")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
