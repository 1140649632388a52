use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{AttentionCache, Linear, MultiHeadAttention};
use super::AlignmentResult;
use crate::error::{Error, Result};
use crate::geom::{self, center_to_origin, kabsch_solve, KabschSolution, Mat3, PointCloud, Vec3};
use crate::nn::{Checkpoint, ParamSet, TensorView};

pub const DEFAULT_EMBED_DIM: usize = 16;
pub const DEFAULT_HEADS: usize = 8;
/// Pseudo-coordinates are 3D.
pub const OUTPUT_DIM: usize = 3;

pub const CHECKPOINT_KIND: &str = "aligner";

/// Attention-based global point-cloud aligner.
///
/// Both clouds are lifted to `d_a` features, pass through one shared
/// self-attention block each, then the query attends over the reference in a
/// cross-attention block. A final linear layer yields per-point
/// pseudo-coordinates onto which the query is superposed with Kabsch.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignerModel {
    pub input: Linear,
    pub self_attn: MultiHeadAttention,
    pub cross_attn: MultiHeadAttention,
    pub output: Linear,
    pub d_a: usize,
    pub heads: usize,
}

impl AlignerModel {
    pub fn new(d_a: usize, heads: usize, seed: u64) -> Result<Self> {
        Self::check_dims(d_a, heads)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(AlignerModel {
            input: Linear::init(&mut rng, 3, d_a),
            self_attn: MultiHeadAttention::init(&mut rng, d_a, heads),
            cross_attn: MultiHeadAttention::init(&mut rng, d_a, heads),
            output: Linear::init(&mut rng, d_a, OUTPUT_DIM),
            d_a,
            heads,
        })
    }

    /// All-zero parameters; also used as the gradient accumulator.
    pub fn zeros(d_a: usize, heads: usize) -> Self {
        AlignerModel {
            input: Linear::zeros(3, d_a),
            self_attn: MultiHeadAttention::zeros(d_a, heads),
            cross_attn: MultiHeadAttention::zeros(d_a, heads),
            output: Linear::zeros(d_a, OUTPUT_DIM),
            d_a,
            heads,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.d_a, self.heads)
    }

    fn check_dims(d_a: usize, heads: usize) -> Result<()> {
        if heads == 0 || d_a == 0 || d_a % heads != 0 {
            return Err(Error::InvalidInput(format!(
                "embedding dim {d_a} must be a positive multiple of head count {heads}"
            )));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(CHECKPOINT_KIND, self);
        ck.d_a = Some(self.d_a);
        ck.h = Some(self.heads);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let d_a = ck.d_a.ok_or_else(|| Error::Parse("aligner checkpoint lacks d_a".into()))?;
        let heads = ck.h.ok_or_else(|| Error::Parse("aligner checkpoint lacks h".into()))?;
        Self::check_dims(d_a, heads)?;
        let mut model = Self::zeros(d_a, heads);
        ck.load_into(&mut model)?;
        Ok(model)
    }
}

fn linear_views<'a>(l: &'a Linear, w: &'static str, b: &'static str) -> [TensorView<'a>; 2] {
    [
        TensorView {
            name: w,
            shape: l.weight.shape().to_vec(),
            data: l.weight.as_slice().expect("standard layout"),
        },
        TensorView {
            name: b,
            shape: l.bias.shape().to_vec(),
            data: l.bias.as_slice().expect("standard layout"),
        },
    ]
}

fn linear_mut(l: &mut Linear) -> [&mut [f64]; 2] {
    [
        l.weight.as_slice_mut().expect("standard layout"),
        l.bias.as_slice_mut().expect("standard layout"),
    ]
}

macro_rules! attn_views {
    ($v:ident, $a:expr, $p:literal) => {
        $v.extend(linear_views(&$a.query, concat!($p, ".query.weight"), concat!($p, ".query.bias")));
        $v.extend(linear_views(&$a.key, concat!($p, ".key.weight"), concat!($p, ".key.bias")));
        $v.extend(linear_views(&$a.value, concat!($p, ".value.weight"), concat!($p, ".value.bias")));
        $v.extend(linear_views(&$a.output, concat!($p, ".output.weight"), concat!($p, ".output.bias")));
    };
}

impl ParamSet for AlignerModel {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut v = Vec::with_capacity(20);
        v.extend(linear_views(&self.input, "input.weight", "input.bias"));
        attn_views!(v, self.self_attn, "self_attn");
        attn_views!(v, self.cross_attn, "cross_attn");
        v.extend(linear_views(&self.output, "output.weight", "output.bias"));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::with_capacity(20);
        v.extend(linear_mut(&mut self.input));
        for attn in [&mut self.self_attn, &mut self.cross_attn] {
            v.extend(linear_mut(&mut attn.query));
            v.extend(linear_mut(&mut attn.key));
            v.extend(linear_mut(&mut attn.value));
            v.extend(linear_mut(&mut attn.output));
        }
        v.extend(linear_mut(&mut self.output));
        v
    }
}

fn to_matrix(points: &[Vec3]) -> Array2<f64> {
    Array2::from_shape_fn((points.len(), 3), |(i, k)| points[i].0[k])
}

fn to_points(m: &Array2<f64>) -> Vec<Vec3> {
    m.rows().into_iter().map(|r| Vec3::new(r[0], r[1], r[2])).collect()
}

fn ensure_finite(m: &Array2<f64>, layer: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("activations of layer {layer}")))
    }
}

/// Everything the backward pass needs.
pub(crate) struct ForwardTrace {
    query_centered: Array2<f64>,
    reference_centered: Array2<f64>,
    query_points: Vec<Vec3>,
    reference_points: Vec<Vec3>,
    q_scaled: Array2<f64>,
    r_scaled: Array2<f64>,
    q_self: (Array2<f64>, AttentionCache),
    r_self: (Array2<f64>, AttentionCache),
    q_cross: (Array2<f64>, AttentionCache),
    pseudo: Vec<Vec3>,
    kabsch: KabschSolution,
    pub(crate) result: AlignmentResult,
}

fn prepare(cloud: &PointCloud, what: &str) -> Result<(Vec<Vec3>, Vec3)> {
    if cloud.is_empty() {
        return Err(Error::InvalidInput(format!("{what} cloud is empty")));
    }
    if cloud.points.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite(format!("{what} cloud")));
    }
    let (c, centroid) = center_to_origin(cloud)?;
    Ok((c.points, centroid))
}

impl AlignerModel {
    pub(crate) fn forward_trace(&self, query: &PointCloud, reference: &PointCloud) -> Result<ForwardTrace> {
        let (qp, q_centroid) = prepare(query, "query")?;
        let (rp, r_centroid) = prepare(reference, "reference")?;
        if qp.len() < 3 {
            return Err(Error::InvalidInput(format!(
                "query needs at least 3 points for superposition, got {}",
                qp.len()
            )));
        }
        let qm = to_matrix(&qp);
        let rm = to_matrix(&rp);

        let q_scaled = self.input.forward(&qm);
        let r_scaled = self.input.forward(&rm);
        ensure_finite(&q_scaled, "input")?;
        ensure_finite(&r_scaled, "input")?;
        let q_self = self.self_attn.forward(&q_scaled, &q_scaled);
        let r_self = self.self_attn.forward(&r_scaled, &r_scaled);
        ensure_finite(&q_self.0, "self_attn")?;
        ensure_finite(&r_self.0, "self_attn")?;
        let q_cross = self.cross_attn.forward(&q_self.0, &r_self.0);
        ensure_finite(&q_cross.0, "cross_attn")?;
        let pseudo_m = self.output.forward(&q_cross.0);
        ensure_finite(&pseudo_m, "output")?;
        let pseudo = to_points(&pseudo_m);

        let kabsch = kabsch_solve(&qp, &pseudo, 3)?;
        let aligned = kabsch.transform.apply_all(&qp);
        let chamfer = geom::chamfer_slices(&aligned, &rp, geom::NnSearch::Auto);
        let result = AlignmentResult {
            transform: kabsch.transform,
            chamfer,
            pseudo_coords: PointCloud {
                points: pseudo.clone(),
                label: None,
            },
            aligned_coords: PointCloud {
                points: aligned,
                label: query.label.clone(),
            },
            query_centroid: q_centroid,
            reference_centroid: r_centroid,
        };
        Ok(ForwardTrace {
            query_centered: qm,
            reference_centered: rm,
            query_points: qp,
            reference_points: rp,
            q_scaled,
            r_scaled,
            q_self,
            r_self,
            q_cross,
            pseudo,
            kabsch,
            result,
        })
    }

    /// Full forward pass; both clouds are centred internally.
    pub fn forward(&self, query: &PointCloud, reference: &PointCloud) -> Result<AlignmentResult> {
        self.forward_trace(query, reference).map(|t| t.result)
    }

    /// Inference entry point; identical to [`forward`](Self::forward).
    pub fn align(&self, query: &PointCloud, reference: &PointCloud) -> Result<AlignmentResult> {
        self.forward(query, reference)
    }

    /// Chamfer loss of the aligned query against the centred reference and
    /// its gradient with respect to every parameter.
    pub fn loss_and_grads(&self, query: &PointCloud, reference: &PointCloud) -> Result<(f64, AlignerModel)> {
        let trace = self.forward_trace(query, reference)?;
        let mut grads = self.zeros_like();
        self.backward(&trace, &mut grads);
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
        Ok((trace.result.chamfer, grads))
    }

    pub(crate) fn backward(&self, t: &ForwardTrace, grads: &mut AlignerModel) {
        let aligned = &t.result.aligned_coords.points;
        let (_, d_aligned) = geom::chamfer_with_grad(aligned, &t.reference_points);

        // aligned_i = R q_i + t
        let mut d_rot = Mat3::ZERO;
        let mut d_trans = Vec3::ZERO;
        for (g, q) in d_aligned.iter().zip(&t.query_points) {
            d_rot = d_rot.add(&Mat3::outer(g, q));
            d_trans += *g;
        }
        let d_pseudo = geom::kabsch_target_backward(&t.kabsch, &t.query_points, &d_rot, &d_trans);
        debug_assert_eq!(d_pseudo.len(), t.pseudo.len());

        let d_pseudo_m = to_matrix(&d_pseudo);
        let d_cross = self.output.backward(&t.q_cross.0, &d_pseudo_m, &mut grads.output);
        let (d_q_self, d_r_self) = self.cross_attn.backward(&t.q_cross.1, &d_cross, &mut grads.cross_attn);
        let (a, b) = self.self_attn.backward(&t.q_self.1, &d_q_self, &mut grads.self_attn);
        let d_q_scaled = a + b;
        let (a, b) = self.self_attn.backward(&t.r_self.1, &d_r_self, &mut grads.self_attn);
        let d_r_scaled = a + b;
        debug_assert_eq!(d_q_scaled.dim(), t.q_scaled.dim());
        debug_assert_eq!(d_r_scaled.dim(), t.r_scaled.dim());
        self.input.backward(&t.query_centered, &d_q_scaled, &mut grads.input);
        self.input.backward(&t.reference_centered, &d_r_scaled, &mut grads.input);
    }
}
