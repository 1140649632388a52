use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synthetic::random_rotation;
use super::{AlignerModel, AlignmentResult};
use crate::error::{Error, Result};
use crate::geom::{rmsd_slices, Mat3, PointCloud, RigidTransform, Vec3};

/// Anything that can rigidly align a query cloud onto a reference cloud.
pub trait Aligner {
    fn align(&self, query: &PointCloud, reference: &PointCloud) -> Result<AlignmentResult>;
}

impl Aligner for AlignerModel {
    fn align(&self, query: &PointCloud, reference: &PointCloud) -> Result<AlignmentResult> {
        AlignerModel::align(self, query, reference)
    }
}

/// A conformer's surface plus the atom positions used for the RMSD check,
/// both in the conformer's own frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlipInput {
    pub cloud: PointCloud,
    pub anchors: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlipConfig {
    /// Stop once this fraction of samples sits in the lower RMSD mode.
    pub target_fraction: f64,
    pub max_iterations: usize,
    /// Minimum empty gap (Å) between the two RMSD clusters for the
    /// population to count as bimodal.
    pub mode_gap: f64,
    pub seed: u64,
}

impl Default for FlipConfig {
    fn default() -> Self {
        FlipConfig {
            target_fraction: 0.9,
            max_iterations: 5,
            mode_gap: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlipOutcome {
    pub results: Vec<AlignmentResult>,
    pub rmsds: Vec<f64>,
    /// Resampling rounds actually run.
    pub iterations: usize,
    /// RMSD separating the two modes, if the population was bimodal.
    pub threshold: Option<f64>,
    pub lower_fraction: f64,
}

/// Splits sorted values into two clusters by maximising between-class
/// variance; returns the cut index (size of the lower cluster).
fn two_means_cut(sorted: &[f64]) -> usize {
    let n = sorted.len();
    let total: f64 = sorted.iter().sum();
    let mut best = (f64::NEG_INFINITY, 1);
    let mut left = 0.0;
    for cut in 1..n {
        left += sorted[cut - 1];
        let (nl, nr) = (cut as f64, (n - cut) as f64);
        let ml = left / nl;
        let mr = (total - left) / nr;
        let between = nl * nr * (ml - mr) * (ml - mr);
        if between > best.0 {
            best = (between, cut);
        }
    }
    best.1
}

/// Threshold between the low and high RMSD modes, or `None` when the values
/// do not separate by at least `gap`.
pub(crate) fn mode_threshold(values: &[f64], gap: f64) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cut = two_means_cut(&sorted);
    let (lo, hi) = (sorted[cut - 1], sorted[cut]);
    (hi - lo >= gap).then_some(0.5 * (lo + hi))
}

fn anchor_rmsd(
    result: &AlignmentResult,
    anchors: &[Vec3],
    reference_anchors: &[Vec3],
    pairs: &[(usize, usize)],
) -> Result<f64> {
    let t = result.world_transform();
    let mut moved = Vec::with_capacity(pairs.len());
    let mut target = Vec::with_capacity(pairs.len());
    for &(a, b) in pairs {
        let p = anchors
            .get(a)
            .ok_or_else(|| Error::InvalidInput(format!("anchor index {a} out of range")))?;
        let q = reference_anchors
            .get(b)
            .ok_or_else(|| Error::InvalidInput(format!("reference anchor index {b} out of range")))?;
        moved.push(t.apply(p));
        target.push(*q);
    }
    rmsd_slices(&moved, &target)
}

/// Re-aligns the high-RMSD subpopulation from freshly rotated inputs until
/// `target_fraction` of the samples fall in the lower RMSD mode or
/// `max_iterations` rounds have run. Keeps the lowest-RMSD result per sample.
pub fn realign_flips<A: Aligner>(
    aligner: &A,
    inputs: &[FlipInput],
    reference: &PointCloud,
    reference_anchors: &[Vec3],
    anchor_pairs: &[(usize, usize)],
    config: &FlipConfig,
) -> Result<FlipOutcome> {
    if inputs.is_empty() {
        return Err(Error::InvalidInput("no conformers to align".into()));
    }
    if anchor_pairs.is_empty() {
        return Err(Error::InvalidInput("anchor correspondences are required".into()));
    }
    let mut results = Vec::with_capacity(inputs.len());
    let mut rmsds = Vec::with_capacity(inputs.len());
    for input in inputs {
        let r = aligner.align(&input.cloud, reference)?;
        rmsds.push(anchor_rmsd(&r, &input.anchors, reference_anchors, anchor_pairs)?);
        results.push(r);
    }

    let threshold = if inputs.len() >= 2 {
        mode_threshold(&rmsds, config.mode_gap)
    } else {
        None
    };
    let lower = |rmsds: &[f64], t: f64| rmsds.iter().filter(|&&r| r <= t).count() as f64 / rmsds.len() as f64;
    let Some(t) = threshold else {
        return Ok(FlipOutcome {
            results,
            rmsds,
            iterations: 0,
            threshold: None,
            lower_fraction: 1.0,
        });
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut iterations = 0;
    while iterations < config.max_iterations && lower(&rmsds, t) < config.target_fraction {
        iterations += 1;
        for (k, input) in inputs.iter().enumerate() {
            if rmsds[k] <= t {
                continue;
            }
            // rotate about the cloud centroid; anchors follow
            let c = input.cloud.centroid();
            let spin: Mat3 = random_rotation(&mut rng);
            let perturb = RigidTransform::new(spin, c - spin.mul_vec(&c));
            let cloud = perturb.apply_cloud(&input.cloud);
            let anchors = perturb.apply_all(&input.anchors);
            let mut candidate = aligner.align(&cloud, reference)?;
            let r = anchor_rmsd(&candidate, &anchors, reference_anchors, anchor_pairs)?;
            if r < rmsds[k] {
                // express the result relative to the unperturbed input
                let world = candidate.world_transform().compose(&perturb);
                candidate.query_centroid = input.cloud.centroid();
                let center = RigidTransform::new(Mat3::IDENTITY, candidate.query_centroid);
                let decenter = RigidTransform::new(Mat3::IDENTITY, -candidate.reference_centroid);
                candidate.transform = decenter.compose(&world).compose(&center);
                rmsds[k] = r;
                results[k] = candidate;
            }
        }
    }
    let lower_fraction = lower(&rmsds, t);
    Ok(FlipOutcome {
        results,
        rmsds,
        iterations,
        threshold: Some(t),
        lower_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_means_finds_gap() {
        assert_eq!(mode_threshold(&[0.1, 0.2, 5.0, 5.1], 1.0), Some(2.6));
        assert_eq!(mode_threshold(&[0.1, 0.2, 0.3], 1.0), None);
        assert_eq!(mode_threshold(&[0.1], 1.0), None);
    }
}
