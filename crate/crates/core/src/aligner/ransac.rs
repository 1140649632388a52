use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::flips::Aligner;
use super::AlignmentResult;
use crate::error::{Error, Result};
use crate::geom::{self, center_to_origin, kabsch_solve, PointCloud, Vec3};

/// Triangle edge-length consistency check between sampled triples.
fn edges_agree(q: &[Vec3; 3], r: &[Vec3; 3], tolerance: f64) -> bool {
    [(0, 1), (0, 2), (1, 2)]
        .iter()
        .all(|&(a, b)| (q[a].dist_sq(&q[b]).sqrt() - r[a].dist_sq(&r[b]).sqrt()).abs() <= tolerance)
}

/// Best-of-N rigid registration from random 3-point correspondences.
///
/// Each iteration draws three distinct query and three distinct reference
/// indices, solves Kabsch on them and scores the whole centred clouds by
/// Chamfer distance. From the second iteration on, hypotheses whose triangle
/// edge lengths disagree by more than `inlier_threshold` are rejected before
/// scoring. The random stream depends only on `seed`, so the best Chamfer is
/// non-increasing in `iterations`.
pub fn ransac_align(
    query: &PointCloud,
    reference: &PointCloud,
    iterations: usize,
    inlier_threshold: f64,
    seed: u64,
) -> Result<AlignmentResult> {
    if query.len() < 3 || reference.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "RANSAC needs ≥ 3 points per cloud, got {} and {}",
            query.len(),
            reference.len()
        )));
    }
    if iterations == 0 {
        return Err(Error::InvalidInput("RANSAC needs at least one iteration".into()));
    }
    if !(inlier_threshold > 0.0) {
        return Err(Error::InvalidInput("inlier_threshold must be > 0".into()));
    }
    let (qc, q_centroid) = center_to_origin(query)?;
    let (rc, r_centroid) = center_to_origin(reference)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut best: Option<(f64, geom::RigidTransform, [Vec3; 3])> = None;
    for it in 0..iterations {
        let qi = sample(&mut rng, qc.len(), 3);
        let ri = sample(&mut rng, rc.len(), 3);
        let qt = [qc.points[qi.index(0)], qc.points[qi.index(1)], qc.points[qi.index(2)]];
        let rt = [rc.points[ri.index(0)], rc.points[ri.index(1)], rc.points[ri.index(2)]];
        if it > 0 && !edges_agree(&qt, &rt, inlier_threshold) {
            continue;
        }
        let sol = kabsch_solve(&qt, &rt, 3)?;
        let aligned = sol.transform.apply_all(&qc.points);
        let cd = geom::chamfer_slices(&aligned, &rc.points, geom::NnSearch::Auto);
        if best.as_ref().map_or(true, |(b, _, _)| cd < *b) {
            best = Some((cd, sol.transform, rt));
        }
    }
    let (chamfer, transform, anchors) = best.expect("first iteration is always scored");
    Ok(AlignmentResult {
        transform,
        chamfer,
        pseudo_coords: PointCloud {
            points: anchors.to_vec(),
            label: None,
        },
        aligned_coords: PointCloud {
            points: transform.apply_all(&qc.points),
            label: query.label.clone(),
        },
        query_centroid: q_centroid,
        reference_centroid: r_centroid,
    })
}

/// RANSAC baseline packaged as an [`Aligner`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacAligner {
    pub iterations: usize,
    pub inlier_threshold: f64,
    pub seed: u64,
}

impl Aligner for RansacAligner {
    fn align(&self, query: &PointCloud, reference: &PointCloud) -> Result<AlignmentResult> {
        ransac_align(query, reference, self.iterations, self.inlier_threshold, self.seed)
    }
}
