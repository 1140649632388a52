//! Global point-cloud alignment: the trainable attention aligner, a RANSAC
//! baseline, and the flip-correction loop used when aligning near-linear
//! fragments.

mod flips;
mod layers;
mod model;
mod ransac;
pub mod synthetic;
mod train;

use serde::{Deserialize, Serialize};

pub use flips::{realign_flips, Aligner, FlipConfig, FlipInput, FlipOutcome};
pub use layers::{AttentionCache, Linear, MultiHeadAttention};
pub use model::{AlignerModel, CHECKPOINT_KIND, DEFAULT_EMBED_DIM, DEFAULT_HEADS, OUTPUT_DIM};
pub use ransac::{ransac_align, RansacAligner};
pub use train::{evaluate, train, EpochLoss, TrainConfig};

use crate::geom::{PointCloud, RigidTransform, Vec3};
use crate::surface::{Atom3, AtomSet};

/// Output of one alignment.
///
/// `transform` acts on the *centred* query; `aligned_coords` is that
/// transform applied to the centred query and `chamfer` is measured against
/// the centred reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub transform: RigidTransform,
    pub chamfer: f64,
    pub pseudo_coords: PointCloud,
    pub aligned_coords: PointCloud,
    pub query_centroid: Vec3,
    pub reference_centroid: Vec3,
}

impl AlignmentResult {
    /// Transform from the query's original frame into the reference's
    /// original frame: centre, rotate/translate, then de-centre.
    pub fn world_transform(&self) -> RigidTransform {
        let center = RigidTransform::new(crate::geom::Mat3::IDENTITY, -self.query_centroid);
        let decenter = RigidTransform::new(crate::geom::Mat3::IDENTITY, self.reference_centroid);
        decenter.compose(&self.transform).compose(&center)
    }
}

/// Moves query atoms with the same rigid motion that aligned its surface.
pub fn transform_atoms(result: &AlignmentResult, atoms: &AtomSet) -> AtomSet {
    let t = result.world_transform();
    AtomSet {
        atoms: atoms
            .atoms
            .iter()
            .map(|a| Atom3::new(a.symbol.clone(), t.apply(&a.position)))
            .collect(),
    }
}
