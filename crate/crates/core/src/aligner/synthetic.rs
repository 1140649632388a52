//! Synthetic self-alignment data: random ellipsoid and blob clouds paired
//! with randomly rotated copies of themselves.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{center_to_origin, Mat3, PointCloud, RigidTransform, Vec3};

/// Uniformly distributed rotation (random unit quaternion).
pub fn random_rotation<R: Rng>(rng: &mut R) -> Mat3 {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let u3: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let (w, x, y, z) = (a * u2.sin(), a * u2.cos(), b * u3.sin(), b * u3.cos());
    Mat3([
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ])
}

pub fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).sqrt();
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Points on the surface of an axis-aligned ellipsoid with the given semi-axes.
pub fn ellipsoid_cloud<R: Rng>(rng: &mut R, n_points: usize, semi_axes: [f64; 3]) -> PointCloud {
    let points = (0..n_points)
        .map(|_| {
            let d = random_unit(rng);
            Vec3::new(d.0[0] * semi_axes[0], d.0[1] * semi_axes[1], d.0[2] * semi_axes[2])
        })
        .collect();
    PointCloud { points, label: None }
}

/// A few Gaussian blobs strung along a random path, loosely linker-shaped.
pub fn blob_cloud<R: Rng>(rng: &mut R, n_points: usize, blobs: usize) -> PointCloud {
    let mut centers = vec![Vec3::ZERO];
    for _ in 1..blobs.max(1) {
        let last = *centers.last().unwrap();
        centers.push(last + random_unit(rng) * rng.gen_range(1.5..3.0));
    }
    let points = (0..n_points)
        .map(|i| {
            let c = centers[i % centers.len()];
            let g = Vec3::new(gauss(rng), gauss(rng), gauss(rng));
            c + g * 0.8
        })
        .collect();
    PointCloud { points, label: None }
}

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    Ellipsoid,
    Blobs,
}

/// Settings for a synthetic self-alignment dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub pairs: usize,
    pub points: usize,
    pub family: ShapeFamily,
    /// Semi-axis ranges (Å) for the ellipsoid family, longest first.
    pub axis_ranges: [[f64; 2]; 3],
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            pairs: 200,
            points: 64,
            family: ShapeFamily::Ellipsoid,
            axis_ranges: [[3.5, 4.5], [2.0, 2.8], [1.0, 1.5]],
            seed: 0,
        }
    }
}

/// `(query, reference)` pairs where the query is a rotated, shuffled and
/// translated copy of the (centred) reference.
pub fn self_alignment_pairs(config: &SyntheticConfig) -> Vec<(PointCloud, PointCloud)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.pairs)
        .map(|i| {
            let base = match config.family {
                ShapeFamily::Ellipsoid => {
                    let axes = config.axis_ranges.map(|[lo, hi]| if hi > lo { rng.gen_range(lo..hi) } else { lo });
                    ellipsoid_cloud(&mut rng, config.points, axes)
                }
                ShapeFamily::Blobs => {
                    let blobs = rng.gen_range(2..=4);
                    blob_cloud(&mut rng, config.points, blobs)
                }
            };
            let (reference, _) = center_to_origin(&base).expect("non-empty");
            let motion = RigidTransform::new(
                random_rotation(&mut rng),
                random_unit(&mut rng) * rng.gen_range(0.0..2.0),
            );
            let mut moved = motion.apply_all(&reference.points);
            moved.shuffle(&mut rng);
            (
                PointCloud {
                    points: moved,
                    label: Some(format!("query-{i}")),
                },
                reference.with_label(format!("reference-{i}")),
            )
        })
        .collect()
}
