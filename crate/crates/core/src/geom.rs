//! Exact geometric primitives: centering, Kabsch superposition (with its
//! analytic backward pass), Chamfer distance and RMSD.
//!
//! Everything here works in 64-bit floats on Ångström coordinates.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point or direction in 3D space.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3(pub [f64; 3]);

impl Vec3 {
    pub const ZERO: Vec3 = Vec3([0.0; 3]);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3([x, y, z])
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }

    pub fn y(&self) -> f64 {
        self.0[1]
    }

    pub fn z(&self) -> f64 {
        self.0[2]
    }

    pub fn dot(&self, other: &Vec3) -> f64 {
        self.0[0] * other.0[0] + self.0[1] * other.0[1] + self.0[2] * other.0[2]
    }

    pub fn cross(&self, o: &Vec3) -> Vec3 {
        let [a, b, c] = self.0;
        let [x, y, z] = o.0;
        Vec3([b * z - c * y, c * x - a * z, a * y - b * x])
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Unit vector in the same direction; the zero vector maps to itself.
    pub fn normalized(&self) -> Vec3 {
        let n = self.norm();
        if n > 0.0 {
            *self * (1.0 / n)
        } else {
            *self
        }
    }

    pub fn dist_sq(&self, other: &Vec3) -> f64 {
        let dx = self.0[0] - other.0[0];
        let dy = self.0[1] - other.0[1];
        let dz = self.0[2] - other.0[2];
        dx * dx + dy * dy + dz * dz
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        self * -1.0
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vec3 {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    pub const ZERO: Mat3 = Mat3([[0.0; 3]; 3]);

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(out)
    }

    pub fn mul_vec(&self, v: &Vec3) -> Vec3 {
        let m = &self.0;
        Vec3([
            m[0][0] * v.0[0] + m[0][1] * v.0[1] + m[0][2] * v.0[2],
            m[1][0] * v.0[0] + m[1][1] * v.0[1] + m[1][2] * v.0[2],
            m[2][0] * v.0[0] + m[2][1] * v.0[1] + m[2][2] * v.0[2],
        ])
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn col(&self, j: usize) -> Vec3 {
        Vec3([self.0[0][j], self.0[1][j], self.0[2][j]])
    }

    pub fn set_col(&mut self, j: usize, v: Vec3) {
        for i in 0..3 {
            self.0[i][j] = v.0[i];
        }
    }

    /// Outer product `a bᵀ`.
    pub fn outer(a: &Vec3, b: &Vec3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a.0[i] * b.0[j];
            }
        }
        Mat3(out)
    }

    pub fn add(&self, o: &Mat3) -> Mat3 {
        let mut out = self.0;
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell += o.0[i][j];
            }
        }
        Mat3(out)
    }

    /// Rotation by `angle` radians about `axis` (Rodrigues).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
        let k = axis.normalized();
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        let [x, y, z] = k.0;
        Mat3([
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ])
    }

    /// Max deviation of `RᵀR` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let rtr = self.transpose().mul_mat(self);
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((rtr.0[i][j] - target).abs());
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

/// An ordered set of 3D points in Ångström.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl PointCloud {
    /// Builds a cloud, rejecting empty or non-finite input.
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("point cloud is empty".into()));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("point {i} of cloud")));
        }
        Ok(PointCloud {
            points,
            label: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        centroid(&self.points)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Vec3> {
        self.points.iter()
    }
}

pub(crate) fn centroid(points: &[Vec3]) -> Vec3 {
    let mut sum = Vec3::ZERO;
    for p in points {
        sum += *p;
    }
    sum * (1.0 / points.len() as f64)
}

/// Proper rotation followed by a translation: `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: Mat3::IDENTITY,
        translation: Vec3::ZERO,
    };

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation.mul_vec(p) + self.translation
    }

    pub fn apply_all(&self, points: &[Vec3]) -> Vec<Vec3> {
        points.iter().map(|p| self.apply(p)).collect()
    }

    pub fn apply_cloud(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud {
            points: self.apply_all(&cloud.points),
            label: cloud.label.clone(),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation.mul_mat(&other.rotation),
            translation: self.rotation.mul_vec(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -rt.mul_vec(&self.translation),
        }
    }

    /// True when the rotation is orthonormal with determinant +1 within `tol`.
    pub fn is_proper(&self, tol: f64) -> bool {
        self.rotation.orthonormality_error() <= tol && (self.rotation.det() - 1.0).abs() <= tol
    }
}

/// Translates the cloud so its centroid sits at the origin; the centroid is
/// returned so the shift can be undone.
pub fn center_to_origin(cloud: &PointCloud) -> Result<(PointCloud, Vec3)> {
    if cloud.is_empty() {
        return Err(Error::InvalidInput("cannot center an empty cloud".into()));
    }
    let c = cloud.centroid();
    let points = cloud.points.iter().map(|p| *p - c).collect();
    Ok((
        PointCloud {
            points,
            label: cloud.label.clone(),
        },
        c,
    ))
}

/// Singular value decomposition `A = U diag(σ) Vᵀ` of a 3×3 matrix, with
/// σ sorted in descending order.
#[derive(Debug, Clone, Copy)]
pub struct Svd3 {
    pub u: Mat3,
    pub sigma: [f64; 3],
    pub v: Mat3,
}

/// Deterministic 3×3 SVD by one-sided Jacobi rotations.
///
/// Columns are sign-normalised so the largest-magnitude entry of every
/// column of `V` is positive (first such entry on exact ties); `U` follows.
/// Rank-deficient inputs get an orthonormal completion of `U`.
pub fn svd3(a: &Mat3) -> Svd3 {
    let mut w = *a;
    let mut v = Mat3::IDENTITY;
    for _sweep in 0..64 {
        let mut rotated = false;
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
            for k in 0..3 {
                alpha += w.0[k][p] * w.0[k][p];
                beta += w.0[k][q] * w.0[k][q];
                gamma += w.0[k][p] * w.0[k][q];
            }
            if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (2.0 * gamma);
            let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = c * t;
            for k in 0..3 {
                let wp = w.0[k][p];
                let wq = w.0[k][q];
                w.0[k][p] = c * wp - s * wq;
                w.0[k][q] = s * wp + c * wq;
                let vp = v.0[k][p];
                let vq = v.0[k][q];
                v.0[k][p] = c * vp - s * vq;
                v.0[k][q] = s * vp + c * vq;
            }
        }
        if !rotated {
            break;
        }
    }

    let norms = [w.col(0).norm(), w.col(1).norm(), w.col(2).norm()];
    let mut order = [0usize, 1, 2];
    // stable sort keeps the original column order on ties
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap_or(std::cmp::Ordering::Equal));

    let mut sigma = [0.0; 3];
    let mut u = Mat3::ZERO;
    let mut vs = Mat3::ZERO;
    for (dst, &src) in order.iter().enumerate() {
        sigma[dst] = norms[src];
        vs.set_col(dst, v.col(src));
        u.set_col(dst, w.col(src));
    }

    // Orthonormal U, completing directions whose singular value vanishes.
    let scale = sigma[0];
    let tiny = |s: f64| s <= scale * 1e-13 || s == 0.0;
    let axes = [
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(0.0, 0.0, 1.0),
    ];
    let mut basis: Vec<Vec3> = Vec::with_capacity(3);
    for j in 0..3 {
        let mut candidate = if tiny(sigma[j]) {
            None
        } else {
            Some(u.col(j) * (1.0 / sigma[j]))
        };
        if let Some(c) = candidate {
            let mut c = c;
            for b in &basis {
                c -= *b * c.dot(b);
            }
            candidate = if c.norm() > 1e-8 { Some(c.normalized()) } else { None };
        }
        let col = match candidate {
            Some(c) => c,
            None => {
                if basis.len() == 2 {
                    basis[0].cross(&basis[1])
                } else {
                    // first axis that is not (nearly) spanned by the basis
                    let mut best = axes[0];
                    let mut best_norm = -1.0;
                    for ax in &axes {
                        let mut c = *ax;
                        for b in &basis {
                            c -= *b * c.dot(b);
                        }
                        if c.norm() > best_norm + 1e-12 {
                            best_norm = c.norm();
                            best = c;
                        }
                    }
                    best.normalized()
                }
            }
        };
        basis.push(col);
        u.set_col(j, col);
    }

    for j in 0..3 {
        let col = vs.col(j);
        let mut pivot = 0;
        for i in 1..3 {
            if col.0[i].abs() > col.0[pivot].abs() {
                pivot = i;
            }
        }
        if col.0[pivot] < 0.0 {
            vs.set_col(j, -col);
            u.set_col(j, -u.col(j));
        }
    }

    Svd3 { u, sigma, v: vs }
}

/// Intermediate quantities of a Kabsch solve, kept for backpropagation.
#[derive(Debug, Clone, Copy)]
pub struct KabschSolution {
    pub transform: RigidTransform,
    /// Cross-covariance `H = Σ (p_i − p̄)(q_i − q̄)ᵀ`.
    pub covariance: Mat3,
    pub svd: Svd3,
    /// Reflection guard `D = diag(1, 1, ±1)`.
    pub d: [f64; 3],
    pub centroid_mobile: Vec3,
    pub centroid_target: Vec3,
}

fn check_pairs(mobile: &[Vec3], target: &[Vec3], min: usize) -> Result<()> {
    if mobile.len() != target.len() {
        return Err(Error::SizeMismatch(mobile.len(), target.len()));
    }
    if mobile.len() < min {
        return Err(Error::InvalidInput(format!(
            "Kabsch needs at least {min} point pairs, got {}",
            mobile.len()
        )));
    }
    if mobile.iter().chain(target).any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("Kabsch input".into()));
    }
    Ok(())
}

/// Kabsch solve on raw slices; at least `min_points` pairs are required.
pub(crate) fn kabsch_solve(mobile: &[Vec3], target: &[Vec3], min_points: usize) -> Result<KabschSolution> {
    check_pairs(mobile, target, min_points)?;
    let cm = centroid(mobile);
    let ct = centroid(target);
    let mut h = Mat3::ZERO;
    for (p, q) in mobile.iter().zip(target) {
        h = h.add(&Mat3::outer(&(*p - cm), &(*q - ct)));
    }
    let svd = svd3(&h);
    let vut = svd.v.mul_mat(&svd.u.transpose());
    let sign = if vut.det() < 0.0 { -1.0 } else { 1.0 };
    let d = [1.0, 1.0, sign];
    let mut vd = svd.v;
    for row in vd.0.iter_mut() {
        row[2] *= sign;
    }
    let rotation = vd.mul_mat(&svd.u.transpose());
    let translation = ct - rotation.mul_vec(&cm);
    Ok(KabschSolution {
        transform: RigidTransform {
            rotation,
            translation,
        },
        covariance: h,
        svd,
        d,
        centroid_mobile: cm,
        centroid_target: ct,
    })
}

/// Optimal proper rigid transform superposing `mobile` onto `target`
/// (points in correspondence by index).
pub fn kabsch(mobile: &PointCloud, target: &PointCloud) -> Result<RigidTransform> {
    kabsch_solve(&mobile.points, &target.points, 3).map(|s| s.transform)
}

/// Same as [`kabsch`] but returns the SVD internals needed for gradients.
pub fn kabsch_detailed(mobile: &PointCloud, target: &PointCloud) -> Result<KabschSolution> {
    kabsch_solve(&mobile.points, &target.points, 3)
}

/// Floor applied to singular-value sums/differences in the SVD backward.
pub const SVD_JITTER: f64 = 1e-8;

fn jittered(x: f64) -> f64 {
    if x.abs() < SVD_JITTER {
        if x < 0.0 {
            -SVD_JITTER
        } else {
            SVD_JITTER
        }
    } else {
        x
    }
}

/// Backpropagates `∂L/∂R` through `R = V D Uᵀ` to `∂L/∂H`.
pub fn kabsch_rotation_backward(sol: &KabschSolution, grad_rotation: &Mat3) -> Mat3 {
    let Svd3 { u, sigma, v } = sol.svd;
    let d = sol.d;
    let g_hat = v.transpose().mul_mat(grad_rotation).mul_mat(&u);
    // coefficient pair (k, l) such that Y_ij = k X_ij + l X_ji
    let coeff = |i: usize, j: usize| -> (f64, f64) {
        if d[i] == d[j] {
            let c = d[i] / jittered(sigma[i] + sigma[j]);
            (c, -c)
        } else {
            let c = d[j] / jittered(sigma[j] - sigma[i]);
            (c, c)
        }
    };
    let mut z = Mat3::ZERO;
    for i in 0..3 {
        for j in 0..3 {
            if i == j {
                continue;
            }
            let (k_ij, _) = coeff(i, j);
            let (_, l_ji) = coeff(j, i);
            z.0[i][j] = g_hat.0[i][j] * k_ij + g_hat.0[j][i] * l_ji;
        }
    }
    // ∂L/∂M = V Z Uᵀ with M = Hᵀ
    u.mul_mat(&z.transpose()).mul_mat(&v.transpose())
}

/// Gradient of a loss w.r.t. the target points of a Kabsch solve, given the
/// loss gradients w.r.t. the rotation and the translation.
///
/// The mobile side is treated as a constant.
pub fn kabsch_target_backward(
    sol: &KabschSolution,
    mobile: &[Vec3],
    grad_rotation: &Mat3,
    grad_translation: &Vec3,
) -> Vec<Vec3> {
    let n = mobile.len() as f64;
    // t = c_t − R c_m
    let mut g_rot = *grad_rotation;
    let cm = sol.centroid_mobile;
    for i in 0..3 {
        for j in 0..3 {
            g_rot.0[i][j] -= grad_translation.0[i] * cm.0[j];
        }
    }
    let g_h = kabsch_rotation_backward(sol, &g_rot);
    let g_ht = g_h.transpose();
    let centred: Vec<Vec3> = mobile.iter().map(|p| g_ht.mul_vec(&(*p - cm))).collect();
    let mean = centroid(&centred);
    centred
        .into_iter()
        .map(|g| g - mean + *grad_translation * (1.0 / n))
        .collect()
}

/// How nearest neighbours are found for the Chamfer distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NnSearch {
    /// Exact double loop.
    BruteForce,
    /// Exact uniform-grid search.
    Grid,
    /// Brute force below [`GRID_THRESHOLD`] points, grid above.
    Auto,
}

/// Cloud size from which `NnSearch::Auto` switches to the grid.
pub const GRID_THRESHOLD: usize = 512;

#[inline]
fn better(d: f64, idx: usize, best_d: f64, best_idx: usize) -> bool {
    d < best_d || (d == best_d && idx < best_idx)
}

fn nn_brute(queries: &[Vec3], pool: &[Vec3]) -> Vec<(usize, f64)> {
    queries
        .iter()
        .map(|q| {
            let mut best = (usize::MAX, f64::INFINITY);
            for (j, p) in pool.iter().enumerate() {
                let d = q.dist_sq(p);
                if better(d, j, best.1, best.0) {
                    best = (j, d);
                }
            }
            best
        })
        .collect()
}

struct UniformGrid<'a> {
    pool: &'a [Vec3],
    origin: Vec3,
    side: f64,
    dims: [i64; 3],
    cells: Vec<Vec<u32>>,
}

impl<'a> UniformGrid<'a> {
    fn build(pool: &'a [Vec3]) -> Self {
        let mut lo = pool[0];
        let mut hi = pool[0];
        for p in pool {
            for k in 0..3 {
                lo.0[k] = lo.0[k].min(p.0[k]);
                hi.0[k] = hi.0[k].max(p.0[k]);
            }
        }
        let ext = hi - lo;
        let max_ext = ext.0.iter().cloned().fold(0.0, f64::max).max(1e-9);
        // about two points per cell for a volume-filling cloud
        let vol = (0..3).map(|k| ext.0[k].max(max_ext * 1e-3)).product::<f64>();
        let mut side = (2.0 * vol / pool.len() as f64).cbrt();
        if !side.is_finite() || side <= 0.0 {
            side = max_ext;
        }
        side = side.max(max_ext / 256.0);
        let dims = [0, 1, 2].map(|k| ((ext.0[k] / side).floor() as i64 + 1).max(1));
        let mut cells = vec![Vec::new(); (dims[0] * dims[1] * dims[2]) as usize];
        let mut grid = UniformGrid {
            pool,
            origin: lo,
            side,
            dims,
            cells: Vec::new(),
        };
        for (i, p) in pool.iter().enumerate() {
            let c = grid.cell_of(p);
            let c = [0, 1, 2].map(|k| c[k].clamp(0, dims[k] - 1));
            cells[grid.flat(c)].push(i as u32);
        }
        grid.cells = cells;
        grid
    }

    fn cell_of(&self, p: &Vec3) -> [i64; 3] {
        [0, 1, 2].map(|k| ((p.0[k] - self.origin.0[k]) / self.side).floor() as i64)
    }

    fn flat(&self, c: [i64; 3]) -> usize {
        ((c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]) as usize
    }

    fn nearest(&self, q: &Vec3) -> (usize, f64) {
        let raw = self.cell_of(q);
        let c = [0, 1, 2].map(|k| raw[k].clamp(0, self.dims[k] - 1));
        let mut best = (usize::MAX, f64::INFINITY);
        let mut r: i64 = 0;
        loop {
            // shell of Chebyshev radius r around c, clipped to the grid
            let lo = [0, 1, 2].map(|k| (c[k] - r).max(0));
            let hi = [0, 1, 2].map(|k| (c[k] + r).min(self.dims[k] - 1));
            for x in lo[0]..=hi[0] {
                for y in lo[1]..=hi[1] {
                    for z in lo[2]..=hi[2] {
                        let on_shell = (x - c[0]).abs() == r || (y - c[1]).abs() == r || (z - c[2]).abs() == r;
                        if !on_shell {
                            continue;
                        }
                        for &j in &self.cells[self.flat([x, y, z])] {
                            let j = j as usize;
                            let d = q.dist_sq(&self.pool[j]);
                            if better(d, j, best.1, best.0) {
                                best = (j, d);
                            }
                        }
                    }
                }
            }
            // unsearched cells lie beyond a face of the searched box that
            // still has grid behind it; the nearest such face bounds them
            let mut bound = f64::INFINITY;
            for k in 0..3 {
                if lo[k] > 0 {
                    let face = self.origin.0[k] + lo[k] as f64 * self.side;
                    bound = bound.min((q.0[k] - face).max(0.0));
                }
                if hi[k] < self.dims[k] - 1 {
                    let face = self.origin.0[k] + (hi[k] + 1) as f64 * self.side;
                    bound = bound.min((face - q.0[k]).max(0.0));
                }
            }
            if bound.is_infinite() || (best.0 != usize::MAX && best.1 < bound * bound) {
                return best;
            }
            r += 1;
        }
    }
}

fn nn_grid(queries: &[Vec3], pool: &[Vec3]) -> Vec<(usize, f64)> {
    let grid = UniformGrid::build(pool);
    queries.iter().map(|q| grid.nearest(q)).collect()
}

/// Nearest neighbour in `pool` for every query point as `(index, squared distance)`.
/// Ties resolve to the lowest pool index.
pub fn nearest_neighbors(queries: &[Vec3], pool: &[Vec3], search: NnSearch) -> Vec<(usize, f64)> {
    match search {
        NnSearch::BruteForce => nn_brute(queries, pool),
        NnSearch::Grid => nn_grid(queries, pool),
        NnSearch::Auto => {
            if queries.len().max(pool.len()) < GRID_THRESHOLD {
                nn_brute(queries, pool)
            } else {
                nn_grid(queries, pool)
            }
        }
    }
}

fn check_nonempty(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("Chamfer distance of an empty cloud".into()));
    }
    Ok(())
}

/// Symmetric Chamfer distance normalised by `|A| + |B|` (Å²), on raw coordinates.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    chamfer_distance_with(a, b, NnSearch::Auto)
}

pub fn chamfer_distance_with(a: &PointCloud, b: &PointCloud, search: NnSearch) -> Result<f64> {
    check_nonempty(a, b)?;
    Ok(chamfer_slices(&a.points, &b.points, search))
}

/// Chamfer distance after centring both clouds on their own centroids.
pub fn chamfer_distance_centered(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    check_nonempty(a, b)?;
    let (ac, _) = center_to_origin(a)?;
    let (bc, _) = center_to_origin(b)?;
    Ok(chamfer_slices(&ac.points, &bc.points, NnSearch::Auto))
}

pub(crate) fn chamfer_slices(a: &[Vec3], b: &[Vec3], search: NnSearch) -> f64 {
    let ab = nearest_neighbors(a, b, search);
    let ba = nearest_neighbors(b, a, search);
    let forward: f64 = ab.iter().map(|(_, d)| d).sum();
    let backward: f64 = ba.iter().map(|(_, d)| d).sum();
    (forward + backward) / (a.len() + b.len()) as f64
}

/// Chamfer distance and its gradient with respect to the points of `a`
/// (`b` held fixed). Nearest-neighbour ties use the lowest index.
pub fn chamfer_with_grad(a: &[Vec3], b: &[Vec3]) -> (f64, Vec<Vec3>) {
    let ab = nearest_neighbors(a, b, NnSearch::Auto);
    let ba = nearest_neighbors(b, a, NnSearch::Auto);
    let norm = 1.0 / (a.len() + b.len()) as f64;
    let forward: f64 = ab.iter().map(|(_, d)| d).sum();
    let backward: f64 = ba.iter().map(|(_, d)| d).sum();
    let mut grad = vec![Vec3::ZERO; a.len()];
    for (i, &(j, _)) in ab.iter().enumerate() {
        grad[i] += (a[i] - b[j]) * (2.0 * norm);
    }
    for (j, &(i, _)) in ba.iter().enumerate() {
        grad[i] += (a[i] - b[j]) * (2.0 * norm);
    }
    ((forward + backward) * norm, grad)
}

/// Root-mean-square deviation of index-corresponding points (Å).
pub fn rmsd(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    rmsd_slices(&p.points, &q.points)
}

pub(crate) fn rmsd_slices(p: &[Vec3], q: &[Vec3]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::SizeMismatch(p.len(), q.len()));
    }
    if p.is_empty() {
        return Err(Error::InvalidInput("RMSD of empty point sets".into()));
    }
    let sum: f64 = p.iter().zip(q).map(|(a, b)| a.dist_sq(b)).sum();
    Ok((sum / p.len() as f64).sqrt())
}

/// One `element x y z` record of an XYZ file.
#[derive(Debug, Clone, PartialEq)]
pub struct XyzRecord {
    pub element: String,
    pub position: Vec3,
}

/// Parses XYZ text: atom count, comment line, then `element x y z` rows.
/// Returns the comment and the records; an empty file yields no records.
pub fn parse_xyz(text: &str) -> Result<(String, Vec<XyzRecord>)> {
    let mut lines = text.lines();
    let Some(first) = lines.next().filter(|l| !l.trim().is_empty()) else {
        return Ok((String::new(), Vec::new()));
    };
    let count: usize = first
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("xyz line 1: bad atom count {:?}", first.trim())))?;
    let comment = lines.next().unwrap_or("").to_string();
    let mut records = Vec::with_capacity(count);
    for (k, line) in lines.enumerate().take(count) {
        let lineno = k + 3;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 4 {
            return Err(Error::Parse(format!("xyz line {lineno}: expected element x y z")));
        }
        let mut xyz = [0.0; 3];
        for (slot, f) in xyz.iter_mut().zip(&fields[1..4]) {
            *slot = f
                .parse()
                .map_err(|_| Error::Parse(format!("xyz line {lineno}: bad coordinate {f:?}")))?;
        }
        let position = Vec3(xyz);
        if !position.is_finite() {
            return Err(Error::NonFinite(format!("xyz line {lineno}")));
        }
        records.push(XyzRecord {
            element: fields[0].to_string(),
            position,
        });
    }
    if records.len() != count {
        return Err(Error::Parse(format!(
            "xyz declares {count} atoms but holds {}",
            records.len()
        )));
    }
    Ok((comment, records))
}

/// Formats records as XYZ with six decimals.
pub fn write_xyz(comment: &str, records: &[XyzRecord]) -> String {
    let mut out = format!("{}\n{}\n", records.len(), comment.replace('\n', " "));
    for r in records {
        out.push_str(&format!(
            "{} {:.6} {:.6} {:.6}\n",
            r.element,
            r.position.x(),
            r.position.y(),
            r.position.z()
        ));
    }
    out
}

impl PointCloud {
    /// Points written with element `X`.
    pub fn to_xyz(&self, comment: &str) -> String {
        let records: Vec<XyzRecord> = self
            .points
            .iter()
            .map(|&position| XyzRecord {
                element: "X".into(),
                position,
            })
            .collect();
        write_xyz(comment, &records)
    }

    /// Reads a cloud from XYZ, ignoring element labels.
    pub fn from_xyz(text: &str) -> Result<PointCloud> {
        let (_, records) = parse_xyz(text)?;
        PointCloud::new(records.into_iter().map(|r| r.position).collect())
    }
}
