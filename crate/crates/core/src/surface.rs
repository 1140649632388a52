//! Molecular surface point clouds sampled from the level set of a smooth
//! (log-sum-exp) distance to the atom spheres.
//!
//! Seeds are scattered in a shell around every atom, pulled onto the level
//! set by gradient descent and a short Newton polish, then averaged within
//! cubic bins so the density is roughly uniform.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{parse_xyz, write_xyz, PointCloud, Vec3, XyzRecord};

/// Atom classes known to the surface model; everything else is `Other`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SurfaceElement {
    C,
    H,
    O,
    N,
    S,
    Se,
    Other,
}

impl SurfaceElement {
    /// Maps an element symbol (case-insensitive) onto the vocabulary.
    pub fn from_symbol(symbol: &str) -> Self {
        match symbol.to_ascii_lowercase().as_str() {
            "c" => SurfaceElement::C,
            "h" => SurfaceElement::H,
            "o" => SurfaceElement::O,
            "n" => SurfaceElement::N,
            "s" => SurfaceElement::S,
            "se" => SurfaceElement::Se,
            _ => SurfaceElement::Other,
        }
    }
}

/// Van der Waals radius in Å; `Other` borrows carbon's radius.
pub fn atom_radius(element: SurfaceElement) -> f64 {
    match element {
        SurfaceElement::C => 1.70,
        SurfaceElement::H => 1.10,
        SurfaceElement::O => 1.52,
        SurfaceElement::N => 1.55,
        SurfaceElement::S => 1.80,
        SurfaceElement::Se => 1.90,
        SurfaceElement::Other => 1.70,
    }
}

/// One atom with its original element symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom3 {
    pub symbol: String,
    pub position: Vec3,
}

impl Atom3 {
    pub fn new(symbol: impl Into<String>, position: Vec3) -> Self {
        Atom3 {
            symbol: symbol.into(),
            position,
        }
    }

    pub fn element(&self) -> SurfaceElement {
        SurfaceElement::from_symbol(&self.symbol)
    }

    pub fn radius(&self) -> f64 {
        atom_radius(self.element())
    }
}

/// A non-empty list of atoms with finite positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomSet {
    pub atoms: Vec<Atom3>,
}

impl AtomSet {
    pub fn new(atoms: Vec<Atom3>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidInput("no atoms".into()));
        }
        if let Some(i) = atoms.iter().position(|a| !a.position.is_finite()) {
            return Err(Error::NonFinite(format!("position of atom {i}")));
        }
        Ok(AtomSet { atoms })
    }

    /// Reads atoms from XYZ text; fails with "no atoms" on an empty file.
    pub fn from_xyz(text: &str) -> Result<Self> {
        let (_, records) = parse_xyz(text)?;
        AtomSet::new(records.into_iter().map(|r| Atom3::new(r.element, r.position)).collect())
    }

    pub fn to_xyz(&self, comment: &str) -> String {
        let records: Vec<XyzRecord> = self
            .atoms
            .iter()
            .map(|a| XyzRecord {
                element: a.symbol.clone(),
                position: a.position,
            })
            .collect();
        write_xyz(comment, &records)
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.atoms.iter().map(|a| a.position).collect()
    }

    pub fn centroid(&self) -> Vec3 {
        crate::geom::centroid(&self.positions())
    }

    pub fn translated(&self, shift: Vec3) -> AtomSet {
        AtomSet {
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom3::new(a.symbol.clone(), a.position + shift))
                .collect(),
        }
    }
}

/// Surface sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurfaceParams {
    /// Probe offset of the level set above the atom spheres (Å).
    pub level: f64,
    /// Side length of the averaging bins (Å).
    pub resolution: f64,
    /// Soft-min temperature (Å).
    pub sigma: f64,
    pub descent_steps: usize,
    /// Fixed gradient-descent step (Å).
    pub step: f64,
    pub seeds_per_atom: usize,
    pub rng_seed: u64,
}

impl Default for SurfaceParams {
    fn default() -> Self {
        SurfaceParams {
            level: 0.9,
            resolution: 0.9,
            sigma: 0.1,
            descent_steps: 40,
            step: 0.2,
            seeds_per_atom: 256,
            rng_seed: 0,
        }
    }
}

impl SurfaceParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("level", self.level), ("resolution", self.resolution), ("sigma", self.sigma), ("step", self.step)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!("surface {name} must be > 0, got {v}")));
            }
        }
        if self.seeds_per_atom == 0 {
            return Err(Error::InvalidInput("seeds_per_atom must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Points whose residual exceeds this are discarded (Å).
pub const LEVEL_TOLERANCE: f64 = 0.05;

/// Soft-min over atoms of `‖x − a_i‖ − r_i`:
/// `−σ ln Σ_i exp(−(‖x − a_i‖ − r_i)/σ)`.
pub fn smooth_distance(x: &Vec3, atoms: &AtomSet, sigma: f64) -> f64 {
    smooth_distance_grad(x, atoms, sigma).0
}

/// Smooth distance and its gradient with respect to `x`.
pub fn smooth_distance_grad(x: &Vec3, atoms: &AtomSet, sigma: f64) -> (f64, Vec3) {
    let mut terms = Vec::with_capacity(atoms.len());
    let mut lowest = f64::INFINITY;
    for a in &atoms.atoms {
        let diff = *x - a.position;
        let d = diff.norm();
        let s = d - a.radius();
        lowest = lowest.min(s);
        terms.push((s, diff, d));
    }
    let mut total = 0.0;
    let mut grad = Vec3::ZERO;
    for (s, diff, d) in &terms {
        let w = (-(s - lowest) / sigma).exp();
        total += w;
        if *d > 0.0 {
            grad += *diff * (w / d);
        }
    }
    let value = lowest - sigma * total.ln();
    (value, grad * (1.0 / total))
}

fn random_direction<R: Rng>(rng: &mut R) -> Vec3 {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).sqrt();
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

fn newton_polish(mut x: Vec3, atoms: &AtomSet, params: &SurfaceParams, iters: usize) -> (Vec3, f64) {
    let (mut f, mut g) = smooth_distance_grad(&x, atoms, params.sigma);
    for _ in 0..iters {
        let gg = g.norm_sq();
        let r = f - params.level;
        if gg < 1e-12 || r.abs() < 1e-12 {
            break;
        }
        x -= g * (r / gg);
        (f, g) = smooth_distance_grad(&x, atoms, params.sigma);
    }
    (x, f - params.level)
}

fn descend(seed: Vec3, atoms: &AtomSet, params: &SurfaceParams) -> (Vec3, f64) {
    let mut x = seed;
    for _ in 0..params.descent_steps {
        let (f, g) = smooth_distance_grad(&x, atoms, params.sigma);
        // gradient of ½ (f − level)²
        x -= g * (params.step * (f - params.level));
    }
    newton_polish(x, atoms, params, 8)
}

type BinKey = [i64; 3];

fn bin_key(p: &Vec3, anchor: &Vec3, resolution: f64) -> BinKey {
    [0, 1, 2].map(|k| ((p.0[k] - anchor.0[k]) / resolution).floor() as i64)
}

/// Samples the molecular surface `{x : smooth_distance(x) = level}`.
///
/// Bins are anchored at the atom centroid, so the result moves rigidly with
/// translated input. Output is sorted lexicographically and is a pure
/// function of `(atoms, params)`.
pub fn sample_surface(atoms: &AtomSet, params: &SurfaceParams) -> Result<PointCloud> {
    params.validate()?;
    if atoms.is_empty() {
        return Err(Error::InvalidInput("no atoms".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut seeds = Vec::with_capacity(atoms.len() * params.seeds_per_atom);
    for a in &atoms.atoms {
        let r = a.radius();
        for _ in 0..params.seeds_per_atom {
            let dir = random_direction(&mut rng);
            let radius = rng.gen_range(r..r + 2.0 * params.level);
            seeds.push(a.position + dir * radius);
        }
    }

    let settled: Vec<(Vec3, f64)> = seeds.par_iter().map(|s| descend(*s, atoms, params)).collect();
    let converged: Vec<Vec3> = settled
        .iter()
        .filter(|(_, r)| r.abs() < LEVEL_TOLERANCE)
        .map(|(p, _)| *p)
        .collect();
    if converged.len() * 2 < seeds.len() {
        let max_residual = settled.iter().map(|(_, r)| r.abs()).fold(0.0, f64::max);
        return Err(Error::SamplingFailed {
            seeds: seeds.len(),
            converged: converged.len(),
            max_residual,
        });
    }

    let anchor = atoms.centroid();
    let mut bins: BTreeMap<BinKey, (Vec3, usize)> = BTreeMap::new();
    for p in &converged {
        let e = bins.entry(bin_key(p, &anchor, params.resolution)).or_insert((Vec3::ZERO, 0));
        e.0 += *p;
        e.1 += 1;
    }
    let averaged: Vec<Vec3> = bins.values().map(|(sum, n)| *sum * (1.0 / *n as f64)).collect();

    // Averages sag below a curved surface; project them back onto it and
    // keep one point per bin.
    let projected: Vec<(Vec3, f64)> = averaged
        .par_iter()
        .map(|p| newton_polish(*p, atoms, params, 12))
        .collect();
    let mut kept: BTreeMap<BinKey, Vec3> = BTreeMap::new();
    for (p, r) in projected {
        if r.abs() < LEVEL_TOLERANCE {
            kept.entry(bin_key(&p, &anchor, params.resolution)).or_insert(p);
        }
    }
    let mut points: Vec<Vec3> = kept.into_values().collect();
    points.sort_by(|a, b| {
        a.0[0]
            .total_cmp(&b.0[0])
            .then(a.0[1].total_cmp(&b.0[1]))
            .then(a.0[2].total_cmp(&b.0[2]))
    });
    PointCloud::new(points)
}

/// Residual summary `|smooth_distance − level|` over a cloud: `(max, mean)`.
pub fn level_residuals(cloud: &PointCloud, atoms: &AtomSet, params: &SurfaceParams) -> (f64, f64) {
    let res: Vec<f64> = cloud
        .points
        .iter()
        .map(|p| (smooth_distance(p, atoms, params.sigma) - params.level).abs())
        .collect();
    let max = res.iter().cloned().fold(0.0, f64::max);
    let mean = res.iter().sum::<f64>() / res.len().max(1) as f64;
    (max, mean)
}
