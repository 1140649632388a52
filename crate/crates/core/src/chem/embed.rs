//! Rule-based 3D placement for small molecules.
//!
//! Ring systems are built once as rigid templates of planar regular
//! polygons (fused rings share an edge, spiro rings share a vertex); the
//! remaining atoms are placed breadth-first with ideal bond lengths and
//! angles, sampling a torsion for every bond whose far side is placed.

use std::collections::{HashMap, VecDeque};
use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{BondOrder, MolGraph};
use super::rings::{ring_systems, sssr};
use crate::error::{Error, Result};
use crate::geom::{Mat3, Vec3};
use crate::surface::{Atom3, AtomSet};

pub const MAX_EMBED_HEAVY_ATOMS: usize = 64;
/// Non-bonded pairs closer than this (Å) count as a clash.
pub const CLASH_DISTANCE: f64 = 1.0;
pub const CLASH_RETRIES: usize = 20;

/// Tetrahedral angle, acos(−1/3).
const TETRAHEDRAL: f64 = 1.910_633_236_249_018_6;
/// Tolerance (Å) when a ring atom is reached from two sides.
const RING_CLOSURE_TOLERANCE: f64 = 0.25;

pub fn bond_length(order: BondOrder) -> f64 {
    match order {
        BondOrder::Single => 1.54,
        BondOrder::Double => 1.34,
        BondOrder::Triple => 1.20,
        BondOrder::Aromatic => 1.39,
    }
}

/// One embedded conformer. `strained` is set when every torsion resample
/// still left a clash.
#[derive(Debug, Clone, PartialEq)]
pub struct Conformer {
    pub atoms: AtomSet,
    pub strained: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Geometry {
    Linear,
    Trigonal,
    Tetrahedral,
    Octahedral,
}

fn geometry(mol: &MolGraph, i: usize) -> Geometry {
    let mut doubles = 0;
    let mut triples = 0;
    let mut aromatic = mol.atom(i).aromatic;
    for &(_, b) in mol.neighbors(i) {
        match mol.bonds()[b].order {
            BondOrder::Double => doubles += 1,
            BondOrder::Triple => triples += 1,
            BondOrder::Aromatic => aromatic = true,
            BondOrder::Single => {}
        }
    }
    if mol.degree(i) > 4 {
        Geometry::Octahedral
    } else if triples > 0 || doubles >= 2 {
        Geometry::Linear
    } else if aromatic || doubles == 1 {
        Geometry::Trigonal
    } else {
        Geometry::Tetrahedral
    }
}

fn any_perpendicular(v: &Vec3) -> Vec3 {
    let trial = if v[0].abs() < 0.9 {
        Vec3::new(1.0, 0.0, 0.0)
    } else {
        Vec3::new(0.0, 1.0, 0.0)
    };
    v.cross(&trial).normalized()
}

/// Rotation taking unit vector `a` onto unit vector `b`.
fn rotation_between(a: &Vec3, b: &Vec3) -> Mat3 {
    let c = a.dot(b).clamp(-1.0, 1.0);
    if c > 1.0 - 1e-12 {
        return Mat3::IDENTITY;
    }
    if c < -1.0 + 1e-12 {
        return Mat3::from_axis_angle(&any_perpendicular(a), PI);
    }
    Mat3::from_axis_angle(&a.cross(b), c.acos())
}

/// Bond directions around an atom whose only placed neighbour lies along
/// `axis`; `e1` fixes the zero of the torsion `phi`. The first direction is
/// `axis` itself.
fn directions_about(geometry: Geometry, axis: Vec3, e1: Vec3, phi: f64) -> Vec<Vec3> {
    let e2 = axis.cross(&e1);
    let around = |angle: f64, t: f64| axis * angle.cos() + (e1 * t.cos() + e2 * t.sin()) * angle.sin();
    match geometry {
        Geometry::Linear => vec![axis, -axis],
        Geometry::Trigonal => vec![axis, around(2.0 * PI / 3.0, phi), around(2.0 * PI / 3.0, phi + PI)],
        Geometry::Tetrahedral => (0..3)
            .map(|k| around(TETRAHEDRAL, phi + 2.0 * PI * k as f64 / 3.0))
            .fold(vec![axis], |mut v, d| {
                v.push(d);
                v
            }),
        Geometry::Octahedral => {
            let mut v = vec![axis, -axis];
            for k in 0..4 {
                v.push(around(PI / 2.0, phi + PI / 2.0 * k as f64));
            }
            v
        }
    }
}

/// Exocyclic directions at a ring atom from its placed ring neighbours.
fn exo_directions(center: Vec3, ring_neighbors: &[Vec3], geometry: Geometry, needed: usize) -> Vec<Vec3> {
    let units: Vec<Vec3> = ring_neighbors.iter().map(|p| (*p - center).normalized()).collect();
    let sum = units.iter().fold(Vec3::ZERO, |s, u| s + *u);
    let normal = if units.len() >= 2 {
        let n = units[0].cross(&units[1]);
        if n.norm() > 1e-6 {
            n.normalized()
        } else {
            any_perpendicular(&units[0])
        }
    } else {
        any_perpendicular(&units[0])
    };
    let outward = if sum.norm() > 1e-6 { -sum.normalized() } else { normal };
    if units.len() == 2 && (needed >= 2 || geometry == Geometry::Tetrahedral && needed == 2) {
        let half = TETRAHEDRAL / 2.0;
        return vec![
            outward * half.cos() + normal * half.sin(),
            outward * half.cos() - normal * half.sin(),
        ];
    }
    if units.len() == 1 {
        return directions_about(geometry, units[0], any_perpendicular(&units[0]), 0.0)[1..].to_vec();
    }
    vec![outward]
}

/// Rigid coordinates for one ring system in its own frame.
fn ring_template(mol: &MolGraph, system: &[usize], rings: &[Vec<usize>]) -> Result<HashMap<usize, Vec3>> {
    let mine: Vec<&Vec<usize>> = rings.iter().filter(|r| r.iter().all(|a| system.binary_search(a).is_ok())).collect();
    if mine.is_empty() {
        return Err(Error::EmbeddingFailed("ring system without rings".into()));
    }
    let mut pos: HashMap<usize, Vec3> = HashMap::new();
    let mut centers: Vec<(Vec<usize>, Vec3)> = Vec::new();
    let mut done = vec![false; mine.len()];

    let mean_side = |ring: &[usize]| {
        let total: f64 = (0..ring.len())
            .map(|k| {
                let b = mol.bond_between(ring[k], ring[(k + 1) % ring.len()]).expect("ring bond");
                bond_length(mol.bonds()[b].order)
            })
            .sum();
        total / ring.len() as f64
    };
    let circumradius = |n: usize, side: f64| side / (2.0 * (PI / n as f64).sin());

    // walk the ring around a circle: ring[k] sits at `start`, ring[k+1] is
    // reached by rotating about `axis`
    let place_ring = |ring: &[usize], k: usize, center: Vec3, start: Vec3, axis: Vec3, pos: &mut HashMap<usize, Vec3>| -> Result<()> {
        let n = ring.len();
        let r = start.norm();
        let u = start.normalized();
        let w = axis.cross(&u);
        for j in 0..n {
            let t = 2.0 * PI * j as f64 / n as f64;
            let p = center + (u * t.cos() + w * t.sin()) * r;
            let atom = ring[(k + j) % n];
            match pos.get(&atom) {
                Some(q) if q.dist_sq(&p).sqrt() > RING_CLOSURE_TOLERANCE => {
                    return Err(Error::EmbeddingFailed("bridged ring system".into()));
                }
                Some(_) => {}
                None => {
                    pos.insert(atom, p);
                }
            }
        }
        Ok(())
    };

    // first ring: regular polygon in the xy plane
    let first = mine[0];
    let side = mean_side(first);
    let r = circumradius(first.len(), side);
    place_ring(first, 0, Vec3::ZERO, Vec3::new(r, 0.0, 0.0), Vec3::new(0.0, 0.0, 1.0), &mut pos)?;
    centers.push((first.clone(), Vec3::ZERO));
    done[0] = true;

    while let Some(next) = (0..mine.len())
        .filter(|&i| !done[i])
        .max_by_key(|&i| (mine[i].iter().filter(|a| pos.contains_key(a)).count(), std::cmp::Reverse(i)))
    {
        let ring = mine[next];
        let n = ring.len();
        let shared: Vec<usize> = (0..n).filter(|&k| pos.contains_key(&ring[k])).collect();
        if shared.is_empty() {
            return Err(Error::EmbeddingFailed("ring perception left a ring detached".into()));
        }
        // a shared edge: consecutive ring atoms both placed
        let edge = (0..n).find(|&k| pos.contains_key(&ring[k]) && pos.contains_key(&ring[(k + 1) % n]));
        if let Some(k) = edge {
            let (a, b) = (ring[k], ring[(k + 1) % n]);
            let (pa, pb) = (pos[&a], pos[&b]);
            let side = pa.dist_sq(&pb).sqrt();
            let mid = (pa + pb) * 0.5;
            let e = (pb - pa).normalized();
            let old = centers
                .iter()
                .find(|(r, _)| r.contains(&a) && r.contains(&b))
                .map(|(_, c)| *c)
                .unwrap_or(Vec3::ZERO);
            let w = mid - old;
            let mut away = w - e * w.dot(&e);
            if away.norm() < 1e-9 {
                away = any_perpendicular(&e);
            }
            let away = away.normalized();
            let apothem = side / (2.0 * (PI / n as f64).tan());
            let center = mid + away * apothem;
            let axis = (pa - center).cross(&(pb - center)).normalized();
            place_ring(ring, k, center, pa - center, axis, &mut pos)?;
            centers.push((ring.clone(), center));
        } else {
            if shared.len() > 1 {
                return Err(Error::EmbeddingFailed("bridged ring system".into()));
            }
            // spiro junction
            let k = shared[0];
            let s = ring[k];
            let ps = pos[&s];
            let placed_nb: Vec<Vec3> = mol
                .neighbors(s)
                .iter()
                .filter(|(v, b)| mol.bonds()[*b].ring && pos.contains_key(v))
                .map(|(v, _)| pos[v])
                .collect();
            let dirs = exo_directions(ps, &placed_nb, Geometry::Tetrahedral, 2);
            let bisector = if dirs.len() >= 2 {
                (dirs[0] + dirs[1]).normalized()
            } else {
                dirs[0]
            };
            let plane_normal = if dirs.len() >= 2 {
                dirs[0].cross(&dirs[1]).normalized()
            } else {
                any_perpendicular(&bisector)
            };
            let r = circumradius(n, mean_side(ring));
            let center = ps + bisector * r;
            place_ring(ring, k, center, ps - center, plane_normal, &mut pos)?;
            centers.push((ring.clone(), center));
        }
        done[next] = true;
    }
    if let Some(a) = system.iter().find(|a| !pos.contains_key(a)) {
        return Err(Error::EmbeddingFailed(format!("ring atom {a} not covered by any ring")));
    }
    Ok(pos)
}

struct Embedder<'a> {
    mol: &'a MolGraph,
    /// Ring system id per atom.
    system_of: Vec<Option<usize>>,
    systems: Vec<Vec<usize>>,
    templates: Vec<HashMap<usize, Vec3>>,
}

impl Embedder<'_> {
    fn ring_mates(&self, u: usize) -> Vec<usize> {
        self.mol
            .neighbors(u)
            .iter()
            .filter(|(_, b)| self.mol.bonds()[*b].ring)
            .map(|&(v, _)| v)
            .collect()
    }

    fn torsion<R: Rng>(&self, rng: &mut R, order: BondOrder) -> f64 {
        if order == BondOrder::Single {
            rng.gen_range(0.0..2.0 * PI)
        } else if rng.gen_bool(0.5) {
            0.0
        } else {
            PI
        }
    }

    /// Places a ring system so its entry atom sits at `at`, bonded back
    /// along `-dir`.
    fn place_system<R: Rng>(&self, sys: usize, entry: usize, at: Vec3, dir: Vec3, order: BondOrder, rng: &mut R, pos: &mut [Option<Vec3>]) {
        let t = &self.templates[sys];
        let mates: Vec<Vec3> = self.ring_mates(entry).iter().map(|v| t[v]).collect();
        let needed = self.mol.degree(entry) - mates.len();
        let exo = exo_directions(t[&entry], &mates, geometry(self.mol, entry), needed.max(1));
        let align = rotation_between(&exo[0], &-dir);
        let spin = Mat3::from_axis_angle(&dir, self.torsion(rng, order));
        let rot = spin.mul_mat(&align);
        for &a in &self.systems[sys] {
            pos[a] = Some(at + rot.mul_vec(&(t[&a] - t[&entry])));
        }
    }

    fn attempt<R: Rng>(&self, rng: &mut R) -> Result<Vec<Vec3>> {
        let n = self.mol.atom_count();
        let mut pos: Vec<Option<Vec3>> = vec![None; n];
        let mut parent: Vec<Option<usize>> = vec![None; n];
        let mut queue = VecDeque::new();
        let root = 0;
        match self.system_of[root] {
            Some(s) => {
                for &a in &self.systems[s] {
                    pos[a] = Some(self.templates[s][&a]);
                    queue.push_back(a);
                }
            }
            None => {
                pos[root] = Some(Vec3::ZERO);
                queue.push_back(root);
            }
        }

        while let Some(u) = queue.pop_front() {
            let pu = pos[u].expect("queued atoms are placed");
            let unplaced: Vec<(usize, usize)> =
                self.mol.neighbors(u).iter().copied().filter(|(v, _)| pos[*v].is_none()).collect();
            if unplaced.is_empty() {
                continue;
            }
            let geo = geometry(self.mol, u);
            let mates = self.ring_mates(u);
            let mut candidates = if mates.len() >= 2 {
                let mate_pos: Vec<Vec3> = mates.iter().map(|&v| pos[v].expect("ring placed whole")).collect();
                exo_directions(pu, &mate_pos, geo, self.mol.degree(u) - mates.len())
            } else if let Some(g) = parent[u] {
                let pg = pos[g].expect("parent placed");
                let axis = (pg - pu).normalized();
                let reference = self
                    .mol
                    .neighbors(g)
                    .iter()
                    .map(|&(h, _)| h)
                    .find(|&h| h != u && pos[h].is_some())
                    .map(|h| {
                        let d = pos[h].unwrap() - pg;
                        d - axis * d.dot(&axis)
                    })
                    .filter(|d| d.norm() > 1e-6)
                    .map(|d| d.normalized())
                    .unwrap_or_else(|| any_perpendicular(&axis));
                let order = self.mol.bonds()[self.mol.bond_between(u, g).expect("bonded")].order;
                directions_about(geo, axis, reference, self.torsion(rng, order))
            } else {
                let axis = Vec3::new(1.0, 0.0, 0.0);
                directions_about(geo, axis, Vec3::new(0.0, 1.0, 0.0), 0.0)
            };
            // placed non-ring neighbours claim the closest direction
            for &(v, b) in self.mol.neighbors(u) {
                if self.mol.bonds()[b].ring && mates.len() >= 2 {
                    continue;
                }
                if let Some(pv) = pos[v] {
                    let d = (pv - pu).normalized();
                    if let Some(k) = (0..candidates.len()).max_by(|&i, &j| candidates[i].dot(&d).total_cmp(&candidates[j].dot(&d))) {
                        candidates.remove(k);
                    }
                }
            }
            if candidates.len() < unplaced.len() {
                return Err(Error::EmbeddingFailed(format!(
                    "atom {u} has more substituents than its geometry allows"
                )));
            }
            for (&(v, b), dir) in unplaced.iter().zip(candidates) {
                let order = self.mol.bonds()[b].order;
                let at = pu + dir * bond_length(order);
                match self.system_of[v] {
                    Some(s) => {
                        self.place_system(s, v, at, dir, order, rng, &mut pos);
                        for &a in &self.systems[s] {
                            parent[a] = Some(u);
                            queue.push_back(a);
                        }
                    }
                    None => {
                        pos[v] = Some(at);
                        parent[v] = Some(u);
                        queue.push_back(v);
                    }
                }
            }
        }
        pos.into_iter()
            .collect::<Option<Vec<Vec3>>>()
            .ok_or_else(|| Error::EmbeddingFailed("molecule is not connected".into()))
    }

    fn has_clash(&self, pos: &[Vec3]) -> bool {
        let n = pos.len();
        (0..n).any(|i| {
            (i + 1..n).any(|j| self.mol.bond_between(i, j).is_none() && pos[i].dist_sq(&pos[j]) < CLASH_DISTANCE * CLASH_DISTANCE)
        })
    }
}

/// Embeds `n_conformers` conformers. Deterministic for a given seed; the
/// first atom (or its ring system) fixes the frame, so molecules without
/// torsional freedom give identical conformers.
pub fn embed_3d(mol: &MolGraph, n_conformers: usize, seed: u64) -> Result<Vec<Conformer>> {
    if mol.atom_count() == 0 {
        return Err(Error::EmbeddingFailed("no atoms".into()));
    }
    if mol.heavy_atom_count() > MAX_EMBED_HEAVY_ATOMS {
        return Err(Error::EmbeddingFailed(format!(
            "{} heavy atoms exceed the limit of {MAX_EMBED_HEAVY_ATOMS}",
            mol.heavy_atom_count()
        )));
    }
    if !mol.is_connected() {
        return Err(Error::EmbeddingFailed("molecule is not connected".into()));
    }
    let systems = ring_systems(mol);
    let rings = sssr(mol);
    let templates = systems
        .iter()
        .map(|s| ring_template(mol, s, &rings))
        .collect::<Result<Vec<_>>>()?;
    let mut system_of = vec![None; mol.atom_count()];
    for (k, s) in systems.iter().enumerate() {
        for &a in s {
            system_of[a] = Some(k);
        }
    }
    let embedder = Embedder {
        mol,
        system_of,
        systems,
        templates,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_conformers);
    for _ in 0..n_conformers {
        let mut coords = embedder.attempt(&mut rng)?;
        let mut strained = embedder.has_clash(&coords);
        let mut tries = 0;
        while strained && tries < CLASH_RETRIES {
            coords = embedder.attempt(&mut rng)?;
            strained = embedder.has_clash(&coords);
            tries += 1;
        }
        let atoms = mol
            .atoms()
            .iter()
            .zip(coords)
            .map(|(a, p)| Atom3::new(a.element.clone(), p))
            .collect();
        out.push(Conformer {
            atoms: AtomSet { atoms },
            strained,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::smiles::parse_smiles;
    use super::*;

    fn angle(a: Vec3, b: Vec3, c: Vec3) -> f64 {
        let u = (a - b).normalized();
        let v = (c - b).normalized();
        u.dot(&v).clamp(-1.0, 1.0).acos().to_degrees()
    }

    fn bonds_ok(mol: &MolGraph, c: &Conformer) {
        for bond in mol.bonds() {
            let d = c.atoms.atoms[bond.a].position.dist_sq(&c.atoms.atoms[bond.b].position).sqrt();
            let expected = bond_length(bond.order);
            // fused-ring edges inherit the neighbouring ring's side
            let tol = if bond.ring { 0.1 } else { 1e-9 };
            assert!((d - expected).abs() < tol, "bond {}-{} is {d}", bond.a, bond.b);
        }
    }

    #[test]
    fn ethane() {
        let m = parse_smiles("CC").unwrap();
        let confs = embed_3d(&m, 4, 7).unwrap();
        for c in &confs {
            assert_eq!(c.atoms, confs[0].atoms);
            let d = c.atoms.atoms[0].position.dist_sq(&c.atoms.atoms[1].position).sqrt();
            assert!((d - 1.54).abs() < 1e-12);
        }
    }

    #[test]
    fn propane_angle() {
        let m = parse_smiles("CCC").unwrap();
        for c in embed_3d(&m, 8, 3).unwrap() {
            let p: Vec<Vec3> = c.atoms.positions();
            assert!((angle(p[0], p[1], p[2]) - 109.5).abs() < 0.1);
        }
    }

    #[test]
    fn deterministic() {
        let m = parse_smiles("CCOCCOCCN").unwrap();
        assert_eq!(embed_3d(&m, 16, 5).unwrap(), embed_3d(&m, 16, 5).unwrap());
        assert_ne!(embed_3d(&m, 1, 5).unwrap(), embed_3d(&m, 1, 6).unwrap());
    }

    #[test]
    fn rings_and_substituents() {
        for s in [
            "c1ccccc1",
            "Cc1ccccc1C",
            "c1ccc2ccccc2c1",
            "C1CCC2(CC1)CCCC2",
            "O=C(NCCc1ccncc1)c1ccc(OC)cc1",
            "C1CC1CC#CC",
            "*CCN1CCN(CC1)c1ccccc1*",
            "CC(C)(C)C",
            "c1ccc2c(c1)ccc1ccccc12",
        ] {
            let m = parse_smiles(s).unwrap();
            let confs = embed_3d(&m, 3, 1).unwrap_or_else(|e| panic!("{s}: {e}"));
            for c in &confs {
                bonds_ok(&m, c);
                assert!(c.atoms.positions().iter().all(|p| p.is_finite()));
            }
        }
    }

    #[test]
    fn aromatic_ring_is_regular_hexagon() {
        let m = parse_smiles("c1ccccc1").unwrap();
        let c = &embed_3d(&m, 1, 0).unwrap()[0];
        let p = c.atoms.positions();
        for k in 0..6 {
            assert!((angle(p[(k + 5) % 6], p[k], p[(k + 1) % 6]) - 120.0).abs() < 1e-6);
        }
    }

    #[test]
    fn substituent_angles_on_rings() {
        let m = parse_smiles("Cc1ccccc1").unwrap();
        let c = &embed_3d(&m, 1, 0).unwrap()[0];
        let p = c.atoms.positions();
        assert!((angle(p[0], p[1], p[2]) - 120.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_bridged_and_large() {
        let bridged = parse_smiles("C1CC2CCC1CC2").unwrap();
        assert!(matches!(embed_3d(&bridged, 1, 0), Err(Error::EmbeddingFailed(_))));
        let big = parse_smiles(&"C".repeat(65)).unwrap();
        assert!(embed_3d(&big, 1, 0).is_err());
    }

    #[test]
    fn long_chains_avoid_clashes() {
        let m = parse_smiles("CCCCCCCCCCCCCCCCCCCC").unwrap();
        let confs = embed_3d(&m, 16, 2).unwrap();
        let clean = confs.iter().filter(|c| !c.strained).count();
        assert!(clean >= 12, "{clean} clash-free conformers");
    }
}
