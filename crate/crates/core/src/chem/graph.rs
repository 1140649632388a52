use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::element::{self, DUMMY};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to an atom's bond order sum; aromatic counts 1.
    pub fn valence(self) -> u32 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => BondOrder::Single,
            2 => BondOrder::Double,
            3 => BondOrder::Triple,
            4 => BondOrder::Aromatic,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Atom {
    /// Element symbol with standard capitalisation, or `*`.
    pub element: String,
    pub charge: i8,
    pub aromatic: bool,
    pub hydrogens: u8,
}

impl Atom {
    pub fn new(element: impl Into<String>) -> Self {
        Atom {
            element: element.into(),
            charge: 0,
            aromatic: false,
            hydrogens: 0,
        }
    }

    pub fn is_hydrogen(&self) -> bool {
        self.element == "H"
    }

    pub fn is_dummy(&self) -> bool {
        self.element == DUMMY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
    /// Set when the bond lies on a cycle.
    pub ring: bool,
}

impl Bond {
    pub fn other(&self, i: usize) -> usize {
        if self.a == i {
            self.b
        } else {
            self.a
        }
    }
}

/// Hydrogen-suppressed molecular graph.
///
/// Construction validates endpoints, rejects self loops and duplicate
/// bonds, and recomputes ring flags (a bond is a ring bond iff it is not a
/// bridge).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MolGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    /// Per atom: `(neighbour, bond index)`, in bond insertion order.
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl MolGraph {
    pub fn new(atoms: Vec<Atom>, bonds: Vec<(usize, usize, BondOrder)>) -> Result<Self> {
        let n = atoms.len();
        let mut adjacency = vec![Vec::new(); n];
        let mut list = Vec::with_capacity(bonds.len());
        for (k, (a, b, order)) in bonds.into_iter().enumerate() {
            if a >= n || b >= n {
                return Err(Error::InvalidInput(format!("bond {a}-{b} references a missing atom")));
            }
            if a == b {
                return Err(Error::InvalidInput(format!("bond {a}-{b} is a self loop")));
            }
            if adjacency[a].iter().any(|&(j, _)| j == b) {
                return Err(Error::InvalidInput(format!("duplicate bond {a}-{b}")));
            }
            adjacency[a].push((b, k));
            adjacency[b].push((a, k));
            list.push(Bond {
                a,
                b,
                order,
                ring: false,
            });
        }
        let mut g = MolGraph {
            atoms,
            bonds: list,
            adjacency,
        };
        g.mark_ring_bonds();
        Ok(g)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn atom(&self, i: usize) -> &Atom {
        &self.atoms[i]
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    /// Neighbours other than explicit hydrogens; dummies count as heavy.
    pub fn heavy_degree(&self, i: usize) -> usize {
        self.adjacency[i].iter().filter(|&&(j, _)| !self.atoms[j].is_hydrogen()).count()
    }

    pub fn bond_between(&self, i: usize, j: usize) -> Option<usize> {
        self.adjacency[i].iter().find(|&&(k, _)| k == j).map(|&(_, b)| b)
    }

    pub fn bond_sum(&self, i: usize) -> u32 {
        self.adjacency[i].iter().map(|&(_, b)| self.bonds[b].order.valence()).sum()
    }

    pub fn is_ring_atom(&self, i: usize) -> bool {
        self.adjacency[i].iter().any(|&(_, b)| self.bonds[b].ring)
    }

    pub fn heavy_atom_count(&self) -> usize {
        self.atoms.iter().filter(|a| !a.is_hydrogen()).count()
    }

    /// Connected-component label per atom and the component count.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let mut label = vec![usize::MAX; self.atoms.len()];
        let mut count = 0;
        for start in 0..self.atoms.len() {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = count;
            let mut stack = vec![start];
            while let Some(u) = stack.pop() {
                for &(v, _) in &self.adjacency[u] {
                    if label[v] == usize::MAX {
                        label[v] = count;
                        stack.push(v);
                    }
                }
            }
            count += 1;
        }
        (label, count)
    }

    pub fn is_connected(&self) -> bool {
        self.components().1 <= 1
    }

    /// Bond counts from `start`, restricted to atoms with `allowed[i]`
    /// (all atoms when `None`). Unreached atoms get `usize::MAX`.
    pub fn bfs_distances(&self, start: usize, allowed: Option<&[bool]>) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.atoms.len()];
        dist[start] = 0;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &self.adjacency[u] {
                if dist[v] == usize::MAX && allowed.map_or(true, |m| m[v]) {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Induced subgraph on `keep` (in the given order). Bonds to dropped
    /// atoms are replaced by hydrogens on the kept end. Returns the graph
    /// and, per new atom, its index in `self`.
    pub fn subgraph(&self, keep: &[usize]) -> Result<(MolGraph, Vec<usize>)> {
        let mut new_index = vec![usize::MAX; self.atoms.len()];
        for (k, &i) in keep.iter().enumerate() {
            if i >= self.atoms.len() {
                return Err(Error::InvalidInput(format!("atom {i} out of range")));
            }
            if new_index[i] != usize::MAX {
                return Err(Error::InvalidInput(format!("atom {i} listed twice")));
            }
            new_index[i] = k;
        }
        let mut atoms: Vec<Atom> = keep.iter().map(|&i| self.atoms[i].clone()).collect();
        let mut bonds = Vec::new();
        for bond in &self.bonds {
            match (new_index[bond.a], new_index[bond.b]) {
                (usize::MAX, usize::MAX) => {}
                (usize::MAX, k) | (k, usize::MAX) => {
                    let a = &mut atoms[k];
                    if !a.is_dummy() {
                        a.hydrogens = a.hydrogens.saturating_add(bond.order.valence() as u8);
                    }
                }
                (ka, kb) => bonds.push((ka, kb, bond.order)),
            }
        }
        Ok((MolGraph::new(atoms, bonds)?, keep.to_vec()))
    }

    /// Same molecule with atom `i` moved to position `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<MolGraph> {
        let n = self.atoms.len();
        if perm.len() != n {
            return Err(Error::SizeMismatch(perm.len(), n));
        }
        let mut atoms = vec![None; n];
        for (i, &p) in perm.iter().enumerate() {
            if p >= n || atoms[p].is_some() {
                return Err(Error::InvalidInput("not a permutation".into()));
            }
            atoms[p] = Some(self.atoms[i].clone());
        }
        let atoms = atoms.into_iter().map(Option::unwrap).collect();
        let bonds = self.bonds.iter().map(|b| (perm[b.a], perm[b.b], b.order)).collect();
        MolGraph::new(atoms, bonds)
    }

    /// Implicit-hydrogen count the SMILES valence model would assign to atom
    /// `i`, or `None` when the atom is outside the organic subset.
    pub fn default_hydrogens(&self, i: usize) -> Option<u32> {
        let a = &self.atoms[i];
        if a.charge != 0 || !element::in_organic_subset(&a.element, a.aromatic) && !a.is_dummy() {
            return None;
        }
        element::implicit_hydrogens(&a.element, a.aromatic, self.bond_sum(i))
    }

    /// Tarjan bridge finding; every non-bridge is a ring bond.
    fn mark_ring_bonds(&mut self) {
        let n = self.atoms.len();
        let mut disc = vec![usize::MAX; n];
        let mut low = vec![0; n];
        let mut timer = 0;
        let mut is_bridge = vec![false; self.bonds.len()];
        for root in 0..n {
            if disc[root] != usize::MAX {
                continue;
            }
            // iterative DFS: (vertex, bond used to enter, next adjacency slot)
            let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
            disc[root] = timer;
            low[root] = timer;
            timer += 1;
            while let Some(top) = stack.last_mut() {
                let (u, via, slot) = *top;
                if slot < self.adjacency[u].len() {
                    top.2 += 1;
                    let (v, b) = self.adjacency[u][slot];
                    if b == via {
                        continue;
                    }
                    if disc[v] == usize::MAX {
                        disc[v] = timer;
                        low[v] = timer;
                        timer += 1;
                        stack.push((v, b, 0));
                    } else {
                        low[u] = low[u].min(disc[v]);
                    }
                } else {
                    stack.pop();
                    if let Some(&(p, _, _)) = stack.last() {
                        low[p] = low[p].min(low[u]);
                        if low[u] > disc[p] {
                            is_bridge[via] = true;
                        }
                    }
                }
            }
        }
        for (bond, bridge) in self.bonds.iter_mut().zip(is_bridge) {
            bond.ring = !bridge;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn carbons(n: usize) -> Vec<Atom> {
        vec![Atom::new("C"); n]
    }

    #[test]
    fn ring_flags() {
        // cyclopropane with a tail
        let g = MolGraph::new(
            carbons(4),
            vec![
                (0, 1, BondOrder::Single),
                (1, 2, BondOrder::Single),
                (2, 0, BondOrder::Single),
                (2, 3, BondOrder::Single),
            ],
        )
        .unwrap();
        let flags: Vec<bool> = g.bonds().iter().map(|b| b.ring).collect();
        assert_eq!(flags, vec![true, true, true, false]);
        assert!(g.is_ring_atom(2));
        assert!(!g.is_ring_atom(3));
    }

    #[test]
    fn rejects_bad_bonds() {
        assert!(MolGraph::new(carbons(2), vec![(0, 2, BondOrder::Single)]).is_err());
        assert!(MolGraph::new(carbons(2), vec![(1, 1, BondOrder::Single)]).is_err());
        assert!(MolGraph::new(carbons(2), vec![(0, 1, BondOrder::Single), (1, 0, BondOrder::Double)]).is_err());
    }

    #[test]
    fn subgraph_caps_with_hydrogens() {
        let g = MolGraph::new(carbons(3), vec![(0, 1, BondOrder::Double), (1, 2, BondOrder::Single)]).unwrap();
        let (sub, map) = g.subgraph(&[1, 2]).unwrap();
        assert_eq!(map, vec![1, 2]);
        assert_eq!(sub.atom(0).hydrogens, 2);
        assert_eq!(sub.bond_count(), 1);
    }

    #[test]
    fn components_and_distances() {
        let g = MolGraph::new(carbons(4), vec![(0, 1, BondOrder::Single), (2, 3, BondOrder::Single)]).unwrap();
        assert_eq!(g.components().1, 2);
        let d = g.bfs_distances(0, None);
        assert_eq!(d[1], 1);
        assert_eq!(d[2], usize::MAX);
    }
}
