//! Linker descriptors, Murcko scaffolds and extended-linker extraction.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::canon::canonical_smiles;
use super::graph::{BondOrder, MolGraph};
use super::rings::ring_systems;
use crate::error::{Error, Result};

/// Which atoms form the linker and where it joins the two ligands.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkerAnnotation {
    pub linker_atoms: BTreeSet<usize>,
    /// Linker atoms bonded into the anchor side and the warhead side.
    pub attachments: [usize; 2],
}

impl LinkerAnnotation {
    pub fn new(linker_atoms: impl IntoIterator<Item = usize>, attachments: [usize; 2]) -> Self {
        LinkerAnnotation {
            linker_atoms: linker_atoms.into_iter().collect(),
            attachments,
        }
    }

    /// The whole molecule is the linker; attachments given explicitly.
    pub fn whole(mol: &MolGraph, attachments: [usize; 2]) -> Self {
        Self::new(0..mol.atom_count(), attachments)
    }

    /// Linker delimited by exactly two `*` attachment placeholders: every
    /// other atom belongs to the linker and the attachments are the atoms
    /// bonded to the placeholders.
    pub fn from_dummies(mol: &MolGraph) -> Result<Self> {
        let dummies: Vec<usize> = (0..mol.atom_count()).filter(|&i| mol.atom(i).is_dummy()).collect();
        if dummies.len() != 2 {
            return Err(Error::InvalidInput(format!(
                "expected 2 attachment points, found {}",
                dummies.len()
            )));
        }
        let mut attachments = [0; 2];
        for (slot, &d) in attachments.iter_mut().zip(&dummies) {
            match mol.neighbors(d) {
                [(j, _)] if !mol.atom(*j).is_dummy() => *slot = *j,
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "attachment point {d} must have exactly one non-placeholder neighbour"
                    )))
                }
            }
        }
        let linker = (0..mol.atom_count()).filter(|i| !dummies.contains(i));
        let ann = Self::new(linker, attachments);
        ann.validate(mol)?;
        Ok(ann)
    }

    pub fn validate(&self, mol: &MolGraph) -> Result<()> {
        if let Some(&i) = self.linker_atoms.iter().find(|&&i| i >= mol.atom_count()) {
            return Err(Error::InvalidInput(format!("linker atom {i} out of range")));
        }
        for a in self.attachments {
            if !self.linker_atoms.contains(&a) {
                return Err(Error::InvalidInput(format!("attachment atom {a} is not in the linker")));
            }
        }
        if !self.is_connected(mol) {
            return Err(Error::DisconnectedLinker);
        }
        Ok(())
    }

    fn mask(&self, mol: &MolGraph) -> Vec<bool> {
        let mut m = vec![false; mol.atom_count()];
        for &i in &self.linker_atoms {
            m[i] = true;
        }
        m
    }

    fn is_connected(&self, mol: &MolGraph) -> bool {
        let Some(&start) = self.linker_atoms.iter().next() else {
            return false;
        };
        let mask = self.mask(mol);
        let d = mol.bfs_distances(start, Some(&mask));
        self.linker_atoms.iter().all(|&i| d[i] != usize::MAX)
    }

    /// Bonds with both ends in the linker.
    pub fn internal_bonds(&self, mol: &MolGraph) -> Vec<usize> {
        (0..mol.bond_count())
            .filter(|&b| {
                let bond = mol.bonds()[b];
                self.linker_atoms.contains(&bond.a) && self.linker_atoms.contains(&bond.b)
            })
            .collect()
    }
}

fn is_rotatable(mol: &MolGraph, b: usize) -> bool {
    let bond = mol.bonds()[b];
    bond.order == BondOrder::Single
        && !bond.ring
        && !mol.atom(bond.a).is_hydrogen()
        && !mol.atom(bond.b).is_hydrogen()
        && mol.heavy_degree(bond.a) >= 2
        && mol.heavy_degree(bond.b) >= 2
}

/// Single, acyclic, non-aromatic bonds whose ends both have heavy degree
/// ≥ 2 in the full molecule. Amide bonds are not excluded. With `scope`,
/// only bonds with both ends in the subset count.
pub fn rotatable_bond_count(mol: &MolGraph, scope: Option<&BTreeSet<usize>>) -> usize {
    (0..mol.bond_count())
        .filter(|&b| {
            let bond = mol.bonds()[b];
            scope.map_or(true, |s| s.contains(&bond.a) && s.contains(&bond.b))
        })
        .filter(|&b| is_rotatable(mol, b))
        .count()
}

/// Percentage of linker-internal bonds that are rotatable; 0 without bonds.
pub fn rot_bond_ratio(mol: &MolGraph, linker: &LinkerAnnotation) -> f64 {
    let bonds = linker.internal_bonds(mol);
    if bonds.is_empty() {
        return 0.0;
    }
    let rot = bonds.iter().filter(|&&b| is_rotatable(mol, b)).count();
    100.0 * rot as f64 / bonds.len() as f64
}

/// Longest shortest path (in bonds) over the masked subgraph.
pub(crate) fn masked_diameter(mol: &MolGraph, mask: &[bool]) -> Option<usize> {
    let mut diameter = 0;
    for i in (0..mol.atom_count()).filter(|&i| mask[i]) {
        let d = mol.bfs_distances(i, Some(mask));
        for j in (0..mol.atom_count()).filter(|&j| mask[j]) {
            if d[j] == usize::MAX {
                return None;
            }
            diameter = diameter.max(d[j]);
        }
    }
    Some(diameter)
}

/// `100 × attachment path / linker diameter`, both counted in bonds inside
/// the linker; 100 for a single-atom linker.
pub fn linker_length_ratio(mol: &MolGraph, linker: &LinkerAnnotation) -> Result<f64> {
    linker.validate(mol)?;
    let mask = linker.mask(mol);
    let diameter = masked_diameter(mol, &mask).ok_or(Error::DisconnectedLinker)?;
    if diameter == 0 {
        return Ok(100.0);
    }
    let [a, b] = linker.attachments;
    let path = mol.bfs_distances(a, Some(&mask))[b];
    Ok(100.0 * path as f64 / diameter as f64)
}

/// Cycle rank: bonds − atoms + connected components.
pub fn ring_count(mol: &MolGraph) -> usize {
    let (_, components) = mol.components();
    mol.bond_count() + components - mol.atom_count()
}

/// Murcko scaffold as canonical SMILES: terminal non-ring atoms are pruned
/// until none remain. Molecules without rings give `""`.
pub fn murcko_scaffold(mol: &MolGraph) -> String {
    if !mol.bonds().iter().any(|b| b.ring) {
        return String::new();
    }
    let n = mol.atom_count();
    let mut alive = vec![true; n];
    let mut degree: Vec<usize> = (0..n).map(|i| mol.degree(i)).collect();
    let mut queue: Vec<usize> = (0..n).filter(|&i| !mol.is_ring_atom(i) && degree[i] <= 1).collect();
    while let Some(u) = queue.pop() {
        if !alive[u] {
            continue;
        }
        alive[u] = false;
        for &(v, _) in mol.neighbors(u) {
            if alive[v] {
                degree[v] -= 1;
                if degree[v] <= 1 && !mol.is_ring_atom(v) {
                    queue.push(v);
                }
            }
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&i| alive[i]).collect();
    let (sub, _) = mol.subgraph(&keep).expect("kept atoms are valid and distinct");
    canonical_smiles(&sub)
}

/// A linker cut out together with its neighbourhood.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedLinker {
    pub mol: MolGraph,
    pub linker: LinkerAnnotation,
    /// Per atom of `mol`, its index in the source molecule.
    pub source_atoms: Vec<usize>,
}

/// Linker plus every atom within `hops` bonds beyond each attachment atom,
/// widened so that no ring system is cut. Severed bonds become hydrogens.
pub fn extract_extended_linker(mol: &MolGraph, linker: &LinkerAnnotation, hops: usize) -> Result<ExtendedLinker> {
    linker.validate(mol)?;
    let n = mol.atom_count();
    let mut include = linker.mask(mol);
    let outside: Vec<bool> = include.iter().map(|&x| !x).collect();
    for a in linker.attachments {
        // walk only through non-linker atoms
        let mut allowed = outside.clone();
        allowed[a] = true;
        let d = mol.bfs_distances(a, Some(&allowed));
        for i in 0..n {
            if d[i] <= hops {
                include[i] = true;
            }
        }
    }
    if hops > 0 {
        for system in ring_systems(mol) {
            if system.iter().any(|&i| include[i]) {
                for &i in &system {
                    include[i] = true;
                }
            }
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&i| include[i]).collect();
    let (sub, source_atoms) = mol.subgraph(&keep)?;
    let position = |i: usize| keep.binary_search(&i).expect("linker atom kept");
    let ext = LinkerAnnotation::new(
        linker.linker_atoms.iter().map(|&i| position(i)),
        linker.attachments.map(position),
    );
    Ok(ExtendedLinker {
        mol: sub,
        linker: ext,
        source_atoms,
    })
}

#[cfg(test)]
mod tests {
    use super::super::smiles::parse_smiles;
    use super::*;

    fn mol(s: &str) -> MolGraph {
        parse_smiles(s).unwrap()
    }

    #[test]
    fn rotatable_bonds() {
        assert_eq!(rotatable_bond_count(&mol("CCCC"), None), 1);
        assert_eq!(rotatable_bond_count(&mol("c1ccccc1"), None), 0);
        assert_eq!(rotatable_bond_count(&mol("CCOCC"), None), 2);
        assert_eq!(rotatable_bond_count(&mol("CC(=O)NC"), None), 1);
        let scope: BTreeSet<usize> = [0, 1, 2].into();
        assert_eq!(rotatable_bond_count(&mol("CCCCC"), Some(&scope)), 1);
    }

    #[test]
    fn rot_ratio() {
        let m = mol("CCCC");
        let l = LinkerAnnotation::whole(&m, [0, 3]);
        assert!((rot_bond_ratio(&m, &l) - 100.0 / 3.0).abs() < 1e-12);
        let b = mol("c1ccccc1");
        assert_eq!(rot_bond_ratio(&b, &LinkerAnnotation::whole(&b, [0, 3])), 0.0);
        let c = mol("CCC");
        assert_eq!(rot_bond_ratio(&c, &LinkerAnnotation::new([1], [1, 1])), 0.0);
    }

    #[test]
    fn length_ratio() {
        let chain = mol("CCCCC");
        assert_eq!(linker_length_ratio(&chain, &LinkerAnnotation::whole(&chain, [0, 4])).unwrap(), 100.0);
        // 4-bond chain with a 2-atom branch on the middle atom
        let branched = mol("CCC(CC)CC");
        let l = LinkerAnnotation::whole(&branched, [0, 6]);
        assert_eq!(linker_length_ratio(&branched, &l).unwrap(), 100.0);
        // attachment path 3, diameter 5 via a long branch
        let long = mol("CC(CCC)CC");
        let l = LinkerAnnotation::whole(&long, [0, 6]);
        assert_eq!(linker_length_ratio(&long, &l).unwrap(), 60.0);
        let one = mol("CCC");
        assert_eq!(linker_length_ratio(&one, &LinkerAnnotation::new([1], [1, 1])).unwrap(), 100.0);
        let split = LinkerAnnotation::new([0, 2], [0, 2]);
        assert!(matches!(linker_length_ratio(&one, &split), Err(Error::DisconnectedLinker)));
    }

    #[test]
    fn rings() {
        assert_eq!(ring_count(&mol("CCCC")), 0);
        assert_eq!(ring_count(&mol("c1ccccc1")), 1);
        assert_eq!(ring_count(&mol("c1ccc2ccccc2c1")), 2);
    }

    #[test]
    fn scaffolds() {
        assert_eq!(murcko_scaffold(&mol("CCCC")), "");
        let benzene = canonical_smiles(&mol("c1ccccc1"));
        assert_eq!(murcko_scaffold(&mol("Cc1ccccc1")), benzene);
        assert_eq!(murcko_scaffold(&mol("CCc1ccccc1")), benzene);
        let biphenyl = canonical_smiles(&mol("c1ccccc1-c1ccccc1"));
        assert_eq!(murcko_scaffold(&mol("CCCc1ccc(cc1)-c1ccccc1")), biphenyl);
        let linked = canonical_smiles(&mol("c1ccccc1CCC1CC1"));
        assert_eq!(murcko_scaffold(&mol("OCc1ccccc1CCC1CC1C")), linked);
    }

    #[test]
    fn dummies_define_linker() {
        let m = mol("*CCOCC*");
        let l = LinkerAnnotation::from_dummies(&m).unwrap();
        assert_eq!(l.attachments, [1, 5]);
        assert_eq!(l.linker_atoms.len(), 5);
        assert!(LinkerAnnotation::from_dummies(&mol("*CC")).is_err());
    }

    #[test]
    fn extended_linker() {
        // anchor side CC, linker OCCO, warhead side CC
        let m = mol("CCCCOCCOCCCC");
        let l = LinkerAnnotation::new(4..8, [4, 7]);
        let ext = extract_extended_linker(&m, &l, 2).unwrap();
        assert_eq!(ext.source_atoms, (2..10).collect::<Vec<_>>());
        assert_eq!(ext.linker.attachments, [2, 5]);
        let zero = extract_extended_linker(&m, &l, 0).unwrap();
        assert_eq!(zero.source_atoms, (4..8).collect::<Vec<_>>());

        // ring reached at hop 2 comes in whole
        let r = mol("c1ccccc1COCCOC");
        let l = LinkerAnnotation::new(7..12, [7, 11]);
        let ext = extract_extended_linker(&r, &l, 2).unwrap();
        assert!((0..6).all(|i| ext.source_atoms.contains(&i)));
        assert_eq!(ring_count(&ext.mol), 1);
        assert!(extract_extended_linker(&r, &LinkerAnnotation::new([40], [40, 40]), 2).is_err());
    }
}
