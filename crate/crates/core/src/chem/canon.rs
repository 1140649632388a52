//! Canonical atom ranking and SMILES output.

use super::element;
use super::graph::{BondOrder, MolGraph};

fn dense_ranks<K: Ord + Clone>(keys: &[K]) -> Vec<usize> {
    let mut sorted: Vec<K> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter().map(|k| sorted.binary_search(k).expect("key present")).collect()
}

fn class_count(ranks: &[usize]) -> usize {
    let mut r = ranks.to_vec();
    r.sort_unstable();
    r.dedup();
    r.len()
}

/// Iterates neighbourhood refinement until the partition stops splitting.
fn refine(mol: &MolGraph, mut ranks: Vec<usize>) -> Vec<usize> {
    let mut classes = class_count(&ranks);
    loop {
        let keys: Vec<(usize, Vec<(usize, u8)>)> = (0..mol.atom_count())
            .map(|i| {
                let mut nb: Vec<(usize, u8)> = mol
                    .neighbors(i)
                    .iter()
                    .map(|&(j, b)| (ranks[j], mol.bonds()[b].order.code()))
                    .collect();
                nb.sort_unstable();
                (ranks[i], nb)
            })
            .collect();
        let next = dense_ranks(&keys);
        let next_classes = class_count(&next);
        ranks = next;
        if next_classes == classes {
            return ranks;
        }
        classes = next_classes;
    }
}

/// Canonical rank per atom: a permutation of `0..n`.
///
/// Initial invariants are element, charge, degree, hydrogen count,
/// aromaticity and ring membership; ties left after refinement are broken
/// one at a time (lowest tied rank first) and refined again.
pub fn canonical_ranks(mol: &MolGraph) -> Vec<usize> {
    let n = mol.atom_count();
    let keys: Vec<_> = (0..n)
        .map(|i| {
            let a = mol.atom(i);
            (
                element::atomic_number(&a.element).unwrap_or(u8::MAX),
                a.charge,
                mol.degree(i),
                a.hydrogens,
                a.aromatic,
                mol.is_ring_atom(i),
            )
        })
        .collect();
    let mut ranks = refine(mol, dense_ranks(&keys));
    while class_count(&ranks) < n {
        // smallest rank value shared by several atoms
        let mut counts = vec![0usize; n];
        for &r in &ranks {
            counts[r] += 1;
        }
        let tied = counts.iter().position(|&c| c > 1).expect("a tie exists");
        let pick = ranks.iter().position(|&r| r == tied).expect("tied atom");
        let mut split: Vec<usize> = ranks.iter().map(|&r| 2 * r + 1).collect();
        split[pick] -= 1;
        ranks = refine(mol, dense_ranks(&split));
    }
    ranks
}

fn atom_text(mol: &MolGraph, i: usize) -> String {
    let a = mol.atom(i);
    if a.is_dummy() {
        return "*".into();
    }
    let symbol = if a.aromatic {
        a.element.to_lowercase()
    } else {
        a.element.clone()
    };
    if mol.default_hydrogens(i) == Some(a.hydrogens as u32) {
        return symbol;
    }
    let mut s = format!("[{symbol}");
    match a.hydrogens {
        0 => {}
        1 => s.push('H'),
        h => s.push_str(&format!("H{h}")),
    }
    match a.charge {
        0 => {}
        1 => s.push('+'),
        -1 => s.push('-'),
        c if c > 0 => s.push_str(&format!("+{c}")),
        c => s.push_str(&format!("-{}", -c)),
    }
    s.push(']');
    s
}

fn bond_text(mol: &MolGraph, b: usize) -> &'static str {
    let bond = &mol.bonds()[b];
    match bond.order {
        BondOrder::Single => {
            if mol.atom(bond.a).aromatic && mol.atom(bond.b).aromatic {
                "-"
            } else {
                ""
            }
        }
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
        BondOrder::Aromatic => {
            if mol.atom(bond.a).aromatic && mol.atom(bond.b).aromatic && bond.ring {
                ""
            } else {
                ":"
            }
        }
    }
}

fn ring_label(d: usize) -> String {
    if d < 10 {
        d.to_string()
    } else {
        format!("%{d:02}")
    }
}

struct Writer<'a> {
    mol: &'a MolGraph,
    ranks: &'a [usize],
    visited: Vec<bool>,
    /// Per atom: ring-closure partners `(partner, bond)`.
    closures: Vec<Vec<(usize, usize)>>,
    /// DFS children per atom in emission order.
    children: Vec<Vec<(usize, usize)>>,
}

impl Writer<'_> {
    fn sorted_neighbors(&self, u: usize) -> Vec<(usize, usize)> {
        let mut nb = self.mol.neighbors(u).to_vec();
        nb.sort_by_key(|&(v, _)| self.ranks[v]);
        nb
    }

    /// First pass: spanning tree and ring-closure bonds.
    fn explore(&mut self, root: usize) {
        let mut tree_bond = vec![false; self.mol.bond_count()];
        let mut stack = vec![(root, usize::MAX)];
        let mut order = Vec::new();
        while let Some((u, via)) = stack.pop() {
            if self.visited[u] {
                continue;
            }
            self.visited[u] = true;
            order.push(u);
            if via != usize::MAX {
                tree_bond[via] = true;
                let parent = self.mol.bonds()[via].other(u);
                self.children[parent].push((u, via));
            }
            for &(v, b) in self.sorted_neighbors(u).iter().rev() {
                if !self.visited[v] {
                    stack.push((v, b));
                }
            }
        }
        for &u in &order {
            for (v, b) in self.sorted_neighbors(u) {
                if !tree_bond[b] {
                    self.closures[u].push((v, b));
                }
            }
        }
    }

    fn emit(&self, root: usize, out: &mut String) {
        // label -> bond; label 0 is never used
        let mut open: Vec<Option<usize>> = vec![Some(usize::MAX)];
        let mut label_of_bond = std::collections::HashMap::new();
        enum Step {
            Atom(usize),
            Text(&'static str),
            Open,
            Close,
        }
        let mut stack = vec![Step::Atom(root)];
        while let Some(step) = stack.pop() {
            match step {
                Step::Text(t) => out.push_str(t),
                Step::Open => out.push('('),
                Step::Close => out.push(')'),
                Step::Atom(u) => {
                    out.push_str(&atom_text(self.mol, u));
                    for &(_, b) in &self.closures[u] {
                        if let Some(label) = label_of_bond.remove(&b) {
                            out.push_str(&ring_label(label));
                            open[label] = None;
                        } else {
                            let label = match open.iter().position(Option::is_none) {
                                Some(l) => l,
                                None => {
                                    open.push(None);
                                    open.len() - 1
                                }
                            };
                            open[label] = Some(b);
                            label_of_bond.insert(b, label);
                            out.push_str(bond_text(self.mol, b));
                            out.push_str(&ring_label(label));
                        }
                    }
                    let kids = &self.children[u];
                    // pushed in reverse so the first child is emitted first
                    for (k, &(v, b)) in kids.iter().enumerate().rev() {
                        let last = k + 1 == kids.len();
                        if !last {
                            stack.push(Step::Close);
                        }
                        stack.push(Step::Atom(v));
                        stack.push(Step::Text(bond_text(self.mol, b)));
                        if !last {
                            stack.push(Step::Open);
                        }
                    }
                }
            }
        }
    }
}

/// Canonical SMILES: identical for any atom ordering of the same graph.
/// Stereochemistry is never written. Disconnected graphs are written as
/// dot-separated components, largest first.
pub fn canonical_smiles(mol: &MolGraph) -> String {
    if mol.atom_count() == 0 {
        return String::new();
    }
    let ranks = canonical_ranks(mol);
    let mut w = Writer {
        mol,
        ranks: &ranks,
        visited: vec![false; mol.atom_count()],
        closures: vec![Vec::new(); mol.atom_count()],
        children: vec![Vec::new(); mol.atom_count()],
    };
    let mut parts = Vec::new();
    let mut by_rank: Vec<usize> = (0..mol.atom_count()).collect();
    by_rank.sort_by_key(|&i| ranks[i]);
    for root in by_rank {
        if w.visited[root] {
            continue;
        }
        w.explore(root);
        let mut s = String::new();
        w.emit(root, &mut s);
        parts.push(s);
    }
    parts.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    parts.join(".")
}

#[cfg(test)]
mod tests {
    use super::super::smiles::parse_smiles;
    use super::*;

    fn canon(s: &str) -> String {
        canonical_smiles(&parse_smiles(s).unwrap())
    }

    #[test]
    fn same_graph_same_string() {
        assert_eq!(canon("OCC"), canon("CCO"));
        assert_eq!(canon("c1ccccc1C"), canon("Cc1ccccc1"));
        assert_eq!(canon("C1CCCCC1N"), canon("NC1CCCCC1"));
        assert_ne!(canon("CCO"), canon("COC"));
    }

    #[test]
    fn ranks_are_a_permutation() {
        let m = parse_smiles("CC(C)(C)C").unwrap();
        let mut r = canonical_ranks(&m);
        r.sort_unstable();
        assert_eq!(r, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn round_trips() {
        for s in [
            "CCO",
            "c1ccccc1",
            "c1ccc2ccccc2c1",
            "C1CC2CCC1CC2",
            "O=C(O)c1ccccc1-c1ccccc1",
            "C[NH3+]",
            "c1cc[nH]c1",
            "*CCOCC*",
            "C#CC=CC",
            "C12CC3CC(CC(C3)C1)C2",
            "C1CCC2(CC1)CCCC2",
            "[O-][n+]1ccccc1",
        ] {
            let first = canon(s);
            let second = canon(&first);
            assert_eq!(first, second, "{s}");
            let a = parse_smiles(s).unwrap();
            let b = parse_smiles(&first).unwrap();
            assert_eq!(a.atom_count(), b.atom_count(), "{s} -> {first}");
            assert_eq!(a.bond_count(), b.bond_count(), "{s} -> {first}");
        }
    }

    #[test]
    fn explicit_single_between_aromatics() {
        let s = canon("c1ccccc1c1ccccc1");
        assert!(s.contains('-'), "{s}");
    }

    #[test]
    fn stable_under_atom_permutation() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for s in [
            "O=C(NCCc1ccncc1)c1ccc(OC)cc1",
            "C12CC3CC(CC(C3)C1)C2",
            "C1CCC2CCCCC2C1",
            "C12C3C4C1C5C2C3C45",
            "c1ccc2c(c1)ccc1ccccc12",
            "*CCN1CCN(CC1)c1ccc(*)cc1",
            "CC(C)(C)OC(=O)N1CCC(CC1)C(=O)O",
            "C1CC2CCC1CC2",
        ] {
            let m = parse_smiles(s).unwrap();
            let reference = canonical_smiles(&m);
            let mut perm: Vec<usize> = (0..m.atom_count()).collect();
            for _ in 0..100 {
                perm.shuffle(&mut rng);
                assert_eq!(canonical_smiles(&m.permuted(&perm).unwrap()), reference, "{s}");
            }
        }
    }
}
