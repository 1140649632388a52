//! Ring systems and a smallest set of smallest rings.

use std::collections::VecDeque;

use super::graph::MolGraph;

/// Atoms joined by ring bonds, one sorted list per fused/spiro system.
pub fn ring_systems(mol: &MolGraph) -> Vec<Vec<usize>> {
    let n = mol.atom_count();
    let mut label = vec![usize::MAX; n];
    let mut systems = Vec::new();
    for start in 0..n {
        if label[start] != usize::MAX || !mol.is_ring_atom(start) {
            continue;
        }
        let id = systems.len();
        let mut members = vec![start];
        label[start] = id;
        let mut k = 0;
        while k < members.len() {
            let u = members[k];
            k += 1;
            for &(v, b) in mol.neighbors(u) {
                if mol.bonds()[b].ring && label[v] == usize::MAX {
                    label[v] = id;
                    members.push(v);
                }
            }
        }
        members.sort_unstable();
        systems.push(members);
    }
    systems
}

/// Shortest path from `from` to `to` over ring bonds, skipping bond `skip`.
fn shortest_ring_path(mol: &MolGraph, from: usize, to: usize, skip: usize) -> Option<Vec<usize>> {
    let mut prev = vec![usize::MAX; mol.atom_count()];
    prev[from] = from;
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        if u == to {
            let mut path = vec![to];
            let mut x = to;
            while x != from {
                x = prev[x];
                path.push(x);
            }
            path.reverse();
            return Some(path);
        }
        for &(v, b) in mol.neighbors(u) {
            if b != skip && mol.bonds()[b].ring && prev[v] == usize::MAX {
                prev[v] = u;
                queue.push_back(v);
            }
        }
    }
    None
}

fn bond_set(mol: &MolGraph, cycle: &[usize]) -> Vec<u64> {
    let mut bits = vec![0u64; mol.bond_count().div_ceil(64)];
    for k in 0..cycle.len() {
        let b = mol
            .bond_between(cycle[k], cycle[(k + 1) % cycle.len()])
            .expect("consecutive ring atoms are bonded");
        bits[b / 64] |= 1 << (b % 64);
    }
    bits
}

/// Smallest rings forming a cycle basis, each as an ordered atom cycle,
/// sorted by size. Candidates are the shortest cycle through every ring
/// bond; independence is tested over GF(2) on bond sets.
pub fn sssr(mol: &MolGraph) -> Vec<Vec<usize>> {
    let ring_bonds: Vec<usize> = (0..mol.bond_count()).filter(|&b| mol.bonds()[b].ring).collect();
    if ring_bonds.is_empty() {
        return Vec::new();
    }
    let ring_atoms = (0..mol.atom_count()).filter(|&i| mol.is_ring_atom(i)).count();
    let systems = ring_systems(mol).len();
    let rank = ring_bonds.len() + systems - ring_atoms;

    let mut candidates: Vec<(Vec<usize>, Vec<u64>)> = Vec::new();
    for &b in &ring_bonds {
        let bond = mol.bonds()[b];
        if let Some(path) = shortest_ring_path(mol, bond.a, bond.b, b) {
            let bits = bond_set(mol, &path);
            if !candidates.iter().any(|(_, c)| *c == bits) {
                candidates.push((path, bits));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.1.cmp(&b.1)));

    let mut basis: Vec<Vec<u64>> = Vec::new();
    let mut rings = Vec::new();
    for (cycle, bits) in candidates {
        if rings.len() == rank {
            break;
        }
        let mut reduced = bits.clone();
        for row in &basis {
            let pivot = leading_bit(row).expect("basis rows are non-zero");
            if reduced[pivot / 64] >> (pivot % 64) & 1 == 1 {
                for (r, x) in reduced.iter_mut().zip(row) {
                    *r ^= x;
                }
            }
        }
        if leading_bit(&reduced).is_some() {
            basis.push(reduced);
            basis.sort_by_key(|r| std::cmp::Reverse(leading_bit(r)));
            rings.push(cycle);
        }
    }
    rings
}

fn leading_bit(bits: &[u64]) -> Option<usize> {
    bits.iter()
        .enumerate()
        .rev()
        .find(|(_, w)| **w != 0)
        .map(|(k, w)| k * 64 + 63 - w.leading_zeros() as usize)
}

#[cfg(test)]
mod tests {
    use super::super::smiles::parse_smiles;
    use super::*;

    fn sizes(s: &str) -> Vec<usize> {
        sssr(&parse_smiles(s).unwrap()).iter().map(Vec::len).collect()
    }

    #[test]
    fn ring_sets() {
        assert_eq!(sizes("CCCC"), Vec::<usize>::new());
        assert_eq!(sizes("c1ccccc1"), vec![6]);
        assert_eq!(sizes("c1ccc2ccccc2c1"), vec![6, 6]);
        assert_eq!(sizes("C1CC2CCC1CC2"), vec![6, 6]);
        assert_eq!(sizes("C1CCC2(CC1)CCCC2"), vec![5, 6]);
        assert_eq!(sizes("C12CC3CC(CC(C3)C1)C2"), vec![6, 6, 6]);
    }

    #[test]
    fn systems() {
        let m = parse_smiles("c1ccccc1CCC1CC1").unwrap();
        let s = ring_systems(&m);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0], vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(s[1].len(), 3);
    }
}
