//! Hashed linear-path fingerprints and Tanimoto similarity.

use super::graph::MolGraph;

pub const FINGERPRINT_BITS: usize = 2048;
/// Longest path hashed, in bonds.
pub const MAX_PATH_BONDS: usize = 7;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Fixed-width 2048-bit set.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    words: [u64; FINGERPRINT_BITS / 64],
}

impl Default for Fingerprint {
    fn default() -> Self {
        Fingerprint {
            words: [0; FINGERPRINT_BITS / 64],
        }
    }
}

impl Fingerprint {
    pub fn set(&mut self, bit: usize) {
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }
}

fn atom_token(mol: &MolGraph, i: usize) -> Vec<u8> {
    let a = mol.atom(i);
    let mut t = a.element.as_bytes().to_vec();
    t.push(if a.aromatic { b'a' } else { b'x' });
    t.extend_from_slice(&a.charge.to_le_bytes());
    t
}

/// Encoding of an atom/bond path, read in whichever direction sorts first.
fn path_key(mol: &MolGraph, atoms: &[usize], bonds: &[usize]) -> Vec<u8> {
    let encode = |forward: bool| {
        let mut key = Vec::new();
        let n = atoms.len();
        for k in 0..n {
            let i = if forward { atoms[k] } else { atoms[n - 1 - k] };
            key.extend(atom_token(mol, i));
            key.push(b'|');
            if k + 1 < n {
                let b = if forward { bonds[k] } else { bonds[n - 2 - k] };
                key.push(b'0' + mol.bonds()[b].order.code());
                key.push(b'|');
            }
        }
        key
    };
    let f = encode(true);
    let r = encode(false);
    f.min(r)
}

/// Sets one bit per distinct simple path of 0–7 bonds; bit index is the
/// FNV-1a hash of the path encoding modulo 2048.
pub fn fingerprint(mol: &MolGraph) -> Fingerprint {
    let mut fp = Fingerprint::default();
    let n = mol.atom_count();
    let mut on_path = vec![false; n];
    let mut atoms = Vec::with_capacity(MAX_PATH_BONDS + 1);
    let mut bonds = Vec::with_capacity(MAX_PATH_BONDS);
    for start in 0..n {
        extend(mol, start, &mut on_path, &mut atoms, &mut bonds, &mut fp);
    }
    fp
}

fn extend(
    mol: &MolGraph,
    u: usize,
    on_path: &mut [bool],
    atoms: &mut Vec<usize>,
    bonds: &mut Vec<usize>,
    fp: &mut Fingerprint,
) {
    on_path[u] = true;
    atoms.push(u);
    let key = path_key(mol, atoms, bonds);
    fp.set((fnv1a(&key) % FINGERPRINT_BITS as u64) as usize);
    if bonds.len() < MAX_PATH_BONDS {
        for &(v, b) in mol.neighbors(u) {
            if !on_path[v] {
                bonds.push(b);
                extend(mol, v, on_path, atoms, bonds, fp);
                bonds.pop();
            }
        }
    }
    atoms.pop();
    on_path[u] = false;
}

/// `|a ∧ b| / |a ∨ b|`, defined as 1 when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> f64 {
    let (mut both, mut either) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        both += (x & y).count_ones();
        either += (x | y).count_ones();
    }
    if either == 0 {
        1.0
    } else {
        both as f64 / either as f64
    }
}

#[cfg(test)]
mod tests {
    use super::super::smiles::parse_smiles;
    use super::*;

    fn fp(s: &str) -> Fingerprint {
        fingerprint(&parse_smiles(s).unwrap())
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn self_similarity() {
        let a = fp("CCOc1ccccc1");
        assert_eq!(tanimoto(&a, &a), 1.0);
        assert_eq!(tanimoto(&Fingerprint::default(), &Fingerprint::default()), 1.0);
    }

    #[test]
    fn path_counts() {
        // propane: 3 atoms, 2 one-bond paths (identical), 1 two-bond path
        let p = fp("CCC");
        assert_eq!(p.count_ones(), 3);
    }

    #[test]
    fn disjoint_elements() {
        let s = tanimoto(&fp("CCCC"), &fp("NNNN"));
        assert_eq!(s, 0.0);
    }
}
