//! Molecular graphs: SMILES and molfile input, canonical SMILES, ring
//! perception, linker descriptors, path fingerprints and 3D embedding.

pub mod canon;
pub mod descriptors;
pub mod element;
pub mod embed;
pub mod fingerprint;
pub mod graph;
pub mod rings;
pub mod sdf;
pub mod smiles;

pub use canon::{canonical_ranks, canonical_smiles};
pub use descriptors::{
    extract_extended_linker, linker_length_ratio, murcko_scaffold, ring_count, rot_bond_ratio,
    rotatable_bond_count, ExtendedLinker, LinkerAnnotation,
};
pub use embed::{embed_3d, Conformer};
pub use fingerprint::{fingerprint, tanimoto, Fingerprint};
pub use graph::{Atom, Bond, BondOrder, MolGraph};
pub use rings::{ring_systems, sssr};
pub use sdf::{parse_molfile, SdfMolecule};
pub use smiles::{parse_smiles, read_smiles_list};
