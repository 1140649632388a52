//! Small datasets compiled into the library.

/// 500 linker SMILES, each with two `*` attachment points.
pub const LINKER_CORPUS: &str = include_str!("../data/linkers.smi");

/// Heavy-atom pose of a small amide-piperazine ligand, used as the default
/// shape reference.
pub const REFERENCE_LIGAND_XYZ: &str = include_str!("../data/reference_ligand.xyz");

/// SMILES of [`REFERENCE_LIGAND_XYZ`].
pub const REFERENCE_LIGAND_SMILES: &str = "Cc1ccc(cc1)C(=O)N1CCN(CC1)CCC";

/// Hand-enumerated descriptor values for 20 molecules.
pub const DESCRIPTOR_FIXTURE: &str = include_str!("../data/descriptor_fixture.json");

/// The bundled corpus as a list.
pub fn linker_corpus() -> Vec<String> {
    crate::chem::read_smiles_list(LINKER_CORPUS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{parse_smiles, LinkerAnnotation};
    use crate::rl::tokenize;
    use crate::surface::AtomSet;

    #[test]
    fn corpus_is_well_formed() {
        let corpus = linker_corpus();
        assert_eq!(corpus.len(), 500);
        for s in &corpus {
            let mol = parse_smiles(s).unwrap_or_else(|e| panic!("{s}: {e}"));
            LinkerAnnotation::from_dummies(&mol).unwrap_or_else(|e| panic!("{s}: {e}"));
            tokenize(s).unwrap();
        }
    }

    #[test]
    fn reference_ligand_matches_its_smiles() {
        let atoms = AtomSet::from_xyz(REFERENCE_LIGAND_XYZ).unwrap();
        let mol = parse_smiles(REFERENCE_LIGAND_SMILES).unwrap();
        assert_eq!(atoms.len(), mol.atom_count());
    }
}
