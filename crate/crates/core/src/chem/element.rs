//! Element symbols and default valences.

const SYMBOLS: [&str; 118] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca",
    "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y",
    "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce",
    "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir",
    "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm",
    "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc",
    "Lv", "Ts", "Og",
];

/// Symbol used for attachment-point placeholders.
pub const DUMMY: &str = "*";

/// Atomic number, `0` for the dummy atom.
pub fn atomic_number(symbol: &str) -> Option<u8> {
    if symbol == DUMMY {
        return Some(0);
    }
    SYMBOLS.iter().position(|s| *s == symbol).map(|i| i as u8 + 1)
}

pub fn is_element(symbol: &str) -> bool {
    atomic_number(symbol).is_some()
}

/// Allowed valences of the organic subset, lowest first.
pub fn default_valences(symbol: &str) -> Option<&'static [u32]> {
    Some(match symbol {
        "B" => &[3],
        "C" => &[4],
        "N" => &[3, 5],
        "O" => &[2],
        "P" => &[3, 5],
        "S" => &[2, 4, 6],
        "F" | "Cl" | "Br" | "I" => &[1],
        _ => return None,
    })
}

/// Organic-subset symbols that may be written without brackets.
pub fn in_organic_subset(symbol: &str, aromatic: bool) -> bool {
    if aromatic {
        matches!(symbol, "B" | "C" | "N" | "O" | "P" | "S")
    } else {
        default_valences(symbol).is_some()
    }
}

/// Implicit hydrogen count for an organic-subset atom with the given bond
/// order sum (aromatic bonds count 1). Aromatic atoms reserve one more
/// valence unit for the π system. `None` signals a valence violation.
pub fn implicit_hydrogens(symbol: &str, aromatic: bool, bond_sum: u32) -> Option<u32> {
    if symbol == DUMMY {
        return Some(0);
    }
    let valences = default_valences(symbol)?;
    let v = valences.iter().copied().find(|&v| v >= bond_sum)?;
    let h = v - bond_sum;
    Some(if aromatic { h.saturating_sub(1) } else { h })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers() {
        assert_eq!(atomic_number("C"), Some(6));
        assert_eq!(atomic_number("Se"), Some(34));
        assert_eq!(atomic_number("Og"), Some(118));
        assert_eq!(atomic_number("*"), Some(0));
        assert_eq!(atomic_number("Xx"), None);
    }

    #[test]
    fn hydrogens() {
        assert_eq!(implicit_hydrogens("C", false, 1), Some(3));
        assert_eq!(implicit_hydrogens("C", true, 2), Some(1));
        assert_eq!(implicit_hydrogens("N", true, 2), Some(0));
        assert_eq!(implicit_hydrogens("S", true, 2), Some(0));
        assert_eq!(implicit_hydrogens("S", false, 3), Some(1));
        assert_eq!(implicit_hydrogens("C", false, 5), None);
        assert_eq!(implicit_hydrogens("Xe", false, 0), None);
    }
}
