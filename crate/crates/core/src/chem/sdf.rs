//! Reader for the V2000 molfile subset: counts line, atom block, bond block
//! and `M  CHG` charges. Everything else in the property block is ignored.

use super::element;
use super::graph::{Atom, BondOrder, MolGraph};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::surface::{Atom3, AtomSet};

/// A molfile record: coordinates plus connectivity over the same atoms.
#[derive(Debug, Clone)]
pub struct SdfMolecule {
    pub name: String,
    pub atoms: AtomSet,
    pub graph: MolGraph,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse(format!("molfile line {}: {}", line + 1, message.into()))
}

fn field<T: std::str::FromStr>(line: &str, lineno: usize, range: std::ops::Range<usize>, what: &str) -> Result<T> {
    let text = line.get(range.clone()).unwrap_or("").trim();
    text.parse()
        .map_err(|_| parse_err(lineno, format!("bad {what} {text:?}")))
}

/// Parses the first record of an SDF/molfile. Hydrogen counts of heavy atoms
/// follow default valences after explicit bonds; order-4 bonds are aromatic.
pub fn parse_molfile(text: &str) -> Result<SdfMolecule> {
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() < 4 {
        return Err(parse_err(lines.len(), "truncated header"));
    }
    let name = lines[0].trim().to_string();
    let counts = lines[3];
    if counts.contains("V3000") {
        return Err(parse_err(3, "V3000 molfiles are not supported"));
    }
    // fixed columns, falling back to whitespace for hand-written files
    let (n_atoms, n_bonds): (usize, usize) = match (
        field::<usize>(counts, 3, 0..3, "atom count"),
        field::<usize>(counts, 3, 3..6, "bond count"),
    ) {
        (Ok(a), Ok(b)) => (a, b),
        _ => {
            let mut it = counts.split_whitespace();
            let a = it.next().and_then(|t| t.parse().ok());
            let b = it.next().and_then(|t| t.parse().ok());
            match (a, b) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(parse_err(3, "bad counts line")),
            }
        }
    };
    if lines.len() < 4 + n_atoms + n_bonds {
        return Err(parse_err(lines.len(), "truncated atom or bond block"));
    }

    let mut atoms = Vec::with_capacity(n_atoms);
    let mut positions = Vec::with_capacity(n_atoms);
    for k in 0..n_atoms {
        let lineno = 4 + k;
        let tokens: Vec<&str> = lines[lineno].split_whitespace().collect();
        if tokens.len() < 4 {
            return Err(parse_err(lineno, "atom line needs x y z element"));
        }
        let coord = |t: &str| -> Result<f64> {
            let v: f64 = t.parse().map_err(|_| parse_err(lineno, format!("bad coordinate {t:?}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFinite(format!("molfile line {}", lineno + 1)))
            }
        };
        let p = Vec3::new(coord(tokens[0])?, coord(tokens[1])?, coord(tokens[2])?);
        let symbol = match tokens[3] {
            "R#" | "A" | "Q" | "*" => element::DUMMY.to_string(),
            s if element::is_element(s) => s.to_string(),
            s => return Err(parse_err(lineno, format!("unknown element {s:?}"))),
        };
        positions.push(p);
        atoms.push(Atom::new(symbol));
    }

    let mut bonds = Vec::with_capacity(n_bonds);
    for k in 0..n_bonds {
        let lineno = 4 + n_atoms + k;
        let tokens: Vec<&str> = lines[lineno].split_whitespace().collect();
        if tokens.len() < 3 {
            return Err(parse_err(lineno, "bond line needs a b order"));
        }
        let index = |t: &str| -> Result<usize> {
            match t.parse::<usize>() {
                Ok(i) if (1..=n_atoms).contains(&i) => Ok(i - 1),
                _ => Err(parse_err(lineno, format!("bad atom index {t:?}"))),
            }
        };
        let (a, b) = (index(tokens[0])?, index(tokens[1])?);
        let order = match tokens[2] {
            "1" => BondOrder::Single,
            "2" => BondOrder::Double,
            "3" => BondOrder::Triple,
            "4" => BondOrder::Aromatic,
            t => return Err(parse_err(lineno, format!("unsupported bond order {t:?}"))),
        };
        if order == BondOrder::Aromatic {
            atoms[a].aromatic = true;
            atoms[b].aromatic = true;
        }
        bonds.push((a, b, order));
    }

    for (k, line) in lines.iter().enumerate().skip(4 + n_atoms + n_bonds) {
        if line.starts_with("M  END") || line.starts_with("$$$$") {
            break;
        }
        if let Some(rest) = line.strip_prefix("M  CHG") {
            let tokens: Vec<&str> = rest.split_whitespace().collect();
            let count: usize = tokens.first().and_then(|t| t.parse().ok()).ok_or_else(|| parse_err(k, "bad charge count"))?;
            if tokens.len() < 1 + 2 * count {
                return Err(parse_err(k, "truncated charge list"));
            }
            for pair in tokens[1..1 + 2 * count].chunks(2) {
                let i: usize = pair[0].parse().map_err(|_| parse_err(k, "bad charge atom"))?;
                let c: i8 = pair[1].parse().map_err(|_| parse_err(k, "bad charge value"))?;
                if !(1..=n_atoms).contains(&i) {
                    return Err(parse_err(k, format!("charge on missing atom {i}")));
                }
                atoms[i - 1].charge = c;
            }
        }
    }

    let probe = MolGraph::new(atoms.clone(), bonds.clone())?;
    for (i, atom) in atoms.iter_mut().enumerate() {
        if atom.is_dummy() || atom.is_hydrogen() {
            continue;
        }
        // charged or unusual atoms keep whatever the explicit bonds give
        atom.hydrogens = if atom.charge == 0 {
            probe.default_hydrogens(i).unwrap_or(0) as u8
        } else {
            0
        };
    }
    let graph = MolGraph::new(atoms.clone(), bonds)?;
    let atoms = AtomSet::new(
        atoms
            .iter()
            .zip(positions)
            .map(|(a, p)| Atom3::new(a.element.clone(), p))
            .collect(),
    )?;
    Ok(SdfMolecule { name, atoms, graph })
}

#[cfg(test)]
mod tests {
    use super::super::canon::canonical_smiles;
    use super::super::smiles::parse_smiles;
    use super::*;

    const ETHANOL: &str = "ethanol
  hand

  3  2  0  0  0  0  0  0  0  0999 V2000
    0.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    1.5400    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    2.0500    1.4000    0.0000 O   0  0  0  0  0  0  0  0  0  0  0  0
  1  2  1  0
  2  3  1  0
M  END
$$$$
";

    #[test]
    fn reads_ethanol() {
        let m = parse_molfile(ETHANOL).unwrap();
        assert_eq!(m.name, "ethanol");
        assert_eq!(m.atoms.len(), 3);
        assert_eq!(m.atoms.atoms[1].position, Vec3::new(1.54, 0.0, 0.0));
        assert_eq!(canonical_smiles(&m.graph), canonical_smiles(&parse_smiles("CCO").unwrap()));
    }

    #[test]
    fn aromatic_bonds_and_charges() {
        let mut text = String::from("benzoate\n\n\n  9  9  0  0  0  0  0  0  0  0999 V2000\n");
        for k in 0..9 {
            let sym = if k >= 7 { "O" } else { "C" };
            text.push_str(&format!("{:10.4}{:10.4}{:10.4} {sym}   0  0\n", k as f64, 0.0, 0.0));
        }
        for k in 0..6 {
            text.push_str(&format!("{:3}{:3}  4  0\n", k + 1, (k + 1) % 6 + 1));
        }
        text.push_str("  1  7  1  0\n  7  8  2  0\n  7  9  1  0\nM  CHG  1   9  -1\nM  END\n");
        let m = parse_molfile(&text).unwrap();
        assert_eq!(
            canonical_smiles(&m.graph),
            canonical_smiles(&parse_smiles("c1ccccc1C(=O)[O-]").unwrap())
        );
    }

    #[test]
    fn rejects_malformed() {
        assert!(parse_molfile("x\n").is_err());
        let bad = ETHANOL.replace("  2  3  1  0", "  2  9  1  0");
        assert!(matches!(parse_molfile(&bad), Err(Error::Parse(_))));
        let bad = ETHANOL.replace(" O ", " Xx ");
        assert!(parse_molfile(&bad).is_err());
    }
}
