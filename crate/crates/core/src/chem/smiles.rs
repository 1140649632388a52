//! SMILES reader.
//!
//! Covers the organic subset, aromatic lowercase atoms, bracket atoms with
//! charge and hydrogen count, ring closures (including `%nn`), branches and
//! explicit bond symbols. Stereo marks (`@`, `/`, `\`) are accepted and
//! dropped; `/` and `\` read as single bonds.

use std::collections::BTreeMap;

use super::element::{self, DUMMY};
use super::graph::{Atom, BondOrder, MolGraph};
use crate::error::{Error, Result};

struct ParsedAtom {
    atom: Atom,
    /// Bracket atoms carry an explicit hydrogen count.
    bracket: bool,
}

struct Parser<'a> {
    text: &'a [u8],
    pos: usize,
    atoms: Vec<ParsedAtom>,
    /// `(a, b, explicit order)`
    bonds: Vec<(usize, usize, Option<BondOrder>)>,
}

fn syntax(offset: usize, message: impl Into<String>) -> Error {
    Error::Syntax {
        offset,
        message: message.into(),
    }
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.text.get(self.pos).copied()
    }

    fn peek_at(&self, k: usize) -> Option<u8> {
        self.text.get(self.pos + k).copied()
    }

    fn push_atom(&mut self, atom: Atom, bracket: bool) -> usize {
        self.atoms.push(ParsedAtom { atom, bracket });
        self.atoms.len() - 1
    }

    fn add_bond(&mut self, a: usize, b: usize, order: Option<BondOrder>, offset: usize) -> Result<()> {
        if a == b {
            return Err(syntax(offset, "atom bonded to itself"));
        }
        if self.bonds.iter().any(|&(x, y, _)| (x, y) == (a, b) || (x, y) == (b, a)) {
            return Err(syntax(offset, "duplicate bond"));
        }
        self.bonds.push((a, b, order));
        Ok(())
    }

    /// Organic-subset atom at the cursor, if any.
    fn organic_atom(&mut self) -> Option<Atom> {
        let c = self.peek()?;
        let next = self.peek_at(1);
        let (symbol, aromatic, len) = match c {
            b'C' if next == Some(b'l') => ("Cl", false, 2),
            b'B' if next == Some(b'r') => ("Br", false, 2),
            b'B' => ("B", false, 1),
            b'C' => ("C", false, 1),
            b'N' => ("N", false, 1),
            b'O' => ("O", false, 1),
            b'P' => ("P", false, 1),
            b'S' => ("S", false, 1),
            b'F' => ("F", false, 1),
            b'I' => ("I", false, 1),
            b'b' => ("B", true, 1),
            b'c' => ("C", true, 1),
            b'n' => ("N", true, 1),
            b'o' => ("O", true, 1),
            b'p' => ("P", true, 1),
            b's' => ("S", true, 1),
            b'*' => (DUMMY, false, 1),
            _ => return None,
        };
        self.pos += len;
        let mut atom = Atom::new(symbol);
        atom.aromatic = aromatic;
        Some(atom)
    }

    fn number(&mut self) -> Option<u32> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if self.pos == start {
            return None;
        }
        std::str::from_utf8(&self.text[start..self.pos]).ok()?.parse().ok()
    }

    fn bracket_atom(&mut self) -> Result<Atom> {
        let open = self.pos;
        self.pos += 1;
        let _isotope = self.number();
        let start = self.pos;
        let mut atom = match self.peek() {
            Some(b'*') => {
                self.pos += 1;
                Atom::new(DUMMY)
            }
            Some(c) if c.is_ascii_lowercase() => {
                // aromatic: two-letter forms first
                let two = self.peek_at(1).filter(u8::is_ascii_lowercase).map(|d| [c.to_ascii_uppercase(), d]);
                let two = two.and_then(|t| String::from_utf8(t.to_vec()).ok()).filter(|s| matches!(s.as_str(), "Se" | "As" | "Te"));
                let symbol = match two {
                    Some(s) => {
                        self.pos += 2;
                        s
                    }
                    None => {
                        self.pos += 1;
                        (c.to_ascii_uppercase() as char).to_string()
                    }
                };
                if !matches!(symbol.as_str(), "B" | "C" | "N" | "O" | "P" | "S" | "Se" | "As" | "Te") {
                    return Err(syntax(start, format!("{} cannot be aromatic", symbol)));
                }
                let mut a = Atom::new(symbol);
                a.aromatic = true;
                a
            }
            Some(c) if c.is_ascii_uppercase() => {
                let two = self
                    .peek_at(1)
                    .filter(u8::is_ascii_lowercase)
                    .map(|d| format!("{}{}", c as char, d as char))
                    .filter(|s| element::is_element(s));
                let symbol = match two {
                    Some(s) => {
                        self.pos += 2;
                        s
                    }
                    None => {
                        self.pos += 1;
                        (c as char).to_string()
                    }
                };
                if !element::is_element(&symbol) {
                    return Err(syntax(start, format!("unknown element {symbol}")));
                }
                Atom::new(symbol)
            }
            _ => return Err(syntax(self.pos, "expected element symbol")),
        };
        while self.peek() == Some(b'@') {
            self.pos += 1;
        }
        // chirality classes such as @TH1 are not supported
        if matches!(self.peek(), Some(b'T' | b'A' | b'S' | b'O')) && self.text[self.pos - 1] == b'@' {
            return Err(syntax(self.pos, "extended chirality classes are not supported"));
        }
        if self.peek() == Some(b'H') {
            self.pos += 1;
            let h = self.number().unwrap_or(1);
            atom.hydrogens = u8::try_from(h).map_err(|_| syntax(self.pos, "hydrogen count too large"))?;
        }
        match self.peek() {
            Some(sign @ (b'+' | b'-')) => {
                self.pos += 1;
                let unit: i32 = if sign == b'+' { 1 } else { -1 };
                let charge = if let Some(n) = self.number() {
                    unit * n as i32
                } else {
                    let mut c = unit;
                    while self.peek() == Some(sign) {
                        self.pos += 1;
                        c += unit;
                    }
                    c
                };
                atom.charge = i8::try_from(charge).map_err(|_| syntax(self.pos, "charge out of range"))?;
            }
            _ => {}
        }
        if self.peek() == Some(b':') {
            self.pos += 1;
            self.number().ok_or_else(|| syntax(self.pos, "expected atom class"))?;
        }
        if self.peek() != Some(b']') {
            return Err(syntax(self.pos, format!("unterminated bracket atom opened at byte {open}")));
        }
        self.pos += 1;
        Ok(atom)
    }

    fn bond_symbol(&mut self) -> Option<BondOrder> {
        let order = match self.peek()? {
            b'-' | b'/' | b'\\' => BondOrder::Single,
            b'=' => BondOrder::Double,
            b'#' => BondOrder::Triple,
            b':' => BondOrder::Aromatic,
            _ => return None,
        };
        self.pos += 1;
        Some(order)
    }

    fn ring_label(&mut self) -> Result<Option<u32>> {
        match self.peek() {
            Some(d @ b'0'..=b'9') => {
                self.pos += 1;
                Ok(Some((d - b'0') as u32))
            }
            Some(b'%') => {
                let at = self.pos;
                self.pos += 1;
                match (self.peek(), self.peek_at(1)) {
                    (Some(a @ b'0'..=b'9'), Some(b @ b'0'..=b'9')) => {
                        self.pos += 2;
                        Ok(Some(((a - b'0') * 10 + (b - b'0')) as u32))
                    }
                    _ => Err(syntax(at, "'%' must be followed by two digits")),
                }
            }
            _ => Ok(None),
        }
    }

    fn run(&mut self) -> Result<()> {
        if self.text.is_empty() {
            return Err(syntax(0, "empty SMILES"));
        }
        let mut prev: Option<usize> = None;
        let mut pending: Option<(BondOrder, usize)> = None;
        let mut branches: Vec<(usize, usize)> = Vec::new();
        let mut rings: BTreeMap<u32, (usize, Option<BondOrder>, usize)> = BTreeMap::new();

        while self.pos < self.text.len() {
            let at = self.pos;
            let c = self.text[at];
            if c == b'.' {
                return Err(Error::MultiFragment);
            }
            if let Some(order) = self.bond_symbol() {
                if pending.is_some() {
                    return Err(syntax(at, "two bond symbols in a row"));
                }
                if prev.is_none() {
                    return Err(syntax(at, "bond symbol before any atom"));
                }
                pending = Some((order, at));
                continue;
            }
            if c == b'(' {
                let p = prev.ok_or_else(|| syntax(at, "branch before any atom"))?;
                if pending.is_some() {
                    return Err(syntax(at, "bond symbol before '('"));
                }
                branches.push((p, at));
                self.pos += 1;
                if self.peek() == Some(b')') {
                    return Err(syntax(self.pos, "empty branch"));
                }
                continue;
            }
            if c == b')' {
                if pending.is_some() {
                    return Err(syntax(at, "dangling bond symbol"));
                }
                let (p, _) = branches.pop().ok_or_else(|| syntax(at, "unmatched ')'"))?;
                prev = Some(p);
                self.pos += 1;
                continue;
            }
            if let Some(label) = self.ring_label()? {
                let p = prev.ok_or_else(|| syntax(at, "ring closure before any atom"))?;
                let order = pending.take().map(|(o, _)| o);
                match rings.remove(&label) {
                    Some((q, open_order, _)) => {
                        let order = match (open_order, order) {
                            (Some(x), Some(y)) if x != y => {
                                return Err(syntax(at, format!("conflicting bond orders on ring closure {label}")))
                            }
                            (x, y) => x.or(y),
                        };
                        self.add_bond(q, p, order, at)?;
                    }
                    None => {
                        rings.insert(label, (p, order, at));
                    }
                }
                continue;
            }
            let atom = if c == b'[' {
                Some((self.bracket_atom()?, true))
            } else {
                self.organic_atom().map(|a| (a, false))
            };
            let Some((atom, bracket)) = atom else {
                return Err(syntax(at, format!("unexpected character {:?}", c as char)));
            };
            let idx = self.push_atom(atom, bracket);
            if let Some(p) = prev {
                let order = pending.take().map(|(o, _)| o);
                self.add_bond(p, idx, order, at)?;
            }
            prev = Some(idx);
        }
        if let Some((_, at)) = pending {
            return Err(syntax(at, "dangling bond symbol"));
        }
        if let Some(&(_, at)) = branches.last() {
            return Err(Error::UnclosedBranch(at));
        }
        if let Some((&label, _)) = rings.iter().next() {
            return Err(Error::UnclosedRing(label));
        }
        Ok(())
    }

    fn finish(self) -> Result<MolGraph> {
        let aromatic: Vec<bool> = self.atoms.iter().map(|a| a.atom.aromatic).collect();
        let tentative: Vec<(usize, usize, BondOrder)> = self
            .bonds
            .iter()
            .map(|&(a, b, o)| {
                let order = o.unwrap_or(if aromatic[a] && aromatic[b] {
                    BondOrder::Aromatic
                } else {
                    BondOrder::Single
                });
                (a, b, order)
            })
            .collect();
        let atoms: Vec<Atom> = self.atoms.iter().map(|a| a.atom.clone()).collect();
        let probe = MolGraph::new(atoms.clone(), tentative.clone())?;
        // an unmarked bond between aromatic atoms is aromatic only inside a ring
        let bonds: Vec<(usize, usize, BondOrder)> = tentative
            .into_iter()
            .zip(&self.bonds)
            .zip(probe.bonds())
            .map(|(((a, b, order), &(_, _, explicit)), bond)| {
                if explicit.is_none() && order == BondOrder::Aromatic && !bond.ring {
                    (a, b, BondOrder::Single)
                } else {
                    (a, b, order)
                }
            })
            .collect();

        let mut sums = vec![0u32; atoms.len()];
        for &(a, b, o) in &bonds {
            sums[a] += o.valence();
            sums[b] += o.valence();
        }
        let mut atoms = atoms;
        for (i, (atom, parsed)) in atoms.iter_mut().zip(&self.atoms).enumerate() {
            if parsed.bracket {
                continue;
            }
            let h = element::implicit_hydrogens(&atom.element, atom.aromatic, sums[i]).ok_or_else(|| Error::Valence {
                atom: i,
                element: atom.element.clone(),
                valence: sums[i],
            })?;
            atom.hydrogens = h as u8;
        }
        MolGraph::new(atoms, bonds)
    }
}

/// Parses one SMILES string. Leading and trailing whitespace is ignored.
pub fn parse_smiles(text: &str) -> Result<MolGraph> {
    let trimmed = text.trim();
    let offset = text.len() - text.trim_start().len();
    let mut parser = Parser {
        text: trimmed.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
    };
    parser.run().map_err(|e| match e {
        Error::Syntax { offset: o, message } => Error::Syntax {
            offset: o + offset,
            message,
        },
        Error::UnclosedBranch(o) => Error::UnclosedBranch(o + offset),
        other => other,
    })?;
    parser.finish()
}

/// Reads a SMILES list: one entry per line, lines starting with `#` are
/// comments, anything after the first whitespace on a line is ignored.
pub fn read_smiles_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim_start)
        .filter(|l| !l.starts_with('#'))
        .filter_map(|l| l.split_whitespace().next())
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ethanol() {
        let g = parse_smiles("CCO").unwrap();
        assert_eq!(g.atom_count(), 3);
        assert_eq!(g.bond_count(), 2);
        assert!(g.bonds().iter().all(|b| b.order == BondOrder::Single && !b.ring));
        let h: Vec<u8> = g.atoms().iter().map(|a| a.hydrogens).collect();
        assert_eq!(h, vec![3, 2, 1]);
    }

    #[test]
    fn benzene() {
        let g = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(g.atom_count(), 6);
        assert_eq!(g.bond_count(), 6);
        assert!(g.atoms().iter().all(|a| a.aromatic && a.hydrogens == 1));
        assert!(g.bonds().iter().all(|b| b.order == BondOrder::Aromatic && b.ring));
    }

    #[test]
    fn biphenyl_link_is_single() {
        let g = parse_smiles("c1ccccc1c1ccccc1").unwrap();
        let link = g.bond_between(5, 6).unwrap();
        assert_eq!(g.bonds()[link].order, BondOrder::Single);
        assert!(!g.bonds()[link].ring);
    }

    #[test]
    fn errors() {
        assert!(matches!(parse_smiles("C1CC"), Err(Error::UnclosedRing(1))));
        assert!(matches!(parse_smiles("CC(C"), Err(Error::UnclosedBranch(2))));
        assert!(matches!(parse_smiles("CC.O"), Err(Error::MultiFragment)));
        assert!(matches!(parse_smiles("C(C)(C)(C)(C)C"), Err(Error::Valence { atom: 0, .. })));
        assert!(matches!(parse_smiles("CCX"), Err(Error::Syntax { offset: 2, .. })));
        assert!(matches!(parse_smiles(""), Err(Error::Syntax { offset: 0, .. })));
        assert!(matches!(parse_smiles("C=1CC-1"), Err(Error::Syntax { .. })));
        assert!(matches!(parse_smiles("C11"), Err(Error::Syntax { .. })));
        assert!(matches!(parse_smiles("C)"), Err(Error::Syntax { offset: 1, .. })));
        assert!(matches!(parse_smiles("C="), Err(Error::Syntax { .. })));
        assert!(parse_smiles("not_a_smiles").is_err());
    }

    #[test]
    fn brackets_and_charges() {
        let g = parse_smiles("C[NH3+]").unwrap();
        assert_eq!(g.atom(1).charge, 1);
        assert_eq!(g.atom(1).hydrogens, 3);
        let g = parse_smiles("[O-]C(=O)C").unwrap();
        assert_eq!(g.atom(0).charge, -1);
        assert_eq!(g.atom(0).hydrogens, 0);
        let g = parse_smiles("c1cc[nH]c1").unwrap();
        assert_eq!(g.atom(3).hydrogens, 1);
        let g = parse_smiles("[Fe++]").unwrap();
        assert_eq!(g.atom(0).charge, 2);
        let g = parse_smiles("[13CH4]").unwrap();
        assert_eq!(g.atom(0).hydrogens, 4);
        let g = parse_smiles("c1cc[se]c1").unwrap();
        assert_eq!(g.atom(3).element, "Se");
    }

    #[test]
    fn ring_closures() {
        let g = parse_smiles("C%12CCC%12").unwrap();
        assert_eq!(g.bond_count(), 4);
        let g = parse_smiles("C=1CCCCC1").unwrap();
        assert_eq!(g.bonds()[g.bond_between(0, 5).unwrap()].order, BondOrder::Double);
        let g = parse_smiles("C1CC1C1CC1").unwrap();
        assert_eq!(g.bond_count(), 7);
    }

    #[test]
    fn dummies_and_halogens() {
        let g = parse_smiles("*CCl").unwrap();
        assert_eq!(g.atom(0).element, "*");
        assert_eq!(g.atom(0).hydrogens, 0);
        assert_eq!(g.atom(2).element, "Cl");
        let g = parse_smiles("BrCBr").unwrap();
        assert_eq!(g.atom(1).hydrogens, 2);
        let g = parse_smiles("F/C=C/F").unwrap();
        assert_eq!(g.bond_count(), 3);
    }

    #[test]
    fn list_reader() {
        let list = read_smiles_list("# header\nCCO ethanol\n\n c1ccccc1 # benzene\nC#N\n");
        assert_eq!(list, vec!["CCO", "c1ccccc1", "C#N"]);
    }
}
