//! Periodic-table registry restricted to the elements the reaction grammar
//! accepts, with the valence tables used for implicit-hydrogen and valence
//! checks.

use std::fmt;

#[derive(Debug, PartialEq, Eq, Hash)]
pub struct Element {
    pub symbol: &'static str,
    pub atomic_number: u8,
    /// Ascending list of allowed neutral valences.
    pub allowed_valences: &'static [u8],
    pub aromatic_capable: bool,
    /// May be written without brackets.
    pub organic_subset: bool,
    pub metal: bool,
}

impl Element {
    pub fn by_symbol(symbol: &str) -> Option<&'static Element> {
        ELEMENTS.iter().find(|e| e.symbol == symbol)
    }

    pub fn by_number(z: u8) -> Option<&'static Element> {
        ELEMENTS.iter().find(|e| e.atomic_number == z)
    }

    /// Lower-case symbol used for aromatic atoms.
    pub fn aromatic_symbol(&self) -> String {
        self.symbol.to_ascii_lowercase()
    }

    /// Allowed valences for a given formal charge.
    ///
    /// Charged main-group atoms take the valences of their isoelectronic
    /// neutral element (`N+` behaves like `C`, `O-` like `F`). Metal ions
    /// lose or gain one bonding slot per unit of charge. `None` means the
    /// charge state has no defined valence.
    pub fn valences_for_charge(&self, charge: i8) -> Option<Vec<u8>> {
        if charge == 0 {
            return Some(self.allowed_valences.to_vec());
        }
        if self.metal {
            let c = charge.unsigned_abs();
            let shifted: Vec<u8> = if charge > 0 {
                let mut v: Vec<u8> = self
                    .allowed_valences
                    .iter()
                    .filter(|&&v| v >= c)
                    .map(|&v| v - c)
                    .collect();
                v.push(0);
                v
            } else {
                self.allowed_valences.iter().map(|&v| v + c).collect()
            };
            let mut shifted = shifted;
            shifted.sort_unstable();
            shifted.dedup();
            return Some(shifted);
        }
        let z = i16::from(self.atomic_number) - i16::from(charge);
        let iso = u8::try_from(z).ok().and_then(Element::by_number)?;
        if iso.metal {
            return None;
        }
        Some(iso.allowed_valences.to_vec())
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol)
    }
}

macro_rules! el {
    ($sym:expr, $z:expr, [$($v:expr),*], $arom:expr, $org:expr, $metal:expr) => {
        Element {
            symbol: $sym,
            atomic_number: $z,
            allowed_valences: &[$($v),*],
            aromatic_capable: $arom,
            organic_subset: $org,
            metal: $metal,
        }
    };
}

pub static ELEMENTS: &[Element] = &[
    el!("H", 1, [1], false, false, false),
    el!("He", 2, [0], false, false, false),
    el!("Li", 3, [1], false, false, true),
    el!("Be", 4, [2], false, false, true),
    el!("B", 5, [3], true, true, false),
    el!("C", 6, [4], true, true, false),
    el!("N", 7, [3, 5], true, true, false),
    el!("O", 8, [2], true, true, false),
    el!("F", 9, [1], false, true, false),
    el!("Ne", 10, [0], false, false, false),
    el!("Na", 11, [1], false, false, true),
    el!("Mg", 12, [2], false, false, true),
    el!("Al", 13, [3], false, false, true),
    el!("Si", 14, [4], false, false, false),
    el!("P", 15, [3, 5], true, true, false),
    el!("S", 16, [2, 4, 6], true, true, false),
    el!("Cl", 17, [1], false, true, false),
    el!("Ar", 18, [0], false, false, false),
    el!("K", 19, [1], false, false, true),
    el!("Ca", 20, [2], false, false, true),
    el!("Fe", 26, [2, 3], false, false, true),
    el!("Cu", 29, [1, 2], false, false, true),
    el!("Zn", 30, [2], false, false, true),
    el!("As", 33, [3, 5], true, false, false),
    el!("Se", 34, [2, 4, 6], true, false, false),
    el!("Br", 35, [1], false, true, false),
    el!("Kr", 36, [0], false, false, false),
    el!("Pd", 46, [2, 4], false, false, true),
    el!("Sn", 50, [2, 4], false, false, true),
    el!("Te", 52, [2, 4, 6], true, false, false),
    el!("I", 53, [1], false, true, false),
    el!("Xe", 54, [0], false, false, false),
    el!("Pt", 78, [2, 4], false, false, true),
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbols_are_unique() {
        for (i, a) in ELEMENTS.iter().enumerate() {
            for b in &ELEMENTS[i + 1..] {
                assert_ne!(a.symbol, b.symbol);
                assert_ne!(a.atomic_number, b.atomic_number);
            }
        }
    }

    #[test]
    fn organic_subset_has_valences() {
        for e in ELEMENTS.iter().filter(|e| e.organic_subset) {
            assert!(!e.allowed_valences.is_empty(), "{e}");
        }
    }

    #[test]
    fn isoelectronic_charge_shift() {
        let n = Element::by_symbol("N").unwrap();
        assert_eq!(n.valences_for_charge(1), Some(vec![4]));
        let o = Element::by_symbol("O").unwrap();
        assert_eq!(o.valences_for_charge(-1), Some(vec![1]));
        let na = Element::by_symbol("Na").unwrap();
        assert_eq!(na.valences_for_charge(1), Some(vec![0]));
        let cl = Element::by_symbol("Cl").unwrap();
        assert_eq!(cl.valences_for_charge(-1), Some(vec![0]));
    }
}
