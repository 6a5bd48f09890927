use std::fmt;

use super::element::Element;

/// Bond order on one side of a reaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BondOrder {
    None,
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub fn symbol(self) -> char {
        match self {
            BondOrder::None => '.',
            BondOrder::Single => '-',
            BondOrder::Double => '=',
            BondOrder::Triple => '#',
            BondOrder::Aromatic => ':',
        }
    }

    pub fn from_symbol(c: char) -> Option<BondOrder> {
        Some(match c {
            '.' => BondOrder::None,
            '-' => BondOrder::Single,
            '=' => BondOrder::Double,
            '#' => BondOrder::Triple,
            ':' => BondOrder::Aromatic,
            _ => return None,
        })
    }

    /// Valence contribution in half-units (aromatic counts 1.5).
    pub fn half_valence(self) -> u32 {
        match self {
            BondOrder::None => 0,
            BondOrder::Single => 2,
            BondOrder::Double => 4,
            BondOrder::Triple => 6,
            BondOrder::Aromatic => 3,
        }
    }

    pub fn valence(self) -> f64 {
        f64::from(self.half_valence()) / 2.0
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for BondOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// Reactant (`Before`) or product (`After`) side of a condensed graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Before,
    After,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Atom {
    pub element: &'static Element,
    pub aromatic: bool,
    /// Hydrogen count written inside brackets; `None` for organic-subset atoms
    /// whose hydrogens are implicit.
    pub explicit_h: Option<u8>,
    pub charge_before: i8,
    pub charge_after: i8,
    pub isotope: Option<u16>,
    pub map_index: Option<u32>,
}

impl Atom {
    pub fn new(element: &'static Element) -> Self {
        Atom {
            element,
            aromatic: false,
            explicit_h: None,
            charge_before: 0,
            charge_after: 0,
            isotope: None,
            map_index: None,
        }
    }

    pub fn charge(&self, side: Side) -> i8 {
        match side {
            Side::Before => self.charge_before,
            Side::After => self.charge_after,
        }
    }

    pub fn has_dynamic_charge(&self) -> bool {
        self.charge_before != self.charge_after
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub before: BondOrder,
    pub after: BondOrder,
}

impl Bond {
    pub fn order(&self, side: Side) -> BondOrder {
        match side {
            Side::Before => self.before,
            Side::After => self.after,
        }
    }

    pub fn is_dynamic(&self) -> bool {
        self.before != self.after
    }

    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }

    pub(crate) fn code(&self) -> u8 {
        self.before.code() * 8 + self.after.code()
    }
}

/// Condensed graph of reaction: reactants and products superimposed on one
/// atom set, each bond carrying its order on both sides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CgrGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    pub source_text: String,
}

impl CgrGraph {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Incident `(neighbor, bond index)` pairs per atom.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for (i, b) in self.bonds.iter().enumerate() {
            adj[b.a].push((b.b, i));
            adj[b.b].push((b.a, i));
        }
        adj
    }

    pub fn has_dynamics(&self) -> bool {
        self.bonds.iter().any(Bond::is_dynamic) || self.atoms.iter().any(Atom::has_dynamic_charge)
    }

    /// Reorders atoms so that old atom `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> CgrGraph {
        assert_eq!(perm.len(), self.atoms.len());
        let mut atoms = self.atoms.clone();
        for (i, a) in self.atoms.iter().enumerate() {
            atoms[perm[i]] = a.clone();
        }
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond {
                a: perm[b.a],
                b: perm[b.b],
                ..*b
            })
            .collect();
        CgrGraph {
            atoms,
            bonds,
            source_text: self.source_text.clone(),
        }
    }

    /// Builds a static graph (identical sides) from one molecule.
    pub fn from_mol(m: &MolGraph) -> CgrGraph {
        CgrGraph {
            atoms: m
                .atoms
                .iter()
                .map(|a| Atom {
                    element: a.element,
                    aromatic: a.aromatic,
                    explicit_h: a.explicit_h,
                    charge_before: a.charge,
                    charge_after: a.charge,
                    isotope: a.isotope,
                    map_index: a.map_index,
                })
                .collect(),
            bonds: m
                .bonds
                .iter()
                .map(|&(a, b, o)| Bond {
                    a,
                    b,
                    before: o,
                    after: o,
                })
                .collect(),
            source_text: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MolAtom {
    pub element: &'static Element,
    pub aromatic: bool,
    pub explicit_h: Option<u8>,
    pub charge: i8,
    pub isotope: Option<u16>,
    pub map_index: Option<u32>,
}

/// One side of a condensed graph. Bonds never carry `BondOrder::None`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MolGraph {
    pub atoms: Vec<MolAtom>,
    pub bonds: Vec<(usize, usize, BondOrder)>,
}

impl MolGraph {
    pub fn adjacency(&self) -> Vec<Vec<(usize, BondOrder)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for &(a, b, o) in &self.bonds {
            adj[a].push((b, o));
            adj[b].push((a, o));
        }
        adj
    }

    /// Connected components, each as its own graph with atoms in original
    /// relative order.
    pub fn components(&self) -> Vec<MolGraph> {
        let adj = self.adjacency();
        let mut comp = vec![usize::MAX; self.atoms.len()];
        let mut count = 0;
        for start in 0..self.atoms.len() {
            if comp[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            comp[start] = count;
            while let Some(u) = stack.pop() {
                for &(v, _) in &adj[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = count;
                        stack.push(v);
                    }
                }
            }
            count += 1;
        }
        (0..count)
            .map(|c| {
                let members: Vec<usize> = (0..self.atoms.len()).filter(|&i| comp[i] == c).collect();
                let mut local = vec![usize::MAX; self.atoms.len()];
                for (j, &i) in members.iter().enumerate() {
                    local[i] = j;
                }
                MolGraph {
                    atoms: members.iter().map(|&i| self.atoms[i].clone()).collect(),
                    bonds: self
                        .bonds
                        .iter()
                        .filter(|&&(a, _, _)| comp[a] == c)
                        .map(|&(a, b, o)| (local[a], local[b], o))
                        .collect(),
                }
            })
            .collect()
    }
}

/// Projects a condensed graph onto one side; bonds absent on that side are
/// dropped and each atom keeps that side's charge.
pub fn project(g: &CgrGraph, side: Side) -> MolGraph {
    MolGraph {
        atoms: g
            .atoms
            .iter()
            .map(|a| MolAtom {
                element: a.element,
                aromatic: a.aromatic,
                explicit_h: a.explicit_h,
                charge: a.charge(side),
                isotope: a.isotope,
                map_index: a.map_index,
            })
            .collect(),
        bonds: g
            .bonds
            .iter()
            .filter(|b| b.order(side) != BondOrder::None)
            .map(|b| (b.a, b.b, b.order(side)))
            .collect(),
    }
}
