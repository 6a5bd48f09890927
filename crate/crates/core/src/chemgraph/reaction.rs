use std::collections::VecDeque;

use super::canon::canonical_string;
use super::error::ChemError;
use super::graph::{project, Bond, BondOrder, CgrGraph, MolAtom, MolGraph, Side};
use super::valence::{implicit_hydrogens, validate};

/// Default neighbor expansion around reacting atoms.
pub const DEFAULT_RC_RADIUS: usize = 1;

/// Hashed canonical form of a reaction-center subgraph.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ReactionCenterKey {
    pub canonical_form: String,
    pub key: u64,
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Canonical SMILES of a molecule, optionally keeping atom maps. Bracket
/// atoms whose written hydrogen count equals the implicit default are
/// rewritten in organic-subset form first.
pub fn mol_smiles(m: &MolGraph, keep_mapping: bool) -> String {
    let mut m = m.clone();
    if !keep_mapping {
        for a in &mut m.atoms {
            a.map_index = None;
        }
    }
    normalize_hydrogens(&mut m);
    canonical_string(&CgrGraph::from_mol(&m), keep_mapping)
}

fn normalize_hydrogens(m: &mut MolGraph) {
    for i in 0..m.atoms.len() {
        let a = &m.atoms[i];
        let Some(h) = a.explicit_h else { continue };
        if !a.element.organic_subset || a.charge != 0 || a.isotope.is_some() || a.map_index.is_some() {
            continue;
        }
        let mut probe = m.clone();
        probe.atoms[i] = MolAtom {
            explicit_h: None,
            ..a.clone()
        };
        if implicit_hydrogens(&probe, i).ok() == Some(u32::from(h)) {
            m.atoms[i].explicit_h = None;
        }
    }
}

/// SMILES of the connected components on each side, sorted.
pub fn to_reaction_smiles(
    g: &CgrGraph,
    keep_mapping: bool,
) -> Result<(Vec<String>, Vec<String>), ChemError> {
    let report = validate(g);
    if !report.is_valid() {
        return Err(ChemError::Invalid(report.errors.join("; ")));
    }
    Ok((
        side_smiles(g, Side::Before, keep_mapping),
        side_smiles(g, Side::After, keep_mapping),
    ))
}

fn side_smiles(g: &CgrGraph, side: Side, keep_mapping: bool) -> Vec<String> {
    let mut out: Vec<String> = project(g, side)
        .components()
        .iter()
        .map(|c| mol_smiles(c, keep_mapping))
        .collect();
    out.sort();
    out
}

/// Connected molecules of one side.
pub fn side_molecules(g: &CgrGraph, side: Side) -> Vec<MolGraph> {
    project(g, side).components()
}

/// Subgraph induced by atoms touching a dynamic bond or carrying a dynamic
/// charge, grown by `radius` bond hops. Atom order follows the input.
pub fn reaction_center(g: &CgrGraph, radius: usize) -> Result<CgrGraph, ChemError> {
    let n = g.atoms.len();
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for (i, a) in g.atoms.iter().enumerate() {
        if a.has_dynamic_charge() {
            dist[i] = 0;
        }
    }
    for b in g.bonds.iter().filter(|b| b.is_dynamic()) {
        dist[b.a] = 0;
        dist[b.b] = 0;
    }
    for (i, &d) in dist.iter().enumerate() {
        if d == 0 {
            queue.push_back(i);
        }
    }
    if queue.is_empty() {
        return Err(ChemError::EmptyCenter);
    }
    let adj = g.adjacency();
    while let Some(u) = queue.pop_front() {
        if dist[u] >= radius {
            continue;
        }
        for &(v, _) in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&i| dist[i] != usize::MAX).collect();
    let mut local = vec![usize::MAX; n];
    for (j, &i) in keep.iter().enumerate() {
        local[i] = j;
    }
    let bonds: Vec<Bond> = g
        .bonds
        .iter()
        .filter(|b| local[b.a] != usize::MAX && local[b.b] != usize::MAX)
        .map(|b| Bond {
            a: local[b.a],
            b: local[b.b],
            ..*b
        })
        .collect();
    let mut sub = CgrGraph {
        atoms: keep.iter().map(|&i| g.atoms[i].clone()).collect(),
        bonds,
        source_text: String::new(),
    };
    sub.source_text = canonical_string(&sub, false);
    Ok(sub)
}

/// Atom-order-invariant key of a reaction-center subgraph. Atom maps are
/// ignored.
pub fn rc_hash(sub: &CgrGraph) -> ReactionCenterKey {
    let canonical_form = canonical_string(sub, false);
    let key = fnv1a64(canonical_form.as_bytes());
    ReactionCenterKey { canonical_form, key }
}

/// True when any molecule has two oxygens joined by a double bond.
pub fn contains_oo(molecules: &[MolGraph]) -> bool {
    molecules.iter().any(|m| {
        m.bonds.iter().any(|&(a, b, o)| {
            o == BondOrder::Double
                && m.atoms[a].element.symbol == "O"
                && m.atoms[b].element.symbol == "O"
        })
    })
}
