use serde::Serialize;

use super::error::ChemError;
use super::graph::{project, BondOrder, CgrGraph, MolGraph, Side};
use super::parse::parse_cgrsmiles_with;

/// Bond-order sum of an atom in half-units. Aromatic chalcogens (furan `o`,
/// thiophene `s`) donate a lone pair to the ring, so their aromatic bonds
/// count 1 instead of 1.5.
fn half_bond_sum(m: &MolGraph, atom: usize) -> u32 {
    let a = &m.atoms[atom];
    let chalcogen = a.aromatic && matches!(a.element.symbol, "O" | "S" | "Se" | "Te");
    m.bonds
        .iter()
        .filter(|&&(x, y, _)| x == atom || y == atom)
        .map(|&(_, _, o)| match o {
            BondOrder::Aromatic if chalcogen => 2,
            o => o.half_valence(),
        })
        .sum()
}

fn valence_error(m: &MolGraph, atom: usize, half: u32) -> ChemError {
    ChemError::Valence {
        atom,
        symbol: m.atoms[atom].element.symbol,
        bond_sum: f64::from(half) / 2.0,
    }
}

/// Hydrogen count of one atom. Bracket atoms report their written count;
/// organic-subset atoms fill up to the smallest allowed valence that covers
/// the (floored) bond-order sum.
pub fn implicit_hydrogens(m: &MolGraph, atom: usize) -> Result<u32, ChemError> {
    let a = &m.atoms[atom];
    let half = half_bond_sum(m, atom);
    let used = half / 2;
    match a.explicit_h {
        Some(h) => {
            let h = u32::from(h);
            let max = a
                .element
                .valences_for_charge(a.charge)
                .and_then(|v| v.into_iter().max())
                .ok_or_else(|| valence_error(m, atom, half))?;
            if used + h > u32::from(max) {
                return Err(valence_error(m, atom, half));
            }
            Ok(h)
        }
        None => {
            let valences = a
                .element
                .valences_for_charge(a.charge)
                .ok_or_else(|| valence_error(m, atom, half))?;
            valences
                .iter()
                .map(|&v| u32::from(v))
                .find(|&v| v >= used)
                .map(|v| v - used)
                .ok_or_else(|| valence_error(m, atom, half))
        }
    }
}

/// Outcome of the structural checks on one condensed graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidityReport {
    pub parse_ok: bool,
    pub valence_ok_before: bool,
    pub valence_ok_after: bool,
    pub aromatic_ok: bool,
    /// Total hydrogens after minus total hydrogens before.
    pub h_balance: i64,
    pub errors: Vec<String>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.parse_ok && self.valence_ok_before && self.valence_ok_after && self.aromatic_ok
    }

    fn parse_failure(err: ChemError) -> Self {
        ValidityReport {
            parse_ok: false,
            valence_ok_before: false,
            valence_ok_after: false,
            aromatic_ok: false,
            h_balance: 0,
            errors: vec![err.to_string()],
        }
    }
}

fn side_name(side: Side) -> &'static str {
    match side {
        Side::Before => "reactant",
        Side::After => "product",
    }
}

fn check_side(g: &CgrGraph, side: Side, errors: &mut Vec<String>) -> (bool, i64) {
    let m = project(g, side);
    let mut ok = true;
    let mut total = 0i64;
    for i in 0..m.atoms.len() {
        match implicit_hydrogens(&m, i) {
            Ok(h) => total += i64::from(h),
            Err(e) => {
                ok = false;
                errors.push(format!("{} side: {e}", side_name(side)));
            }
        }
    }
    (ok, total)
}

/// Every aromatic atom must sit on a cycle of aromatic bonds on at least one
/// side, and aromatic bonds may only join aromatic atoms.
fn check_aromatic(g: &CgrGraph, errors: &mut Vec<String>) -> bool {
    let mut ok = true;
    for (i, b) in g.bonds.iter().enumerate() {
        let arom = b.before == BondOrder::Aromatic || b.after == BondOrder::Aromatic;
        if arom && !(g.atoms[b.a].aromatic && g.atoms[b.b].aromatic) {
            ok = false;
            errors.push(format!("aromatic bond {i} joins a non-aromatic atom"));
        }
    }
    let on_cycle = |side: Side| -> Vec<bool> {
        let edges: Vec<(usize, usize)> = g
            .bonds
            .iter()
            .filter(|b| b.order(side) == BondOrder::Aromatic)
            .map(|b| (b.a, b.b))
            .collect();
        let mut flags = vec![false; g.atoms.len()];
        for (skip, &(u, v)) in edges.iter().enumerate() {
            if flags[u] && flags[v] {
                continue;
            }
            if connected_without(&edges, skip, u, v, g.atoms.len()) {
                flags[u] = true;
                flags[v] = true;
            }
        }
        flags
    };
    let before = on_cycle(Side::Before);
    let after = on_cycle(Side::After);
    for (i, a) in g.atoms.iter().enumerate() {
        if a.aromatic && !before[i] && !after[i] {
            ok = false;
            errors.push(format!("aromatic atom {i} ({}) is not in an aromatic ring", a.element));
        }
    }
    ok
}

fn connected_without(edges: &[(usize, usize)], skip: usize, from: usize, to: usize, n: usize) -> bool {
    let mut adj = vec![Vec::new(); n];
    for (k, &(a, b)) in edges.iter().enumerate() {
        if k != skip {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let mut seen = vec![false; n];
    let mut stack = vec![from];
    seen[from] = true;
    while let Some(u) = stack.pop() {
        if u == to {
            return true;
        }
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    false
}

/// Valence check on both projections, aromatic-ring membership, and
/// hydrogen balance. Never fails; problems are listed in the report.
pub fn validate(g: &CgrGraph) -> ValidityReport {
    let mut errors = Vec::new();
    let (valence_ok_before, h_before) = check_side(g, Side::Before, &mut errors);
    let (valence_ok_after, h_after) = check_side(g, Side::After, &mut errors);
    let aromatic_ok = check_aromatic(g, &mut errors);
    ValidityReport {
        parse_ok: true,
        valence_ok_before,
        valence_ok_after,
        aromatic_ok,
        h_balance: h_after - h_before,
        errors,
    }
}

/// Parses then validates; parse failures are reported, not returned.
pub fn validate_str(text: &str, max_len: usize) -> ValidityReport {
    match parse_cgrsmiles_with(text, max_len) {
        Ok(g) => validate(&g),
        Err(e) => ValidityReport::parse_failure(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chemgraph::parse::{parse_cgrsmiles, DEFAULT_MAX_LEN};

    fn hydrogens(s: &str, side: Side) -> Vec<u32> {
        let m = project(&parse_cgrsmiles(s).unwrap(), side);
        (0..m.atoms.len())
            .map(|i| implicit_hydrogens(&m, i).unwrap())
            .collect()
    }

    #[test]
    fn methane_and_water() {
        assert_eq!(hydrogens("C", Side::Before), vec![4]);
        assert_eq!(hydrogens("O", Side::Before), vec![2]);
    }

    #[test]
    fn dynamic_bond_hydrogens() {
        assert_eq!(hydrogens("C[.>-]O", Side::Before), vec![4, 2]);
        assert_eq!(hydrogens("C[.>-]O", Side::After), vec![3, 1]);
    }

    #[test]
    fn aromatic_hydrogens() {
        assert_eq!(hydrogens("c1ccccc1", Side::Before), vec![1; 6]);
        assert_eq!(hydrogens("c1ccncc1", Side::Before), vec![1, 1, 1, 0, 1, 1]);
        assert_eq!(hydrogens("c1ccoc1", Side::Before), vec![1, 1, 1, 0, 1]);
        assert_eq!(hydrogens("c1ccsc1", Side::Before), vec![1, 1, 1, 0, 1]);
        // naphthalene fusion atoms
        let h = hydrogens("c1ccc2ccccc2c1", Side::Before);
        assert_eq!(h.iter().sum::<u32>(), 8);
    }

    #[test]
    fn higher_valence_states() {
        assert_eq!(hydrogens("CS(=O)(=O)C", Side::Before)[1], 0);
        assert_eq!(hydrogens("CS(=O)C", Side::Before)[1], 0);
        assert_eq!(hydrogens("CP(C)(C)=O", Side::Before)[1], 0);
    }

    #[test]
    fn pentavalent_carbon_is_an_error() {
        let m = project(&parse_cgrsmiles("C(C)(C)(C)(C)C").unwrap(), Side::Before);
        assert!(matches!(
            implicit_hydrogens(&m, 0),
            Err(ChemError::Valence { atom: 0, .. })
        ));
    }

    #[test]
    fn bracket_atoms() {
        assert_eq!(hydrogens("[NH4+]", Side::Before), vec![4]);
        assert_eq!(hydrogens("C[O-]", Side::Before), vec![3, 0]);
        assert_eq!(hydrogens("[Na+].[Cl-]", Side::Before), vec![0, 0]);
        assert_eq!(hydrogens("Cl[Pt](Cl)(Cl)Cl", Side::Before), vec![0; 5]);
        let m = project(&parse_cgrsmiles("[OH3]").unwrap(), Side::Before);
        assert!(implicit_hydrogens(&m, 0).is_err());
    }

    #[test]
    fn validate_examples() {
        let r = validate_str("C[.>-]O", DEFAULT_MAX_LEN);
        assert!(r.is_valid(), "{r:?}");
        assert_eq!(r.h_balance, -2);

        let r = validate_str("O", DEFAULT_MAX_LEN);
        assert!(r.is_valid());
        assert_eq!(r.h_balance, 0);

        let r = validate_str("cc", DEFAULT_MAX_LEN);
        assert!(r.parse_ok);
        assert!(!r.aromatic_ok);
        assert!(!r.is_valid());

        let r = validate_str("C(C)(C)(C)(C)C", DEFAULT_MAX_LEN);
        assert!(r.parse_ok);
        assert!(!r.valence_ok_before && !r.valence_ok_after);

        let r = validate_str("(((", DEFAULT_MAX_LEN);
        assert!(!r.parse_ok && !r.is_valid());
    }

    #[test]
    fn aromatic_ring_formed_on_one_side() {
        // Ring closes only in the product; still accepted as aromatic there.
        let r = validate_str("c1cccc[.>:]c1", DEFAULT_MAX_LEN);
        assert!(r.aromatic_ok, "{r:?}");
        // Aromatic bond to an aliphatic atom is rejected.
        let r = validate_str("c1ccccc1:C", DEFAULT_MAX_LEN);
        assert!(!r.aromatic_ok);
    }

    #[test]
    fn validate_is_pure() {
        let a = validate_str("CC(=O)O[->.]C", DEFAULT_MAX_LEN);
        let b = validate_str("CC(=O)O[->.]C", DEFAULT_MAX_LEN);
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}
