#![allow(dead_code)]

use std::collections::BTreeSet;

use cgrgen::chemgraph::{implicit_hydrogens, parse_cgrsmiles, validate, CgrGraph, Fingerprint, MolGraph};
use cgrgen::tensor::{Rng, Tape, Tensor, Var};

/// Substituents; either end atom can carry the attachment.
pub const GROUPS: &[&str] = &[
    "C",
    "CC",
    "CCC",
    "CCCC",
    "CC(C)",
    "CC(C)(C)",
    "C1CCCCC1",
    "c1ccccc1",
    "Cc1ccccc1",
    "c1ccc(C)cc1",
    "c1ccc(Cl)cc1",
    "c1ccc(OC)cc1",
    "c1ccc(F)cc1",
    "c1ccncc1",
    "c1ccc2ccccc2c1",
    "CCOC(=O)C",
    "CC(C#N)",
    "c1ccc(C(F)(F)F)cc1",
    "COCC",
    "CSCC",
    "c1ccoc1",
    "c1ccsc1",
    "CC(=O)c1ccccc1",
    "CCCCCC",
    "CC(Br)",
];

/// Reaction templates; `{a}` and `{b}` take a substituent each. The first
/// four carry molecular oxygen on the reactant side.
pub const TEMPLATES: &[&str] = &[
    "{a}C[->=]O.O[=>-]O",
    "{a}C({b})[->=]O.O[=>-]O",
    "{a}C(=O)[.>-]O[=>-]O",
    "{a}S({b})[.>=]O[=>.]O",
    "{b}O[.>-]C({a})(=O)[->.]O",
    "{b}N[.>-]C({a})(=O)[->.]O",
    "{a}C([->.]Br)[.>-]N{b}",
    "{a}C[=>-]C{b}",
    "{b}O[.>-]C({a})(=O)[->.]Cl",
];

fn fill(template: &str, a: &str, b: &str) -> String {
    template.replace("{a}", a).replace("{b}", b)
}

/// Every template instantiated over every pair of substituents, keeping
/// strings that validate.
pub fn all_reactions() -> Vec<String> {
    let mut out = BTreeSet::new();
    for t in TEMPLATES {
        for a in GROUPS {
            for b in GROUPS {
                let s = fill(t, a, b);
                if let Ok(g) = parse_cgrsmiles(&s) {
                    if validate(&g).is_valid() {
                        out.insert(s);
                    }
                }
            }
        }
    }
    out.into_iter().collect()
}

/// `n` distinct valid reaction strings drawn with a seeded shuffle.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<String> {
    let mut all = all_reactions();
    assert!(all.len() >= n, "only {} template reactions", all.len());
    Rng::new(seed, 7).shuffle(&mut all);
    all.truncate(n);
    all
}

/// Atom labels and bond matrix of a condensed graph, both sides included.
pub fn cgr_labels(g: &CgrGraph) -> (Vec<String>, Vec<Vec<u16>>) {
    let n = g.atoms.len();
    let labels = g
        .atoms
        .iter()
        .map(|a| {
            format!(
                "{}|{}|{:?}|{}>{}|{:?}|{:?}",
                a.element.symbol, a.aromatic, a.explicit_h, a.charge_before, a.charge_after, a.isotope, a.map_index
            )
        })
        .collect();
    let mut adj = vec![vec![0u16; n]; n];
    for b in &g.bonds {
        let l = 1 + 8 * b.before as u16 + b.after as u16;
        adj[b.a][b.b] = l;
        adj[b.b][b.a] = l;
    }
    (labels, adj)
}

/// Exhaustive backtracking isomorphism test on condensed graphs.
pub fn isomorphic(a: &CgrGraph, b: &CgrGraph) -> bool {
    let (la, aa) = cgr_labels(a);
    let (lb, ab) = cgr_labels(b);
    a.bonds.len() == b.bonds.len() && isomorphic_labelled(&la, &aa, &lb, &ab)
}

/// Uniformly random permutation of `0..n`.
pub fn random_permutation(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut p);
    p
}

/// Chain pieces joined end to end; every piece attaches through single bonds.
const PIECES: &[&str] = &[
    "C(=O)N",
    "c1ccc(F)cc1",
    "OC",
    "C(C)",
    "N(C)C",
    "c1ccncc1",
    "S(=O)(=O)N",
    "C(F)(F)C",
    "c1ccsc1",
    "OCC",
    "c1ccc(Cl)cc1",
    "C#CC",
    "C(Br)",
    "N",
    "C1CC1",
    "c1ccoc1",
    "C(=O)O",
    "CC",
    "c1cnccn1",
    "C(O)",
];

/// Reaction cores wrapped around two chains.
const CORES: &[(&str, &str)] = &[
    ("O[.>-]C(", ")(=O)[->.]O"),
    ("N[.>-]C(", ")(=O)[->.]O"),
    ("C(", ")[->=]O.O[=>-]O"),
    ("S(", ")[.>=]O[=>.]O"),
    ("C([->.]Br)[.>-]N", ""),
];

fn chain(rng: &mut Rng, min_len: usize) -> String {
    let mut s = String::from("C");
    while s.len() < min_len {
        s.push_str(PIECES[rng.below(PIECES.len())]);
    }
    s
}

/// `n` valid reactions of `min_len..=max_len` characters built from
/// varied drug-like pieces.
pub fn long_reactions(n: usize, min_len: usize, max_len: usize, seed: u64) -> Vec<String> {
    let mut rng = Rng::new(seed, 0);
    let mut out: Vec<String> = Vec::new();
    while out.len() < n {
        let (head, tail) = CORES[out.len() % CORES.len()];
        let s = format!("{}{head}{}{tail}", chain(&mut rng, 60), chain(&mut rng, 60));
        if (min_len..=max_len).contains(&s.len()) && !out.contains(&s) && validate(&parse_cgrsmiles(&s).unwrap()).is_valid() {
            out.push(s);
        }
    }
    out
}

/// Golden corpus rows: string, expected validity, expected hydrogen balance.
pub fn golden() -> Vec<(String, bool, Option<i64>)> {
    include_str!("../data/golden.tsv")
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].to_string(), f[1] == "1", f[2].parse().ok())
        })
        .collect()
}

/// Exhaustive labelled-graph isomorphism. `adj[i][j]` is 0 when `i` and
/// `j` are not bonded, otherwise a bond label.
pub fn isomorphic_labelled(la: &[String], adj_a: &[Vec<u16>], lb: &[String], adj_b: &[Vec<u16>]) -> bool {
    let n = la.len();
    if n != lb.len() {
        return false;
    }
    let mut sa = la.to_vec();
    let mut sb = lb.to_vec();
    sa.sort();
    sb.sort();
    if sa != sb {
        return false;
    }
    fn go(i: usize, map: &mut Vec<usize>, used: &mut [bool], la: &[String], aa: &[Vec<u16>], lb: &[String], ab: &[Vec<u16>]) -> bool {
        if i == la.len() {
            return true;
        }
        for j in 0..lb.len() {
            if used[j] || la[i] != lb[j] || (0..i).any(|k| aa[i][k] != ab[j][map[k]]) {
                continue;
            }
            map.push(j);
            used[j] = true;
            if go(i + 1, map, used, la, aa, lb, ab) {
                return true;
            }
            map.pop();
            used[j] = false;
        }
        false
    }
    go(0, &mut Vec::new(), &mut vec![false; n], la, adj_a, lb, adj_b)
}

/// Labels of a molecule with hydrogens counted, not as written.
pub fn mol_labels(m: &MolGraph) -> (Vec<String>, Vec<Vec<u16>>) {
    let n = m.atoms.len();
    let labels = (0..n)
        .map(|i| {
            let a = &m.atoms[i];
            format!(
                "{}|{}|{}|{:?}|{:?}|H{}",
                a.element.symbol,
                a.aromatic,
                a.charge,
                a.isotope,
                a.map_index,
                implicit_hydrogens(m, i).unwrap()
            )
        })
        .collect();
    let mut adj = vec![vec![0u16; n]; n];
    for &(a, b, o) in &m.bonds {
        adj[a][b] = o as u16 + 1;
        adj[b][a] = o as u16 + 1;
    }
    (labels, adj)
}

pub fn isomorphic_mols(a: &MolGraph, b: &MolGraph) -> bool {
    let (la, aa) = mol_labels(a);
    let (lb, ab) = mol_labels(b);
    isomorphic_labelled(&la, &aa, &lb, &ab)
}

/// Intersection over union computed bit by bit.
pub fn tanimoto_oracle(a: &Fingerprint, b: &Fingerprint) -> f64 {
    let (mut both, mut any) = (0u32, 0u32);
    for bit in 0..a.len() {
        let (x, y) = (a.get(bit), b.get(bit));
        both += u32::from(x && y);
        any += u32::from(x || y);
    }
    if any == 0 {
        0.0
    } else {
        f64::from(both) / f64::from(any)
    }
}

/// Central-difference check of the tape gradient of a scalar function of
/// `inputs`. Returns the worst relative error seen.
pub fn check_gradients(
    inputs: &[Tensor<f64>],
    f: impl for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Var<'t, f64>,
) -> Result<f64, String> {
    const STEP: f64 = 1e-5;
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&tape, &vars);
    tape.backward(loss).map_err(|e| e.to_string())?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .map(|v| v.grad().unwrap_or_else(|| Tensor::zeros(&v.shape())))
        .collect();
    let eval = |ins: &[Tensor<f64>]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<_> = ins.iter().map(|t| tape.constant(t.clone())).collect();
        let v = f(&tape, &vars).value().item();
        v
    };
    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for (k, t) in inputs.iter().enumerate() {
        for i in 0..t.numel() {
            let orig = t.data()[i];
            work[k].data_mut()[i] = orig + STEP;
            let up = eval(&work);
            work[k].data_mut()[i] = orig - STEP;
            let down = eval(&work);
            work[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[k].data()[i];
            let diff = (a - numeric).abs();
            let rel = diff / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            if rel >= 1e-4 && diff >= 1e-9 {
                return Err(format!("input {k} entry {i}: analytic {a} numeric {numeric}"));
            }
        }
    }
    Ok(worst)
}
