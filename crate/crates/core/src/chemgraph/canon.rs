//! Canonical atom ranking and string writer.
//!
//! Ranks start from atom invariants and are refined by iterated neighborhood
//! relabeling until the partition is stable. Remaining ties are broken by
//! individualizing each member of the first tied class in turn and keeping
//! the lexicographically smallest output string.

use std::collections::BTreeSet;

use super::graph::{Atom, BondOrder, CgrGraph};

/// Upper bound on explored tie-breaking leaves per graph.
const SEARCH_BUDGET: usize = 256;

#[derive(Debug, Clone, Copy)]
pub(crate) struct LabelOpts {
    pub include_maps: bool,
}

/// Deterministic serialization; equal for isomorphic graphs, atom maps kept.
pub fn write_cgrsmiles(g: &CgrGraph) -> String {
    canonical_string(g, true)
}

/// Canonical string with or without atom-map indices.
pub fn canonical_string(g: &CgrGraph, include_maps: bool) -> String {
    if g.atoms.is_empty() {
        return String::new();
    }
    let opts = LabelOpts { include_maps };
    let adj = g.adjacency();
    let ranks = dense_rank(&initial_labels(g, &adj, opts));
    let mut search = Search {
        g,
        adj: &adj,
        opts,
        leaves: 0,
        best: None,
    };
    search.run(ranks);
    search.best.expect("at least one leaf is explored")
}


type Adj = Vec<Vec<(usize, usize)>>;

fn initial_labels(g: &CgrGraph, adj: &Adj, opts: LabelOpts) -> Vec<Vec<i64>> {
    g.atoms
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut key = vec![
                i64::from(a.element.atomic_number),
                i64::from(a.aromatic),
                a.isotope.map_or(-1, i64::from),
                i64::from(a.charge_before),
                i64::from(a.charge_after),
                a.explicit_h.map_or(-1, i64::from),
                if opts.include_maps {
                    a.map_index.map_or(-1, i64::from)
                } else {
                    -1
                },
                adj[i].len() as i64,
            ];
            let mut orders: Vec<i64> = adj[i]
                .iter()
                .map(|&(_, bi)| i64::from(g.bonds[bi].code()))
                .collect();
            orders.sort_unstable();
            key.extend(orders);
            key
        })
        .collect()
}

fn dense_rank<K: Ord + Clone>(keys: &[K]) -> Vec<usize> {
    let uniq: Vec<K> = keys.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    keys.iter()
        .map(|k| uniq.binary_search(k).expect("key present"))
        .collect()
}

fn class_count(ranks: &[usize]) -> usize {
    ranks.iter().collect::<BTreeSet<_>>().len()
}

fn refine(g: &CgrGraph, adj: &Adj, mut ranks: Vec<usize>) -> Vec<usize> {
    let mut classes = class_count(&ranks);
    loop {
        let keys: Vec<(usize, Vec<(u8, usize)>)> = (0..g.atoms.len())
            .map(|i| {
                let mut env: Vec<(u8, usize)> = adj[i]
                    .iter()
                    .map(|&(v, bi)| (g.bonds[bi].code(), ranks[v]))
                    .collect();
                env.sort_unstable();
                (ranks[i], env)
            })
            .collect();
        let next = dense_rank(&keys);
        let n = class_count(&next);
        ranks = next;
        if n == classes {
            return ranks;
        }
        classes = n;
    }
}

struct Search<'a> {
    g: &'a CgrGraph,
    adj: &'a Adj,
    opts: LabelOpts,
    leaves: usize,
    best: Option<String>,
}

impl Search<'_> {
    fn run(&mut self, ranks: Vec<usize>) {
        let ranks = refine(self.g, self.adj, ranks);
        let n = ranks.len();
        if class_count(&ranks) == n {
            self.leaves += 1;
            let s = emit(self.g, self.adj, &ranks, self.opts);
            if self.best.as_ref().is_none_or(|b| s < *b) {
                self.best = Some(s);
            }
            return;
        }
        let mut counts = vec![0usize; n];
        for &r in &ranks {
            counts[r] += 1;
        }
        let cell = (0..n).find(|&r| counts[r] > 1).expect("non-discrete partition");
        let members: Vec<usize> = (0..n).filter(|&i| ranks[i] == cell).collect();
        for (k, &m) in members.iter().enumerate() {
            if k > 0 && self.leaves >= SEARCH_BUDGET {
                break;
            }
            let keys: Vec<(usize, bool)> = (0..n).map(|j| (ranks[j], j != m)).collect();
            self.run(dense_rank(&keys));
        }
    }
}

pub(crate) fn bond_token(g: &CgrGraph, bi: usize) -> String {
    let b = &g.bonds[bi];
    if b.before != b.after {
        return format!("[{}>{}]", b.before.symbol(), b.after.symbol());
    }
    let both_aromatic = g.atoms[b.a].aromatic && g.atoms[b.b].aromatic;
    match b.before {
        BondOrder::Single if both_aromatic => "-".into(),
        BondOrder::Single => String::new(),
        BondOrder::Aromatic if both_aromatic => String::new(),
        BondOrder::Aromatic => ":".into(),
        BondOrder::Double => "=".into(),
        BondOrder::Triple => "#".into(),
        BondOrder::None => unreachable!("static bond cannot be absent on both sides"),
    }
}

fn charge_text(c: i8, zero_as_digit: bool) -> String {
    match c {
        0 if zero_as_digit => "0".into(),
        0 => String::new(),
        1 => "+".into(),
        -1 => "-".into(),
        c if c > 0 => format!("+{c}"),
        c => format!("-{}", -c),
    }
}

pub(crate) fn atom_token(a: &Atom, include_maps: bool) -> String {
    let map = if include_maps { a.map_index } else { None };
    let symbol = if a.aromatic {
        a.element.aromatic_symbol()
    } else {
        a.element.symbol.to_owned()
    };
    let bare = a.element.organic_subset
        && a.explicit_h.is_none()
        && a.charge_before == 0
        && a.charge_after == 0
        && a.isotope.is_none()
        && map.is_none();
    if bare {
        return symbol;
    }
    let mut s = String::from("[");
    if let Some(iso) = a.isotope {
        s.push_str(&iso.to_string());
    }
    s.push_str(&symbol);
    match a.explicit_h.unwrap_or(0) {
        0 => {}
        1 => s.push('H'),
        h => s.push_str(&format!("H{h}")),
    }
    if a.charge_before == a.charge_after {
        s.push_str(&charge_text(a.charge_before, false));
    } else {
        s.push_str(&charge_text(a.charge_before, true));
        s.push('>');
        s.push_str(&charge_text(a.charge_after, true));
    }
    if let Some(m) = map {
        s.push_str(&format!(":{m}"));
    }
    s.push(']');
    s
}

fn ring_label(d: usize) -> String {
    if d < 10 {
        d.to_string()
    } else {
        format!("%{d:02}")
    }
}

/// Writes every component from its lowest-ranked atom, visiting neighbors in
/// rank order. Component strings are sorted before joining.
fn emit(g: &CgrGraph, adj: &Adj, ranks: &[usize], opts: LabelOpts) -> String {
    let n = g.atoms.len();
    let mut sorted_adj: Adj = adj.clone();
    for list in &mut sorted_adj {
        list.sort_by_key(|&(v, _)| ranks[v]);
    }
    let mut by_rank: Vec<usize> = (0..n).collect();
    by_rank.sort_by_key(|&i| ranks[i]);

    let mut st = EmitState {
        visited: vec![false; n],
        order: vec![0; n],
        counter: 0,
        bond_used: vec![false; g.bonds.len()],
        children: vec![Vec::new(); n],
        ring_open: vec![Vec::new(); n],
        ring_close: vec![Vec::new(); n],
    };
    let mut parts = Vec::new();
    for &root in &by_rank {
        if st.visited[root] {
            continue;
        }
        st.walk(&sorted_adj, root, usize::MAX);
        let mut out = String::new();
        let mut digits = DigitPool::default();
        write_atom(g, &st, root, opts, &mut digits, &mut out);
        parts.push(out);
    }
    parts.sort();
    parts.join(".")
}

struct EmitState {
    visited: Vec<bool>,
    order: Vec<usize>,
    counter: usize,
    bond_used: Vec<bool>,
    children: Vec<Vec<(usize, usize)>>,
    ring_open: Vec<Vec<(usize, usize)>>,
    ring_close: Vec<Vec<(usize, usize)>>,
}

impl EmitState {
    fn walk(&mut self, adj: &Adj, u: usize, parent_bond: usize) {
        self.visited[u] = true;
        self.order[u] = self.counter;
        self.counter += 1;
        for &(v, bi) in &adj[u] {
            if bi == parent_bond || self.bond_used[bi] {
                continue;
            }
            self.bond_used[bi] = true;
            if self.visited[v] {
                self.ring_open[v].push((u, bi));
                self.ring_close[u].push((v, bi));
            } else {
                self.children[u].push((v, bi));
                self.walk(adj, v, bi);
            }
        }
    }
}

#[derive(Default)]
struct DigitPool {
    in_use: BTreeSet<usize>,
    assigned: std::collections::HashMap<usize, usize>,
}

impl DigitPool {
    fn take(&mut self, bond: usize) -> usize {
        let d = (1..).find(|d| !self.in_use.contains(d)).expect("unbounded");
        self.in_use.insert(d);
        self.assigned.insert(bond, d);
        d
    }
}

fn write_atom(
    g: &CgrGraph,
    st: &EmitState,
    u: usize,
    opts: LabelOpts,
    digits: &mut DigitPool,
    out: &mut String,
) {
    out.push_str(&atom_token(&g.atoms[u], opts.include_maps));

    let mut closing: Vec<(usize, usize)> = st.ring_close[u].clone();
    closing.sort_by_key(|&(v, _)| st.order[v]);
    let mut freed = Vec::new();
    for &(_, bi) in &closing {
        let d = digits.assigned.remove(&bi).expect("ring opened earlier");
        out.push_str(&ring_label(d));
        freed.push(d);
    }
    let mut opening: Vec<(usize, usize)> = st.ring_open[u].clone();
    opening.sort_by_key(|&(w, _)| st.order[w]);
    for &(_, bi) in &opening {
        let d = digits.take(bi);
        out.push_str(&bond_token(g, bi));
        out.push_str(&ring_label(d));
    }
    for d in freed {
        digits.in_use.remove(&d);
    }

    let kids = &st.children[u];
    for (k, &(v, bi)) in kids.iter().enumerate() {
        let last = k + 1 == kids.len();
        if !last {
            out.push('(');
        }
        out.push_str(&bond_token(g, bi));
        write_atom(g, st, v, opts, digits, out);
        if !last {
            out.push(')');
        }
    }
}
