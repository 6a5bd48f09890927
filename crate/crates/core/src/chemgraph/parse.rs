//! Reader for the condensed-reaction string grammar.
//!
//! The grammar is SMILES with two extensions:
//!
//! * dynamic bonds written as `[x>y]` with `x`, `y` drawn from `. - = # :`
//!   (`.` meaning "no bond on that side"), e.g. `C[.>-]O`;
//! * dynamic charges inside atom brackets written as `c1>c2`, e.g. `[N+>0]`.
//!
//! Ring-closure digits `0-9` and `%nn`, branches, and top-level `.`
//! component separators follow ordinary SMILES rules.

use std::collections::{BTreeMap, HashSet};

use super::element::Element;
use super::error::ChemError;
use super::graph::{Atom, Bond, BondOrder, CgrGraph};

pub const DEFAULT_MAX_LEN: usize = 156;

type BondPair = (BondOrder, BondOrder);

pub fn parse_cgrsmiles(text: &str) -> Result<CgrGraph, ChemError> {
    parse_cgrsmiles_with(text, DEFAULT_MAX_LEN)
}

pub fn parse_cgrsmiles_with(text: &str, max_len: usize) -> Result<CgrGraph, ChemError> {
    let len = text.chars().count();
    if len == 0 {
        return Err(ChemError::syntax(0, "empty input"));
    }
    if len > max_len {
        return Err(ChemError::Length { len, max: max_len });
    }
    if !text.is_ascii() {
        let pos = text.chars().position(|c| !c.is_ascii()).unwrap_or(0);
        return Err(ChemError::syntax(pos, "non-ASCII character"));
    }
    Parser::new(text).run()
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    pairs: HashSet<(usize, usize)>,
    prev: Option<usize>,
    pending: Option<(BondPair, usize)>,
    branches: Vec<(usize, usize)>,
    rings: BTreeMap<u16, (usize, Option<BondPair>, usize)>,
    text: &'a str,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            s: text.as_bytes(),
            pos: 0,
            atoms: Vec::new(),
            bonds: Vec::new(),
            pairs: HashSet::new(),
            prev: None,
            pending: None,
            branches: Vec::new(),
            rings: BTreeMap::new(),
            text,
        }
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn peek_at(&self, off: usize) -> Option<u8> {
        self.s.get(self.pos + off).copied()
    }

    fn err<T>(&self, pos: usize, reason: impl Into<String>) -> Result<T, ChemError> {
        Err(ChemError::syntax(pos, reason))
    }

    fn run(mut self) -> Result<CgrGraph, ChemError> {
        while let Some(c) = self.peek() {
            let start = self.pos;
            match c {
                b'(' => {
                    let Some(p) = self.prev else {
                        return self.err(start, "branch without a preceding atom");
                    };
                    if self.pending.is_some() {
                        return self.err(start, "bond symbol before branch");
                    }
                    if self.peek_at(1) == Some(b')') {
                        return self.err(start, "empty branch");
                    }
                    self.branches.push((p, start));
                    self.pos += 1;
                }
                b')' => {
                    if let Some((_, at)) = self.pending {
                        return self.err(at, "dangling bond");
                    }
                    let Some((p, _)) = self.branches.pop() else {
                        return self.err(start, "unmatched ')'");
                    };
                    self.prev = Some(p);
                    self.pos += 1;
                }
                b'.' => {
                    if !self.branches.is_empty() {
                        return self.err(start, "component separator inside a branch");
                    }
                    if self.prev.is_none() {
                        return self.err(start, "empty component");
                    }
                    if let Some((_, at)) = self.pending {
                        return self.err(at, "dangling bond");
                    }
                    self.prev = None;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' => {
                    let o = BondOrder::from_symbol(c as char).expect("bond symbol");
                    self.set_pending((o, o), start)?;
                    self.pos += 1;
                }
                b'[' => {
                    if matches!(self.peek_at(1), Some(b'.' | b'-' | b'=' | b'#' | b':')) {
                        let pair = self.dynamic_bond()?;
                        self.set_pending(pair, start)?;
                    } else {
                        let atom = self.bracket_atom()?;
                        self.add_atom(atom, start)?;
                    }
                }
                b'0'..=b'9' | b'%' => self.ring_closure()?,
                b'A'..=b'Z' | b'a'..=b'z' => {
                    let atom = self.organic_atom()?;
                    self.add_atom(atom, start)?;
                }
                _ => return self.err(start, format!("unknown token '{}'", c as char)),
            }
        }
        if let Some((_, at)) = self.pending {
            return self.err(at, "dangling bond");
        }
        if let Some(&(_, at)) = self.branches.last() {
            return self.err(at, "unclosed branch");
        }
        if let Some((_, &(_, _, at))) = self.rings.iter().next() {
            return self.err(at, "unclosed ring");
        }
        if self.prev.is_none() {
            return self.err(self.s.len(), "empty component");
        }
        Ok(CgrGraph {
            atoms: self.atoms,
            bonds: self.bonds,
            source_text: self.text.to_owned(),
        })
    }

    fn set_pending(&mut self, pair: BondPair, at: usize) -> Result<(), ChemError> {
        if self.prev.is_none() {
            return self.err(at, "bond without a preceding atom");
        }
        if self.pending.is_some() {
            return self.err(at, "consecutive bond symbols");
        }
        self.pending = Some((pair, at));
        Ok(())
    }

    fn dynamic_bond(&mut self) -> Result<BondPair, ChemError> {
        let start = self.pos;
        let tok = self.s.get(start..start + 5);
        let parsed = tok.and_then(|t| {
            if t[0] != b'[' || t[2] != b'>' || t[4] != b']' {
                return None;
            }
            Some((
                BondOrder::from_symbol(t[1] as char)?,
                BondOrder::from_symbol(t[3] as char)?,
            ))
        });
        match parsed {
            Some((BondOrder::None, BondOrder::None)) => self.err(start, "bond absent on both sides"),
            Some(pair) => {
                self.pos += 5;
                Ok(pair)
            }
            None => self.err(start, "malformed dynamic bond"),
        }
    }

    fn default_order(&self, a: usize, b: usize) -> BondOrder {
        if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn add_bond(&mut self, a: usize, b: usize, pair: BondPair, at: usize) -> Result<(), ChemError> {
        if a == b {
            return self.err(at, "atom bonded to itself");
        }
        let key = (a.min(b), a.max(b));
        if !self.pairs.insert(key) {
            return self.err(at, "duplicate bond");
        }
        self.bonds.push(Bond {
            a,
            b,
            before: pair.0,
            after: pair.1,
        });
        Ok(())
    }

    fn add_atom(&mut self, atom: Atom, at: usize) -> Result<(), ChemError> {
        self.atoms.push(atom);
        let idx = self.atoms.len() - 1;
        if let Some(p) = self.prev {
            let pair = match self.pending.take() {
                Some((pair, _)) => pair,
                None => {
                    let o = self.default_order(p, idx);
                    (o, o)
                }
            };
            self.add_bond(p, idx, pair, at)?;
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn ring_closure(&mut self) -> Result<(), ChemError> {
        let start = self.pos;
        let Some(cur) = self.prev else {
            return self.err(start, "ring closure without a preceding atom");
        };
        let label = if self.peek() == Some(b'%') {
            match (self.peek_at(1), self.peek_at(2)) {
                (Some(d1 @ b'0'..=b'9'), Some(d2 @ b'0'..=b'9')) => {
                    self.pos += 3;
                    u16::from(d1 - b'0') * 10 + u16::from(d2 - b'0')
                }
                _ => return self.err(start, "'%' must be followed by two digits"),
            }
        } else {
            self.pos += 1;
            u16::from(self.s[start] - b'0')
        };
        let bond = self.pending.take().map(|(p, _)| p);
        match self.rings.remove(&label) {
            Some((other, open_bond, _)) => {
                let pair = match (open_bond, bond) {
                    (Some(x), Some(y)) if x != y => {
                        return self.err(start, "conflicting ring-closure bonds");
                    }
                    (Some(x), _) | (None, Some(x)) => x,
                    (None, None) => {
                        let o = self.default_order(other, cur);
                        (o, o)
                    }
                };
                self.add_bond(other, cur, pair, start)?;
            }
            None => {
                self.rings.insert(label, (cur, bond, start));
            }
        }
        Ok(())
    }

    fn organic_atom(&mut self) -> Result<Atom, ChemError> {
        let start = self.pos;
        let c = self.s[start];
        let two = self.peek_at(1);
        let (symbol, aromatic, width) = match (c, two) {
            (b'C', Some(b'l')) => ("Cl", false, 2),
            (b'B', Some(b'r')) => ("Br", false, 2),
            (b'B' | b'C' | b'N' | b'O' | b'P' | b'S' | b'F' | b'I', _) => {
                (&self.text[start..start + 1], false, 1)
            }
            (b'b' | b'c' | b'n' | b'o' | b'p' | b's', _) => (&self.text[start..start + 1], true, 1),
            _ => return self.err(start, format!("unknown atom '{}'", c as char)),
        };
        let element = if aromatic {
            Element::by_symbol(&symbol.to_ascii_uppercase())
        } else {
            Element::by_symbol(symbol)
        }
        .expect("organic subset is registered");
        self.pos += width;
        let mut atom = Atom::new(element);
        atom.aromatic = aromatic;
        Ok(atom)
    }

    fn number(&mut self) -> Option<u32> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if self.pos == start {
            return None;
        }
        self.text[start..self.pos].parse().ok()
    }

    fn bracket_atom(&mut self) -> Result<Atom, ChemError> {
        let open = self.pos;
        self.pos += 1;
        let isotope = match self.number() {
            Some(0) => return self.err(open + 1, "isotope must be positive"),
            Some(n) => Some(u16::try_from(n).or_else(|_| self.err(open + 1, "isotope too large"))?),
            None => None,
        };
        let sym_at = self.pos;
        let (element, aromatic) = self.bracket_symbol()?;
        if aromatic && !element.aromatic_capable {
            return self.err(sym_at, format!("{} cannot be aromatic", element.symbol));
        }
        let mut explicit_h = 0u8;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            explicit_h = match self.number() {
                Some(n) if n <= 8 => n as u8,
                Some(_) => return self.err(self.pos, "hydrogen count too large"),
                None => 1,
            };
        }
        let charge_at = self.pos;
        let first = self.charge_spec(true)?;
        let (before, after) = if self.peek() == Some(b'>') {
            self.pos += 1;
            let second = self.charge_spec(true)?;
            if second.is_none() {
                return self.err(self.pos, "missing product-side charge");
            }
            (first.unwrap_or(0), second.unwrap_or(0))
        } else {
            if self.s.get(charge_at) == Some(&b'0') {
                return self.err(charge_at, "neutral charge marker outside a dynamic charge");
            }
            let c = first.unwrap_or(0);
            (c, c)
        };
        if before.abs() > 4 || after.abs() > 4 {
            return self.err(charge_at, "charge magnitude above 4");
        }
        let mut map_index = None;
        if self.peek() == Some(b':') {
            self.pos += 1;
            match self.number() {
                Some(n) if n > 0 => map_index = Some(n),
                _ => return self.err(self.pos, "atom map index must be a positive integer"),
            }
        }
        if self.peek() != Some(b']') {
            return self.err(self.pos, "expected ']' closing bracket atom");
        }
        self.pos += 1;
        Ok(Atom {
            element,
            aromatic,
            explicit_h: Some(explicit_h),
            charge_before: before,
            charge_after: after,
            isotope,
            map_index,
        })
    }

    fn bracket_symbol(&mut self) -> Result<(&'static Element, bool), ChemError> {
        let start = self.pos;
        let Some(c) = self.peek() else {
            return self.err(start, "unterminated bracket atom");
        };
        if c.is_ascii_lowercase() {
            for (sym, w) in [("se", 2), ("as", 2), ("te", 2)] {
                if self.s.get(start..start + w) == Some(sym.as_bytes()) {
                    self.pos += w;
                    let e = Element::by_symbol(&capitalize(sym)).expect("registered");
                    return Ok((e, true));
                }
            }
            if matches!(c, b'b' | b'c' | b'n' | b'o' | b'p' | b's') {
                self.pos += 1;
                let e = Element::by_symbol(&(c as char).to_ascii_uppercase().to_string())
                    .expect("registered");
                return Ok((e, true));
            }
            return self.err(start, "unknown aromatic symbol");
        }
        if !c.is_ascii_uppercase() {
            return self.err(start, "expected element symbol");
        }
        if let Some(n) = self.peek_at(1).filter(u8::is_ascii_lowercase) {
            let sym = format!("{}{}", c as char, n as char);
            if let Some(e) = Element::by_symbol(&sym) {
                self.pos += 2;
                return Ok((e, false));
            }
        }
        match Element::by_symbol(&(c as char).to_string()) {
            Some(e) => {
                self.pos += 1;
                Ok((e, false))
            }
            None => self.err(start, "unknown element"),
        }
    }

    /// `+`, `++`, `+2`, `-`, `--`, `-3`, or `0` (neutral, dynamic form only).
    fn charge_spec(&mut self, allow_zero: bool) -> Result<Option<i8>, ChemError> {
        let start = self.pos;
        match self.peek() {
            Some(b'0') if allow_zero => {
                self.pos += 1;
                Ok(Some(0))
            }
            Some(sign @ (b'+' | b'-')) => {
                self.pos += 1;
                let unit: i32 = if sign == b'+' { 1 } else { -1 };
                let mut mag = 1i32;
                if let Some(n) = self.number() {
                    mag = i32::try_from(n).unwrap_or(i32::MAX);
                } else {
                    while self.peek() == Some(sign) {
                        self.pos += 1;
                        mag += 1;
                    }
                }
                if mag > 4 {
                    return self.err(start, "charge magnitude above 4");
                }
                Ok(Some((unit * mag) as i8))
            }
            _ => Ok(None),
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_ascii_uppercase().to_string() + c.as_str(),
        None => String::new(),
    }
}
