//! Circular (Morgan-style) fingerprints folded into 2048 bits.

use super::error::ChemError;
use super::graph::MolGraph;
use super::valence::implicit_hydrogens;

pub const FP_BITS: usize = 2048;
pub const FP_RADIUS: usize = 2;

const WORDS: usize = FP_BITS / 64;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    words: Vec<u64>,
    pub radius: usize,
}

impl Fingerprint {
    pub fn empty(bits: usize) -> Self {
        Fingerprint {
            words: vec![0; bits.div_ceil(64)],
            radius: FP_RADIUS,
        }
    }

    pub fn from_words(words: Vec<u64>) -> Self {
        Fingerprint {
            words,
            radius: FP_RADIUS,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len() * 64
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn set(&mut self, bit: usize) {
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }
}

fn mix(h: u64, x: u64) -> u64 {
    (h ^ x).wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(29)
}

fn finish(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_seq(seed: u64, items: impl IntoIterator<Item = u64>) -> u64 {
    finish(items.into_iter().fold(seed, mix))
}

/// Radius-2 circular environments hashed into a 2048-bit set. Atom
/// invariants: element, aromaticity, charge, heavy degree, hydrogen count,
/// isotope.
pub fn fingerprint(m: &MolGraph) -> Fingerprint {
    let mut fp = Fingerprint::empty(FP_BITS);
    let adj = m.adjacency();
    let mut ids: Vec<u64> = m
        .atoms
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let h = implicit_hydrogens(m, i).unwrap_or(0);
            hash_seq(
                0x5eed,
                [
                    u64::from(a.element.atomic_number),
                    u64::from(a.aromatic),
                    (i64::from(a.charge) + 8) as u64,
                    adj[i].len() as u64,
                    u64::from(h),
                    u64::from(a.isotope.unwrap_or(0)),
                ],
            )
        })
        .collect();
    for &id in &ids {
        fp.set((id % FP_BITS as u64) as usize);
    }
    for round in 1..=FP_RADIUS {
        let next: Vec<u64> = (0..ids.len())
            .map(|i| {
                let mut env: Vec<(u64, u64)> = adj[i]
                    .iter()
                    .map(|&(v, o)| (u64::from(o.code()), ids[v]))
                    .collect();
                env.sort_unstable();
                hash_seq(
                    ids[i] ^ round as u64,
                    env.into_iter().flat_map(|(o, id)| [o, id]),
                )
            })
            .collect();
        ids = next;
        for &id in &ids {
            fp.set((id % FP_BITS as u64) as usize);
        }
    }
    debug_assert_eq!(fp.words.len(), WORDS);
    fp
}

/// |a ∧ b| / |a ∨ b|; 1.0 when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, ChemError> {
    if a.len() != b.len() {
        return Err(ChemError::LengthMismatch(a.len(), b.len()));
    }
    let (mut inter, mut union) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(f64::from(inter) / f64::from(union))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chemgraph::graph::{project, Side};
    use crate::chemgraph::parse::parse_cgrsmiles;

    fn mol(s: &str) -> MolGraph {
        project(&parse_cgrsmiles(s).unwrap(), Side::Before)
    }

    #[test]
    fn deterministic_and_nonempty() {
        let a = fingerprint(&mol("CCO"));
        assert_eq!(a, fingerprint(&mol("CCO")));
        assert_eq!(a, fingerprint(&mol("OCC")));
        assert!(a.count_ones() >= 1);
    }

    #[test]
    fn methane_vs_water() {
        let t = tanimoto(&fingerprint(&mol("C")), &fingerprint(&mol("O"))).unwrap();
        // Frozen from a one-off run: the two fingerprints share no bits.
        assert_eq!(t, 0.0);
        assert!(t < 0.05);
    }

    #[test]
    fn identity_and_disjoint() {
        let a = fingerprint(&mol("c1ccccc1O"));
        assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
        let mut x = Fingerprint::empty(FP_BITS);
        let mut y = Fingerprint::empty(FP_BITS);
        x.set(3);
        y.set(4);
        assert_eq!(tanimoto(&x, &y).unwrap(), 0.0);
        let e = Fingerprint::empty(FP_BITS);
        assert_eq!(tanimoto(&e, &e).unwrap(), 1.0);
    }

    #[test]
    fn length_mismatch() {
        let a = Fingerprint::empty(64);
        let b = Fingerprint::empty(128);
        assert_eq!(tanimoto(&a, &b), Err(ChemError::LengthMismatch(64, 128)));
    }

    #[test]
    fn similar_molecules_score_higher() {
        let ethanol = fingerprint(&mol("CCO"));
        let propanol = fingerprint(&mol("CCCO"));
        let benzene = fingerprint(&mol("c1ccccc1"));
        let near = tanimoto(&ethanol, &propanol).unwrap();
        let far = tanimoto(&ethanol, &benzene).unwrap();
        assert!(near > far, "{near} vs {far}");
    }
}
