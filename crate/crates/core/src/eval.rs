//! Generative metrics over batches of CGRSmiles strings.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chemgraph::{
    contains_oo, fingerprint, parse_cgrsmiles_with, rc_hash, reaction_center, side_molecules, tanimoto,
    to_reaction_smiles, validate, write_cgrsmiles, CgrGraph, Fingerprint, ReactionCenterKey, Side,
    DEFAULT_MAX_LEN, DEFAULT_RC_RADIUS,
};
use crate::tensor::Rng;

pub const HISTOGRAM_BINS: usize = 20;
pub const BIN_WIDTH: f64 = 1.0 / HISTOGRAM_BINS as f64;
pub const DEFAULT_PAIR_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{0}")]
    Mode(String),
}

/// One string after parsing and validation.
#[derive(Debug, Clone)]
pub struct Judged {
    pub text: String,
    pub graph: Option<CgrGraph>,
    pub h_balance: i64,
}

impl Judged {
    pub fn is_valid(&self) -> bool {
        self.graph.is_some()
    }
}

fn judge(text: &str, max_len: usize) -> Judged {
    let (graph, h_balance) = match parse_cgrsmiles_with(text, max_len) {
        Ok(g) => {
            let report = validate(&g);
            if report.is_valid() {
                (Some(g), report.h_balance)
            } else {
                (None, report.h_balance)
            }
        }
        Err(_) => (None, 0),
    };
    Judged {
        text: text.to_string(),
        graph,
        h_balance,
    }
}

fn par_map<I: Sync, O: Send>(items: &[I], f: impl Fn(&I) -> O + Sync) -> Vec<O> {
    let workers = thread::available_parallelism().map_or(1, |n| n.get());
    if workers < 2 || items.len() < 256 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// Parses and validates every string, in input order.
pub fn judge_all<S: AsRef<str> + Sync>(strings: &[S], max_len: usize) -> Vec<Judged> {
    par_map(strings, |s| judge(s.as_ref(), max_len))
}

/// Valid graphs and the percentage of inputs they represent. `None` for an
/// empty input.
pub fn compute_validity<S: AsRef<str> + Sync>(strings: &[S]) -> (Vec<CgrGraph>, Option<f64>) {
    let judged = judge_all(strings, DEFAULT_MAX_LEN);
    let valid: Vec<CgrGraph> = judged.into_iter().filter_map(|j| j.graph).collect();
    let pct = percent(valid.len(), strings.len());
    (valid, pct)
}

fn percent(part: usize, whole: usize) -> Option<f64> {
    (whole > 0).then(|| 100.0 * part as f64 / whole as f64)
}

/// Percentage of canonically distinct graphs among `valid`.
pub fn compute_uniqueness(valid: &[CgrGraph]) -> Option<f64> {
    let forms: HashSet<String> = par_map(valid, write_cgrsmiles).into_iter().collect();
    percent(forms.len(), valid.len())
}

/// Reaction-center keys of all graphs that have a center.
pub fn rc_key_set(graphs: &[CgrGraph], radius: usize) -> BTreeSet<ReactionCenterKey> {
    par_map(graphs, |g| reaction_center(g, radius).ok().map(|c| rc_hash(&c)))
        .into_iter()
        .flatten()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RcStats {
    pub distinct: usize,
    pub novel: usize,
}

impl RcStats {
    pub fn from_keys<K: Ord>(generated: &BTreeSet<K>, reference: &BTreeSet<K>) -> Self {
        RcStats {
            distinct: generated.len(),
            novel: generated.difference(reference).count(),
        }
    }
}

pub fn rc_stats(generated: &[CgrGraph], reference: &[CgrGraph], radius: usize) -> RcStats {
    RcStats::from_keys(&rc_key_set(generated, radius), &rc_key_set(reference, radius))
}

/// Percentage of reactions with molecular oxygen among the reactants.
pub fn oxidation_fraction(valid: &[CgrGraph]) -> Option<f64> {
    let hits = valid
        .iter()
        .filter(|g| contains_oo(&side_molecules(g, Side::Before)))
        .count();
    percent(hits, valid.len())
}

/// Percentage of reactions whose reactant and product sides are the same
/// set of molecules.
pub fn copy_error_fraction(valid: &[CgrGraph]) -> Option<f64> {
    let hits = valid
        .iter()
        .filter(|g| matches!(to_reaction_smiles(g, false), Ok((r, p)) if r == p))
        .count();
    percent(hits, valid.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TanimotoMode {
    InternalPairwise,
    NearestToDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TanimotoReport {
    pub mode: TanimotoMode,
    pub n_molecules: usize,
    #[serde(skip)]
    pub scores: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    pub histogram: Vec<usize>,
}

/// Counts over `HISTOGRAM_BINS` equal bins on [0, 1]; 1.0 lands in the last.
pub fn histogram(scores: &[f64]) -> Vec<usize> {
    let mut bins = vec![0; HISTOGRAM_BINS];
    for &s in scores {
        let i = ((s / BIN_WIDTH).floor() as usize).min(HISTOGRAM_BINS - 1);
        bins[i] += 1;
    }
    bins
}

/// Fingerprints of every molecule on both sides of each reaction.
pub fn molecule_fingerprints(graphs: &[CgrGraph]) -> Vec<Fingerprint> {
    par_map(graphs, |g| {
        [Side::Before, Side::After]
            .into_iter()
            .flat_map(|side| side_molecules(g, side))
            .map(|m| fingerprint(&m))
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

fn sim(a: &Fingerprint, b: &Fingerprint) -> f64 {
    tanimoto(a, b).expect("fingerprints share one width")
}

/// Similarity distribution of the molecules in `generated`. Internal mode
/// scores all pairs, or `pair_cap` random pairs when there are more.
pub fn in_context_tanimoto(
    generated: &[CgrGraph],
    mode: TanimotoMode,
    dataset: Option<&[CgrGraph]>,
    pair_cap: usize,
    seed: u64,
) -> Result<TanimotoReport, EvalError> {
    let fps = molecule_fingerprints(generated);
    let scores = match mode {
        TanimotoMode::InternalPairwise => {
            let n = fps.len();
            let pairs = n * n.saturating_sub(1) / 2;
            if pairs <= pair_cap {
                (0..n)
                    .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                    .map(|(i, j)| sim(&fps[i], &fps[j]))
                    .collect()
            } else {
                let mut rng = Rng::new(seed, 0);
                (0..pair_cap)
                    .map(|_| {
                        let i = rng.below(n);
                        let j = (i + 1 + rng.below(n - 1)) % n;
                        sim(&fps[i], &fps[j])
                    })
                    .collect()
            }
        }
        TanimotoMode::NearestToDataset => {
            let dataset =
                dataset.ok_or_else(|| EvalError::Mode("nearest_to_dataset needs a reference dataset".into()))?;
            let reference: Vec<Fingerprint> = molecule_fingerprints(dataset)
                .into_iter()
                .collect::<HashSet<_>>()
                .into_iter()
                .collect();
            if reference.is_empty() {
                return Err(EvalError::Mode("reference dataset has no molecules".into()));
            }
            par_map(&fps, |f| reference.iter().map(|r| sim(f, r)).fold(0.0, f64::max))
        }
    };
    let mean = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
    Ok(TanimotoReport {
        mode,
        n_molecules: fps.len(),
        histogram: histogram(&scores),
        mean,
        scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub radius: usize,
    pub max_len: usize,
    pub pair_cap: usize,
    pub seed: u64,
    /// Skip the similarity distributions.
    pub skip_tanimoto: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            radius: DEFAULT_RC_RADIUS,
            max_len: DEFAULT_MAX_LEN,
            pair_cap: DEFAULT_PAIR_CAP,
            seed: 0,
            skip_tanimoto: false,
        }
    }
}

/// Summary of one batch of generated strings. Percentages are absent when
/// their denominator is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub n_generated: usize,
    pub n_valid: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid_pct: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unique_pct: Option<f64>,
    pub unique_denominator: String,
    pub rc_radius: usize,
    pub n_rc_distinct: usize,
    pub n_rc_novel: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oxidation_pct: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub copy_error_pct: Option<f64>,
    /// Valid reactions per hydrogen balance (after minus before).
    pub h_balance: BTreeMap<String, usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tanimoto_internal: Option<TanimotoReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tanimoto_nearest: Option<TanimotoReport>,
}

impl GenerationReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

pub fn build_report<S: AsRef<str> + Sync>(
    strings: &[S],
    reference: &[CgrGraph],
    opts: &ReportOptions,
) -> GenerationReport {
    let judged = judge_all(strings, opts.max_len);
    let mut h_counts: BTreeMap<i64, usize> = BTreeMap::new();
    for j in judged.iter().filter(|j| j.is_valid()) {
        *h_counts.entry(j.h_balance).or_default() += 1;
    }
    let valid: Vec<CgrGraph> = judged.into_iter().filter_map(|j| j.graph).collect();
    let rc = rc_stats(&valid, reference, opts.radius);
    let tanimoto = |mode, data| {
        (!opts.skip_tanimoto && !valid.is_empty())
            .then(|| in_context_tanimoto(&valid, mode, data, opts.pair_cap, opts.seed).ok())
            .flatten()
    };
    let reference_opt = (!reference.is_empty()).then_some(reference);
    GenerationReport {
        n_generated: strings.len(),
        n_valid: valid.len(),
        valid_pct: percent(valid.len(), strings.len()),
        unique_pct: compute_uniqueness(&valid),
        unique_denominator: "valid".into(),
        rc_radius: opts.radius,
        n_rc_distinct: rc.distinct,
        n_rc_novel: rc.novel,
        oxidation_pct: oxidation_fraction(&valid),
        copy_error_pct: copy_error_fraction(&valid),
        h_balance: h_counts.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        tanimoto_internal: tanimoto(TanimotoMode::InternalPairwise, None),
        tanimoto_nearest: reference_opt.and_then(|r| tanimoto(TanimotoMode::NearestToDataset, Some(r))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chemgraph::parse_cgrsmiles;

    fn graphs(s: &[&str]) -> Vec<CgrGraph> {
        s.iter().map(|t| parse_cgrsmiles(t).unwrap()).collect()
    }

    #[test]
    fn validity_mixed_set() {
        let (valid, pct) = compute_validity(&["O", "C[.>-]O", "C(C)(C)(C)(C)C", "((("]);
        assert_eq!(valid.len(), 2);
        assert_eq!(pct, Some(50.0));
        let (valid, pct) = compute_validity::<&str>(&[]);
        assert!(valid.is_empty());
        assert_eq!(pct, None);
    }

    #[test]
    fn uniqueness_counts_duplicates() {
        let pct = compute_uniqueness(&graphs(&["O", "O", "C"])).unwrap();
        assert!((pct - 200.0 / 3.0).abs() < 1e-9);
        assert_eq!(compute_uniqueness(&graphs(&["CCO", "OCC"])), Some(50.0));
        assert_eq!(compute_uniqueness(&graphs(&["CCO", "CCN"])), Some(100.0));
        assert_eq!(compute_uniqueness(&[]), None);
    }

    #[test]
    fn rc_set_arithmetic() {
        let gen: BTreeSet<char> = ['a', 'b', 'c'].into();
        let reference: BTreeSet<char> = ['b'].into();
        assert_eq!(RcStats::from_keys(&gen, &reference), RcStats { distinct: 3, novel: 2 });
        let g = graphs(&["C[.>-]O", "CC[.>-]O", "C[->.]O"]);
        let s = rc_stats(&g, &g[..1], 1);
        assert_eq!(s, rc_stats(&g, &g[..1], 1));
        assert_eq!(s.novel + 1, s.distinct);
        assert_eq!(rc_stats(&g[..1], &g, 1).novel, 0);
    }

    #[test]
    fn oxidation_and_copies() {
        let g = graphs(&["O=O.C[.>-]O", "C[.>-]O"]);
        assert_eq!(oxidation_fraction(&g), Some(50.0));
        assert_eq!(oxidation_fraction(&g[1..]), Some(0.0));
        let g = graphs(&["CCO", "C[.>-]O"]);
        assert_eq!(copy_error_fraction(&g), Some(50.0));
    }

    #[test]
    fn histogram_edges() {
        let h = histogram(&[0.0, 0.049, 0.05, 1.0, 0.999]);
        assert_eq!(h.len(), 20);
        assert_eq!(h[0], 2);
        assert_eq!(h[1], 1);
        assert_eq!(h[19], 2);
    }

    #[test]
    fn tanimoto_extremes() {
        let same = graphs(&["c1ccccc1O", "c1ccccc1O", "c1ccccc1O"]);
        let r = in_context_tanimoto(&same, TanimotoMode::InternalPairwise, None, 100, 0).unwrap();
        assert_eq!(r.mean, Some(1.0));
        assert_eq!(r.n_molecules, 6);
        assert_eq!(r.scores.len(), 15);
        let capped = in_context_tanimoto(&same, TanimotoMode::InternalPairwise, None, 2, 0).unwrap();
        assert_eq!(capped.scores.len(), 2);
        let near = in_context_tanimoto(&graphs(&["CCO"]), TanimotoMode::NearestToDataset, Some(&graphs(&["C.CCO"])), 10, 0)
            .unwrap();
        assert_eq!(near.mean, Some(1.0));
        assert!(matches!(
            in_context_tanimoto(&same, TanimotoMode::NearestToDataset, None, 10, 0),
            Err(EvalError::Mode(_))
        ));
    }

    #[test]
    fn report_round_trip() {
        let lines = ["O=O.C[.>-]O", "CCO", "CCO", "(((", "C(C)(C)(C)(C)C"];
        let reference = graphs(&["C[.>-]O"]);
        let r = build_report(&lines, &reference, &ReportOptions::default());
        assert_eq!(r.n_generated, 5);
        assert_eq!(r.n_valid, 3);
        assert_eq!(r.valid_pct, Some(60.0));
        // the oxygen molecule is disconnected, so the center matches the reference
        assert_eq!(r.n_rc_distinct, 1);
        assert_eq!(r.n_rc_novel, 0);
        assert_eq!(r.h_balance.values().sum::<usize>(), 3);
        let text = r.to_toml();
        let mut back = GenerationReport::from_toml(&text).unwrap();
        for t in [&mut back.tanimoto_internal, &mut back.tanimoto_nearest].into_iter().flatten() {
            assert!(t.scores.is_empty());
        }
        assert_eq!(back.to_toml(), text);
        assert_eq!(build_report(&lines, &reference, &ReportOptions::default()), r);
        let empty = build_report::<&str>(&[], &[], &ReportOptions::default());
        assert_eq!(empty.valid_pct, None);
        assert!(!empty.to_toml().contains("valid_pct"));
    }
}
