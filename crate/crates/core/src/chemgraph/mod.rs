//! Condensed graphs of reaction: parsing, canonical writing, validity
//! checks, reaction-center hashing, and fingerprint similarity.

mod canon;
mod element;
mod error;
mod fingerprint;
mod graph;
mod parse;
mod reaction;
mod valence;

pub use canon::{canonical_string, write_cgrsmiles};
pub use element::{Element, ELEMENTS};
pub use error::ChemError;
pub use fingerprint::{fingerprint, tanimoto, Fingerprint, FP_BITS, FP_RADIUS};
pub use graph::{project, Atom, Bond, BondOrder, CgrGraph, MolAtom, MolGraph, Side};
pub use parse::{parse_cgrsmiles, parse_cgrsmiles_with, DEFAULT_MAX_LEN};
pub use reaction::{
    contains_oo, fnv1a64, mol_smiles, rc_hash, reaction_center, side_molecules,
    to_reaction_smiles, ReactionCenterKey, DEFAULT_RC_RADIUS,
};
pub use valence::{implicit_hydrogens, validate, validate_str, ValidityReport};
