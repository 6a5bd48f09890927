use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChemError {
    #[error("syntax error at {position}: {reason}")]
    Syntax { position: usize, reason: String },
    #[error("input of {len} characters exceeds the {max}-character cap")]
    Length { len: usize, max: usize },
    #[error("valence exceeded on atom {atom} ({symbol}): bond sum {bond_sum}")]
    Valence {
        atom: usize,
        symbol: &'static str,
        bond_sum: f64,
    },
    #[error("graph has no dynamic bond or charge")]
    EmptyCenter,
    #[error("fingerprint length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid reaction: {0}")]
    Invalid(String),
}

impl ChemError {
    pub(crate) fn syntax(position: usize, reason: impl Into<String>) -> Self {
        ChemError::Syntax {
            position,
            reason: reason.into(),
        }
    }
}
