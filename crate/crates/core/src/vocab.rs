//! Token inventory and corpus ingestion.
//!
//! Tokens are found by longest match: a whole bracket expression (atom or
//! dynamic bond) is one token, as are `Cl`, `Br` and two-digit `%nn` ring
//! labels. Everything else in the grammar alphabet is a single character.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use thiserror::Error;

pub const PAD: u32 = 0;
pub const SOS: u32 = 1;
pub const EOS: u32 = 2;

pub const PAD_TOKEN: &str = "<pad>";
pub const SOS_TOKEN: &str = "<sos>";
pub const EOS_TOKEN: &str = "<eos>";

const SINGLE: &str = "BCNOPSFIbcnops()=#-:.0123456789";

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("line {line}, column {column}: {reason}")]
    Tokenize {
        line: usize,
        column: usize,
        reason: String,
    },
    #[error("corpus has no usable lines")]
    EmptyCorpus,
    #[error("token '{0}' is not in the vocabulary")]
    UnknownToken(String),
    #[error("malformed vocabulary file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Splits one line into tokens. Columns in errors are 1-based.
pub fn tokenize(text: &str) -> Result<Vec<String>, (usize, String)> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let tok: String = match c {
            '[' => {
                let Some(end) = chars[i..].iter().position(|&x| x == ']') else {
                    return Err((i + 1, "unclosed '['".into()));
                };
                if end == 1 {
                    return Err((i + 1, "empty bracket".into()));
                }
                chars[i..=i + end].iter().collect()
            }
            'C' if chars.get(i + 1) == Some(&'l') => "Cl".into(),
            'B' if chars.get(i + 1) == Some(&'r') => "Br".into(),
            '%' => {
                let digits: String = chars.iter().skip(i + 1).take(2).collect();
                if digits.len() != 2 || !digits.chars().all(|d| d.is_ascii_digit()) {
                    return Err((i + 1, "'%' must be followed by two digits".into()));
                }
                format!("%{digits}")
            }
            c if SINGLE.contains(c) => c.to_string(),
            c => return Err((i + 1, format!("unexpected character '{c}'"))),
        };
        i += tok.chars().count();
        out.push(tok);
    }
    Ok(out)
}

/// Token table with the three framing tokens at ids 0, 1, 2 and the rest in
/// sorted order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        let rest: BTreeSet<String> = tokens
            .into_iter()
            .filter(|t| t != PAD_TOKEN && t != SOS_TOKEN && t != EOS_TOKEN)
            .collect();
        let mut all = vec![PAD_TOKEN.to_string(), SOS_TOKEN.to_string(), EOS_TOKEN.to_string()];
        all.extend(rest);
        Self::from_ordered(all)
    }

    fn from_ordered(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { tokens, index }
    }

    /// Vocabulary covering every token of `lines`.
    pub fn build<S: AsRef<str>>(lines: &[S]) -> Result<Self, VocabError> {
        if lines.is_empty() {
            return Err(VocabError::EmptyCorpus);
        }
        let mut seen = BTreeSet::new();
        for (n, line) in lines.iter().enumerate() {
            let toks = tokenize(line.as_ref()).map_err(|(column, reason)| VocabError::Tokenize {
                line: n + 1,
                column,
                reason,
            })?;
            seen.extend(toks);
        }
        Ok(Self::from_tokens(seen))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Token ids of one string, without framing tokens.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>, VocabError> {
        let toks = tokenize(text).map_err(|(column, reason)| VocabError::Tokenize {
            line: 1,
            column,
            reason,
        })?;
        toks.iter()
            .map(|t| self.id(t).ok_or_else(|| VocabError::UnknownToken(t.clone())))
            .collect()
    }

    /// Concatenates payload tokens; framing ids are dropped.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&i| i > EOS)
            .filter_map(|&i| self.token(i))
            .collect()
    }

    /// One token per line, in id order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            let _ = writeln!(s, "{t}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, VocabError> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < 3 || tokens[0] != PAD_TOKEN || tokens[1] != SOS_TOKEN || tokens[2] != EOS_TOKEN {
            return Err(VocabError::Malformed("missing framing tokens".into()));
        }
        let unique: BTreeSet<&String> = tokens.iter().collect();
        if unique.len() != tokens.len() {
            return Err(VocabError::Malformed("duplicate token".into()));
        }
        Ok(Self::from_ordered(tokens))
    }

    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Result of reading a corpus file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub lines: Vec<String>,
    /// Lines dropped for exceeding the length cap.
    pub skipped_long: usize,
}

/// Keeps non-empty, non-comment lines no longer than `max_len` characters.
pub fn read_corpus(text: &str, max_len: usize) -> Corpus {
    let mut corpus = Corpus::default();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.chars().count() > max_len {
            warn!("line {}: {} characters exceeds cap {max_len}, skipped", n + 1, line.chars().count());
            corpus.skipped_long += 1;
            continue;
        }
        corpus.lines.push(line.to_string());
    }
    corpus
}

pub fn load_corpus(path: &Path, max_len: usize) -> Result<Corpus, VocabError> {
    Ok(read_corpus(&std::fs::read_to_string(path)?, max_len))
}

/// Encodes every line, skipping (and logging) those with unknown tokens.
pub fn encode_corpus(vocab: &Vocab, lines: &[String]) -> (Vec<Vec<u32>>, usize) {
    let mut out = Vec::with_capacity(lines.len());
    let mut skipped = 0;
    for (n, line) in lines.iter().enumerate() {
        match vocab.encode(line) {
            Ok(ids) if !ids.is_empty() => out.push(ids),
            Ok(_) => skipped += 1,
            Err(e) => {
                warn!("corpus entry {}: {e}", n + 1);
                skipped += 1;
            }
        }
    }
    (out, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn longest_match_tokens() {
        assert_eq!(tokenize("C[.>-]O").unwrap(), vec!["C", "[.>-]", "O"]);
        assert_eq!(
            tokenize("ClC(Br)[N+>0]%12c1").unwrap(),
            vec!["Cl", "C", "(", "Br", ")", "[N+>0]", "%12", "c", "1"]
        );
    }

    #[test]
    fn tokenize_errors_carry_columns() {
        assert_eq!(tokenize("CC[O").unwrap_err().0, 3);
        assert_eq!(tokenize("CCx").unwrap_err().0, 3);
        assert_eq!(tokenize("C%1").unwrap_err().0, 2);
        match Vocab::build(&["CC", "C?"]) {
            Err(VocabError::Tokenize { line: 2, column: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn framing_ids_and_order() {
        let v = Vocab::build(&["C[.>-]O"]).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<sos>", "<eos>", "C", "O", "[.>-]"]);
        assert_eq!(v.id(PAD_TOKEN), Some(PAD));
        assert_eq!(v.id(SOS_TOKEN), Some(SOS));
        assert_eq!(v.id(EOS_TOKEN), Some(EOS));
        assert!(matches!(Vocab::build::<&str>(&[]), Err(VocabError::EmptyCorpus)));
    }

    #[test]
    fn text_round_trip_is_stable() {
        let v = Vocab::build(&["CCO", "c1ccccc1[->.]Cl"]).unwrap();
        let text = v.to_text();
        let w = Vocab::from_text(&text).unwrap();
        assert_eq!(v, w);
        assert_eq!(w.to_text(), text);
        assert_eq!(Vocab::build(&["c1ccccc1[->.]Cl", "CCO"]).unwrap().to_text(), text);
    }

    #[test]
    fn encode_decode() {
        let v = Vocab::build(&["CC[.>-]O"]).unwrap();
        let ids = v.encode("C[.>-]OC").unwrap();
        assert_eq!(v.decode(&ids), "C[.>-]OC");
        let mut framed = vec![SOS];
        framed.extend(&ids);
        framed.push(EOS);
        assert_eq!(v.decode(&framed), "C[.>-]OC");
        assert!(matches!(v.encode("N"), Err(VocabError::UnknownToken(_))));
    }

    #[test]
    fn corpus_filters_comments_and_long_lines() {
        let text = "# header\nCCO\n\n  O  \nCCCCCCCCCC\n";
        let c = read_corpus(text, 5);
        assert_eq!(c.lines, vec!["CCO", "O"]);
        assert_eq!(c.skipped_long, 1);
    }
}
