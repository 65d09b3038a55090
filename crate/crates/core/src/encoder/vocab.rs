//! Vocabulary and whitespace tokenization for the synthetic corpus.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

/// Token id width used everywhere (vocabularies stay far below u32::MAX).
pub type TokenId = u32;

pub const CLS: TokenId = 0;
pub const SEP: TokenId = 1;
pub const MASK: TokenId = 2;
pub const PAD: TokenId = 3;
pub const OOV: TokenId = 4;

/// The first five lines of every vocabulary file, in fixed order.
pub const SPECIAL_TOKENS: [&str; 5] = ["[CLS]", "[SEP]", "[MASK]", "[PAD]", "[OOV]"];

/// Maximum query length in tokens after truncation.
pub const QUERY_TOKEN_CAP: usize = 30;
/// Maximum passage length in tokens after truncation.
pub const PASSAGE_TOKEN_CAP: usize = 200;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("duplicate token {token:?} at line {line}")]
    DuplicateToken { token: String, line: usize },
    #[error("vocabulary file must start with the special tokens {SPECIAL_TOKENS:?}; line {line} is {got:?}")]
    BadSpecial { line: usize, got: String },
    #[error("vocabulary file too short: {len} lines, need at least {}", SPECIAL_TOKENS.len())]
    TooShort { len: usize },
    #[error("text is empty after tokenization")]
    EmptyText,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Token-to-id map. Special tokens occupy ids 0..5 in fixed order.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    token_to_id: HashMap<String, TokenId>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Build from regular tokens; the special tokens are prepended.
    pub fn new<I, T>(tokens: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = T>,
        T: Into<String>,
    {
        let mut v = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for s in SPECIAL_TOKENS {
            v.push(s.to_string())?;
        }
        for t in tokens {
            v.push(t.into())?;
        }
        Ok(v)
    }

    fn push(&mut self, token: String) -> Result<(), VocabError> {
        if self.token_to_id.contains_key(&token) {
            return Err(VocabError::DuplicateToken {
                line: self.id_to_token.len() + 1,
                token,
            });
        }
        let id = self.id_to_token.len() as TokenId;
        self.token_to_id.insert(token.clone(), id);
        self.id_to_token.push(token);
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    /// Case-folded lookup; unknown tokens map to [`OOV`].
    pub fn id(&self, token: &str) -> TokenId {
        let folded = token.to_lowercase();
        self.token_to_id.get(folded.as_str()).copied().unwrap_or(OOV)
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.id_to_token[id as usize]
    }

    /// One token per line, line number = id.
    pub fn write_file(&self, path: &Path) -> Result<(), VocabError> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        for t in &self.id_to_token {
            writeln!(out, "{t}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self, VocabError> {
        let text = fs::read_to_string(path)?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < SPECIAL_TOKENS.len() {
            return Err(VocabError::TooShort { len: lines.len() });
        }
        for (i, expect) in SPECIAL_TOKENS.iter().enumerate() {
            if lines[i] != *expect {
                return Err(VocabError::BadSpecial {
                    line: i + 1,
                    got: lines[i].to_string(),
                });
            }
        }
        let mut v = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for line in lines {
            v.push(line.to_string())?;
        }
        Ok(v)
    }
}

/// Integer token ids for a query or passage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
}

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        TokenSequence { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Whitespace tokenization: case-fold, look up each token (unknown ->
/// OOV), truncate to `cap`. Errors when nothing remains.
pub fn tokenize(text: &str, vocab: &Vocabulary, cap: usize) -> Result<TokenSequence, VocabError> {
    let mut ids: Vec<TokenId> = text.split_whitespace().map(|t| vocab.id(t)).collect();
    if ids.is_empty() {
        return Err(VocabError::EmptyText);
    }
    ids.truncate(cap);
    Ok(TokenSequence::new(ids))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::new(["blue", "sky", "sea"]).unwrap()
    }

    #[test]
    fn lookup_and_oov() {
        let v = vocab();
        let seq = tokenize("blue sky", &v, 30).unwrap();
        assert_eq!(seq.ids, vec![v.id("blue"), v.id("sky")]);
        assert_eq!(tokenize("zzzz", &v, 30).unwrap().ids, vec![OOV]);
        // Case folding.
        assert_eq!(v.id("BLUE"), v.id("blue"));
    }

    #[test]
    fn truncation_to_cap() {
        let v = vocab();
        let text = vec!["blue"; 35].join(" ");
        let seq = tokenize(&text, &v, QUERY_TOKEN_CAP).unwrap();
        assert_eq!(seq.len(), 30);
    }

    #[test]
    fn empty_text_is_an_error() {
        let v = vocab();
        assert!(matches!(tokenize("   ", &v, 30), Err(VocabError::EmptyText)));
    }

    #[test]
    fn special_ids_distinct_and_first() {
        let v = vocab();
        assert_eq!(v.token(CLS), "[CLS]");
        assert_eq!(v.token(SEP), "[SEP]");
        assert_eq!(v.token(MASK), "[MASK]");
        assert_eq!(v.token(PAD), "[PAD]");
        assert_eq!(v.token(OOV), "[OOV]");
        assert_eq!(v.id("blue"), 5);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = vocab();
        v.write_file(&path).unwrap();
        let v2 = Vocabulary::read_file(&path).unwrap();
        assert_eq!(v2.size(), v.size());
        assert_eq!(v2.id("sea"), v.id("sea"));
    }

    #[test]
    fn bad_special_order_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        std::fs::write(&path, "[CLS]\n[MASK]\n[SEP]\n[PAD]\n[OOV]\nfoo\n").unwrap();
        assert!(matches!(
            Vocabulary::read_file(&path),
            Err(VocabError::BadSpecial { line: 2, .. })
        ));
    }
}
