//! Vocabulary files: one token per line, line number = id.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use mulvuln_core::tokenizer::{SpecialTokens, TokenizerError, Vocabulary};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum VocabFileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Invalid {
        path: String,
        #[source]
        source: TokenizerError,
    },
    #[error("{path}: special token {expected:?} expected on line {line}, found {found:?}")]
    SpecialOrder {
        path: String,
        line: usize,
        expected: String,
        found: String,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

pub fn vocab_text(vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for t in vocab.tokens() {
        out.push_str(t);
        out.push('\n');
    }
    out
}

/// Hex SHA-256 of the vocabulary file contents.
pub fn vocab_hash(vocab: &Vocabulary) -> String {
    let digest = Sha256::digest(vocab_text(vocab).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_vocab(path: &Path, vocab: &Vocabulary) -> Result<(), VocabFileError> {
    fs::write(path, vocab_text(vocab)).map_err(|source| VocabFileError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read(path: &Path) -> Result<String, VocabFileError> {
    fs::read_to_string(path).map_err(|source| VocabFileError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads a file written by [`save_vocab`]; the first four lines must be
/// `[CLS]`, `[EOS]`, `[PAD]`, `[UNK]`.
pub fn load_vocab(path: &Path) -> Result<Vocabulary, VocabFileError> {
    let tokens: Vec<String> = read(path)?.lines().map(str::to_string).collect();
    let specials = SpecialTokens::default();
    for (line, expected) in [&specials.cls, &specials.eos, &specials.pad, &specials.unk].into_iter().enumerate() {
        let found = tokens.get(line).cloned().unwrap_or_default();
        if &found != expected {
            return Err(VocabFileError::SpecialOrder {
                path: path.display().to_string(),
                line: line + 1,
                expected: expected.clone(),
                found,
            });
        }
    }
    Vocabulary::from_tokens(tokens, &specials).map_err(|source| VocabFileError::Invalid {
        path: path.display().to_string(),
        source,
    })
}

/// Loads a pretrained vocabulary: either a `.json` object mapping token to
/// id, or a plain token-per-line file. Special tokens are looked up by the
/// given names wherever they appear.
pub fn load_external_vocab(path: &Path, specials: &SpecialTokens) -> Result<Vocabulary, VocabFileError> {
    let text = read(path)?;
    let tokens: Vec<String> = if path.extension().is_some_and(|e| e == "json") {
        let map: BTreeMap<String, usize> = serde_json::from_str(&text).map_err(|e| VocabFileError::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut by_id: Vec<Option<String>> = vec![None; map.len()];
        for (tok, id) in map {
            match by_id.get_mut(id) {
                Some(slot @ None) => *slot = Some(tok),
                _ => {
                    return Err(VocabFileError::Format {
                        path: path.display().to_string(),
                        message: format!("ids are not a permutation of 0..n (at {tok:?} -> {id})"),
                    })
                }
            }
        }
        by_id.into_iter().map(|t| t.expect("filled")).collect()
    } else {
        text.lines().map(str::to_string).collect()
    };
    Vocabulary::from_tokens(tokens, specials).map_err(|source| VocabFileError::Invalid {
        path: path.display().to_string(),
        source,
    })
}
