//! Word-boundary tokenizer with `[CLS]`/`[EOS]` framing.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::corpus::CodeSample;

pub const CLS: &str = "[CLS]";
pub const EOS: &str = "[EOS]";
pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TokenizerError {
    #[error("vocabulary size {0} is below the minimum of 8")]
    TooSmall(usize),
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("token id {id} out of range for vocabulary of size {size}")]
    OutOfRange { id: usize, size: usize },
    #[error("duplicate token `{0}` in vocabulary")]
    Duplicate(String),
    #[error("special token `{0}` missing from vocabulary")]
    MissingSpecial(String),
    #[error("special tokens must be distinct")]
    SpecialsNotDistinct,
}

/// Lexes `text` into identifier, number and single-character punctuation
/// tokens. Whitespace separates and is dropped.
pub fn split_tokens(text: &str) -> impl Iterator<Item = &str> {
    let bytes = text;
    let mut rest = bytes.char_indices().peekable();
    core::iter::from_fn(move || {
        while let Some(&(_, c)) = rest.peek() {
            if c.is_whitespace() {
                rest.next();
            } else {
                break;
            }
        }
        let (start, c) = rest.next()?;
        let mut end = start + c.len_utf8();
        if c.is_alphabetic() || c == '_' {
            while let Some(&(i, d)) = rest.peek() {
                if d.is_alphanumeric() || d == '_' {
                    end = i + d.len_utf8();
                    rest.next();
                } else {
                    break;
                }
            }
        } else if c.is_ascii_digit() {
            while let Some(&(i, d)) = rest.peek() {
                let fraction = d == '.' && bytes[i + 1..].chars().next().is_some_and(|n| n.is_ascii_digit());
                if d.is_alphanumeric() || d == '_' || fraction {
                    end = i + d.len_utf8();
                    rest.next();
                } else {
                    break;
                }
            }
        }
        Some(&bytes[start..end])
    })
}

/// `[CLS] body [EOS]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<usize>,
}

impl TokenSequence {
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    /// Framed sequences always hold at least `[CLS]` and `[EOS]`.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Wraps raw ids without re-framing; the caller guarantees the framing.
    pub fn from_ids_unchecked(ids: Vec<usize>) -> Self {
        TokenSequence { ids }
    }
}

/// Names of the four framing/special tokens in a vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecialTokens {
    pub cls: String,
    pub eos: String,
    pub pad: String,
    pub unk: String,
}

impl Default for SpecialTokens {
    fn default() -> Self {
        SpecialTokens {
            cls: CLS.into(),
            eos: EOS.into(),
            pad: PAD.into(),
            unk: UNK.into(),
        }
    }
}

impl SpecialTokens {
    /// The names used by the CodeT5 / RoBERTa family of subword vocabularies.
    pub fn roberta() -> Self {
        SpecialTokens {
            cls: "<s>".into(),
            eos: "</s>".into(),
            pad: "<pad>".into(),
            unk: "<unk>".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
    pub cls_id: usize,
    pub eos_id: usize,
    pub pad_id: usize,
    pub unk_id: usize,
}

impl Vocabulary {
    /// Keeps the `max_size - 4` most frequent tokens (ties broken
    /// lexicographically) after the four specials.
    pub fn build(corpus: &[CodeSample], max_size: usize) -> Result<Self, TokenizerError> {
        if max_size < 8 {
            return Err(TokenizerError::TooSmall(max_size));
        }
        if corpus.is_empty() {
            return Err(TokenizerError::EmptyCorpus);
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for s in corpus {
            for t in split_tokens(&s.code) {
                *counts.entry(t).or_insert(0) += 1;
            }
        }
        let specials = [CLS, EOS, PAD, UNK];
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|(t, _)| !specials.contains(t)).collect();
        // BTreeMap iteration is already lexicographic; the stable sort keeps it for ties
        ranked.sort_by(|a, b| b.1.cmp(&a.1));
        let mut tokens: Vec<String> = specials.iter().map(|s| s.to_string()).collect();
        tokens.extend(ranked.into_iter().take(max_size - 4).map(|(t, _)| t.to_string()));
        Self::from_tokens(tokens, &SpecialTokens::default())
    }

    /// Vocabulary from an explicit id-ordered token list (line number = id).
    pub fn from_tokens(tokens: Vec<String>, specials: &SpecialTokens) -> Result<Self, TokenizerError> {
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(TokenizerError::Duplicate(t.clone()));
            }
        }
        let lookup = |name: &str| index.get(name).copied().ok_or_else(|| TokenizerError::MissingSpecial(name.into()));
        let cls_id = lookup(&specials.cls)?;
        let eos_id = lookup(&specials.eos)?;
        let pad_id = lookup(&specials.pad)?;
        let unk_id = lookup(&specials.unk)?;
        let mut ids = [cls_id, eos_id, pad_id, unk_id];
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(TokenizerError::SpecialsNotDistinct);
        }
        Ok(Vocabulary {
            tokens,
            index,
            cls_id,
            eos_id,
            pad_id,
            unk_id,
        })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Length of the framed, untruncated encoding of `code`.
    pub fn framed_len(&self, code: &str) -> usize {
        split_tokens(code).count() + 2
    }

    /// Frames `code` as `[CLS] ... [EOS]`, truncating the body from the right
    /// so the result never exceeds `max_tokens` (minimum 2).
    pub fn encode(&self, code: &str, max_tokens: usize) -> TokenSequence {
        let budget = max_tokens.max(2) - 2;
        let mut ids = Vec::with_capacity(budget.min(256) + 2);
        ids.push(self.cls_id);
        ids.extend(
            split_tokens(code)
                .take(budget)
                .map(|t| self.index.get(t).copied().unwrap_or(self.unk_id)),
        );
        ids.push(self.eos_id);
        TokenSequence { ids }
    }

    /// Space-joined tokens with `[CLS]`, `[EOS]` and `[PAD]` dropped.
    pub fn decode(&self, ids: &[usize]) -> Result<String, TokenizerError> {
        let mut out = String::new();
        for &id in ids {
            let tok = self.token(id).ok_or(TokenizerError::OutOfRange { id, size: self.size() })?;
            if id == self.cls_id || id == self.eos_id || id == self.pad_id {
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(tok);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, sink_tokens, Language};
    use alloc::vec;
    use proptest::prelude::*;

    fn corpus(texts: &[&str]) -> Vec<CodeSample> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| CodeSample::new(alloc::format!("s{i}"), Language::C, *t, 0))
            .collect()
    }

    #[test]
    fn lexer_atoms() {
        let toks: Vec<&str> = split_tokens("if (x_1>=0.5) { foo.bar(\"s\"); } 3..4 ünï").collect();
        assert_eq!(
            toks,
            vec!["if", "(", "x_1", ">", "=", "0.5", ")", "{", "foo", ".", "bar", "(", "\"", "s", "\"", ")", ";", "}", "3", ".", ".", "4", "ünï"]
        );
    }

    #[test]
    fn small_vocab() {
        let v = Vocabulary::build(&corpus(&["a b", "a"]), 8).unwrap();
        assert_eq!(v.size(), 6);
        assert_eq!(&v.tokens()[..4], &[CLS, EOS, PAD, UNK]);
        assert_eq!(v.id("a"), Some(4));
        assert_eq!(v.id("b"), Some(5));
        assert_eq!(Vocabulary::build(&corpus(&["a b", "a"]), 8).unwrap(), v);
    }

    #[test]
    fn ties_break_lexicographically_and_size_caps() {
        let v = Vocabulary::build(&corpus(&["d c b a e e"]), 8).unwrap();
        assert_eq!(&v.tokens()[4..], &["e", "a", "b", "c"]);
    }

    #[test]
    fn build_errors() {
        assert_eq!(Vocabulary::build(&corpus(&["a"]), 7), Err(TokenizerError::TooSmall(7)));
        assert_eq!(Vocabulary::build(&[], 8), Err(TokenizerError::EmptyCorpus));
    }

    #[test]
    fn encode_examples() {
        let v = Vocabulary::build(&corpus(&["a b"]), 8).unwrap();
        assert_eq!(v.encode("", 512).ids(), &[v.cls_id, v.eos_id]);
        let a = v.id("a").unwrap();
        let b = v.id("b").unwrap();
        assert_eq!(v.encode("a b", 512).ids(), &[v.cls_id, a, b, v.eos_id]);
        assert_eq!(v.encode("a zz", 512).ids(), &[v.cls_id, a, v.unk_id, v.eos_id]);

        let long = vec!["a"; 600].join(" ");
        let seq = v.encode(&long, 512);
        assert_eq!(seq.len(), 512);
        assert_eq!(seq.ids()[0], v.cls_id);
        assert_eq!(*seq.ids().last().unwrap(), v.eos_id);
    }

    #[test]
    fn decode_examples() {
        let v = Vocabulary::build(&corpus(&["a b"]), 8).unwrap();
        assert_eq!(v.decode(v.encode("a b", 16).ids()).unwrap(), "a b");
        assert_eq!(v.decode(&[v.cls_id, v.eos_id]).unwrap(), "");
        assert_eq!(v.decode(&[99]), Err(TokenizerError::OutOfRange { id: 99, size: 6 }));
    }

    #[test]
    fn sinks_in_vocabulary() {
        let samples = generate_synthetic(50, 0.5, 3);
        let v = Vocabulary::build(&samples, 4096).unwrap();
        // frequency-count oracle: any token seen at all fits when the distinct count is below the cap
        let mut distinct: Vec<&str> = samples.iter().flat_map(|s| split_tokens(&s.code)).collect();
        distinct.sort_unstable();
        distinct.dedup();
        assert!(distinct.len() + 4 <= 4096);
        for lang in Language::ALL {
            for sink in sink_tokens(lang) {
                assert!(v.id(sink).is_some(), "{sink} missing");
            }
        }
    }

    #[test]
    fn external_vocabulary_specials() {
        let toks: Vec<String> = ["<pad>", "<s>", "</s>", "<unk>", "def"].iter().map(|s| s.to_string()).collect();
        let v = Vocabulary::from_tokens(toks.clone(), &SpecialTokens::roberta()).unwrap();
        assert_eq!((v.cls_id, v.eos_id, v.pad_id, v.unk_id), (1, 2, 0, 3));
        assert!(matches!(
            Vocabulary::from_tokens(toks, &SpecialTokens::default()),
            Err(TokenizerError::MissingSpecial(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn round_trip_in_vocabulary(picks in prop::collection::vec(0usize..40, 0..30)) {
            let samples = generate_synthetic(5, 0.5, 1);
            let v = Vocabulary::build(&samples, 4096).unwrap();
            let body: Vec<usize> = picks.iter().map(|p| 4 + p % (v.size() - 4)).collect();
            let mut ids = vec![v.cls_id];
            ids.extend(&body);
            ids.push(v.eos_id);
            let text = v.decode(&ids).unwrap();
            let encoded = v.encode(&text, 4096);
            prop_assert_eq!(encoded.ids(), &ids[..]);
        }
    }
}
