//! Function-level samples, preprocessing, splitting and synthetic corpora.

mod split;
mod stats;
mod strip;
mod synth;

use alloc::string::{String, ToString};
use core::fmt;
use core::str::FromStr;

pub use split::{split_dataset, DatasetSplit, SplitError, SplitRatios};
pub use stats::{stats, CorpusStats, LanguageCounts};
pub use strip::{strip_comments, Stripped};
pub use synth::{generate_synthetic, sink_tokens};

use crate::tokenizer::Vocabulary;

/// The seven languages of the multilingual corpus, in pool-assignment order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Language {
    C,
    Cpp,
    CSharp,
    Go,
    Java,
    JavaScript,
    Python,
}

impl Language {
    pub const ALL: [Language; 7] = [
        Language::C,
        Language::Cpp,
        Language::CSharp,
        Language::Go,
        Language::Java,
        Language::JavaScript,
        Language::Python,
    ];

    pub const COUNT: usize = 7;

    /// Position in [`Language::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    /// Canonical record tag.
    pub fn tag(self) -> &'static str {
        match self {
            Language::C => "C",
            Language::Cpp => "CPP",
            Language::CSharp => "CSHARP",
            Language::Go => "GO",
            Language::Java => "JAVA",
            Language::JavaScript => "JAVASCRIPT",
            Language::Python => "PYTHON",
        }
    }

    /// Human-readable name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Language::C => "C",
            Language::Cpp => "C++",
            Language::CSharp => "C#",
            Language::Go => "Go",
            Language::Java => "Java",
            Language::JavaScript => "JavaScript",
            Language::Python => "Python",
        }
    }

    pub(crate) fn comment_family(self) -> CommentFamily {
        match self {
            Language::Python => CommentFamily::Hash,
            _ => CommentFamily::Slash,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CommentFamily {
    /// `//` and `/* */`.
    Slash,
    /// `#` and docstrings.
    Hash,
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown language tag `{0}`")]
pub struct UnknownLanguage(pub String);

impl FromStr for Language {
    type Err = UnknownLanguage;

    /// Accepts the canonical tags plus the spellings found in REEF exports
    /// (`C++`, `C#`, `JavaScript`, ...), case-insensitively.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lang = match s.trim().to_ascii_lowercase().as_str() {
            "c" => Language::C,
            "cpp" | "c++" => Language::Cpp,
            "csharp" | "c#" | "cs" => Language::CSharp,
            "go" | "golang" => Language::Go,
            "java" => Language::Java,
            "javascript" | "js" => Language::JavaScript,
            "python" | "py" => Language::Python,
            _ => return Err(UnknownLanguage(s.to_string())),
        };
        Ok(lang)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(SplitName::Train),
            "val" | "valid" | "validation" | "dev" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(other.to_string()),
        }
    }
}

/// One labeled function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeSample {
    pub id: String,
    pub language: Language,
    pub code: String,
    /// 1 = vulnerable, 0 = non-vulnerable.
    pub label: u8,
    pub cwe: Option<String>,
    pub cve: Option<String>,
    pub split: Option<SplitName>,
}

impl CodeSample {
    pub fn new(id: impl Into<String>, language: Language, code: impl Into<String>, label: u8) -> Self {
        CodeSample {
            id: id.into(),
            language,
            code: code.into(),
            label,
            cwe: None,
            cve: None,
            split: None,
        }
    }

    pub fn is_vulnerable(&self) -> bool {
        self.label == 1
    }
}

/// Partition `samples` into those whose framed token count fits `max_tokens`
/// and those that do not. Both halves keep input order.
pub fn filter_by_length(
    samples: alloc::vec::Vec<CodeSample>,
    vocab: &Vocabulary,
    max_tokens: usize,
) -> (alloc::vec::Vec<CodeSample>, alloc::vec::Vec<CodeSample>) {
    samples
        .into_iter()
        .partition(|s| vocab.framed_len(&s.code) <= max_tokens)
}
