use super::{CodeSample, DatasetSplit, Language, SplitName};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LanguageCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub vulnerable: usize,
    pub non_vulnerable: usize,
}

impl LanguageCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    fn add(&mut self, split: SplitName, sample: &CodeSample) {
        match split {
            SplitName::Train => self.train += 1,
            SplitName::Val => self.val += 1,
            SplitName::Test => self.test += 1,
        }
        if sample.is_vulnerable() {
            self.vulnerable += 1;
        } else {
            self.non_vulnerable += 1;
        }
    }

    fn merge(&mut self, other: &LanguageCounts) {
        self.train += other.train;
        self.val += other.val;
        self.test += other.test;
        self.vulnerable += other.vulnerable;
        self.non_vulnerable += other.non_vulnerable;
    }
}

/// Per-language split and label counts, indexed by [`Language::index`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub per_language: [LanguageCounts; Language::COUNT],
    pub totals: LanguageCounts,
}

impl CorpusStats {
    pub fn language(&self, lang: Language) -> &LanguageCounts {
        &self.per_language[lang.index()]
    }
}

pub fn stats(split: &DatasetSplit) -> CorpusStats {
    let mut out = CorpusStats::default();
    for name in SplitName::ALL {
        for s in split.part(name) {
            out.per_language[s.language.index()].add(name, s);
        }
    }
    for lc in out.per_language {
        out.totals.merge(&lc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, split_dataset, SplitRatios};

    #[test]
    fn empty_split_is_all_zero() {
        assert_eq!(stats(&DatasetSplit::default()), CorpusStats::default());
    }

    #[test]
    fn synthetic_ten_per_language() {
        let split = split_dataset(generate_synthetic(10, 0.5, 4), SplitRatios::default(), 1).unwrap();
        let st = stats(&split);
        assert_eq!(st.totals.total(), 70);
        for lang in Language::ALL {
            assert_eq!(st.language(lang).total(), 10);
            assert_eq!(st.language(lang).vulnerable, 5);
        }
        assert_eq!(st.totals.vulnerable + st.totals.non_vulnerable, 70);
        assert_eq!(
            (st.totals.train, st.totals.val, st.totals.test),
            (split.train.len(), split.val.len(), split.test.len())
        );
    }
}
