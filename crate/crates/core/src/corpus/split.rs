use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CodeSample, Language, SplitName};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<CodeSample>,
    pub val: Vec<CodeSample>,
    pub test: Vec<CodeSample>,
}

impl DatasetSplit {
    pub fn part(&self, name: SplitName) -> &[CodeSample] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All samples tagged with the split they belong to, in train/val/test order.
    pub fn into_tagged(self) -> Vec<CodeSample> {
        let mut out = Vec::with_capacity(self.len());
        for (name, part) in [
            (SplitName::Train, self.train),
            (SplitName::Val, self.val),
            (SplitName::Test, self.test),
        ] {
            out.extend(part.into_iter().map(|mut s| {
                s.split = Some(name);
                s
            }));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SplitError {
    #[error("split ratios sum to {0}, expected 1")]
    RatioSum(f64),
    #[error("split ratio {0} is negative")]
    NegativeRatio(f64),
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("{assigned} of {total} samples carry a split assignment; expected all or none")]
    PartialAssignment { assigned: usize, total: usize },
}

/// Partition samples into train/val/test.
///
/// Samples that all carry a `split` field are grouped as assigned. Otherwise
/// each (language, label) stratum is shuffled with `seed` and cut by `ratios`,
/// with quota rounding chosen so the global split sizes equal the rounded
/// global targets exactly.
pub fn split_dataset(
    samples: Vec<CodeSample>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<DatasetSplit, SplitError> {
    let r = ratios.as_array();
    if let Some(&neg) = r.iter().find(|x| **x < 0.0) {
        return Err(SplitError::NegativeRatio(neg));
    }
    let sum: f64 = r.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(SplitError::RatioSum(sum));
    }
    let mut seen = BTreeSet::new();
    for s in &samples {
        if !seen.insert(s.id.as_str()) {
            return Err(SplitError::DuplicateId(s.id.clone()));
        }
    }
    drop(seen);

    let assigned = samples.iter().filter(|s| s.split.is_some()).count();
    if assigned == samples.len() {
        let mut out = DatasetSplit::default();
        for s in samples {
            match s.split {
                Some(SplitName::Train) => out.train.push(s),
                Some(SplitName::Val) => out.val.push(s),
                Some(SplitName::Test) => out.test.push(s),
                None => unreachable!(),
            }
        }
        return Ok(out);
    }
    if assigned != 0 {
        return Err(SplitError::PartialAssignment {
            assigned,
            total: samples.len(),
        });
    }

    let mut strata: BTreeMap<(Language, u8), Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        strata.entry((s.language, s.label)).or_default().push(i);
    }
    let sizes: Vec<usize> = strata.values().map(Vec::len).collect();
    let alloc = apportion(&sizes, r);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut target: Vec<Option<SplitName>> = alloc::vec![None; samples.len()];
    for (members, counts) in strata.values_mut().zip(alloc.iter()) {
        members.shuffle(&mut rng);
        let mut it = members.iter();
        for (name, &count) in SplitName::ALL.iter().zip(counts.iter()) {
            for &idx in it.by_ref().take(count) {
                target[idx] = Some(*name);
            }
        }
    }

    let mut out = DatasetSplit::default();
    for (s, t) in samples.into_iter().zip(target) {
        match t.expect("every sample allocated") {
            SplitName::Train => out.train.push(s),
            SplitName::Val => out.val.push(s),
            SplitName::Test => out.test.push(s),
        }
    }
    Ok(out)
}

/// Largest-remainder rounding of `total * ratios`.
fn global_targets(total: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * total as f64).collect();
    let mut out = [0usize; 3];
    for (o, e) in out.iter_mut().zip(&exact) {
        *o = libm::floor(*e + 1e-9) as usize;
    }
    let mut rest = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - out[a] as f64;
        let fb = exact[b] - out[b] as f64;
        fb.partial_cmp(&fa).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        out[k] += 1;
        rest -= 1;
    }
    out
}

/// Per-stratum split counts. Each stratum gets the floor of its exact quota
/// plus leftover units handed out by descending fractional part, subject to
/// the global targets.
fn apportion(sizes: &[usize], ratios: [f64; 3]) -> Vec<[usize; 3]> {
    let total: usize = sizes.iter().sum();
    let targets = global_targets(total, ratios);
    let mut counts: Vec<[usize; 3]> = Vec::with_capacity(sizes.len());
    let mut fracs: Vec<(f64, usize, usize)> = Vec::new();
    let mut leftover: Vec<usize> = Vec::with_capacity(sizes.len());
    for (g, &n) in sizes.iter().enumerate() {
        let mut c = [0usize; 3];
        for k in 0..3 {
            let exact = n as f64 * ratios[k];
            c[k] = libm::floor(exact + 1e-9) as usize;
            fracs.push((exact - c[k] as f64, g, k));
        }
        leftover.push(n - c.iter().sum::<usize>());
        counts.push(c);
    }
    let mut deficit = [0usize; 3];
    for k in 0..3 {
        let have: usize = counts.iter().map(|c| c[k]).sum();
        deficit[k] = targets[k] - have;
    }
    fracs.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    for &(_, g, k) in &fracs {
        if leftover[g] > 0 && deficit[k] > 0 {
            counts[g][k] += 1;
            leftover[g] -= 1;
            deficit[k] -= 1;
        }
    }
    // whatever the greedy pass could not place goes to any split still short
    for g in 0..sizes.len() {
        while leftover[g] > 0 {
            let k = (0..3).find(|&k| deficit[k] > 0).expect("deficits cover leftovers");
            counts[g][k] += 1;
            leftover[g] -= 1;
            deficit[k] -= 1;
        }
    }
    counts
}
