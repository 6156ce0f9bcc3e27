//! Case records, manifests, and deterministic stratified splitting.
//!
//! A [`Manifest`] is an ordered list of [`CaseRecord`]s plus the seed and
//! fractions that produced its split assignment. Split assignment is a pure
//! function of the case-id set, the seed, and the fractions: records are
//! ordered per label by a seeded hash of their id, and per-split quotas are
//! apportioned so that global counts are exactly floor/floor/remainder.
//! Train and val counts stay within one record of each label's proportional
//! share; the test split absorbs the global rounding remainder, which for
//! rare label mixes can put a single test count two records from its share.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::hash_str;

/// The four classes of the task, in the fixed reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Meningioma,
    Glioma,
    Pituitary,
    NoTumor,
}

impl Label {
    pub const ALL: [Label; 4] = [
        Label::Meningioma,
        Label::Glioma,
        Label::Pituitary,
        Label::NoTumor,
    ];

    pub const COUNT: usize = 4;

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Label::Meningioma => 0,
            Label::Glioma => 1,
            Label::Pituitary => 2,
            Label::NoTumor => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Meningioma => "meningioma",
            Label::Glioma => "glioma",
            Label::Pituitary => "pituitary",
            Label::NoTumor => "no_tumor",
        }
    }

    pub fn parse(s: &str) -> Result<Label> {
        match s {
            "meningioma" => Ok(Label::Meningioma),
            "glioma" => Ok(Label::Glioma),
            "pituitary" => Ok(Label::Pituitary),
            "no_tumor" | "notumor" | "no-tumor" => Ok(Label::NoTumor),
            other => Err(Error::UnknownLabel(other.to_string())),
        }
    }

    /// Tumor classes carry segmentation masks; `no_tumor` does not.
    pub fn is_tumor(self) -> bool {
        self != Label::NoTumor
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl SplitKind {
    pub const ALL: [SplitKind; 3] = [SplitKind::Train, SplitKind::Val, SplitKind::Test];

    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Val => "val",
            SplitKind::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<SplitKind> {
        match s {
            "train" => Ok(SplitKind::Train),
            "val" | "validation" => Ok(SplitKind::Val),
            "test" => Ok(SplitKind::Test),
            other => Err(Error::Other(format!("unknown split `{other}`"))),
        }
    }
}

/// One image sample: pixel data reference, class label, optional mask
/// reference, and split assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub image_ref: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_ref: Option<String>,
    pub split: SplitKind,
    pub source: String,
}

/// Train/val/test fractions; must be non-negative and sum to 1 within 1e-9.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    pub const PAPER: SplitFractions = SplitFractions {
        train: 0.70,
        val: 0.15,
        test: 0.15,
    };

    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let f = Self { train, val, test };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.train >= 0.0
            && self.val >= 0.0
            && self.test >= 0.0
            && ((self.train + self.val + self.test) - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidFractions(self.train, self.val, self.test))
        }
    }
}

/// Versioned collection of case records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub split_fractions: SplitFractions,
    #[serde(default)]
    pub created_at: String,
    pub records: Vec<CaseRecord>,
}

impl Manifest {
    /// Build a manifest, checking id uniqueness and mask/label consistency.
    pub fn new(
        records: Vec<CaseRecord>,
        seed: u64,
        split_fractions: SplitFractions,
        created_at: String,
    ) -> Result<Self> {
        split_fractions.validate()?;
        let mut ids: Vec<&str> = records.iter().map(|r| r.case_id.as_str()).collect();
        ids.sort_unstable();
        for pair in ids.windows(2) {
            if pair[0] == pair[1] {
                return Err(Error::DuplicateCaseId(pair[0].to_string()));
            }
        }
        Ok(Self {
            seed,
            split_fractions,
            created_at,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records belonging to one split, in manifest order.
    pub fn split_records(&self, split: SplitKind) -> Vec<&CaseRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// Per-label record counts, indexed by `Label::index`.
    pub fn label_counts(&self) -> [usize; Label::COUNT] {
        let mut counts = [0usize; Label::COUNT];
        for r in &self.records {
            counts[r.label.index()] += 1;
        }
        counts
    }
}

/// Apportion `total` units proportionally to non-negative `weights` using
/// the largest-remainder rule. The result sums to `total` exactly and each
/// entry differs from its exact quota by less than one.
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 || weights.is_empty() {
        let mut out = vec![0; weights.len()];
        if let Some(first) = out.first_mut() {
            *first = total;
        }
        return out;
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / wsum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // Highest fractional remainder first; index order breaks ties.
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

fn remainder(q: f64) -> f64 {
    q - q.floor()
}

/// Candidate subsets of `extras` labels to round up, most deserving first
/// (largest summed remainder, then lowest mask for determinism).
fn extra_subsets(quotas: &[f64], extras: usize) -> Vec<u32> {
    let l = quotas.len();
    debug_assert!(l <= 16);
    let mut masks: Vec<u32> = (0u32..(1 << l))
        .filter(|m| m.count_ones() as usize == extras)
        .collect();
    let score = |m: u32| -> f64 {
        (0..l)
            .filter(|i| m >> i & 1 == 1)
            .map(|i| remainder(quotas[i]))
            .sum()
    };
    masks.sort_by(|&a, &b| score(b).partial_cmp(&score(a)).unwrap().then(a.cmp(&b)));
    masks
}

/// Per-label (train, val) quotas such that global totals are exactly
/// `floor(n*train)` / `floor(n*val)` / remainder. Train and val counts always
/// stay within one record of each label's proportional share; test counts do
/// too whenever that is jointly feasible (the test split absorbs the global
/// rounding remainder, so in rare mixes one label's test count can be off by
/// up to two records).
fn stratified_quotas(label_counts: &[usize], f: SplitFractions) -> Vec<(usize, usize)> {
    let l = label_counts.len();
    let n: usize = label_counts.iter().sum();
    let target_train = (n as f64 * f.train).floor() as usize;
    let target_val = (n as f64 * f.val).floor() as usize;

    let qt: Vec<f64> = label_counts.iter().map(|&c| c as f64 * f.train).collect();
    let qv: Vec<f64> = label_counts.iter().map(|&c| c as f64 * f.val).collect();
    let qe: Vec<f64> = label_counts.iter().map(|&c| c as f64 * f.test).collect();

    let base_train: Vec<usize> = qt.iter().map(|q| q.floor() as usize).collect();
    let train_extras = target_train - base_train.iter().sum::<usize>();
    let subsets = extra_subsets(&qt, train_extras);

    let mut val_order: Vec<usize> = (0..l).collect();
    val_order.sort_by(|&a, &b| {
        remainder(qv[b])
            .partial_cmp(&remainder(qv[a]))
            .unwrap()
            .then(a.cmp(&b))
    });

    // Strict pass: look for a train rounding under which val can be chosen
    // so that all three splits stay within one record per label.
    for &mask in &subsets {
        let train: Vec<usize> = (0..l)
            .map(|i| base_train[i] + (mask >> i & 1) as usize)
            .collect();
        let mut lo = vec![0usize; l];
        let mut hi = vec![0usize; l];
        let mut feasible = true;
        for i in 0..l {
            let cap = label_counts[i] - train[i];
            // val within one of its quota...
            let v_lo = (qv[i].ceil() as usize).saturating_sub(1);
            let v_hi = qv[i].floor() as usize + 1;
            // ...and test = cap - val within one of its quota.
            let t_lo = (qe[i].ceil() as usize).saturating_sub(1).min(cap);
            let t_hi = (qe[i].floor() as usize + 1).min(cap);
            lo[i] = v_lo.max(cap - t_hi);
            hi[i] = v_hi.min(cap - t_lo);
            if lo[i] > hi[i] {
                feasible = false;
                break;
            }
        }
        if !feasible {
            continue;
        }
        let lo_sum: usize = lo.iter().sum();
        let hi_sum: usize = hi.iter().sum();
        if !(lo_sum <= target_val && target_val <= hi_sum) {
            continue;
        }
        let mut val = lo;
        let mut leftover = target_val - lo_sum;
        while leftover > 0 {
            for &i in &val_order {
                if leftover > 0 && val[i] < hi[i] {
                    val[i] += 1;
                    leftover -= 1;
                }
            }
        }
        return train.into_iter().zip(val).collect();
    }

    // Fallback: exact train and val roundings under capacity; the test
    // column takes whatever remains (off by at most two per label).
    let train: Vec<usize> = (0..l)
        .map(|i| base_train[i] + (subsets[0] >> i & 1) as usize)
        .collect();
    let caps: Vec<usize> = (0..l).map(|i| label_counts[i] - train[i]).collect();
    let mut val: Vec<usize> = (0..l)
        .map(|i| (qv[i].floor() as usize).min(caps[i]))
        .collect();
    let mut leftover = target_val - val.iter().sum::<usize>();
    // Give each label at most one extra first, then spill by capacity.
    for &i in &val_order {
        if leftover > 0 && val[i] < (qv[i].floor() as usize + 1).min(caps[i]) {
            val[i] += 1;
            leftover -= 1;
        }
    }
    while leftover > 0 {
        let mut moved = false;
        for &i in &val_order {
            if leftover > 0 && val[i] < caps[i] {
                val[i] += 1;
                leftover -= 1;
                moved = true;
            }
        }
        assert!(moved, "val target exceeds total capacity");
    }
    train.into_iter().zip(val).collect()
}

/// Assign splits deterministically. Pure in (case-id set, seed, fractions):
/// the record order in `m` does not influence the assignment.
pub fn split_manifest(m: &Manifest, fractions: SplitFractions, seed: u64) -> Result<Manifest> {
    fractions.validate()?;
    if m.len() < 3 {
        return Err(Error::TooFewRecords {
            needed: 3,
            found: m.len(),
        });
    }

    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); Label::COUNT];
    for (i, r) in m.records.iter().enumerate() {
        by_label[r.label.index()].push(i);
    }
    let label_counts: Vec<usize> = by_label.iter().map(|v| v.len()).collect();
    let quotas = stratified_quotas(&label_counts, fractions);

    let mut records = m.records.clone();
    for (label_idx, indices) in by_label.iter().enumerate() {
        let mut ordered: Vec<usize> = indices.clone();
        ordered.sort_by(|&a, &b| {
            let ha = hash_str(seed, &m.records[a].case_id);
            let hb = hash_str(seed, &m.records[b].case_id);
            ha.cmp(&hb)
                .then_with(|| m.records[a].case_id.cmp(&m.records[b].case_id))
        });
        let (n_train, n_val) = quotas[label_idx];
        for (rank, &rec_idx) in ordered.iter().enumerate() {
            records[rec_idx].split = if rank < n_train {
                SplitKind::Train
            } else if rank < n_train + n_val {
                SplitKind::Val
            } else {
                SplitKind::Test
            };
        }
    }

    Ok(Manifest {
        seed,
        split_fractions: fractions,
        created_at: m.created_at.clone(),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, label: Label) -> CaseRecord {
        CaseRecord {
            case_id: id.to_string(),
            image_ref: format!("{id}.png"),
            label,
            mask_ref: None,
            split: SplitKind::Train,
            source: "test".to_string(),
        }
    }

    fn manifest_with_counts(counts: [usize; 4]) -> Manifest {
        let mut records = Vec::new();
        for (li, &c) in counts.iter().enumerate() {
            let label = Label::from_index(li).unwrap();
            for k in 0..c {
                records.push(record(&format!("{}_{k:05}", label.name()), label));
            }
        }
        Manifest::new(records, 0, SplitFractions::PAPER, String::new()).unwrap()
    }

    fn split_counts(m: &Manifest) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for r in &m.records {
            match r.split {
                SplitKind::Train => c.0 += 1,
                SplitKind::Val => c.1 += 1,
                SplitKind::Test => c.2 += 1,
            }
        }
        c
    }

    #[test]
    fn split_3064_gives_global_floor_counts() {
        // 2144 = floor(3064*0.70), 459 = floor(3064*0.15), remainder 461.
        let m = manifest_with_counts([766, 766, 766, 766]);
        assert_eq!(m.len(), 3064);
        for seed in [0u64, 1, 42, 12345] {
            let s = split_manifest(&m, SplitFractions::PAPER, seed).unwrap();
            assert_eq!(split_counts(&s), (2144, 459, 461));
        }
        // Uneven label mix, same totals.
        let m = manifest_with_counts([708, 712, 781, 863]);
        assert_eq!(m.len(), 3064);
        let s = split_manifest(&m, SplitFractions::PAPER, 7).unwrap();
        assert_eq!(split_counts(&s), (2144, 459, 461));
    }

    #[test]
    fn split_paper_table_counts() {
        // Training-side counts from the 4-class dataset accounting.
        let m = manifest_with_counts([1339, 1321, 1457, 1595]);
        assert_eq!(m.len(), 5712);
        let s = split_manifest(&m, SplitFractions::PAPER, 3).unwrap();
        let (tr, va, te) = split_counts(&s);
        assert_eq!(tr, (5712.0_f64 * 0.70).floor() as usize);
        assert_eq!(va, (5712.0_f64 * 0.15).floor() as usize);
        assert_eq!(tr + va + te, 5712);

        // This mix admits a fully stratified rounding: every label stays
        // within one record of its share in all three splits.
        for (label, count) in Label::ALL.iter().zip([1339.0, 1321.0, 1457.0, 1595.0]) {
            for (split, frac) in [
                (SplitKind::Train, 0.70),
                (SplitKind::Val, 0.15),
                (SplitKind::Test, 0.15),
            ] {
                let got = s
                    .records
                    .iter()
                    .filter(|r| r.label == *label && r.split == split)
                    .count() as f64;
                assert!((got - frac * count).abs() <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn degenerate_all_train() {
        let m = manifest_with_counts([4, 3, 2, 1]);
        let f = SplitFractions::new(1.0, 0.0, 0.0).unwrap();
        let s = split_manifest(&m, f, 9).unwrap();
        assert_eq!(split_counts(&s), (10, 0, 0));
    }

    #[test]
    fn split_is_deterministic_and_order_independent() {
        let m = manifest_with_counts([10, 7, 5, 9]);
        let a = split_manifest(&m, SplitFractions::PAPER, 11).unwrap();
        let b = split_manifest(&m, SplitFractions::PAPER, 11).unwrap();
        assert_eq!(a, b);

        // Reversing record order must not change any record's assignment.
        let mut reversed = m.clone();
        reversed.records.reverse();
        let c = split_manifest(&reversed, SplitFractions::PAPER, 11).unwrap();
        for r in &a.records {
            let other = c.records.iter().find(|x| x.case_id == r.case_id).unwrap();
            assert_eq!(r.split, other.split, "case {}", r.case_id);
        }

        // A different seed should normally give a different assignment.
        let d = split_manifest(&m, SplitFractions::PAPER, 12).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn bad_fractions_rejected() {
        let m = manifest_with_counts([2, 2, 2, 2]);
        assert!(matches!(
            SplitFractions::new(0.5, 0.5, 0.5),
            Err(Error::InvalidFractions(..))
        ));
        let f = SplitFractions {
            train: 0.5,
            val: 0.5,
            test: 0.5,
        };
        assert!(split_manifest(&m, f, 0).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let records = vec![record("a", Label::Glioma), record("a", Label::Glioma)];
        assert!(matches!(
            Manifest::new(records, 0, SplitFractions::PAPER, String::new()),
            Err(Error::DuplicateCaseId(_))
        ));
    }

    #[test]
    fn largest_remainder_sums_and_bounds() {
        let counts = largest_remainder(10, &[0.25, 0.25, 0.25, 0.25]);
        assert_eq!(counts.iter().sum::<usize>(), 10);
        let counts = largest_remainder(7, &[0.5, 0.3, 0.2]);
        assert_eq!(counts.iter().sum::<usize>(), 7);
        for (c, q) in counts.iter().zip([3.5, 2.1, 1.4]) {
            assert!((*c as f64 - q).abs() < 1.0);
        }
    }

    proptest::proptest! {
        #[test]
        fn stratification_within_one_record(
            counts in proptest::array::uniform4(3usize..200),
            seed in proptest::prelude::any::<u64>(),
            t10 in 1u32..9,
        ) {
            let f_train = t10 as f64 / 10.0;
            let rest = (1.0 - f_train) / 2.0;
            let f = SplitFractions { train: f_train, val: rest, test: rest };
            let m = manifest_with_counts(counts);
            let s = split_manifest(&m, f, seed).unwrap();

            let n = m.len() as f64;
            let (tr, va, te) = split_counts(&s);
            proptest::prop_assert_eq!(tr, (n * f.train).floor() as usize);
            proptest::prop_assert_eq!(va, (n * f.val).floor() as usize);
            proptest::prop_assert_eq!(tr + va + te, m.len());

            for label in Label::ALL {
                let total = counts[label.index()] as f64;
                // Train and val are always within one record of their share;
                // test absorbs the global remainder and may reach two in
                // infeasible mixes.
                for (split, frac, bound) in [
                    (SplitKind::Train, f.train, 1.0),
                    (SplitKind::Val, f.val, 1.0),
                    (SplitKind::Test, f.test, 2.0),
                ] {
                    let got = s
                        .records
                        .iter()
                        .filter(|r| r.label == label && r.split == split)
                        .count() as f64;
                    proptest::prop_assert!(
                        (got - frac * total).abs() <= bound + 1e-9,
                        "label {:?} split {:?}: got {} want {}",
                        label, split, got, frac * total
                    );
                }
            }
        }
    }
}
