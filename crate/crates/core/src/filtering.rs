//! Salience statistics for pseudo masks and the exclusion rules applied to
//! the transferal dataset.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DatasetManifest, ExclusionReason, MaskKind, SoftMask};

/// Histogram resolution used for gray-level entropy unless configured.
pub const DEFAULT_ENTROPY_BINS: usize = 256;
/// Bucket count of the entropy distribution carried in a [`CurationReport`].
pub const REPORT_HISTOGRAM_BUCKETS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterCriteria {
    /// Minimum number of target pixels (`N < alpha` excludes).
    pub alpha: u64,
    /// Maximum entropy in bits (`E > beta` excludes).
    pub beta: f64,
    /// Entropy rule switch; only meaningful for soft teacher output.
    pub apply_entropy: bool,
    pub entropy_bins: usize,
}

impl Default for FilterCriteria {
    fn default() -> Self {
        Self {
            alpha: 256,
            beta: 2.5,
            apply_entropy: true,
            entropy_bins: DEFAULT_ENTROPY_BINS,
        }
    }
}

impl FilterCriteria {
    /// Default thresholds with the entropy rule enabled only for soft output.
    pub fn for_output_kind(kind: MaskKind) -> Self {
        Self {
            apply_entropy: kind == MaskKind::Soft,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) {
            return Err(Error::InvalidConfig("beta must be nonnegative".into()));
        }
        if self.entropy_bins < 2 {
            return Err(Error::InvalidConfig(
                "entropy_bins must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskStats {
    pub target_pixels: u64,
    pub entropy_bits: f64,
}

impl MaskStats {
    pub fn measure(mask: &SoftMask, bins: usize) -> Self {
        Self {
            target_pixels: target_pixel_count(mask),
            entropy_bits: gray_level_entropy(mask, bins),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "decision", content = "reason")]
pub enum FilterDecision {
    Keep,
    Exclude(ExclusionReason),
}

/// Number of pixels strictly above 0.5.
pub fn target_pixel_count(mask: &SoftMask) -> u64 {
    mask.values()
        .as_slice()
        .iter()
        .filter(|&&v| v > 0.5)
        .count() as u64
}

/// Bucket of `value` among `bins` equal-width buckets over `[0, 1]`.
/// Boundary values go to the upper bucket; 1.0 lands in the top one.
#[inline]
pub fn bucket_index(value: f32, bins: usize) -> usize {
    let idx = Float::floor(value as f64 * bins as f64);
    if idx <= 0.0 {
        0
    } else {
        (idx as usize).min(bins - 1)
    }
}

pub fn histogram(mask: &SoftMask, bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; bins];
    for &v in mask.values().as_slice() {
        counts[bucket_index(v, bins)] += 1;
    }
    counts
}

/// Shannon entropy (base 2) of the normalized value histogram.
pub fn gray_level_entropy(mask: &SoftMask, bins: usize) -> f64 {
    assert!(bins >= 2, "entropy needs at least two bins");
    let counts = histogram(mask, bins);
    let total = mask.values().len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * Float::log2(p)
        })
        .sum()
}

/// Applies the exclusion rules to already measured statistics.
pub fn decide(stats: &MaskStats, kind: MaskKind, criteria: &FilterCriteria) -> FilterDecision {
    if stats.target_pixels < criteria.alpha {
        FilterDecision::Exclude(ExclusionReason::FewTargetPixels)
    } else if criteria.apply_entropy && kind == MaskKind::Soft && stats.entropy_bits > criteria.beta
    {
        FilterDecision::Exclude(ExclusionReason::HighEntropy)
    } else {
        FilterDecision::Keep
    }
}

pub fn filter_decision(mask: &SoftMask, criteria: &FilterCriteria) -> FilterDecision {
    let stats = MaskStats::measure(mask, criteria.entropy_bins);
    decide(&stats, mask.kind(), criteria)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReasonTally {
    pub few_target_pixels: usize,
    pub high_entropy: usize,
}

impl ReasonTally {
    fn bump(&mut self, reason: ExclusionReason) {
        match reason {
            ExclusionReason::FewTargetPixels => self.few_target_pixels += 1,
            ExclusionReason::HighEntropy => self.high_entropy += 1,
        }
    }
}

/// Distribution of mask entropies over `[0, max_bits]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyHistogram {
    pub max_bits: f64,
    pub counts: Vec<usize>,
}

impl EntropyHistogram {
    pub fn new(max_bits: f64, buckets: usize) -> Self {
        Self {
            max_bits,
            counts: vec![0; buckets],
        }
    }

    pub fn add(&mut self, entropy_bits: f64) {
        let n = self.counts.len();
        let idx = Float::floor(entropy_bits / self.max_bits * n as f64);
        let idx = if idx <= 0.0 {
            0
        } else {
            (idx as usize).min(n - 1)
        };
        self.counts[idx] += 1;
    }

    pub fn bucket_width(&self) -> f64 {
        self.max_bits / self.counts.len() as f64
    }
}

/// Before/after summary of one curation pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub dataset: String,
    pub total: usize,
    pub kept: usize,
    pub excluded_by_reason: ReasonTally,
    pub criteria: FilterCriteria,
    pub entropy_histogram: EntropyHistogram,
}

impl CurationReport {
    pub fn excluded(&self) -> usize {
        self.total - self.kept
    }
}

/// Statistics already computed for one sample's pseudo mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredMask {
    pub stats: MaskStats,
    pub kind: MaskKind,
}

/// Marks every record of `manifest` as kept or excluded according to its
/// mask. Records keep their order; kept records are never dropped.
pub fn curate(
    manifest: &DatasetManifest,
    masks: &BTreeMap<String, SoftMask>,
    criteria: &FilterCriteria,
) -> Result<(DatasetManifest, CurationReport)> {
    criteria.validate()?;
    let mut measured = BTreeMap::new();
    for record in &manifest.records {
        let mask = masks
            .get(&record.sample_id)
            .ok_or_else(|| Error::MissingMask(record.sample_id.clone()))?;
        measured.insert(
            record.sample_id.clone(),
            MeasuredMask {
                stats: MaskStats::measure(mask, criteria.entropy_bins),
                kind: mask.kind(),
            },
        );
    }
    curate_measured(manifest, &measured, criteria)
}

pub fn curate_measured(
    manifest: &DatasetManifest,
    measured: &BTreeMap<String, MeasuredMask>,
    criteria: &FilterCriteria,
) -> Result<(DatasetManifest, CurationReport)> {
    criteria.validate()?;
    let mut out = manifest.clone();
    let mut tally = ReasonTally::default();
    let mut histogram = EntropyHistogram::new(
        Float::log2(criteria.entropy_bins as f64),
        REPORT_HISTOGRAM_BUCKETS,
    );
    let mut kept = 0;
    for record in &mut out.records {
        let m = measured
            .get(&record.sample_id)
            .ok_or_else(|| Error::MissingMask(record.sample_id.clone()))?;
        histogram.add(m.stats.entropy_bits);
        match decide(&m.stats, m.kind, criteria) {
            FilterDecision::Keep => {
                record.excluded = false;
                record.exclusion_reason = None;
                kept += 1;
            }
            FilterDecision::Exclude(reason) => {
                record.excluded = true;
                record.exclusion_reason = Some(reason);
                tally.bump(reason);
            }
        }
    }
    let report = CurationReport {
        dataset: manifest.name.clone(),
        total: manifest.len(),
        kept,
        excluded_by_reason: tally,
        criteria: criteria.clone(),
        entropy_histogram: histogram,
    };
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::types::{ManifestRecord, Split, CANONICAL_SIZE};
    use alloc::format;
    use proptest::prelude::*;

    const S: usize = CANONICAL_SIZE;

    fn soft(values: Vec<f32>, w: usize, h: usize) -> SoftMask {
        SoftMask::soft(Grid::new(w, h, values).unwrap()).unwrap()
    }

    #[test]
    fn target_count_examples() {
        assert_eq!(target_pixel_count(&soft(vec![0.6; S * S], S, S)), 147_456);
        assert_eq!(target_pixel_count(&soft(vec![0.5; S * S], S, S)), 0);
        let mut v = vec![0.0; S * S];
        for px in v.iter_mut().step_by(17).take(255) {
            *px = 0.9;
        }
        assert_eq!(target_pixel_count(&soft(v, S, S)), 255);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(gray_level_entropy(&soft(vec![0.0; 64], 8, 8), 256), 0.0);
        let half: Vec<f32> = (0..64).map(|i| if i < 32 { 0.0 } else { 1.0 }).collect();
        assert!((gray_level_entropy(&soft(half, 8, 8), 256) - 1.0).abs() < 1e-12);
        let uniform: Vec<f32> = (0..256 * 4)
            .map(|i| ((i % 256) as f32 + 0.5) / 256.0)
            .collect();
        assert!((gray_level_entropy(&soft(uniform, 32, 32), 256) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn bucket_boundaries() {
        assert_eq!(bucket_index(0.0, 256), 0);
        assert_eq!(bucket_index(1.0 / 256.0, 256), 1);
        assert_eq!(bucket_index(0.5, 256), 128);
        assert_eq!(bucket_index(1.0, 256), 255);
    }

    #[test]
    fn decision_examples() {
        let crit = FilterCriteria::default();
        let s = |n, e| MaskStats {
            target_pixels: n,
            entropy_bits: e,
        };
        assert_eq!(
            decide(&s(255, 0.0), MaskKind::Soft, &crit),
            FilterDecision::Exclude(ExclusionReason::FewTargetPixels)
        );
        assert_eq!(
            decide(&s(256, 2.5), MaskKind::Soft, &crit),
            FilterDecision::Keep
        );
        assert_eq!(
            decide(&s(256, 2.51), MaskKind::Soft, &crit),
            FilterDecision::Exclude(ExclusionReason::HighEntropy)
        );
        let binary = FilterCriteria::for_output_kind(MaskKind::Binary);
        assert_eq!(
            decide(&s(1000, 7.0), MaskKind::Binary, &binary),
            FilterDecision::Keep
        );
        // declared kind wins even with the entropy rule on
        assert_eq!(
            decide(&s(1000, 7.0), MaskKind::Binary, &crit),
            FilterDecision::Keep
        );
    }

    fn manifest(n: usize) -> DatasetManifest {
        let records = (0..n)
            .map(|i| ManifestRecord::new(format!("s{i}"), format!("img/s{i}.png")))
            .collect();
        DatasetManifest::new("toy", Split::Train, records).unwrap()
    }

    #[test]
    fn curate_all_empty() {
        let m = manifest(10);
        let masks = m
            .records
            .iter()
            .map(|r| (r.sample_id.clone(), soft(vec![0.0; 32 * 32], 32, 32)))
            .collect();
        let (out, report) = curate(&m, &masks, &FilterCriteria::default()).unwrap();
        assert_eq!(report.kept, 0);
        assert_eq!(report.excluded_by_reason.few_target_pixels, 10);
        assert!(out
            .records
            .iter()
            .all(|r| r.exclusion_reason == Some(ExclusionReason::FewTargetPixels)));
    }

    #[test]
    fn curate_solid_squares_kept() {
        let m = manifest(10);
        // 4000-pixel solid block at 1.0 on a 384x384 zero background
        let mut v = vec![0.0; S * S];
        for i in 0..4000 {
            let (x, y) = (i % 80, i / 80);
            v[y * S + x] = 1.0;
        }
        let mask = soft(v, S, S);
        let e = gray_level_entropy(&mask, 256);
        let p = 4000.0 / (S * S) as f64;
        let expected = -(p * p.log2() + (1.0 - p) * (1.0 - p).log2());
        assert!((e - expected).abs() < 1e-12 && e < 2.5);
        let masks = m
            .records
            .iter()
            .map(|r| (r.sample_id.clone(), mask.clone()))
            .collect();
        let (_, report) = curate(&m, &masks, &FilterCriteria::default()).unwrap();
        assert_eq!(report.kept, 10);
    }

    #[test]
    fn curate_missing_mask_names_sample() {
        let m = manifest(3);
        let mut masks = BTreeMap::new();
        masks.insert("s0".into(), soft(vec![1.0; 4], 2, 2));
        let err = curate(&m, &masks, &FilterCriteria::default()).unwrap_err();
        assert_eq!(err, Error::MissingMask("s1".into()));
    }

    proptest! {
        #[test]
        fn entropy_permutation_invariant(values in proptest::collection::vec(0.0f32..=1.0, 64), seed in any::<u64>()) {
            let mut shuffled = values.clone();
            // deterministic Fisher-Yates with an LCG
            let mut state = seed | 1;
            for i in (1..shuffled.len()).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (state >> 33) as usize % (i + 1);
                shuffled.swap(i, j);
            }
            let a = gray_level_entropy(&soft(values, 8, 8), 256);
            let b = gray_level_entropy(&soft(shuffled, 8, 8), 256);
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn entropy_bounded_by_occupied_buckets(values in proptest::collection::vec(0.0f32..=1.0, 100), bins in 2usize..300) {
            let mask = soft(values, 10, 10);
            let occupied = histogram(&mask, bins).iter().filter(|&&c| c > 0).count();
            let e = gray_level_entropy(&mask, bins);
            prop_assert!(e >= 0.0);
            prop_assert!(e <= (occupied as f64).log2() + 1e-9);
        }

        #[test]
        fn binary_never_high_entropy(n in 0u64..200_000, e in 0.0f64..8.0, beta in 0.0f64..8.0) {
            let crit = FilterCriteria { beta, ..FilterCriteria::default() };
            let stats = MaskStats { target_pixels: n, entropy_bits: e };
            prop_assert_ne!(decide(&stats, MaskKind::Binary, &crit), FilterDecision::Exclude(ExclusionReason::HighEntropy));
        }
    }
}
