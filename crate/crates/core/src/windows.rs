//! Dual-window temporal aggregation and the window success criterion.
//!
//! Every sample ends at a bin (the window end carries the label) and
//! aggregates each base feature over a short and a long look-back window with
//! max, mean and population standard deviation: six aggregates per base
//! feature, laid out as `base * 6 + window * 3 + stat`.


use serde::{Deserialize, Serialize};

use crate::domain::{AffectLabel, Modality, BIN_WIDTH_S};
use crate::error::{Error, Result};
use crate::preprocess::{ByGroup, FeatureGroupId, SessionFeatures};

pub const AGGREGATES_PER_FEATURE: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WindowKind {
    Short,
    Long,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Statistic {
    Max,
    Mean,
    Std,
}

/// Position of one aggregate within a group's aggregate vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AggregateIndex {
    pub base: usize,
    pub window: WindowKind,
    pub stat: Statistic,
}

impl AggregateIndex {
    pub fn from_flat(index: usize) -> Self {
        let base = index / AGGREGATES_PER_FEATURE;
        let rem = index % AGGREGATES_PER_FEATURE;
        let window = if rem < 3 { WindowKind::Short } else { WindowKind::Long };
        let stat = match rem % 3 {
            0 => Statistic::Max,
            1 => Statistic::Mean,
            _ => Statistic::Std,
        };
        AggregateIndex { base, window, stat }
    }

    pub fn flat(self) -> usize {
        let w = match self.window {
            WindowKind::Short => 0,
            WindowKind::Long => 3,
        };
        let s = match self.stat {
            Statistic::Max => 0,
            Statistic::Mean => 1,
            Statistic::Std => 2,
        };
        self.base * AGGREGATES_PER_FEATURE + w + s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub short_s: f64,
    pub long_face_s: f64,
    pub long_body_s: f64,
    pub success_fraction: f64,
    /// Confidence flags are always evaluated over this window so that every
    /// configuration sees the same confident subset.
    pub max_long_s: f64,
    pub bin_width_s: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            short_s: 0.5,
            long_face_s: 32.0,
            long_body_s: 2.0,
            success_fraction: 0.9,
            max_long_s: 64.0,
            bin_width_s: BIN_WIDTH_S,
        }
    }
}

impl WindowConfig {
    fn to_bins(&self, seconds: f64, what: &str) -> Result<usize> {
        let bins = seconds / self.bin_width_s;
        let rounded = bins.round();
        if !(rounded >= 1.0) || (bins - rounded).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "{what} = {seconds} s is not a positive multiple of the {} s bin width",
                self.bin_width_s
            )));
        }
        Ok(rounded as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width_s > 0.0) {
            return Err(Error::Config("bin width must be positive".into()));
        }
        let short = self.to_bins(self.short_s, "short_s")?;
        if short < 2 {
            return Err(Error::Config(format!(
                "short window must span at least 2 bins, got {short}"
            )));
        }
        let face = self.to_bins(self.long_face_s, "long_face_s")?;
        let body = self.to_bins(self.long_body_s, "long_body_s")?;
        let max = self.to_bins(self.max_long_s, "max_long_s")?;
        if face < short || body < short {
            return Err(Error::Config("long windows must not be shorter than the short window".into()));
        }
        if face > max || body > max {
            return Err(Error::Config("long windows must not exceed max_long_s".into()));
        }
        if !(0.0..=1.0).contains(&self.success_fraction) {
            return Err(Error::Config(format!(
                "success fraction {} outside [0, 1]",
                self.success_fraction
            )));
        }
        Ok(())
    }

    pub fn short_bins(&self) -> usize {
        (self.short_s / self.bin_width_s).round() as usize
    }

    pub fn max_long_bins(&self) -> usize {
        (self.max_long_s / self.bin_width_s).round() as usize
    }

    pub fn long_bins(&self, modality: Modality) -> usize {
        let s = match modality {
            Modality::Face => self.long_face_s,
            Modality::Body => self.long_body_s,
        };
        (s / self.bin_width_s).round() as usize
    }
}

/// Max, mean and population standard deviation of a scalar series.
pub fn aggregate_series(values: &[f64]) -> Result<[f64; 3]> {
    if values.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let n = values.len() as f64;
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok([max, mean, var.sqrt()])
}

/// Per base feature `(max, mean, std)` over the bins of one window.
pub fn aggregate_window(rows: &[Vec<f64>]) -> Result<Vec<[f64; 3]>> {
    let first = rows.first().ok_or(Error::EmptyWindow)?;
    if let Some(bad) = rows.iter().find(|r| r.len() != first.len()) {
        return Err(Error::LengthMismatch {
            left: first.len(),
            right: bad.len(),
        });
    }
    let mut column = Vec::with_capacity(rows.len());
    (0..first.len())
        .map(|f| {
            column.clear();
            column.extend(rows.iter().map(|r| r[f]));
            aggregate_series(&column)
        })
        .collect()
}

/// True iff at least `success_fraction` of the `len` bins ending at `end_bin`
/// are valid.
pub fn window_success(valid: &[bool], end_bin: usize, len: usize, success_fraction: f64) -> Result<bool> {
    if len == 0 || end_bin + 1 < len || end_bin >= valid.len() {
        return Err(Error::WindowOutOfRange {
            end_bin,
            len,
            n_bins: valid.len(),
        });
    }
    let count = valid[end_bin + 1 - len..=end_bin].iter().filter(|&&v| v).count();
    Ok(count as f64 / len as f64 >= success_fraction)
}

/// Sample positions of one session: end bins with a usable label and their
/// confidence flags.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleIndex {
    pub end_bins: Vec<usize>,
    pub labels: Vec<AffectLabel>,
    pub face_confident: Vec<bool>,
    pub body_confident: Vec<bool>,
}

impl SampleIndex {
    pub fn build(features: &SessionFeatures, config: &WindowConfig) -> Result<Self> {
        config.validate()?;
        let required = config.max_long_bins();
        if features.n_bins < required {
            return Err(Error::SessionTooShort {
                session_id: features.session_id.clone(),
                n_bins: features.n_bins,
                required,
            });
        }
        let face_counts = prefix_counts(&features.face_valid);
        let body_counts = prefix_counts(&features.body_valid);
        let confident = |counts: &[usize], end: usize| {
            let n = counts[end + 1] - counts[end + 1 - required];
            n as f64 / required as f64 >= config.success_fraction
        };
        let mut index = SampleIndex {
            end_bins: Vec::new(),
            labels: Vec::new(),
            face_confident: Vec::new(),
            body_confident: Vec::new(),
        };
        for end in required - 1..features.n_bins {
            let label = features.labels[end];
            if !label.is_labeled() {
                continue;
            }
            index.end_bins.push(end);
            index.labels.push(label);
            index.face_confident.push(confident(&face_counts, end));
            index.body_confident.push(confident(&body_counts, end));
        }
        if index.end_bins.is_empty() {
            return Err(Error::SessionTooShort {
                session_id: features.session_id.clone(),
                n_bins: features.n_bins,
                required,
            });
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.end_bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.end_bins.is_empty()
    }

    pub fn confident(&self, i: usize) -> bool {
        self.face_confident[i] && self.body_confident[i]
    }
}

fn prefix_counts(flags: &[bool]) -> Vec<usize> {
    let mut out = Vec::with_capacity(flags.len() + 1);
    out.push(0);
    let mut acc = 0;
    for &f in flags {
        acc += f as usize;
        out.push(acc);
    }
    out
}

/// Rolling computation of the six aggregates of one base series at a set of
/// window ends. Sums run over deviations from the first value; the mean is
/// clamped into the window's [min, max].
#[derive(Debug, Default)]
pub struct RollingAggregator {
    short_bins: usize,
    long_bins: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    block: [Vec<f64>; 2],
    max: [Vec<f64>; 2],
    min: [Vec<f64>; 2],
}

impl RollingAggregator {
    pub fn new(short_bins: usize, long_bins: usize) -> Self {
        RollingAggregator {
            short_bins,
            long_bins,
            ..Default::default()
        }
    }

    fn sliding(&mut self, series: &[f64], len: usize, slot: usize) {
        let [prefix, suffix] = &mut self.block;
        sliding_extreme(series, len, prefix, suffix, &mut self.max[slot], f64::max);
        sliding_extreme(series, len, prefix, suffix, &mut self.min[slot], f64::min);
    }

    /// Fills `out[k][i]` with aggregate `k` (flat order within one base
    /// feature) at `end_bins[i]`. Every window must fit in the series.
    pub fn aggregate(&mut self, series: &[f64], end_bins: &[usize], out: &mut [Vec<f64>; 6]) {
        let reference = series.first().copied().unwrap_or(0.0);
        self.sum.clear();
        self.sum_sq.clear();
        self.sum.push(0.0);
        self.sum_sq.push(0.0);
        let (mut s, mut s2) = (0.0, 0.0);
        for &v in series {
            let d = v - reference;
            s += d;
            s2 += d * d;
            self.sum.push(s);
            self.sum_sq.push(s2);
        }
        self.sliding(series, self.short_bins, 0);
        self.sliding(series, self.long_bins, 1);

        for o in out.iter_mut() {
            o.clear();
        }
        for &end in end_bins {
            for (slot, len) in [self.short_bins, self.long_bins].into_iter().enumerate() {
                let start = end + 1 - len;
                let n = len as f64;
                let m = (self.sum[end + 1] - self.sum[start]) / n;
                let var = (self.sum_sq[end + 1] - self.sum_sq[start]) / n - m * m;
                let max = self.max[slot][end];
                let min = self.min[slot][end];
                let mean = (reference + m).clamp(min, max);
                out[slot * 3].push(max);
                out[slot * 3 + 1].push(mean);
                // population std never exceeds half the range
                let half_range = 0.5 * (max - min);
                out[slot * 3 + 2].push(var.max(0.0).sqrt().min(half_range));
            }
        }
    }
}

/// `out[i]` = extreme of `series[i + 1 - len ..= i]` (shorter prefix windows
/// at the start), by block prefix and suffix extremes over blocks of `len`.
fn sliding_extreme(
    series: &[f64],
    len: usize,
    prefix: &mut Vec<f64>,
    suffix: &mut Vec<f64>,
    out: &mut Vec<f64>,
    pick: impl Fn(f64, f64) -> f64,
) {
    let n = series.len();
    let len = len.max(1);
    if len <= 4 {
        out.clear();
        out.extend((0..n).map(|i| {
            let w = &series[(i + 1).saturating_sub(len)..=i];
            w[1..].iter().fold(w[0], |a, &b| pick(a, b))
        }));
        return;
    }
    prefix.clear();
    prefix.extend_from_slice(series);
    suffix.clear();
    suffix.extend_from_slice(series);
    for block in prefix.chunks_mut(len) {
        for i in 1..block.len() {
            block[i] = pick(block[i - 1], block[i]);
        }
    }
    for block in suffix.chunks_mut(len) {
        for i in (0..block.len().saturating_sub(1)).rev() {
            block[i] = pick(block[i + 1], block[i]);
        }
    }
    out.clear();
    out.extend((0..n).map(|i| {
        if i + 1 < len {
            prefix[i]
        } else {
            pick(suffix[i + 1 - len], prefix[i])
        }
    }));
}

/// Computes the aggregate vectors of one group for all samples of a session.
/// Returns one `6 * base_len` row per sample.
pub fn aggregate_group(
    features: &SessionFeatures,
    index: &SampleIndex,
    group: FeatureGroupId,
    config: &WindowConfig,
) -> Vec<Vec<f64>> {
    let base_len = features.base_len(group);
    let mut rows = vec![Vec::with_capacity(base_len * AGGREGATES_PER_FEATURE); index.len()];
    let mut agg = RollingAggregator::new(config.short_bins(), config.long_bins(group.modality()));
    let mut series = Vec::with_capacity(features.n_bins);
    let mut cols: [Vec<f64>; 6] = Default::default();
    for f in 0..base_len {
        features.fill_series(group, f, &mut series);
        agg.aggregate(&series, &index.end_bins, &mut cols);
        for (i, row) in rows.iter_mut().enumerate() {
            row.extend(cols.iter().map(|c| c[i]));
        }
    }
    rows
}

/// One classification instance aligned to the end of its windows.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSample {
    pub infant_id: String,
    pub session_id: String,
    pub end_bin: usize,
    pub label: AffectLabel,
    pub groups: ByGroup<Vec<f64>>,
    pub face_confident: bool,
    pub body_confident: bool,
}

impl WindowedSample {
    pub fn confident(&self) -> bool {
        self.face_confident && self.body_confident
    }
}

/// Materializes every aggregate of every group for every sample of a session.
/// Memory grows with `13 668` face values per sample; the cross-validation
/// path works from [`SampleIndex`] and per-feature series instead.
pub fn build_samples(features: &SessionFeatures, config: &WindowConfig) -> Result<Vec<WindowedSample>> {
    let index = SampleIndex::build(features, config)?;
    let mut per_group = ByGroup::from_fn(|g| aggregate_group(features, &index, g, config));
    let mut samples = Vec::with_capacity(index.len());
    for i in 0..index.len() {
        let groups = ByGroup::from_fn(|g| std::mem::take(&mut per_group[g][i]));
        samples.push(WindowedSample {
            infant_id: features.infant_id.clone(),
            session_id: features.session_id.clone(),
            end_bin: index.end_bins[i],
            label: index.labels[i],
            groups,
            face_confident: index.face_confident[i],
            body_confident: index.body_confident[i],
        });
    }
    Ok(samples)
}

/// Splits samples into the confident subset and the full set.
pub fn partition(samples: &[WindowedSample]) -> (Vec<&WindowedSample>, Vec<&WindowedSample>) {
    let confident = samples.iter().filter(|s| s.confident()).collect();
    (confident, samples.iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_aggregates() {
        assert_eq!(aggregate_series(&[3.0; 8]).unwrap(), [3.0, 3.0, 0.0]);
        let [max, mean, std] = aggregate_series(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(max, 3.0);
        assert_eq!(mean, 2.0);
        // two-pass oracle
        let dev: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| (v - 2.0) * (v - 2.0)).sum();
        assert!((std - (dev / 3.0).sqrt()).abs() < 1e-15);
        assert!((std - 0.816_496_580_927_726).abs() < 1e-15);
        assert!(matches!(aggregate_series(&[]), Err(Error::EmptyWindow)));
        assert!(matches!(aggregate_window(&[]), Err(Error::EmptyWindow)));
    }

    #[test]
    fn success_threshold() {
        assert!(window_success(&[true; 8], 7, 8, 0.9).unwrap());
        let mut seven = [true; 8];
        seven[3] = false;
        assert!(!window_success(&seven, 7, 8, 0.9).unwrap());
        let mut forty = [true; 40];
        for v in forty.iter_mut().take(4) {
            *v = false;
        }
        assert!(window_success(&forty, 39, 40, 0.9).unwrap());
        forty[4] = false;
        assert!(!window_success(&forty, 39, 40, 0.9).unwrap());
        assert!(matches!(
            window_success(&forty, 10, 40, 0.9),
            Err(Error::WindowOutOfRange { .. })
        ));
    }

    #[test]
    fn flat_index_round_trip() {
        for i in 0..60 {
            assert_eq!(AggregateIndex::from_flat(i).flat(), i);
        }
        let a = AggregateIndex::from_flat(10);
        assert_eq!(a.base, 1);
        assert_eq!(a.window, WindowKind::Long);
        assert_eq!(a.stat, Statistic::Mean);
    }

    #[test]
    fn rolling_matches_direct() {
        let series: Vec<f64> = (0..100).map(|i| ((i * 37 % 23) as f64).sin() * 5.0 + 10.0).collect();
        let ends: Vec<usize> = (15..100).collect();
        let mut agg = RollingAggregator::new(2, 16);
        let mut out: [Vec<f64>; 6] = Default::default();
        agg.aggregate(&series, &ends, &mut out);
        for (i, &end) in ends.iter().enumerate() {
            let s = aggregate_series(&series[end - 1..=end]).unwrap();
            let l = aggregate_series(&series[end - 15..=end]).unwrap();
            for k in 0..3 {
                assert!((out[k][i] - s[k]).abs() < 1e-9);
                assert!((out[3 + k][i] - l[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rolling_constant_series_is_exact() {
        let series = vec![0.1; 50];
        let ends: Vec<usize> = (7..50).collect();
        let mut agg = RollingAggregator::new(2, 8);
        let mut out: [Vec<f64>; 6] = Default::default();
        agg.aggregate(&series, &ends, &mut out);
        for col in [&out[0], &out[1], &out[3], &out[4]] {
            assert!(col.iter().all(|&v| v == 0.1));
        }
        assert!(out[2].iter().chain(&out[5]).all(|&v| v == 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(WindowConfig::default().validate().is_ok());
        let bad = WindowConfig {
            short_s: 0.25,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = WindowConfig {
            long_face_s: 128.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = WindowConfig {
            long_body_s: 1.1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
