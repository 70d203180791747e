//! Welch's t-test feature ranking and per-group top-k selection.

use serde::{Deserialize, Serialize};

use crate::domain::AffectLabel;
use crate::error::{Error, Result};
use crate::preprocess::{ByGroup, FeatureGroupId, SessionFeatures};
use crate::windows::{RollingAggregator, SampleIndex, WindowConfig, WindowedSample, AGGREGATES_PER_FEATURE};

pub const DEFAULT_K: usize = 12;

/// Running count, mean and sum of squared deviations of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub n: f64,
    pub mean: f64,
    pub m2: f64,
}

impl Summary {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Summary::default();
        }
        let mean = values.iter().sum::<f64>() / n;
        let m2 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        Summary { n, mean, m2 }
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&mut self, other: &Summary) {
        if other.n == 0.0 {
            return;
        }
        if self.n == 0.0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n / n;
        self.m2 += other.m2 + d * d * self.n * other.n / n;
        self.n = n;
    }

    /// Sample (n - 1) variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2.0 {
            0.0
        } else {
            (self.m2 / (self.n - 1.0)).max(0.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchT {
    pub t: f64,
    pub df: f64,
}

/// Welch's t statistic and Welch–Satterthwaite degrees of freedom.
///
/// When both samples have zero variance the feature carries no signal and the
/// result is `t = 0`, `df = n_a + n_b - 2`.
pub fn welch_t(sample_a: &[f64], sample_b: &[f64]) -> Result<WelchT> {
    welch_from_summaries(&Summary::from_values(sample_a), &Summary::from_values(sample_b))
}

pub fn welch_from_summaries(a: &Summary, b: &Summary) -> Result<WelchT> {
    if a.n < 2.0 || b.n < 2.0 {
        return Err(Error::InsufficientData {
            a: a.n as usize,
            b: b.n as usize,
        });
    }
    let va = a.variance() / a.n;
    let vb = b.variance() / b.n;
    let se2 = va + vb;
    if se2 == 0.0 {
        return Ok(WelchT {
            t: 0.0,
            df: a.n + b.n - 2.0,
        });
    }
    let t = (a.mean - b.mean) / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.n - 1.0) + vb * vb / (b.n - 1.0));
    Ok(WelchT { t, df })
}

/// ln Γ(x) for x > 0 (Lanczos, g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

const CF_TOL: f64 = 1e-15;
const CF_MAX_ITER: usize = 100_000;

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < CF_TOL {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided p-value `2 P(T_df >= |t|) = I_{df / (df + t²)}(df / 2, 1 / 2)`.
pub fn t_sf_two_sided(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    if t.is_nan() || !(df > 0.0) {
        return f64::NAN;
    }
    let x = df / (df + t * t);
    incomplete_beta(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureTest {
    pub index: usize,
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSelection {
    pub group: FeatureGroupId,
    /// Chosen aggregate features, ascending p-value.
    pub chosen: Vec<FeatureTest>,
}

impl GroupSelection {
    pub fn indices(&self) -> Vec<usize> {
        self.chosen.iter().map(|c| c.index).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelection {
    pub fold_id: usize,
    pub groups: Vec<GroupSelection>,
}

impl FeatureSelection {
    pub fn group(&self, group: FeatureGroupId) -> Option<&GroupSelection> {
        self.groups.iter().find(|g| g.group == group)
    }

    /// Keeps only the listed groups, in the given order.
    pub fn restrict(&self, groups: &[FeatureGroupId]) -> Option<FeatureSelection> {
        let picked = groups
            .iter()
            .map(|&g| self.group(g).cloned())
            .collect::<Option<Vec<_>>>()?;
        Some(FeatureSelection {
            fold_id: self.fold_id,
            groups: picked,
        })
    }
}

/// Per aggregate feature, one summary per class (alert, fussy).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroupSummaries {
    pub per_feature: Vec<[Summary; 2]>,
}

impl GroupSummaries {
    pub fn with_len(len: usize) -> Self {
        GroupSummaries {
            per_feature: vec![[Summary::default(); 2]; len],
        }
    }

    pub fn merge(&mut self, other: &GroupSummaries) {
        if self.per_feature.is_empty() {
            self.per_feature = other.per_feature.clone();
            return;
        }
        for (a, b) in self.per_feature.iter_mut().zip(&other.per_feature) {
            a[0].merge(&b[0]);
            a[1].merge(&b[1]);
        }
    }

    pub fn class_counts(&self) -> (usize, usize) {
        self.per_feature
            .first()
            .map(|s| (s[0].n as usize, s[1].n as usize))
            .unwrap_or((0, 0))
    }
}

fn class_slot(label: AffectLabel) -> Option<usize> {
    match label {
        AffectLabel::Alert => Some(0),
        AffectLabel::Fussy => Some(1),
        AffectLabel::Excluded => None,
    }
}

/// Two-pass summaries of `col` restricted to each class's rows, with
/// deviations taken from the column's first value so constant columns stay
/// exact.
fn class_summaries(col: &[f64], rows: &[Vec<usize>; 2]) -> [Summary; 2] {
    let reference = col.first().copied().unwrap_or(0.0);
    std::array::from_fn(|s| {
        let idx = &rows[s];
        if idx.is_empty() {
            return Summary::default();
        }
        let n = idx.len() as f64;
        let shift = idx.iter().map(|&i| col[i] - reference).sum::<f64>() / n;
        let m2 = idx
            .iter()
            .map(|&i| {
                let d = col[i] - reference - shift;
                d * d
            })
            .sum();
        Summary {
            n,
            mean: reference + shift,
            m2,
        }
    })
}

/// Class-conditional summaries of every aggregate feature of one group over
/// the confident samples of a session.
pub fn summarize_session(
    features: &SessionFeatures,
    index: &SampleIndex,
    group: FeatureGroupId,
    config: &WindowConfig,
) -> GroupSummaries {
    let base_len = features.base_len(group);
    let mut out = GroupSummaries::with_len(base_len * AGGREGATES_PER_FEATURE);
    let mut agg = RollingAggregator::new(config.short_bins(), config.long_bins(group.modality()));
    let mut series = Vec::with_capacity(features.n_bins);
    let mut cols: [Vec<f64>; 6] = Default::default();
    let mut rows: [Vec<usize>; 2] = Default::default();
    for i in 0..index.len() {
        if index.confident(i) {
            if let Some(s) = class_slot(index.labels[i]) {
                rows[s].push(i);
            }
        }
    }
    for f in 0..base_len {
        features.fill_series(group, f, &mut series);
        agg.aggregate(&series, &index.end_bins, &mut cols);
        for (k, col) in cols.iter().enumerate() {
            out.per_feature[f * AGGREGATES_PER_FEATURE + k] = class_summaries(col, &rows);
        }
    }
    out
}

/// Ranks features by ascending p-value, then larger |t|, then lower index,
/// and keeps the first `k`.
pub fn rank_group(group: FeatureGroupId, summaries: &GroupSummaries, k: usize) -> Result<GroupSelection> {
    let mut tests = summaries
        .per_feature
        .iter()
        .enumerate()
        .map(|(index, [alert, fussy])| {
            let WelchT { t, df } = welch_from_summaries(alert, fussy)?;
            Ok(FeatureTest {
                index,
                t,
                df,
                p: t_sf_two_sided(t, df),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    tests.sort_by(|a, b| {
        a.p.total_cmp(&b.p)
            .then(b.t.abs().total_cmp(&a.t.abs()))
            .then(a.index.cmp(&b.index))
    });
    tests.truncate(k);
    Ok(GroupSelection { group, chosen: tests })
}

pub fn select_from_summaries(
    summaries: &ByGroup<GroupSummaries>,
    groups: &[FeatureGroupId],
    k: usize,
    fold_id: usize,
) -> Result<FeatureSelection> {
    let mut out = Vec::with_capacity(groups.len());
    for &group in groups {
        let (alert, fussy) = summaries[group].class_counts();
        if alert < 2 || fussy < 2 {
            return Err(Error::SingleClassFold {
                fold: fold_id,
                alert,
                fussy,
            });
        }
        out.push(rank_group(group, &summaries[group], k)?);
    }
    Ok(FeatureSelection {
        fold_id,
        groups: out,
    })
}

/// Fits the selection on materialized training samples (every sample given
/// is used).
pub fn select_top_k(
    samples: &[WindowedSample],
    groups: &[FeatureGroupId],
    k: usize,
    fold_id: usize,
) -> Result<FeatureSelection> {
    let summaries = ByGroup::from_fn(|group| {
        if !groups.contains(&group) {
            return GroupSummaries::default();
        }
        let len = samples.first().map_or(0, |s| s.groups[group].len());
        let mut out = GroupSummaries::with_len(len);
        for sample in samples {
            if let Some(slot) = class_slot(sample.label) {
                for (s, &v) in out.per_feature.iter_mut().zip(&sample.groups[group]) {
                    s[slot].push(v);
                }
            }
        }
        out
    });
    select_from_summaries(&summaries, groups, k, fold_id)
}
