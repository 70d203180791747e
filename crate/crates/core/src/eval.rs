//! Subject-disjoint cross-validation, AUC and temporal accuracy curves.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{AffectLabel, Session};
use crate::error::{Error, Result};
use crate::model::{fit, late_fuse, FeatureMatrix, GroupedModel, ModelSpec, TrainConfig, DECISION_THRESHOLD};
use crate::preprocess::{ByGroup, FeatureGroupId, PreprocessConfig, SessionFeatures};
use crate::rng::{derive_seed, rng_for};
use crate::select::{select_from_summaries, summarize_session, FeatureSelection, GroupSummaries};
use crate::windows::{AggregateIndex, RollingAggregator, SampleIndex, WindowConfig, AGGREGATES_PER_FEATURE};

pub const DEFAULT_FOLDS: usize = 5;
/// Curve bins with this many samples or fewer are not reported.
pub const MIN_CURVE_SAMPLES: usize = 3;
const FOLD_SEED_TAG: u64 = 0x666f_6c64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub folds: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, infant_id: &str) -> Option<usize> {
        self.folds.get(infant_id).copied()
    }

    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.folds
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

/// Sorts infants by descending fussy fraction (ties in seeded random order)
/// and deals them to folds in a snake pattern.
pub fn stratified_subject_folds(infants: &[(String, f64)], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k == 0 || infants.len() < k {
        return Err(Error::TooFewInfants {
            k,
            found: infants.len(),
        });
    }
    let mut order: Vec<&(String, f64)> = infants.iter().collect();
    order.sort_by(|a, b| a.0.cmp(&b.0));
    order.shuffle(&mut rng_for(derive_seed(seed, FOLD_SEED_TAG), 0));
    order.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut folds = BTreeMap::new();
    for (i, (id, _)) in order.into_iter().enumerate() {
        let round = i / k;
        let pos = i % k;
        let fold = if round % 2 == 0 { pos } else { k - 1 - pos };
        if folds.insert(id.clone(), fold).is_some() {
            return Err(Error::Config(format!("infant {id} listed twice")));
        }
    }
    Ok(FoldAssignment { k, folds })
}

/// Area under the ROC curve by the rank-sum formula with mid-ranks for ties.
pub fn auc(scores: &[f64], positives: &[bool]) -> Result<f64> {
    if scores.len() != positives.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: positives.len(),
        });
    }
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their mean
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * order[i..j].iter().filter(|&&o| positives[o]).count() as f64;
        i = j;
    }
    let np = n_pos as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Fraction of samples whose thresholded prediction matches the label.
pub fn accuracy(probs: &[f64], labels: &[AffectLabel]) -> Option<f64> {
    if probs.is_empty() {
        return None;
    }
    let correct = probs
        .iter()
        .zip(labels)
        .filter(|(&p, &l)| predicted_label(p) == l)
        .count();
    Some(correct as f64 / probs.len() as f64)
}

pub fn predicted_label(prob: f64) -> AffectLabel {
    if prob >= DECISION_THRESHOLD {
        AffectLabel::Fussy
    } else {
        AffectLabel::Alert
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub infant_id: String,
    pub session_id: String,
    pub end_bin: usize,
    pub label: AffectLabel,
    pub prob: f64,
    pub predicted: AffectLabel,
    pub confident: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionTrace {
    pub entries: Vec<TraceEntry>,
}

impl PredictionTrace {
    fn scores(&self, confident_only: bool) -> (Vec<f64>, Vec<AffectLabel>) {
        self.entries
            .iter()
            .filter(|e| !confident_only || e.confident)
            .map(|e| (e.prob, e.label))
            .unzip()
    }

    /// AUC over all entries, or over confident entries only.
    pub fn auc(&self, confident_only: bool) -> Result<f64> {
        let (scores, labels) = self.scores(confident_only);
        let pos: Vec<bool> = labels.iter().map(|l| l.is_fussy()).collect();
        auc(&scores, &pos)
    }

    pub fn accuracy(&self, confident_only: bool) -> Option<f64> {
        let (scores, labels) = self.scores(confident_only);
        accuracy(&scores, &labels)
    }

    pub fn restrict_confident(&self) -> PredictionTrace {
        PredictionTrace {
            entries: self.entries.iter().filter(|e| e.confident).cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    /// `None` when the test fold holds a single class.
    pub auc_confident: Option<f64>,
    pub auc_total: Option<f64>,
    pub accuracy_confident: Option<f64>,
    pub accuracy_total: Option<f64>,
    pub n_confident: usize,
    pub n_total: usize,
}

impl FoldMetrics {
    fn from_trace(fold: usize, trace: &PredictionTrace) -> Self {
        FoldMetrics {
            fold,
            auc_confident: trace.auc(true).ok(),
            auc_total: trace.auc(false).ok(),
            accuracy_confident: trace.accuracy(true),
            accuracy_total: trace.accuracy(false),
            n_confident: trace.entries.iter().filter(|e| e.confident).count(),
            n_total: trace.entries.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCv {
    pub spec: ModelSpec,
    pub folds: Vec<FoldMetrics>,
    pub trace: PredictionTrace,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl ModelCv {
    /// Mean over folds whose test set holds both classes.
    pub fn mean_auc_confident(&self) -> Option<f64> {
        mean_defined(self.folds.iter().map(|f| f.auc_confident))
    }

    pub fn mean_auc_total(&self) -> Option<f64> {
        mean_defined(self.folds.iter().map(|f| f.auc_total))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub assignment: FoldAssignment,
    pub models: Vec<ModelCv>,
}

impl CvResult {
    pub fn model(&self, spec: ModelSpec) -> Option<&ModelCv> {
        self.models.iter().find(|m| m.spec == spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub window: WindowConfig,
    pub train: TrainConfig,
    pub k: usize,
    /// Seeds the fold assignment.
    pub seed: u64,
    pub models: Vec<ModelSpec>,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            window: WindowConfig::default(),
            train: TrainConfig::default(),
            k: DEFAULT_FOLDS,
            seed: 0,
            models: vec![ModelSpec::Joint],
        }
    }
}

#[derive(Debug)]
pub struct PreparedSession {
    pub features: SessionFeatures,
    pub index: SampleIndex,
}

type SummaryKey = (FeatureGroupId, usize);

/// Normalized sessions with their sample positions, plus cached per-session
/// selection statistics keyed by group and long-window length.
#[derive(Debug)]
pub struct PreparedDataset {
    pub sessions: Vec<PreparedSession>,
    window: WindowConfig,
    cache: Mutex<HashMap<SummaryKey, Arc<Vec<GroupSummaries>>>>,
}

impl PreparedDataset {
    /// Sessions too short for one sample are returned separately.
    pub fn new(
        sessions: &[Session],
        preprocess: &PreprocessConfig,
        window: &WindowConfig,
    ) -> Result<(Self, Vec<(String, Error)>)> {
        let features = sessions
            .par_iter()
            .map(|s| SessionFeatures::from_session(s, preprocess))
            .collect::<Result<Vec<_>>>()?;
        Self::from_features(features, window)
    }

    pub fn from_features(
        features: Vec<SessionFeatures>,
        window: &WindowConfig,
    ) -> Result<(Self, Vec<(String, Error)>)> {
        window.validate()?;
        let mut sessions = Vec::with_capacity(features.len());
        let mut skipped = Vec::new();
        for f in features {
            match SampleIndex::build(&f, window) {
                Ok(index) => sessions.push(PreparedSession { features: f, index }),
                Err(e @ Error::SessionTooShort { .. }) => skipped.push((f.session_id.clone(), e)),
                Err(e) => return Err(e),
            }
        }
        Ok((
            PreparedDataset {
                sessions,
                window: *window,
                cache: Mutex::new(HashMap::new()),
            },
            skipped,
        ))
    }

    pub fn window(&self) -> &WindowConfig {
        &self.window
    }

    /// Per infant: fraction of labeled samples that are fussy.
    pub fn fussy_fractions(&self) -> Vec<(String, f64)> {
        let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for s in &self.sessions {
            let c = counts.entry(&s.features.infant_id).or_default();
            c.0 += s.index.labels.iter().filter(|l| l.is_fussy()).count();
            c.1 += s.index.len();
        }
        counts
            .into_iter()
            .map(|(id, (f, n))| (id.to_string(), f as f64 / n.max(1) as f64))
            .collect()
    }

    pub fn bin_labels(&self) -> BTreeMap<String, Vec<AffectLabel>> {
        self.sessions
            .iter()
            .map(|s| (s.features.session_id.clone(), s.features.labels.clone()))
            .collect()
    }

    fn check_compatible(&self, window: &WindowConfig) -> Result<()> {
        window.validate()?;
        let w = &self.window;
        if w.short_s != window.short_s
            || w.max_long_s != window.max_long_s
            || w.success_fraction != window.success_fraction
            || w.bin_width_s != window.bin_width_s
        {
            return Err(Error::Config(
                "window config differs from the prepared dataset beyond the long windows".into(),
            ));
        }
        Ok(())
    }

    /// Per-session class summaries of every aggregate of `group`.
    pub fn summaries(&self, group: FeatureGroupId, window: &WindowConfig) -> Arc<Vec<GroupSummaries>> {
        let key = (group, window.long_bins(group.modality()));
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Arc::clone(hit);
        }
        let computed: Arc<Vec<GroupSummaries>> = Arc::new(
            self.sessions
                .par_iter()
                .map(|s| summarize_session(&s.features, &s.index, group, window))
                .collect(),
        );
        let mut cache = self.cache.lock().expect("cache lock");
        Arc::clone(cache.entry(key).or_insert(computed))
    }

    pub fn clear_cache(&self) {
        self.cache.lock().expect("cache lock").clear();
    }
}

/// Computes only the selected aggregates for every sample of a session.
pub fn project_session(
    features: &SessionFeatures,
    index: &SampleIndex,
    selection: &FeatureSelection,
    window: &WindowConfig,
) -> FeatureMatrix {
    let mut m = FeatureMatrix::for_selection(selection);
    let n = index.len();
    m.n_rows = n;
    let mut series = Vec::with_capacity(features.n_bins);
    let mut cols: [Vec<f64>; 6] = Default::default();
    for (b, gs) in selection.groups.iter().enumerate() {
        let w = gs.chosen.len();
        let mut block = vec![0.0; n * w];
        let mut by_base: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
        for (pos, c) in gs.chosen.iter().enumerate() {
            let ai = AggregateIndex::from_flat(c.index);
            by_base
                .entry(ai.base)
                .or_default()
                .push((pos, c.index % AGGREGATES_PER_FEATURE));
        }
        let mut agg = RollingAggregator::new(window.short_bins(), window.long_bins(gs.group.modality()));
        for (base, targets) in by_base {
            features.fill_series(gs.group, base, &mut series);
            agg.aggregate(&series, &index.end_bins, &mut cols);
            for (pos, slot) in targets {
                for (i, &v) in cols[slot].iter().enumerate() {
                    block[i * w + pos] = v;
                }
            }
        }
        m.data[b] = block;
    }
    m
}

fn append_rows(dst: &mut FeatureMatrix, src: &FeatureMatrix, rows: impl Iterator<Item = usize>) {
    for i in rows {
        for ((d, s), &w) in dst.data.iter_mut().zip(&src.data).zip(&src.widths) {
            d.extend_from_slice(&s[i * w..(i + 1) * w]);
        }
        dst.n_rows += 1;
    }
}

fn needed_groups(models: &[ModelSpec]) -> Vec<FeatureGroupId> {
    FeatureGroupId::ALL
        .into_iter()
        .filter(|g| models.iter().any(|m| m.groups().contains(g)))
        .collect()
}

/// Models to fit so that every requested spec can be scored.
fn fitted_specs(models: &[ModelSpec]) -> Vec<ModelSpec> {
    let mut out = Vec::new();
    for &m in models {
        let parts: &[ModelSpec] = match m {
            ModelSpec::Late => &[ModelSpec::Face, ModelSpec::Body],
            ModelSpec::Face => &[ModelSpec::Face],
            ModelSpec::Body => &[ModelSpec::Body],
            ModelSpec::Joint => &[ModelSpec::Joint],
        };
        for &p in parts {
            if !out.contains(&p) {
                out.push(p);
            }
        }
    }
    out
}

/// Trained models for a set of specs, sharing one feature selection.
pub struct TrainedSet {
    pub selection: FeatureSelection,
    pub models: Vec<(ModelSpec, GroupedModel)>,
}

impl TrainedSet {
    fn get(&self, spec: ModelSpec) -> &GroupedModel {
        &self.models.iter().find(|(s, _)| *s == spec).expect("fitted").1
    }

    /// Probabilities of `spec` for every row of `x`.
    pub fn predict(&self, spec: ModelSpec, x: &FeatureMatrix) -> Result<Vec<f64>> {
        match spec {
            ModelSpec::Late => {
                let face = self.get(ModelSpec::Face).predict_matrix(x)?;
                let body = self.get(ModelSpec::Body).predict_matrix(x)?;
                Ok(face.iter().zip(&body).map(|(&f, &b)| late_fuse(f, b)).collect())
            }
            other => self.get(other).predict_matrix(x),
        }
    }
}

/// Selects features on the confident samples of `train` and fits every model
/// needed for `models`.
pub fn train_models(
    data: &PreparedDataset,
    train: &[usize],
    models: &[ModelSpec],
    window: &WindowConfig,
    config: &TrainConfig,
    fold_id: usize,
) -> Result<TrainedSet> {
    let groups = needed_groups(models);
    let summaries = ByGroup::from_fn(|g| {
        if !groups.contains(&g) {
            return GroupSummaries::default();
        }
        let per_session = data.summaries(g, window);
        let mut merged = GroupSummaries::default();
        for &s in train {
            merged.merge(&per_session[s]);
        }
        merged
    });
    let selection = select_from_summaries(&summaries, &groups, config.top_k, fold_id)?;

    let mut x = FeatureMatrix::for_selection(&selection);
    let mut labels = Vec::new();
    for &s in train {
        let sess = &data.sessions[s];
        let m = project_session(&sess.features, &sess.index, &selection, window);
        let rows: Vec<usize> = (0..sess.index.len()).filter(|&i| sess.index.confident(i)).collect();
        labels.extend(rows.iter().map(|&i| sess.index.labels[i]));
        append_rows(&mut x, &m, rows.into_iter());
    }

    let mut fitted = Vec::new();
    for spec in fitted_specs(models) {
        let sel = selection
            .restrict(spec.groups())
            .expect("selection covers every needed group");
        fitted.push((spec, fit(&sel, &x, &labels, config, window)?));
    }
    Ok(TrainedSet {
        selection,
        models: fitted,
    })
}

/// Trace entries of one session for `spec`.
pub fn predict_session(
    set: &TrainedSet,
    spec: ModelSpec,
    session: &PreparedSession,
    window: &WindowConfig,
) -> Result<Vec<TraceEntry>> {
    let x = project_session(&session.features, &session.index, &set.selection, window);
    let probs = set.predict(spec, &x)?;
    Ok(trace_entries(session, &probs))
}

fn trace_entries(session: &PreparedSession, probs: &[f64]) -> Vec<TraceEntry> {
    probs
        .iter()
        .enumerate()
        .map(|(i, &prob)| TraceEntry {
            infant_id: session.features.infant_id.clone(),
            session_id: session.features.session_id.clone(),
            end_bin: session.index.end_bins[i],
            label: session.index.labels[i],
            prob,
            predicted: predicted_label(prob),
            confident: session.index.confident(i),
        })
        .collect()
}

fn run_fold(
    data: &PreparedDataset,
    config: &CvConfig,
    assignment: &FoldAssignment,
    fold: usize,
) -> Result<Vec<PredictionTrace>> {
    let in_fold = |s: &PreparedSession| assignment.fold_of(&s.features.infant_id) == Some(fold);
    let train: Vec<usize> = (0..data.sessions.len()).filter(|&i| !in_fold(&data.sessions[i])).collect();
    let test: Vec<usize> = (0..data.sessions.len()).filter(|&i| in_fold(&data.sessions[i])).collect();
    let train_config = TrainConfig {
        seed: derive_seed(config.train.seed, fold as u64),
        ..config.train
    };
    let set = train_models(data, &train, &config.models, &config.window, &train_config, fold)?;

    let mut traces = vec![PredictionTrace::default(); config.models.len()];
    for &s in &test {
        let sess = &data.sessions[s];
        let x = project_session(&sess.features, &sess.index, &set.selection, &config.window);
        for (trace, &spec) in traces.iter_mut().zip(&config.models) {
            let probs = set.predict(spec, &x)?;
            trace.entries.extend(trace_entries(sess, &probs));
        }
    }
    Ok(traces)
}

/// Subject-disjoint k-fold cross-validation. Each fold trains on the
/// confident samples of the other folds and scores every sample of its own.
pub fn run_cv(data: &PreparedDataset, config: &CvConfig) -> Result<CvResult> {
    data.check_compatible(&config.window)?;
    config.train.validate()?;
    if config.models.is_empty() {
        return Err(Error::Config("no models requested".into()));
    }
    let assignment = stratified_subject_folds(&data.fussy_fractions(), config.k, config.seed)?;
    // fill the cache once instead of racing from every fold
    for g in needed_groups(&config.models) {
        data.summaries(g, &config.window);
    }
    let per_fold = (0..config.k)
        .into_par_iter()
        .map(|fold| run_fold(data, config, &assignment, fold))
        .collect::<Vec<_>>();

    let mut models: Vec<ModelCv> = config
        .models
        .iter()
        .map(|&spec| ModelCv {
            spec,
            folds: Vec::with_capacity(config.k),
            trace: PredictionTrace::default(),
        })
        .collect();
    for (fold, result) in per_fold.into_iter().enumerate() {
        for (m, trace) in models.iter_mut().zip(result?) {
            m.folds.push(FoldMetrics::from_trace(fold, &trace));
            m.trace.entries.extend(trace.entries);
        }
    }
    Ok(CvResult { assignment, models })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    Tsat,
    Tspt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveBin {
    pub bin_start_s: f64,
    pub mean_accuracy: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
    pub n_samples: usize,
    pub n_infants: usize,
    /// Correct predictions pooled over infants.
    pub n_correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalCurve {
    pub kind: CurveKind,
    pub state: AffectLabel,
    pub bins: Vec<CurveBin>,
}

/// Normal-approximation interval of the mean, clamped to [0, 1].
pub fn confidence_interval_95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    // offsetting by the first value keeps constant inputs exact
    let v0 = values[0];
    let mean = v0 + values.iter().map(|v| v - v0).sum::<f64>() / n as f64;
    if n == 1 {
        let m = mean.clamp(0.0, 1.0);
        return (m, m);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    let half = 1.96 * var.sqrt() / (n as f64).sqrt();
    ((mean - half).clamp(0.0, 1.0), (mean + half).clamp(0.0, 1.0))
}

/// Groups `(state, bin, infant, correct)` records into the two state curves.
fn build_curves(
    kind: CurveKind,
    bin_width_s: f64,
    records: impl Iterator<Item = (AffectLabel, usize, String, bool)>,
) -> (TemporalCurve, TemporalCurve) {
    // (state, bin) -> infant -> (correct, n)
    let mut groups: BTreeMap<(bool, usize), BTreeMap<String, (usize, usize)>> = BTreeMap::new();
    for (state, bin, infant, correct) in records {
        let c = groups.entry((state.is_fussy(), bin)).or_default().entry(infant).or_default();
        c.0 += correct as usize;
        c.1 += 1;
    }
    let mut alert = TemporalCurve {
        kind,
        state: AffectLabel::Alert,
        bins: Vec::new(),
    };
    let mut fussy = TemporalCurve {
        kind,
        state: AffectLabel::Fussy,
        bins: Vec::new(),
    };
    for ((is_fussy, bin), infants) in groups {
        let n_samples: usize = infants.values().map(|c| c.1).sum();
        if n_samples <= MIN_CURVE_SAMPLES {
            continue;
        }
        let accs: Vec<f64> = infants.values().map(|&(c, n)| c as f64 / n as f64).collect();
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let (lo, hi) = confidence_interval_95(&accs);
        let out = CurveBin {
            bin_start_s: bin as f64 * bin_width_s,
            mean_accuracy: mean,
            ci95_low: lo.min(mean),
            ci95_high: hi.max(mean),
            n_samples,
            n_infants: accs.len(),
            n_correct: infants.values().map(|c| c.0).sum(),
        };
        if is_fussy {
            fussy.bins.push(out);
        } else {
            alert.bins.push(out);
        }
    }
    (alert, fussy)
}

/// Entries grouped by session, in trace order.
fn by_session(trace: &PredictionTrace) -> Vec<Vec<&TraceEntry>> {
    let mut order: Vec<&str> = Vec::new();
    let mut map: HashMap<&str, Vec<&TraceEntry>> = HashMap::new();
    for e in &trace.entries {
        map.entry(&e.session_id)
            .or_insert_with(|| {
                order.push(&e.session_id);
                Vec::new()
            })
            .push(e);
    }
    order
        .into_iter()
        .map(|s| {
            let mut v = map.remove(s).expect("present");
            v.sort_by_key(|e| e.end_bin);
            v
        })
        .collect()
}

/// Start bin of the label run containing each bin; bin 0 starts a run.
fn run_starts(labels: &[AffectLabel]) -> Vec<usize> {
    let mut out = Vec::with_capacity(labels.len());
    for (b, l) in labels.iter().enumerate() {
        if b == 0 || labels[b - 1] != *l {
            out.push(b);
        } else {
            out.push(out[b - 1]);
        }
    }
    out
}

/// Time since the true label last changed, keyed on the true state.
/// `bin_labels` maps session ids to per-bin labels; sessions absent from it
/// fall back to the labels carried by the trace.
pub fn tsat_curve(
    trace: &PredictionTrace,
    bin_labels: &BTreeMap<String, Vec<AffectLabel>>,
    bin_width_s: f64,
) -> (TemporalCurve, TemporalCurve) {
    let mut records = Vec::with_capacity(trace.entries.len());
    for session in by_session(trace) {
        let id = &session[0].session_id;
        match bin_labels.get(id) {
            Some(labels) => {
                let starts = run_starts(labels);
                for e in session {
                    let start = starts.get(e.end_bin).copied().unwrap_or(0);
                    records.push((e.label, e.end_bin - start, e.infant_id.clone(), e.predicted == e.label));
                }
            }
            None => {
                let mut start = 0;
                for (i, e) in session.iter().enumerate() {
                    if i > 0 && session[i - 1].label != e.label {
                        start = e.end_bin;
                    }
                    records.push((e.label, e.end_bin - start, e.infant_id.clone(), e.predicted == e.label));
                }
            }
        }
    }
    build_curves(CurveKind::Tsat, bin_width_s, records.into_iter())
}

/// Time since the thresholded prediction last changed, keyed on the
/// predicted state. The first sample of a session has time 0.
pub fn tspt_curve(trace: &PredictionTrace, bin_width_s: f64) -> (TemporalCurve, TemporalCurve) {
    let mut records = Vec::with_capacity(trace.entries.len());
    for session in by_session(trace) {
        let mut start = session[0].end_bin;
        for (i, e) in session.iter().enumerate() {
            if i > 0 && session[i - 1].predicted != e.predicted {
                start = e.end_bin;
            }
            records.push((e.predicted, e.end_bin - start, e.infant_id.clone(), e.predicted == e.label));
        }
    }
    build_curves(CurveKind::Tspt, bin_width_s, records.into_iter())
}

/// Seventeen significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn format_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), format_real)
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes `bytes` to a temporary sibling of `path`, then renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.{}.{}.tmp",
        name.to_string_lossy(),
        std::process::id(),
        TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    std::fs::write(&tmp, bytes)?;
    if let Err(e) = std::fs::rename(&tmp, path) {
        let _ = std::fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// One row per (model, fold, dataset).
pub fn write_metrics(path: &Path, models: &[ModelCv]) -> Result<()> {
    let rows = models.iter().flat_map(|m| {
        m.folds.iter().flat_map(move |f| {
            [
                ("confident", f.auc_confident, f.accuracy_confident, f.n_confident),
                ("total", f.auc_total, f.accuracy_total, f.n_total),
            ]
            .into_iter()
            .map(move |(ds, auc, acc, n)| {
                vec![
                    m.spec.name().to_string(),
                    f.fold.to_string(),
                    ds.to_string(),
                    format_opt(auc),
                    format_opt(acc),
                    n.to_string(),
                ]
            })
        })
    });
    let bytes = csv_bytes(&["model", "fold", "dataset", "auc", "accuracy", "n_samples"], rows)?;
    write_atomic(path, &bytes)
}

pub fn write_curves(path: &Path, curves: &[(ModelSpec, Vec<TemporalCurve>)]) -> Result<()> {
    let rows = curves.iter().flat_map(|(spec, list)| {
        list.iter().flat_map(move |c| {
            c.bins.iter().map(move |b| {
                vec![
                    spec.name().to_string(),
                    c.state.as_str().to_string(),
                    format_real(b.bin_start_s),
                    format_real(b.mean_accuracy),
                    format_real(b.ci95_low),
                    format_real(b.ci95_high),
                    b.n_samples.to_string(),
                    b.n_infants.to_string(),
                ]
            })
        })
    });
    let header = [
        "model",
        "state",
        "bin_start_s",
        "mean_acc",
        "ci_low",
        "ci_high",
        "n_samples",
        "n_infants",
    ];
    write_atomic(path, &csv_bytes(&header, rows)?)
}

pub fn write_trace(path: &Path, traces: &[(ModelSpec, &PredictionTrace)], bin_width_s: f64) -> Result<()> {
    let rows = traces.iter().flat_map(|(spec, t)| {
        t.entries.iter().map(move |e| {
            vec![
                spec.name().to_string(),
                e.infant_id.clone(),
                e.session_id.clone(),
                e.end_bin.to_string(),
                format_real(e.end_bin as f64 * bin_width_s),
                e.label.as_str().to_string(),
                format_real(e.prob),
                e.predicted.as_str().to_string(),
                e.confident.to_string(),
            ]
        })
    });
    let header = [
        "model",
        "infant_id",
        "session_id",
        "end_bin",
        "time_s",
        "label",
        "prob",
        "predicted",
        "confident",
    ];
    write_atomic(path, &csv_bytes(&header, rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        let s = [0.9, 0.8, 0.2, 0.1];
        let l = [true, true, false, false];
        assert_eq!(auc(&s, &l).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 6], &[true, false, true, false, false, false]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(Error::SingleClass)));
    }

    #[test]
    fn fold_sizes() {
        let infants: Vec<(String, f64)> = (0..26).map(|i| (format!("i{i:02}"), (i % 7) as f64 / 7.0)).collect();
        let a = stratified_subject_folds(&infants, 5, 3).unwrap();
        let mut sizes: Vec<usize> = (0..5).map(|f| a.members(f).len()).collect();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(sizes, vec![6, 5, 5, 5, 5]);
        let one: Vec<(String, f64)> = vec![("a".into(), 0.1)];
        assert!(matches!(
            stratified_subject_folds(&one, 5, 0),
            Err(Error::TooFewInfants { k: 5, found: 1 })
        ));
    }

    #[test]
    fn ci_examples() {
        assert_eq!(confidence_interval_95(&[0.8, 0.8, 0.8]), (0.8, 0.8));
        assert_eq!(confidence_interval_95(&[0.3]), (0.3, 0.3));
        let (lo, hi) = confidence_interval_95(&[0.5, 0.7, 0.9]);
        // s = 0.2, half = 1.96 * 0.2 / sqrt(3)
        let half = 1.96 * 0.2 / 3f64.sqrt();
        assert!((lo - (0.7 - half)).abs() < 1e-12);
        assert!((hi - (0.7 + half)).abs() < 1e-12);
    }

    #[test]
    fn tsat_floor_arithmetic() {
        // transition at 10 s = bin 40; samples at bins 40 and 41
        let mut labels = vec![AffectLabel::Alert; 40];
        labels.extend(vec![AffectLabel::Fussy; 20]);
        assert_eq!(run_starts(&labels)[40], 40);
        assert_eq!(run_starts(&labels)[41], 40);
        assert_eq!(run_starts(&labels)[39], 0);
    }
}
