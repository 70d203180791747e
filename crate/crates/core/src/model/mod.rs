//! Grouped-branch classifier: training with class-weighted binary
//! cross-entropy and Adam, joint and late fusion, embedding PCA and the model
//! file format.

mod io;
mod network;
mod pca;

pub use io::{load_model, read_model, save_model, write_model, FORMAT_VERSION, MAGIC};
pub use network::{sigmoid, ForwardCache, Network};
pub use pca::{pca_embed, PcaResult};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::domain::AffectLabel;
use crate::error::{Error, Result};
use crate::preprocess::FeatureGroupId;
use crate::rng::rng_for;
use crate::select::{select_top_k, FeatureSelection, DEFAULT_K};
use crate::windows::{WindowConfig, WindowedSample};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the loss.
pub const PROB_CLAMP: f64 = 1e-7;
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub class_weight_fussy: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub branch_width: usize,
    pub embedding_width: usize,
    pub top_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            class_weight_fussy: 9.0,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 32,
            seed: 0,
            branch_width: 16,
            embedding_width: 32,
            top_k: DEFAULT_K,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.class_weight_fussy > 0.0) {
            return Err(Error::Config("class_weight_fussy must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.branch_width == 0 || self.embedding_width == 0 || self.top_k == 0 {
            return Err(Error::Config("layer widths and top_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Which feature groups a classifier consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSpec {
    Face,
    Body,
    /// One network over all four groups, fused at the concatenation layer.
    Joint,
    /// Equal-weight average of the face and body model probabilities.
    Late,
}

impl ModelSpec {
    pub const ALL: [ModelSpec; 4] = [ModelSpec::Face, ModelSpec::Body, ModelSpec::Joint, ModelSpec::Late];

    pub fn groups(self) -> &'static [FeatureGroupId] {
        use FeatureGroupId::*;
        match self {
            ModelSpec::Face => &[FaceDistances, FaceAus],
            ModelSpec::Body => &[BodyDistances, BodySpeeds],
            ModelSpec::Joint | ModelSpec::Late => &[FaceDistances, FaceAus, BodyDistances, BodySpeeds],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelSpec::Face => "face",
            ModelSpec::Body => "body",
            ModelSpec::Joint => "joint",
            ModelSpec::Late => "late",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }
}

/// Soft vote with equal weights.
pub fn late_fuse(p_face: f64, p_body: f64) -> f64 {
    (p_face + p_body) / 2.0
}

/// Class-weighted binary cross-entropy; fussy is the positive class.
pub fn weighted_bce(prob: f64, label: AffectLabel, class_weight_fussy: f64) -> f64 {
    let p = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if label.is_fussy() {
        -class_weight_fussy * p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Loss of one standardized sample and its gradient with respect to every
/// network parameter.
pub fn sample_loss_grad(
    network: &Network,
    inputs: &[&[f64]],
    label: AffectLabel,
    class_weight_fussy: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut cache = ForwardCache::default();
    let prob = network.forward(inputs, &mut cache)?;
    let mut grad = vec![0.0; network.n_params()];
    network.backward(inputs, &cache, dlogit(prob, label, class_weight_fussy), &mut grad);
    Ok((weighted_bce(prob, label, class_weight_fussy), grad))
}

fn dlogit(prob: f64, label: AffectLabel, class_weight_fussy: f64) -> f64 {
    if label.is_fussy() {
        class_weight_fussy * (prob - 1.0)
    } else {
        prob
    }
}

/// Selected (unstandardized) features of a set of samples, one row-major
/// matrix per group.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMatrix {
    pub groups: Vec<FeatureGroupId>,
    pub widths: Vec<usize>,
    pub data: Vec<Vec<f64>>,
    pub n_rows: usize,
}

impl FeatureMatrix {
    pub fn new(groups: Vec<FeatureGroupId>, widths: Vec<usize>) -> Self {
        let data = vec![Vec::new(); groups.len()];
        FeatureMatrix {
            groups,
            widths,
            data,
            n_rows: 0,
        }
    }

    /// Empty matrix with one block per selected group.
    pub fn for_selection(selection: &FeatureSelection) -> Self {
        FeatureMatrix::new(
            selection.groups.iter().map(|g| g.group).collect(),
            selection.groups.iter().map(|g| g.chosen.len()).collect(),
        )
    }

    pub fn push_row(&mut self, row: &[&[f64]]) {
        for ((block, values), &w) in self.data.iter_mut().zip(row).zip(&self.widths) {
            debug_assert_eq!(values.len(), w);
            block.extend_from_slice(values);
        }
        self.n_rows += 1;
    }

    fn block(&self, group: FeatureGroupId) -> Option<usize> {
        self.groups.iter().position(|&g| g == group)
    }

    /// Row `i` restricted to `groups`, in that order.
    pub fn row(&self, i: usize, groups: &[FeatureGroupId]) -> Result<Vec<&[f64]>> {
        groups
            .iter()
            .map(|&g| {
                let b = self.block(g).ok_or_else(|| {
                    Error::DimensionMismatch(format!("feature matrix lacks group {}", g.name()))
                })?;
                let w = self.widths[b];
                Ok(&self.data[b][i * w..(i + 1) * w])
            })
            .collect()
    }

    /// Projects materialized samples onto a selection.
    pub fn from_samples(samples: &[&WindowedSample], selection: &FeatureSelection) -> Self {
        let mut m = FeatureMatrix::for_selection(selection);
        for s in samples {
            for (b, gs) in selection.groups.iter().enumerate() {
                let values = &s.groups[gs.group];
                m.data[b].extend(gs.chosen.iter().map(|c| values[c.index]));
            }
            m.n_rows += 1;
        }
        m
    }
}

/// Per-feature `(mean, std)` z-scoring fit on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub per_group: Vec<Vec<(f64, f64)>>,
}

impl Standardization {
    fn fit(x: &FeatureMatrix, groups: &[FeatureGroupId]) -> Result<Self> {
        let mut per_group = Vec::with_capacity(groups.len());
        for &g in groups {
            let b = x.block(g).ok_or_else(|| {
                Error::DimensionMismatch(format!("feature matrix lacks group {}", g.name()))
            })?;
            let w = x.widths[b];
            let n = x.n_rows as f64;
            let stats = (0..w)
                .map(|f| {
                    let col = (0..x.n_rows).map(|i| x.data[b][i * w + f]);
                    let mean = col.clone().sum::<f64>() / n;
                    let var = col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let std = var.sqrt();
                    (mean, if std > 1e-12 { std } else { 1.0 })
                })
                .collect();
            per_group.push(stats);
        }
        Ok(Standardization { per_group })
    }

    pub fn apply(&self, raw: &[&[f64]]) -> Vec<Vec<f64>> {
        raw.iter()
            .zip(&self.per_group)
            .map(|(x, stats)| x.iter().zip(stats).map(|(v, (m, s))| (v - m) / s).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedModel {
    pub groups: Vec<FeatureGroupId>,
    pub selection: FeatureSelection,
    pub standardization: Standardization,
    pub network: Network,
    pub train_config: TrainConfig,
    pub window_config: WindowConfig,
}

impl GroupedModel {
    /// Forward pass on already standardized inputs: `(prob, embedding)`.
    pub fn forward(&self, standardized: &[&[f64]]) -> Result<(f64, Vec<f64>)> {
        let mut cache = ForwardCache::default();
        let p = self.network.forward(standardized, &mut cache)?;
        Ok((p, cache.embedding))
    }

    /// Standardizes raw selected features, then runs [`Self::forward`].
    pub fn predict(&self, raw: &[&[f64]]) -> Result<(f64, Vec<f64>)> {
        if raw.len() != self.groups.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} input groups for a {}-group model",
                raw.len(),
                self.groups.len()
            )));
        }
        let z = self.standardization.apply(raw);
        let refs: Vec<&[f64]> = z.iter().map(|v| v.as_slice()).collect();
        self.forward(&refs)
    }

    pub fn predict_matrix(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        (0..x.n_rows)
            .map(|i| self.predict(&x.row(i, &self.groups)?).map(|(p, _)| p))
            .collect()
    }

    pub fn embed_matrix(&self, x: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        (0..x.n_rows)
            .map(|i| self.predict(&x.row(i, &self.groups)?).map(|(_, e)| e))
            .collect()
    }
}

/// Fits standardization and network weights on selected training features.
/// `selection` decides the groups and their order.
pub fn fit(
    selection: &FeatureSelection,
    x: &FeatureMatrix,
    labels: &[AffectLabel],
    config: &TrainConfig,
    window_config: &WindowConfig,
) -> Result<GroupedModel> {
    config.validate()?;
    if labels.len() != x.n_rows {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: x.n_rows,
        });
    }
    let fussy = labels.iter().filter(|l| l.is_fussy()).count();
    let alert = labels.iter().filter(|&&l| l == AffectLabel::Alert).count();
    if fussy == 0 || alert == 0 || fussy + alert != labels.len() {
        return Err(Error::SingleClassFold {
            fold: selection.fold_id,
            alert,
            fussy,
        });
    }

    let groups: Vec<FeatureGroupId> = selection.groups.iter().map(|g| g.group).collect();
    let widths: Vec<usize> = selection.groups.iter().map(|g| g.chosen.len()).collect();
    let standardization = Standardization::fit(x, &groups)?;

    // standardized copy, row-major per group
    let z: Vec<Vec<f64>> = groups
        .iter()
        .enumerate()
        .map(|(gi, &g)| {
            let b = x.block(g).expect("checked by Standardization::fit");
            let w = widths[gi];
            if x.widths[b] != w {
                return Err(Error::DimensionMismatch(format!(
                    "group {} has {} columns, selection has {w}",
                    g.name(),
                    x.widths[b]
                )));
            }
            let stats = &standardization.per_group[gi];
            Ok(x.data[b]
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    let (m, s) = stats[k % w];
                    (v - m) / s
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut network = Network::zeros(widths.clone(), config.branch_width, config.embedding_width);
    network.init_uniform(&mut rng_for(config.seed, 0));

    let n_params = network.n_params();
    let mut grad = vec![0.0; n_params];
    let mut m = vec![0.0; n_params];
    let mut v = vec![0.0; n_params];
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..x.n_rows).collect();
    let mut cache = ForwardCache::default();
    let mut row: Vec<&[f64]> = Vec::with_capacity(groups.len());

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng_for(config.seed, 1 + epoch as u64));
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                row.clear();
                row.extend(z.iter().zip(&widths).map(|(block, &w)| &block[i * w..(i + 1) * w]));
                let p = network.forward(&row, &mut cache)?;
                network.backward(&row, &cache, dlogit(p, labels[i], config.class_weight_fussy), &mut grad);
            }
            let scale = 1.0 / batch.len() as f64;
            step += 1;
            let bc1 = 1.0 - config.adam_beta1.powi(step);
            let bc2 = 1.0 - config.adam_beta2.powi(step);
            for k in 0..n_params {
                let g = grad[k] * scale;
                m[k] = config.adam_beta1 * m[k] + (1.0 - config.adam_beta1) * g;
                v[k] = config.adam_beta2 * v[k] + (1.0 - config.adam_beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                network.params[k] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_epsilon);
            }
        }
    }
    if network.params.iter().any(|p| !p.is_finite()) {
        return Err(Error::DimensionMismatch("training diverged to non-finite weights".into()));
    }

    Ok(GroupedModel {
        groups,
        selection: selection.clone(),
        standardization,
        network,
        train_config: *config,
        window_config: *window_config,
    })
}

/// Fits feature selection, standardization and weights on materialized
/// training samples. Every sample passed in is used; pass the confident subset
/// to train on confident data only.
pub fn train(
    samples: &[&WindowedSample],
    groups: &[FeatureGroupId],
    config: &TrainConfig,
    window_config: &WindowConfig,
    fold_id: usize,
) -> Result<GroupedModel> {
    let owned: Vec<WindowedSample> = samples.iter().map(|s| (*s).clone()).collect();
    let selection = select_top_k(&owned, groups, config.top_k, fold_id)?;
    let x = FeatureMatrix::from_samples(samples, &selection);
    let labels: Vec<AffectLabel> = samples.iter().map(|s| s.label).collect();
    fit(&selection, &x, &labels, config, window_config)
}
